"""Verilog emission for the arithmetic blocks: adders, multipliers, PAUs and
multiplier cores.

Every block is purely combinational and written with continuous assigns
only, with an explicitly sized wire for each intermediate value so that the
netlist walker (unbounded integers, masked on assignment) and a Verilog
simulator (context-sized expressions) agree bit for bit.
"""
from __future__ import annotations

from .arith import ADDERS, MULTIPLIERS, Unit, asm_nibble_table, has_conditioning
from .project import VerilogModule

__all__ = [
    "EmitError",
    "shift_bits",
    "adder_name",
    "mult_name",
    "pau_name",
    "mulcore_name",
    "emit_adder",
    "emit_multiplier",
    "emit_pau",
    "emit_mulcore",
    "arith_closure",
]

ASM_MAX_LEVELS = 1024


class EmitError(ValueError):
    pass


def shift_bits(width: int) -> int:
    """Bits needed for a shift count in [0, width-1] (also the log characteristic)."""
    return max(1, (width - 1).bit_length())


def _suffix(unit: Unit) -> str:
    return "".join(f"_{k}{v}" for k, v in unit.params)


def _adder_m(unit: Unit, width: int) -> int:
    return unit.param_dict(width).get("m", 0)


def adder_name(unit: Unit, width: int) -> str:
    unit = unit.resolved(width)
    base = f"add_{unit.kind}_w{width}"
    return base + (f"_m{_adder_m(unit, width)}" if ADDERS[unit.kind].accepts_m else "")


def mult_name(unit: Unit, width: int) -> str:
    return f"mul_{unit.kind}_w{width}{_suffix(unit.resolved(width))}"


def pau_name(unit: Unit, width: int) -> str:
    return f"pau_{unit.kind}_w{width}{_suffix(unit.resolved(width))}"


def mulcore_name(unit: Unit, width: int) -> str:
    return f"mulcore_{unit.kind}_w{width}{_suffix(unit.resolved(width))}"


def _lit(width: int, value: int) -> str:
    return f"{width}'d{value}"


def _module(name: str, summary: str, ports: list, body: list) -> str:
    lines = [f"// {name}: {summary}", f"module {name} ("]
    lines.append(",\n".join(f"    {p}" for p in ports))
    lines.append(");")
    lines.extend("    " + b for b in body)
    lines.append("endmodule")
    return "\n".join(lines) + "\n"


def _vm(name, summary, ports, body, description) -> VerilogModule:
    return VerilogModule.from_source(_module(name, summary, ports, body), description)


# ---------------------------------------------------------------------------
# adders


def emit_adder(unit: Unit, width: int) -> VerilogModule:
    unit = unit.resolved(width)
    kind = unit.kind
    m = _adder_m(unit, width)
    name = adder_name(unit, width)
    w = width
    ports = [f"input [{w - 1}:0] a", f"input [{w - 1}:0] b", f"output [{w}:0] s"]
    desc = f"{kind} adder, {w}-bit operands" + (f", imprecise low part m={m}" if ADDERS[kind].accepts_m else "")
    if kind == "exact" or m == 0:
        return _vm(name, "exact adder", ports, ["assign s = a + b;"], desc)
    if kind not in ("loa", "loa_nocarry", "trunc", "soa"):
        raise EmitError(f"no RTL template for adder {kind!r}")
    body = []
    if m < w:
        carry = " + cin" if kind == "loa" else ""
        body += [f"wire [{w - m}:0] hi;", f"assign hi = a[{w - 1}:{m}] + b[{w - 1}:{m}]{carry};"]
    else:
        body += ["wire hi;", "assign hi = cin;" if kind == "loa" else "assign hi = 1'b0;"]
    if kind == "loa":
        body[:0] = ["wire cin;", f"assign cin = a[{m - 1}] & b[{m - 1}];"]
    if kind in ("loa", "loa_nocarry"):
        body += [f"wire [{m - 1}:0] lo;", f"assign lo = a[{m - 1}:0] | b[{m - 1}:0];"]
    elif kind == "trunc":
        body += [f"wire [{m - 1}:0] lo;", f"assign lo = {{{m}{{1'b0}}}};"]
    else:
        body += [f"wire [{m - 1}:0] lo;", f"assign lo = {{{m}{{1'b1}}}};"]
    body.append("assign s = {hi, lo};")
    return _vm(name, f"{kind} adder, {m} imprecise low bits", ports, body, desc)


# ---------------------------------------------------------------------------
# shared datapath fragments


def _lod_chain(x: str, width: int, bits: int, lo: int = 0, value=lambda i: i) -> str:
    """Priority chain mapping the leading one of ``x`` (at or above bit ``lo``) to ``value(i)``."""
    terms = [f"{x}[{i}] ? {_lit(bits, value(i))}" for i in range(width - 1, lo - 1, -1)]
    return " : ".join(terms + [_lit(bits, 0)]) if terms else _lit(bits, 0)


def _mitchell(width: int, xa: str, xb: str, out: str, adder_inst=None) -> list:
    """Mitchell multiply of wires ``xa``/``xb`` into ``out``.

    ``adder_inst`` is (module name) of an adder for the log sum; inline exact
    addition otherwise.
    """
    frac = width - 1
    c = shift_bits(width)
    L = c + frac
    body = [
        f"wire [{c - 1}:0] ka;",
        f"assign ka = {_lod_chain(xa, width, c)};",
        f"wire [{c - 1}:0] kb;",
        f"assign kb = {_lod_chain(xb, width, c)};",
        f"wire [{width - 1}:0] na;",
        f"assign na = {xa} << ({frac} - ka);",
        f"wire [{width - 1}:0] nb;",
        f"assign nb = {xb} << ({frac} - kb);",
        f"wire [{L - 1}:0] la;",
        f"assign la = {{ka, na[{frac - 1}:0]}};",
        f"wire [{L - 1}:0] lb;",
        f"assign lb = {{kb, nb[{frac - 1}:0]}};",
        f"wire [{L}:0] lt;",
    ]
    if adder_inst:
        body.append(f"{adder_inst} u_logsum (.a(la), .b(lb), .s(lt));")
    else:
        body.append("assign lt = la + lb;")
    body += [
        f"wire [{c}:0] kt;",
        f"assign kt = lt[{L}:{frac}];",
        f"wire [{width - 1}:0] mt;",
        f"assign mt = {{1'b1, lt[{frac - 1}:0]}};",
        f"wire [{2 * width - 1}:0] up;",
        f"assign up = mt << ((kt >= {frac}) ? (kt - {frac}) : 0);",
        f"wire [{2 * width - 1}:0] dn;",
        f"assign dn = mt >> ((kt < {frac}) ? ({frac} - kt) : 0);",
        f"assign {out} = ({xa} == 0 || {xb} == 0) ? 0 : ((kt >= {frac}) ? up : dn);",
    ]
    return body


def _log_adder(unit: Unit, width: int):
    """Adder (unit, width) summing the log values of an ALM multiplier."""
    m = unit.param_dict(width)["m"]
    kind = {"alm_loa": "loa", "alm_maa3": "loa", "alm_soa": "soa"}[unit.kind]
    lw = shift_bits(width) + width - 1
    if m == 0:
        return Unit("adder", "exact"), lw
    return Unit("adder", kind, (("m", m),)), lw


# ---------------------------------------------------------------------------
# multipliers


def _mult_ports(w):
    return [f"input [{w - 1}:0] a", f"input [{w - 1}:0] b", f"output [{2 * w - 1}:0] p"]


def emit_multiplier(unit: Unit, width: int) -> VerilogModule:
    """Monolithic multiplier ``mul_<kind>_w<W>...`` with ports a, b -> p."""
    unit = unit.resolved(width)
    params = unit.param_dict(width)
    kind, w = unit.kind, width
    name = mult_name(unit, w)
    pdesc = ", ".join(f"{k}={v}" for k, v in params.items())
    desc = f"{kind} multiplier, {w}-bit by {w}-bit operands" + (f", {pdesc}" if pdesc else "")
    ports = _mult_ports(w)
    if has_conditioning(unit):
        c = shift_bits(w)
        body = [
            f"wire [{w - 1}:0] ma;", f"wire [{c - 1}:0] sa;",
            f"wire [{w - 1}:0] mb;", f"wire [{c - 1}:0] sb;",
            f"{pau_name(unit, w)} u_pau_a (.x(a), .mant(ma), .sh(sa));",
            f"{pau_name(unit, w)} u_pau_b (.x(b), .mant(mb), .sh(sb));",
            f"{mulcore_name(unit, w)} u_core (.ma(ma), .sa(sa), .ra(a), .mb(mb), .sb(sb), .rb(b), .p(p));",
        ]
        return _vm(name, f"{kind} multiplier (PAU + core)", ports, body, desc)
    if kind == "exact":
        body = ["assign p = a * b;"]
    elif kind == "bam":
        vbl = params["vbl"]
        body, rows = [], []
        for j in range(w):
            cut = max(0, vbl - j)
            if cut >= w:
                continue
            keep = ((1 << w) - 1) & ~((1 << cut) - 1)
            body += [f"wire [{2 * w - 1}:0] pp{j};",
                     f"assign pp{j} = b[{j}] ? ((a & {w}'h{keep:x}) << {j}) : 0;"]
            rows.append(f"pp{j}")
        body.append(f"assign p = {' + '.join(rows) if rows else '0'};")
    elif kind == "trunc":
        d = params["mult_dw"]
        if d >= w:
            body = ["assign p = 0;"]
        else:
            keep = ((1 << w) - 1) & ~((1 << d) - 1)
            body = [f"wire [{w - 1}:0] at;", f"assign at = a & {w}'h{keep:x};",
                    f"wire [{w - 1}:0] bt;", f"assign bt = b & {w}'h{keep:x};",
                    "assign p = at * bt;"]
    elif kind == "asm":
        nw, al = params["nibble_width"], params["alphabets"]
        levels = sorted(set(asm_nibble_table(nw, al)) - {0}, reverse=True) if nw <= 16 else None
        if levels is None or len(levels) > ASM_MAX_LEVELS:
            raise EmitError(f"asm nibble_width={nw} is too wide for the table-based RTL template")
        body, terms = [], []
        for i in range(w // nw):
            lo, hi = i * nw, (i + 1) * nw - 1
            chain = " : ".join(f"(nb{i} >= {v}) ? {_lit(nw, v)}" for v in levels) + f" : {_lit(nw, 0)}"
            body += [f"wire [{nw - 1}:0] nb{i};", f"assign nb{i} = b[{hi}:{lo}];",
                     f"wire [{nw - 1}:0] q{i};", f"assign q{i} = {chain};"]
            terms.append(f"((a * q{i}) << {lo})" if lo else f"(a * q{i})")
        body.append(f"assign p = {' + '.join(terms)};")
    elif kind in ("alm_loa", "alm_maa3", "alm_soa"):
        adder, lw = _log_adder(unit, w)
        body = _mitchell(w, "a", "b", "p", adder_name(adder, lw))
    else:
        raise EmitError(f"no RTL template for multiplier {kind!r}")
    return _vm(name, f"{kind} multiplier", ports, body, desc)


def emit_pau(unit: Unit, width: int) -> VerilogModule:
    """Operand conditioning: x -> (mant, sh) with x ~ mant << sh."""
    unit = unit.resolved(width)
    params = unit.param_dict(width)
    kind, w = unit.kind, width
    c = shift_bits(w)
    name = pau_name(unit, w)
    ports = [f"input [{w - 1}:0] x", f"output [{w - 1}:0] mant", f"output [{c - 1}:0] sh"]
    pdesc = ", ".join(f"{k}={v}" for k, v in params.items())
    desc = f"pre-approximate unit PAU conditioning {kind} operands, {w}-bit" + (f", {pdesc}" if pdesc else "")
    if not has_conditioning(unit):
        body = ["assign mant = x;", f"assign sh = {_lit(c, 0)};"]
        return _vm(name, "identity conditioning", ports, body, desc)
    if kind == "drum":
        k = params["k"]
        chain = _lod_chain("x", w, c, lo=k, value=lambda i: i + 1 - k)
        body = [f"wire [{c - 1}:0] t;", f"assign t = {chain};",
                f"wire [{w - 1}:0] seg;", "assign seg = x >> t;",
                "assign mant = (t != 0) ? (seg | 1) : x;" if params["unbias"] else "assign mant = seg;",
                "assign sh = t;"]
    elif kind == "dralm":
        d = params["mult_dw"]
        body = [f"assign mant = x >> {d};", f"assign sh = {_lit(c, d)};"]
    elif kind == "roba":
        terms = []
        for p in range(w - 1, -1, -1):
            down, up = min(p, w - 1), min(p + 1, w - 1)
            if p == 0 or down == up:
                terms.append(f"x[{p}] ? {_lit(c, down)}")
            else:
                terms.append(f"x[{p}] ? (x[{p - 1}] ? {_lit(c, up)} : {_lit(c, down)})")
        body = [f"assign sh = {' : '.join(terms)} : {_lit(c, 0)};",
                "assign mant = (x != 0) ? 1 : 0;"]
    else:
        raise EmitError(f"no PAU template for {kind!r}")
    return _vm(name, f"{kind} operand conditioning", ports, body, desc)


def emit_mulcore(unit: Unit, width: int) -> VerilogModule:
    """APE multiply core on conditioned operands (mant, sh) plus raw operands."""
    unit = unit.resolved(width)
    kind, w = unit.kind, width
    c = shift_bits(w)
    name = mulcore_name(unit, w)
    ports = [f"input [{w - 1}:0] ma", f"input [{c - 1}:0] sa", f"input [{w - 1}:0] ra",
             f"input [{w - 1}:0] mb", f"input [{c - 1}:0] sb", f"input [{w - 1}:0] rb",
             f"output [{2 * w - 1}:0] p"]
    pdesc = ", ".join(f"{k}={v}" for k, v in unit.param_dict(w).items())
    desc = f"{kind} processing core on conditioned operands, {w}-bit" + (f", {pdesc}" if pdesc else "")
    if kind == "drum":
        body = [f"wire [{c}:0] st;", "assign st = sa + sb;",
                f"wire [{2 * w - 1}:0] pm;", "assign pm = (ma * mb) << st;",
                "assign p = (ra == 0 || rb == 0) ? 0 : pm;"]
    elif kind == "dralm":
        body = [f"wire [{w - 1}:0] xa;", "assign xa = ma << sa;",
                f"wire [{w - 1}:0] xb;", "assign xb = mb << sb;",
                f"wire [{2 * w - 1}:0] pm;"]
        body += _mitchell(w, "xa", "xb", "pm")
        body.append("assign p = (ra == 0 || rb == 0) ? 0 : pm;")
    elif kind == "roba":
        body = [f"wire [{w - 1}:0] ar;", "assign ar = ma << sa;",
                f"wire [{w - 1}:0] br;", "assign br = mb << sb;",
                f"wire [{2 * w - 1}:0] pm;", "assign pm = ar * rb + br * ra - ar * br;",
                "assign p = (ra == 0 || rb == 0) ? 0 : pm;"]
    else:
        body = [f"{mult_name(unit, w)} u_mul (.a(ra), .b(rb), .p(p));"]
    return _vm(name, f"{kind} core multiply", ports, body, desc)


def arith_closure(mult: Unit, width: int) -> list:
    """The multiplier module and every arithmetic module it needs, leaves first."""
    mult = mult.resolved(width)
    out = []
    if has_conditioning(mult):
        out += [emit_pau(mult, width), emit_mulcore(mult, width)]
    elif mult.kind in ("alm_loa", "alm_maa3", "alm_soa"):
        adder, lw = _log_adder(mult, width)
        out.append(emit_adder(adder, lw))
    out.append(emit_multiplier(mult, width))
    return out
