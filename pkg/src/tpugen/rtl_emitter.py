"""Verilog emission of the five-block output-stationary TPU template.

Blocks: weight and IFMap memories, row/column FIFOs, the controller, shared
row/column PAUs and the S x S grid of APEs.  Arithmetic blocks come from
:mod:`tpugen.rtl_arith`.  Line 2 of the top file carries the machine-readable
``// TPUGEN {json}`` header.

Module names follow ``block_kind_w<W>[_<param><value>...]`` and are the join
key of the module store.
"""
from __future__ import annotations

from typing import Optional

import numpy as np

from .arith import ADDERS, K_MAX, MULTIPLIERS, Unit, has_conditioning
from .config import TpuConfig
from .project import VerilogModule, VerilogProject, topo_order
from .rtl_arith import (EmitError, adder_name, arith_closure, emit_adder, emit_multiplier,
                        emit_mulcore, emit_pau, mulcore_name, mult_name, pau_name, shift_bits)

__all__ = [
    "MODULE_KINDS",
    "TOP_NAME",
    "EmitError",
    "emit_module",
    "emit_top",
    "emit_project",
    "emit_testbench",
    "project_modules",
    "standard_library",
    "ape_name",
    "fifo_name",
    "controller_name",
    "mem_name",
    "expected_instances",
    "bus_width",
]

MODULE_KINDS = ("adder", "multiplier", "pau", "ape", "fifo", "controller", "weight_mem", "ifmap_mem")
TOP_NAME = "tpu_top"
ADDR_BITS = max(1, (K_MAX - 1).bit_length())
KLEN_BITS = ADDR_BITS + 1


def _clog2(n: int) -> int:
    return max(1, (n - 1).bit_length())


def _suffix(unit: Unit) -> str:
    return "".join(f"_{k}{v}" for k, v in unit.params)


def bus_width(cfg: TpuConfig) -> int:
    """Width of an operand bus between APEs: valid bit plus payload.

    The payload is the raw operand, or {raw, shift, mantissa} when the
    multiplier has a PAU stage.
    """
    w = cfg.width
    payload = 2 * w + shift_bits(w) if has_conditioning(cfg.mult) else w
    return payload + 1


def ape_name(cfg: TpuConfig) -> str:
    acc = "" if cfg.acc_width == 2 * cfg.width + ADDR_BITS else f"_acc{cfg.acc_width}"
    return (f"ape_{cfg.mult.kind}_{cfg.adder.kind}_w{cfg.width}"
            f"{_suffix(cfg.mult)}{_suffix(cfg.adder)}{acc}")


def fifo_name(width: int, depth: int) -> str:
    return f"fifo_w{width}_d{depth}"


def controller_name(cfg: TpuConfig) -> str:
    return f"controller_os_s{cfg.S}"


def mem_name(kind: str, width: int, S: int) -> str:
    return f"{kind}_w{width}_s{S}"


def _module(name: str, summary: str, ports: list, body: list) -> str:
    lines = [f"// {name}: {summary}", f"module {name} ("]
    lines.append(",\n".join(f"    {p}" for p in ports))
    lines.append(");")
    lines.extend(("    " + b) if b else "" for b in body)
    lines.append("endmodule")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# blocks


def _emit_ape(cfg: TpuConfig) -> VerilogModule:
    w, acc = cfg.width, cfg.acc_width
    c = shift_bits(w)
    bw = bus_width(cfg)
    name = ape_name(cfg)
    ports = ["input clk", "input rst",
             f"input [{bw - 1}:0] ai", f"input [{bw - 1}:0] bi",
             f"output reg [{bw - 1}:0] ao", f"output reg [{bw - 1}:0] bo",
             f"output [{acc - 1}:0] acc"]
    body = [f"wire [{2 * w - 1}:0] prod;"]
    if has_conditioning(cfg.mult):
        def fields(bus):
            return (f".m{bus}({bus}i[{w - 1}:0]), .s{bus}({bus}i[{w + c - 1}:{w}]), "
                    f".r{bus}({bus}i[{2 * w + c - 1}:{w + c}])")
        body.append(f"{mulcore_name(cfg.mult, w)} u_mul ({fields('a')}, {fields('b')}, .p(prod));")
    else:
        body.append(f"{mult_name(cfg.mult, w)} u_mul (.a(ai[{w - 1}:0]), .b(bi[{w - 1}:0]), .p(prod));")
    pad = acc - 2 * w
    addend = f"{{{{{pad}{{1'b0}}}}, prod}}" if pad else "prod"
    body += [
        f"reg [{acc - 1}:0] acc_r;",
        f"wire [{acc}:0] sum;",
        f"{adder_name(cfg.adder, acc)} u_acc (.a(acc_r), .b({addend}), .s(sum));",
        "",
        "// operands move one cell right/down per cycle; a zero product leaves acc_r unchanged",
        "always @(posedge clk) begin",
        "    if (rst) begin",
        "        ao <= 0;",
        "        bo <= 0;",
        "        acc_r <= 0;",
        "    end else begin",
        "        ao <= ai;",
        "        bo <= bi;",
        f"        if (ai[{bw - 1}] && bi[{bw - 1}] && prod != 0)",
        f"            acc_r <= sum[{acc - 1}:0];",
        "    end",
        "end",
        "assign acc = acc_r;",
    ]
    desc = (f"approximate processing element APE, output-stationary MAC cell with {cfg.mult} multiplier "
            f"and {cfg.adder} accumulator adder, {w}-bit operands, {acc}-bit accumulator")
    return VerilogModule.from_source(_module(name, "output-stationary MAC cell", ports, body), desc)


def _emit_fifo(width: int, depth: int) -> VerilogModule:
    name = fifo_name(width, depth)
    ab = _clog2(depth)
    ports = ["input clk", "input rst", "input push", "input pop",
             f"input [{width - 1}:0] din", f"output [{width - 1}:0] dout", "output full", "output empty"]
    body = [
        f"reg [{width - 1}:0] mem [0:{depth - 1}];",
        f"reg [{ab - 1}:0] rd_ptr;",
        f"reg [{ab - 1}:0] wr_ptr;",
        f"reg [{ab}:0] count;",
        "wire do_push;",
        "wire do_pop;",
        "assign do_push = push && !full;",
        "assign do_pop = pop && !empty;",
        "always @(posedge clk) begin",
        "    if (rst) begin",
        "        rd_ptr <= 0;",
        "        wr_ptr <= 0;",
        "        count <= 0;",
        "    end else begin",
        "        if (do_push) begin",
        "            mem[wr_ptr] <= din;",
        f"            wr_ptr <= (wr_ptr == {depth - 1}) ? 0 : wr_ptr + 1;",
        "        end",
        "        if (do_pop)",
        f"            rd_ptr <= (rd_ptr == {depth - 1}) ? 0 : rd_ptr + 1;",
        "        count <= count + do_push - do_pop;",
        "    end",
        "end",
        "assign dout = mem[rd_ptr];",
        f"assign full = (count == {depth});",
        "assign empty = (count == 0);",
    ]
    desc = f"synchronous FIFO {width}-bit {depth} entries deep, operand skew buffer"
    return VerilogModule.from_source(_module(name, "operand FIFO", ports, body), desc)


def _emit_controller(cfg: TpuConfig) -> VerilogModule:
    S = cfg.S
    name = controller_name(cfg)
    ds = _clog2(S)
    ports = ["input clk", "input rst", "input start", f"input [{KLEN_BITS - 1}:0] k_len",
             f"output [{ADDR_BITS - 1}:0] rd_addr", "output push", f"output [{S - 1}:0] pop",
             "output clr", f"output [{ds - 1}:0] drain_sel", "output drain_vld", "output done"]
    body = [
        "reg [15:0] cyc;",
        "reg run;",
        "wire [15:0] fill;",
        "// last compute cycle: the skewed streams need 2(S-1) extra cycles",
        f"assign fill = k_len + {2 * (S - 1) + 1};",
        "always @(posedge clk) begin",
        "    if (rst) begin",
        "        cyc <= 0;",
        "        run <= 0;",
        "    end else if (start && !run) begin",
        "        cyc <= 0;",
        "        run <= 1;",
        "    end else if (run) begin",
        f"        if (cyc == fill + {S})",
        "            run <= 0;",
        "        cyc <= cyc + 1;",
        "    end",
        "end",
        "assign push = run && (cyc < k_len);",
        f"assign rd_addr = cyc[{ADDR_BITS - 1}:0];",
    ]
    for i in range(S):
        body.append(f"assign pop[{i}] = run && (cyc > {i}) && (cyc <= k_len + {i});")
    body += [
        "assign clr = start && !run;",
        f"assign drain_vld = run && (cyc >= fill) && (cyc < fill + {S});",
        "assign drain_sel = cyc - fill;",
        f"assign done = run && (cyc == fill + {S});",
    ]
    desc = f"output-stationary schedule controller for a {S}x{S} array: skewed operand release and column-serial drain"
    return VerilogModule.from_source(_module(name, "output-stationary controller", ports, body), desc)


def _emit_mem(kind: str, width: int, S: int) -> VerilogModule:
    name = mem_name(kind, width, S)
    wa = ADDR_BITS + _clog2(S) if S > 1 else ADDR_BITS
    ports = ["input clk", "input we", f"input [{wa - 1}:0] waddr", f"input [{width - 1}:0] wdata",
             f"input [{ADDR_BITS - 1}:0] raddr", f"output reg [{S * width - 1}:0] rdata"]
    body = [
        f"reg [{width - 1}:0] mem [0:{S * K_MAX - 1}];",
        "integer i;",
        "// word k*S+i holds lane i of step k",
        "always @(posedge clk) begin",
        "    if (we)",
        "        mem[waddr] <= wdata;",
        f"    for (i = 0; i < {S}; i = i + 1)",
        f"        rdata[i * {width} +: {width}] <= mem[raddr * {S} + i];",
        "end",
    ]
    role = "weight" if kind == "weight_mem" else "input feature map IFMap"
    desc = f"{role} memory, dual-port, {width}-bit words, {S} read lanes, {S * K_MAX} words"
    return VerilogModule.from_source(_module(name, f"{role} memory", ports, body), desc)


def emit_module(kind: str, cfg: TpuConfig, width: Optional[int] = None) -> VerilogModule:
    """Emit one block of the template for ``cfg``.

    ``width`` overrides the unit width for the arithmetic kinds; by default
    the adder is the accumulator adder (at ``acc_width``) and multiplier/PAU
    use the operand width.
    """
    if kind not in MODULE_KINDS:
        raise EmitError(f"unknown module kind {kind!r}; expected one of {MODULE_KINDS}")
    if kind == "adder":
        return emit_adder(cfg.adder, width or cfg.acc_width)
    if kind == "multiplier":
        return emit_multiplier(cfg.mult, width or cfg.width)
    if kind == "pau":
        return emit_pau(cfg.mult, width or cfg.width)
    if kind == "ape":
        return _emit_ape(cfg)
    if kind == "fifo":
        return _emit_fifo(width or cfg.dw, cfg.fifo_depth)
    if kind == "controller":
        return _emit_controller(cfg)
    return _emit_mem(kind, width or (cfg.ww if kind == "weight_mem" else cfg.dw), cfg.S)


# ---------------------------------------------------------------------------
# top


def expected_instances(cfg: TpuConfig) -> dict:
    """Instance counts per module name in the top for ``cfg``."""
    counts = {ape_name(cfg): cfg.S * cfg.S, controller_name(cfg): 1,
              mem_name("ifmap_mem", cfg.dw, cfg.S): 1, mem_name("weight_mem", cfg.ww, cfg.S): 1}
    for w in (cfg.dw, cfg.ww):
        n = fifo_name(w, cfg.fifo_depth)
        counts[n] = counts.get(n, 0) + cfg.S
    if has_conditioning(cfg.mult):
        counts[pau_name(cfg.mult, cfg.width)] = 2 * cfg.S
    return counts


def emit_top(cfg: TpuConfig) -> VerilogModule:
    S, w, dw, ww, acc = cfg.S, cfg.width, cfg.dw, cfg.ww, cfg.acc_width
    c = shift_bits(w)
    bw = bus_width(cfg)
    cond = has_conditioning(cfg.mult)
    wa = ADDR_BITS + _clog2(S)
    ds = _clog2(S)
    lines = [
        f"// {TOP_NAME}: {S}x{S} output-stationary systolic-array TPU",
        cfg.header_line(),
        f"module {TOP_NAME} (",
        "  input clk,",
        "  input rst,",
        "  input start,",
        f"  input [{KLEN_BITS - 1}:0] k_len,",
        "  input a_we,",
        f"  input [{wa - 1}:0] a_waddr,",
        f"  input [{dw - 1}:0] a_wdata,",
        "  input b_we,",
        f"  input [{wa - 1}:0] b_waddr,",
        f"  input [{ww - 1}:0] b_wdata,",
        f"  output [{S * acc - 1}:0] c_col,",
        "  output c_vld,",
        "  output done",
        ");",
        f"  wire [{ADDR_BITS - 1}:0] rd_addr;",
        "  wire push;",
        f"  wire [{S - 1}:0] pop;",
        "  wire clr;",
        "  wire arst;",
        "  assign arst = rst | clr;",
        f"  wire [{ds - 1}:0] drain_sel;",
        "  wire drain_vld;",
        f"  wire [{S * dw - 1}:0] a_rows;",
        f"  wire [{S * ww - 1}:0] b_cols;",
        f"  wire [{S * S * acc - 1}:0] acc;",
        f"  {controller_name(cfg)} u_ctrl (.clk(clk), .rst(rst), .start(start), .k_len(k_len), "
        ".rd_addr(rd_addr), .push(push), .pop(pop), .clr(clr), .drain_sel(drain_sel), "
        ".drain_vld(drain_vld), .done(done));",
        f"  {mem_name('ifmap_mem', dw, S)} u_ifmap (.clk(clk), .we(a_we), .waddr(a_waddr), "
        ".wdata(a_wdata), .raddr(rd_addr), .rdata(a_rows));",
        f"  {mem_name('weight_mem', ww, S)} u_weight (.clk(clk), .we(b_we), .waddr(b_waddr), "
        ".wdata(b_wdata), .raddr(rd_addr), .rdata(b_cols));",
    ]
    for side, width, src, edge in (("a", dw, "a_rows", "ah"), ("b", ww, "b_cols", "bv")):
        fifo = fifo_name(width, cfg.fifo_depth)
        for i in range(S):
            q = f"{side}_q{i}"
            lines.append(f"  wire [{width - 1}:0] {q};")
            lines.append(f"  {fifo} f{side}{i} (.clk(clk),.rst(rst),.push(push),.pop(pop[{i}]),"
                         f".din({src}[{(i + 1) * width - 1}:{i * width}]),.dout({q}),.full(),.empty());")
            ext = q if width == w else f"{{{{{w - width}{{1'b0}}}}, {q}}}"
            head = f"{edge}{i}_0" if side == "a" else f"{edge}0_{i}"
            if cond:
                lines += [f"  wire [{w - 1}:0] {side}_m{i};", f"  wire [{c - 1}:0] {side}_s{i};",
                          f"  {pau_name(cfg.mult, w)} p{side}{i} (.x({ext}),.mant({side}_m{i}),.sh({side}_s{i}));",
                          f"  wire [{bw - 1}:0] {head};",
                          f"  assign {head} = {{pop[{i}], {ext}, {side}_s{i}, {side}_m{i}}};"]
            else:
                lines += [f"  wire [{bw - 1}:0] {head};", f"  assign {head} = {{pop[{i}], {ext}}};"]
    for i in range(S):
        lines.append(f"  wire [{bw - 1}:0] " + ", ".join(f"ah{i}_{j}" for j in range(1, S + 1)) + ";")
    for j in range(S):
        lines.append(f"  wire [{bw - 1}:0] " + ", ".join(f"bv{i}_{j}" for i in range(1, S + 1)) + ";")
    ape = ape_name(cfg)
    for i in range(S):
        for j in range(S):
            lo = (j * S + i) * acc
            lines.append(f"  {ape} pe{i}_{j} (.clk(clk),.rst(arst),.ai(ah{i}_{j}),.bi(bv{i}_{j}),"
                         f".ao(ah{i}_{j + 1}),.bo(bv{i + 1}_{j}),.acc(acc[{lo + acc - 1}:{lo}]));")
    lines += [
        "  // column-serial drain: column drain_sel, row 0 in the low word",
        f"  assign c_col = acc[drain_sel * {S * acc} +: {S * acc}];",
        "  assign c_vld = drain_vld;",
        "endmodule",
    ]
    src = "\n".join(lines) + "\n"
    return VerilogModule.from_source(src, f"top-level {S}x{S} output-stationary TPU")


def project_modules(cfg: TpuConfig) -> dict:
    """Every module the top of ``cfg`` needs, by name."""
    w = cfg.width
    mods = arith_closure(cfg.mult, w)
    if has_conditioning(cfg.mult):
        # the core is the APE multiplier; the monolithic wrapper is not needed
        mods = [m for m in mods if m.name != mult_name(cfg.mult, w)]
    mods += [
        emit_adder(cfg.adder, cfg.acc_width),
        _emit_ape(cfg),
        _emit_fifo(cfg.dw, cfg.fifo_depth),
        _emit_fifo(cfg.ww, cfg.fifo_depth),
        _emit_controller(cfg),
        _emit_mem("ifmap_mem", cfg.dw, cfg.S),
        _emit_mem("weight_mem", cfg.ww, cfg.S),
    ]
    return {m.name: m for m in mods}


def emit_project(cfg: TpuConfig) -> VerilogProject:
    top = emit_top(cfg)
    lib = project_modules(cfg)
    return VerilogProject(top, topo_order(top.deps, lib.get))


def standard_library(widths=(8, 16, 32)) -> list:
    """Every registered unit at its default parameters, per operand width."""
    out = {}
    for w in widths:
        for kind in sorted(ADDERS):
            m = emit_adder(Unit("adder", kind), w)
            out[m.name] = m
        for kind in sorted(MULTIPLIERS):
            unit = Unit("mult", kind)
            try:
                unit.param_dict(w)
                mods = arith_closure(unit, w)
            except (EmitError, ValueError):
                continue
            for m in mods:
                out[m.name] = m
    return [out[n] for n in sorted(out)]


# ---------------------------------------------------------------------------
# testbench


def emit_testbench(cfg: TpuConfig, A=None, B=None, seed: int = 0) -> VerilogModule:
    """Self-checking testbench; expected outputs come from the behavioral simulator.

    Without matrices, S x S operands are drawn from ``seed``.
    """
    from .simulator import simulate
    S = cfg.S
    if A is None or B is None:
        rng = np.random.Generator(np.random.PCG64(seed))
        A = rng.integers(0, 1 << cfg.dw, size=(S, S)).tolist()
        B = rng.integers(0, 1 << cfg.ww, size=(S, S)).tolist()
    A = [list(map(int, r)) for r in A]
    B = [list(map(int, r)) for r in B]
    if len(A) != S or len(B[0]) != S or any(len(r) != len(B) for r in A):
        raise EmitError(f"testbench needs A of shape {S}xK and B of shape Kx{S}")
    K = len(B)
    res = simulate(cfg, A, B)
    acc = cfg.acc_width
    wa = ADDR_BITS + _clog2(S)
    name = f"tb_{TOP_NAME}"
    L = [
        f"// {name}: self-checking testbench, seed {seed}, K={K}",
        f"module {name};",
        "    reg clk;",
        "    reg rst;",
        "    reg start;",
        f"    reg [{KLEN_BITS - 1}:0] k_len;",
        "    reg a_we;",
        f"    reg [{wa - 1}:0] a_waddr;",
        f"    reg [{cfg.dw - 1}:0] a_wdata;",
        "    reg b_we;",
        f"    reg [{wa - 1}:0] b_waddr;",
        f"    reg [{cfg.ww - 1}:0] b_wdata;",
        f"    wire [{S * acc - 1}:0] c_col;",
        "    wire c_vld;",
        "    wire done;",
        "    integer errors;",
        f"    {TOP_NAME} dut (.clk(clk), .rst(rst), .start(start), .k_len(k_len), .a_we(a_we), "
        ".a_waddr(a_waddr), .a_wdata(a_wdata), .b_we(b_we), .b_waddr(b_waddr), .b_wdata(b_wdata), "
        ".c_col(c_col), .c_vld(c_vld), .done(done));",
        "    always #1 clk = ~clk;",
        "    initial begin",
        "        clk = 0;",
        "        rst = 1;",
        "        start = 0;",
        "        a_we = 0;",
        "        b_we = 0;",
        "        errors = 0;",
        f"        k_len = {K};",
        "        #4 rst = 0;",
    ]
    for k in range(K):
        for i in range(S):
            L.append(f"        a_we = 1; a_waddr = {k * S + i}; a_wdata = {A[i][k]}; "
                     f"b_we = 1; b_waddr = {k * S + i}; b_wdata = {B[k][i]}; #2;")
    L += ["        a_we = 0;", "        b_we = 0;", "        start = 1;", "        #2 start = 0;",
          "        wait (c_vld);"]
    for j in range(S):
        for i in range(S):
            L.append(f"        if (c_col[{(i + 1) * acc - 1}:{i * acc}] !== {acc}'d{res.c[i][j]}) errors = errors + 1;")
        L.append("        #2;")
    L += ['        $display("errors=%0d", errors);', "        $finish;", "    end", "endmodule"]
    return VerilogModule.from_source("\n".join(L) + "\n", "self-checking testbench")
