"""Valid/Invalid classification of Verilog projects with reason codes.

Checks run level by level (parse, closure, ports, header, functional).  All
problems found at a level are reported and later levels are skipped.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .arith import adder_fn, has_conditioning, mult_fn, pau_condition
from .config import HEADER_TAG, ConfigError, TpuConfig, config_from_spec
from .project import (DependencyCycleError, MissingModuleError, VerilogModule, VerilogProject,
                      topo_order)
from .rtl_arith import adder_name, mulcore_name, mult_name, pau_name
from .simulator import mac_fold, simulate
from .spec_parser import DesignSpec, SpecError
from .verilog import KEYWORDS, PRIMITIVES, EvalError, VerilogParseError, evaluate, expr_width, parse_source

__all__ = [
    "REASON_CODES",
    "LEVELS",
    "Reason",
    "ValidationReport",
    "HeaderError",
    "ConfigMismatchError",
    "extract_config_from_top",
    "validate",
    "check_arith_rtl",
    "FUNCTIONAL_MAX_S",
]

REASON_CODES = ("Unparseable", "MissingModule", "PortMismatch", "WidthMismatch", "BadHeader",
                "ConfigMismatch", "FunctionalMismatch")
LEVELS = ("parse", "closure", "ports", "header", "functional")
FUNCTIONAL_MAX_S = 16    # array tiles above this size are checked on a 16x16 array
FUNCTIONAL_CASES = 3


class HeaderError(ValueError):
    pass


class ConfigMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class Reason:
    code: str
    detail: str = ""
    names: tuple = ()

    def to_dict(self) -> dict:
        return {"code": self.code, "detail": self.detail, "names": list(self.names)}

    @classmethod
    def from_dict(cls, d: dict) -> "Reason":
        return cls(d["code"], d.get("detail", ""), tuple(d.get("names", ())))


@dataclass
class ValidationReport:
    verdict: str
    reasons: list = field(default_factory=list)
    checked_levels: list = field(default_factory=list)

    @property
    def valid(self) -> bool:
        return self.verdict == "Valid"

    @property
    def codes(self) -> list:
        return [r.code for r in self.reasons]

    def to_dict(self) -> dict:
        return {"verdict": self.verdict, "reasons": [r.to_dict() for r in self.reasons],
                "checked_levels": list(self.checked_levels)}

    @classmethod
    def from_dict(cls, d: dict) -> "ValidationReport":
        return cls(d["verdict"], [Reason.from_dict(r) for r in d.get("reasons", [])],
                   list(d.get("checked_levels", [])))


def _source_of(top) -> str:
    return top.source if isinstance(top, VerilogModule) else str(top)


def extract_config_from_top(top) -> TpuConfig:
    """Read the ``// TPUGEN {json}`` header on line 2 of a top source."""
    lines = _source_of(top).splitlines()
    if len(lines) < 2 or not lines[1].startswith(HEADER_TAG):
        raise HeaderError("no TPUGEN header on line 2")
    try:
        data = json.loads(lines[1][len(HEADER_TAG):])
    except ValueError as e:
        raise HeaderError(f"header is not valid JSON: {e}") from None
    if not isinstance(data, dict):
        raise HeaderError("header must be a JSON object")
    missing = [k for k in ("S", "dw", "ww", "mult", "adder") if k not in data]
    if missing:
        raise HeaderError(f"header lacks fields {missing}")
    try:
        return TpuConfig.from_dict(data)
    except (ConfigError, ValueError) as e:
        raise ConfigMismatchError(f"header config rejected: {e}") from None


# ---------------------------------------------------------------------------
# RTL arithmetic walking

_WALK_CACHE: dict = {}


def _samples(width: int, n: int, seed: int) -> list:
    top = (1 << width) - 1
    corners = [0, 1, 2, 3, top, top - 1, 1 << (width - 1), (1 << (width - 1)) - 1]
    rng = np.random.Generator(np.random.PCG64(seed))
    rand = [int(v) for v in rng.integers(0, 1 << min(width, 62), size=n, dtype=np.int64)]
    if width > 62:
        rand = [(v << (width - 62)) | (v & ((1 << (width - 62)) - 1)) for v in rand]
    return corners + rand


def _pairs(width: int, n: int, seed: int, exhaustive_max: int = 6) -> list:
    if width <= exhaustive_max:
        return [(a, b) for a in range(1 << width) for b in range(1 << width)]
    xs = _samples(width, n, seed)
    ys = _samples(width, n, seed + 1)
    ys = ys[1:] + ys[:1]
    return list(zip(xs, ys)) + [(x, x) for x in xs[:8]]


def check_arith_rtl(library: dict, cfg: TpuConfig, samples: int = 48, seed: int = 0) -> list:
    """Walk the multiplier datapath, PAU and accumulator adder RTL of ``cfg``.

    ``library`` maps names to parsed modules.  Operand pairs are exhaustive at
    W <= 6 and seeded samples plus corner values above.  Returns mismatch
    descriptions (empty when everything agrees).
    """
    w = cfg.width
    mult = cfg.mult
    out = []
    cond = has_conditioning(mult)
    core_name = mulcore_name(mult, w) if cond else mult_name(mult, w)
    checks = [("mult", core_name), ("adder", adder_name(cfg.adder, cfg.acc_width))]
    if cond:
        checks.append(("pau", pau_name(mult, w)))
    for role, name in checks:
        if name not in library:
            out.append(f"{name}: module not in project")
            continue
        key = (role, name, _module_key(library, name), str(mult), str(cfg.adder), w, cfg.acc_width, samples, seed)
        if key not in _WALK_CACHE:
            _WALK_CACHE[key] = _walk_one(library, role, name, cfg, samples, seed)
        out.extend(_WALK_CACHE[key])
    return out


def _module_key(library, name) -> tuple:
    seen, stack, parts = set(), [name], []
    while stack:
        n = stack.pop()
        if n in seen or n not in library:
            continue
        seen.add(n)
        parts.append((n, library[n].source or id(library[n])))
        stack.extend(library[n].deps)
    return tuple(sorted(parts, key=lambda p: p[0]))


def _walk_one(library, role, name, cfg, samples, seed) -> list:
    w = cfg.width
    try:
        if role == "adder":
            aw = cfg.acc_width
            fn = adder_fn(cfg.adder, aw)
            for a, b in _pairs(aw, samples, seed):
                got = evaluate(library, name, {"a": a, "b": b})["s"]
                if got != fn(a, b):
                    return [f"{name}: a={a} b={b} gave {got}, expected {fn(a, b)}"]
            return []
        fn = mult_fn(cfg.mult, w)
        for a, b in _pairs(w, samples, seed):
            if role == "pau":
                got = evaluate(library, name, {"x": a})
                ref = pau_condition(cfg.mult, w, a)
                if (got["mant"], got["sh"]) != (ref.mantissa, ref.shift):
                    return [f"{name}: x={a} gave ({got['mant']}, {got['sh']}), expected ({ref.mantissa}, {ref.shift})"]
                continue
            if has_conditioning(cfg.mult):
                ca, cb = pau_condition(cfg.mult, w, a), pau_condition(cfg.mult, w, b)
                ins = {"ma": ca.mantissa, "sa": ca.shift, "ra": a, "mb": cb.mantissa, "sb": cb.shift, "rb": b}
            else:
                ins = {"a": a, "b": b}
            got = evaluate(library, name, ins)["p"]
            if got != fn(a, b):
                return [f"{name}: a={a} b={b} gave {got}, expected {fn(a, b)}"]
        return []
    except (EvalError, KeyError) as e:
        return [f"{name}: cannot be evaluated ({e})"]


# ---------------------------------------------------------------------------
# validation


def _undeclared(mod) -> list:
    from .verilog import _reads  # shared identifier collector
    used = set(mod.referenced)
    for target, value in mod.assigns:
        _reads(target, used)
        _reads(value, used)
    for inst in mod.instances:
        for conn in inst.connections.values():
            if conn is not None:
                _reads(conn, used)
        for p in inst.params.values():
            _reads(p, used)
    known = set(mod.nets) | set(mod.params)
    return sorted(n for n in used if n not in known and n not in KEYWORDS)


def validate(project: VerilogProject, spec: Optional[DesignSpec] = None, store=None,
             seed: int = 0, rtl_samples: int = 48) -> ValidationReport:
    """Classify ``project`` as Valid or Invalid.

    ``store`` (a module store index) resolves dependencies the project does
    not carry itself.  With ``spec`` the header config must equal the
    canonicalized spec.
    """
    checked = []

    def fail(reasons):
        return ValidationReport("Invalid", reasons, checked)

    # 1. parse
    checked.append("parse")
    reasons, parsed = [], {}
    sources = [("top.v", project.top, None)] + [(f"rtl/{m.name}.v", m, m.name) for m in project.modules]
    for fname, vm, expect in sources:
        try:
            mods = parse_source(vm.source)
        except VerilogParseError as e:
            reasons.append(Reason("Unparseable", f"{fname}: {e}", (vm.name,)))
            continue
        if len(mods) != 1:
            reasons.append(Reason("Unparseable", f"{fname}: expected one module, found {len(mods)}", (vm.name,)))
            continue
        mod = mods[0]
        if expect is not None and mod.name != expect:
            reasons.append(Reason("Unparseable", f"{fname}: declares module {mod.name}", (expect,)))
            continue
        bad = _undeclared(mod)
        if bad:
            reasons.append(Reason("Unparseable", f"{fname}: undeclared identifier(s) {', '.join(bad)}",
                                  tuple(bad)))
            continue
        if expect is None:
            parsed["__top__"] = mod
        else:
            parsed[mod.name] = mod
    if reasons:
        return fail(reasons)
    top = parsed["__top__"]

    # 2. closure
    checked.append("closure")
    by_name = {m.name: m for m in project.modules}

    def lookup(name):
        if name in by_name:
            return by_name[name]
        if store is not None:
            return store.get(name)
        return None

    try:
        closure = topo_order(top.deps, lookup)
    except MissingModuleError as e:
        return fail([Reason("MissingModule", n, (n,)) for n in e.names])
    except DependencyCycleError as e:
        return fail([Reason("Unparseable", str(e))])
    for m in closure:
        if m.name not in parsed:
            try:
                parsed[m.name] = parse_source(m.source)[0]
            except (VerilogParseError, IndexError) as e:
                return fail([Reason("Unparseable", f"{m.name}: {e}", (m.name,))])

    # 3. ports and widths at every instantiation
    checked.append("ports")
    reasons = []
    for mod in [top] + [parsed[m.name] for m in closure]:
        for inst in mod.instances:
            if inst.module in PRIMITIVES:
                continue
            child = parsed[inst.module]
            expected = [p.name for p in child.ports]
            found = list(inst.connections)
            if set(found) != set(expected):
                extra = [p for p in found if p not in expected]
                lacking = [p for p in expected if p not in found]
                reasons.append(Reason(
                    "PortMismatch",
                    f"{mod.name}.{inst.name} ({inst.module}): expected ports [{', '.join(expected)}], "
                    f"found [{', '.join(found)}]"
                    + (f"; unknown {extra}" if extra else "") + (f"; unconnected {lacking}" if lacking else ""),
                    tuple(extra + lacking)))
                continue
            if inst.params:
                continue
            ports = child.port_map
            for pname, conn in inst.connections.items():
                if conn is None:
                    continue
                try:
                    got = expr_width(conn, mod)
                except EvalError as e:
                    reasons.append(Reason("WidthMismatch", f"{mod.name}.{inst.name}.{pname}: {e}", (pname,)))
                    continue
                if got != ports[pname].width:
                    reasons.append(Reason(
                        "WidthMismatch",
                        f"{mod.name}.{inst.name}.{pname}: port is {ports[pname].width} bits, connection is {got} bits",
                        (pname,)))
    if reasons:
        return fail(reasons)

    # 4. header against spec, instance structure against header
    checked.append("header")
    try:
        cfg = extract_config_from_top(project.top)
    except HeaderError as e:
        return fail([Reason("BadHeader", str(e))])
    except ConfigMismatchError as e:
        return fail([Reason("ConfigMismatch", str(e))])
    reasons = []
    if spec is not None:
        try:
            want = config_from_spec(spec)
        except (ConfigError, SpecError, ValueError) as e:
            return fail([Reason("ConfigMismatch", f"spec does not map to a TPU config: {e}")])
        have_d, want_d = cfg.to_dict(), want.to_dict()
        for key in want_d:
            if have_d[key] != want_d[key]:
                reasons.append(Reason("ConfigMismatch", f"{key}: header {have_d[key]}, spec {want_d[key]}", (key,)))
    from .rtl_emitter import expected_instances
    counts = {}
    for inst in top.instances:
        counts[inst.module] = counts.get(inst.module, 0) + 1
    want_counts = expected_instances(cfg)
    for name in sorted(set(counts) | set(want_counts)):
        if counts.get(name, 0) != want_counts.get(name, 0):
            reasons.append(Reason("ConfigMismatch",
                                  f"{name}: {counts.get(name, 0)} instances, header config needs {want_counts.get(name, 0)}",
                                  (name,)))
    if reasons:
        return fail(reasons)

    # 5. functional: array simulation against the scalar fold, then RTL arithmetic walks
    checked.append("functional")
    sim_cfg = cfg if cfg.S <= FUNCTIONAL_MAX_S else cfg.with_size(FUNCTIONAL_MAX_S)
    S = sim_cfg.S
    rng = np.random.Generator(np.random.PCG64(seed))
    bad_cells = set()
    for _ in range(FUNCTIONAL_CASES):
        A = rng.integers(0, 1 << cfg.dw, size=(S, S), dtype=np.int64).tolist()
        B = rng.integers(0, 1 << cfg.ww, size=(S, S), dtype=np.int64).tolist()
        got = simulate(sim_cfg, A, B).c
        ref = mac_fold(sim_cfg, A, B)
        bad_cells.update((i, j) for i in range(S) for j in range(S) if got[i][j] != ref[i][j])
    if bad_cells:
        cells = sorted(bad_cells)
        return fail([Reason("FunctionalMismatch", f"array cells {cells[:16]} differ from the scalar fold",
                            tuple(f"{i},{j}" for i, j in cells))])
    problems = check_arith_rtl(parsed, cfg, rtl_samples, seed)
    if problems:
        return fail([Reason("FunctionalMismatch", p) for p in problems])
    return ValidationReport("Valid", [], checked)
