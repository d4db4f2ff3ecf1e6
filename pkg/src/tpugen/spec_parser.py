"""Prompt generator: turn a free-form design request into a canonical DesignSpec
and render the fixed prompt template fed to the generation backend.

Extraction is a deterministic, case-insensitive rule grammar.  Every rule match
is collected; if two matches bind the same field to different values the text
is rejected with :class:`AmbiguityError` rather than silently picking one.
"""
from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field, replace
from decimal import Decimal
from typing import Optional

from .arith import ADDERS, MULTIPLIERS, ArithParamError, Unit

__all__ = [
    "Budget",
    "DesignSpec",
    "SpecError",
    "AmbiguityError",
    "SpecValidationError",
    "parse_spec",
    "canonicalize",
    "render_prompt",
    "PROMPT_HEADER",
    "SUPPORTED_SIZES",
    "DATA_WIDTHS",
    "WEIGHT_WIDTHS",
]

SUPPORTED_SIZES = (4, 8, 16, 32, 64, 128, 256)
DATA_WIDTHS = (8, 16, 32)
WEIGHT_WIDTHS = tuple(range(3, 33))
DEFAULT_CLOCK_NS = 2.0

PROMPT_HEADER = "tpugen prompt v1"


class SpecError(ValueError):
    pass


class AmbiguityError(SpecError):
    """Two grammar matches bind one feature to different values."""

    def __init__(self, field_name: str, matches: list[tuple[object, str]]):
        self.field = field_name
        self.matches = matches
        listing = "; ".join(f"{text!r} -> {value}" for value, text in matches)
        super().__init__(f"contradictory values for {field_name}: {listing}")


class SpecValidationError(SpecError):
    pass


@dataclass(frozen=True)
class Budget:
    power_mw: Optional[float] = None
    area_mm2: Optional[float] = None
    latency_ms: Optional[float] = None

    def items(self):
        return [(k, v) for k, v in (("power_mw", self.power_mw),
                                    ("area_mm2", self.area_mm2),
                                    ("latency_ms", self.latency_ms)) if v is not None]

    def to_dict(self) -> dict:
        return dict(self.items())

    @classmethod
    def from_dict(cls, d: dict) -> "Budget":
        return cls(**{k: float(v) for k, v in d.items() if v is not None})


@dataclass(frozen=True)
class DesignSpec:
    """Design intent.  ``None`` marks a feature the text did not bind."""

    rows: Optional[int] = None
    cols: Optional[int] = None
    dw: Optional[int] = None
    ww: Optional[int] = None
    mult: Optional[Unit] = None
    adder: Optional[Unit] = None
    budget: Optional[Budget] = None
    label: Optional[str] = None
    clock_period_ns: Optional[float] = None

    @property
    def width(self) -> int:
        return max(self.dw, self.ww)

    def is_bound(self) -> bool:
        return None not in (self.rows, self.cols, self.dw, self.ww, self.mult,
                            self.adder, self.label, self.clock_period_ns)

    def to_dict(self) -> dict:
        return {
            "rows": self.rows,
            "cols": self.cols,
            "dw": self.dw,
            "ww": self.ww,
            "mult": None if self.mult is None else str(self.mult),
            "adder": None if self.adder is None else str(self.adder),
            "budget": None if self.budget is None else self.budget.to_dict(),
            "label": self.label,
            "clock_period_ns": self.clock_period_ns,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DesignSpec":
        from .arith import parse_unit
        return cls(
            rows=d.get("rows"),
            cols=d.get("cols"),
            dw=d.get("dw"),
            ww=d.get("ww"),
            mult=parse_unit(d["mult"], "mult") if d.get("mult") else None,
            adder=parse_unit(d["adder"], "adder") if d.get("adder") else None,
            budget=Budget.from_dict(d["budget"]) if d.get("budget") else None,
            label=d.get("label"),
            clock_period_ns=None if d.get("clock_period_ns") is None else float(d["clock_period_ns"]),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


# ---------------------------------------------------------------------------
# grammar

_NUM = r"\d+(?:\.\d+)?(?:e[-+]?\d+)?"
_INT_END = r"(?!\d|\.\d)"

_SIZE_RULES = [
    re.compile(r"(?<![\w.])(\d+)[ \t]*[x×*][ \t]*(\d+)(?![\w.])", re.I),
    re.compile(r"(?<![\w.])(\d+)[ \t]*-?[ \t]*by[ \t]*-?[ \t]*(\d+)(?![\w.])", re.I),
    re.compile(r"\bsize[ \t]*(?:of|=|:|is)?[ \t]*(\d+)(?!\d)(?![ \t]*(?:[x×*]|-?[ \t]*by)[ \t]*-?[ \t]*\d)", re.I),
]

_DW_RULES = [
    re.compile(r"(?<![\w.])(\d+)[ \t]*-?[ \t]*bits?[ \t]+(?:input[ \t]+)?(?:data|inputs?|activations?|ifmaps?|features?)\b", re.I),
    re.compile(r"\bdata[ \t]*-?[ \t]*width[ \t]*(?:of|=|:|is)?[ \t]*(\d+)" + _INT_END, re.I),
    re.compile(r"\bdw[ \t]*[=:][ \t]*(\d+)" + _INT_END, re.I),
]
_WW_RULES = [
    re.compile(r"(?<![\w.])(\d+)[ \t]*-?[ \t]*bits?[ \t]+weights?\b", re.I),
    re.compile(r"\bweights?[ \t]*-?[ \t]*width[ \t]*(?:of|=|:|is)?[ \t]*(\d+)" + _INT_END, re.I),
    re.compile(r"\bww[ \t]*[=:][ \t]*(\d+)" + _INT_END, re.I),
]
_BOTH_WIDTH_RULES = [
    re.compile(r"(?<![\w.])(\d+)[ \t]*-?[ \t]*bits?[ \t]+(?:precision|operands?)\b", re.I),
]

# unit -> (field, factor)
_QUANTITY_UNITS = {
    "mw": ("power_mw", Decimal(1)),
    "w": ("power_mw", Decimal(1000)),
    "mm2": ("area_mm2", Decimal(1)),
    "mm^2": ("area_mm2", Decimal(1)),
    "mm²": ("area_mm2", Decimal(1)),
    "um2": ("area_mm2", Decimal("1e-6")),
    "um^2": ("area_mm2", Decimal("1e-6")),
    "um²": ("area_mm2", Decimal("1e-6")),
    "µm2": ("area_mm2", Decimal("1e-6")),
    "µm²": ("area_mm2", Decimal("1e-6")),
    "ms": ("latency_ms", Decimal(1)),
    "s": ("latency_ms", Decimal(1000)),
    "us": ("latency_ms", Decimal("1e-3")),
    "µs": ("latency_ms", Decimal("1e-3")),
    "ns": ("clock_period_ns", Decimal(1)),
}
_QUANTITY_RE = re.compile(
    r"(?<![\w.])(" + _NUM + r")\s*("
    + "|".join(re.escape(u) for u in sorted(_QUANTITY_UNITS, key=len, reverse=True))
    + r")(?![\w^²])",
    re.I,
)

_PARAMS = r"[a-z_]\w*[ \t]*=[ \t]*\d+(?:[ \t]*,[ \t]*[a-z_]\w*[ \t]*=[ \t]*\d+)*"
_ROLE_WORDS = {"multiplier": "mult", "mult": "mult", "multipliers": "mult",
               "adder": "adder", "adders": "adder", "accumulator": "adder",
               "accumulators": "adder"}
_ALIASES = {"truncated": "trunc"}
_EXACT_CONTEXT = re.compile(r"^\s*(?:tpu|design|array|systolic|accelerator|arithmetic|units?|mac|pe|processing)\b", re.I)
_ROLE_PREFIX = re.compile(r"\b(multiplier|adder|accumulator)(?:\s+unit)?\s*(?::|=|is|of)?\s*$", re.I)

_LABEL_RULES = [
    re.compile(r"^[ \t]*label[ \t]*[:=][ \t]*(\S+)[ \t]*$", re.I | re.M),
    re.compile(r"\b(?:named|called)\s+([A-Za-z0-9][\w.\-]*)", re.I),
]
_FOR_RULE = re.compile(r"\bfor\s+(?:the\s+)?([A-Z][\w.\-]*)")
_LABEL_RE = re.compile(r"^[A-Za-z0-9][\w.\-]*$")


def _unit_names():
    names = set(MULTIPLIERS) | set(ADDERS) | set(_ALIASES)
    return sorted(names, key=len, reverse=True)


def _unit_regex():
    alt = "|".join(re.escape(n).replace("_", "[_-]") for n in _unit_names())
    return re.compile(
        r"(?<![\w-])(?P<name>" + alt + r")(?![\w])"
        r"(?:[ \t]*:[ \t]*(?P<p1>" + _PARAMS + r"))?"
        r"(?:[ \t]*-?[ \t]*(?P<role>multipliers?|mult|adders?|accumulators?)\b)?"
        r"(?:[ \t]*(?:with|,|:|\()?[ \t]*(?P<p2>" + _PARAMS + r")\)?)?",
        re.I,
    )


class _Collector:
    def __init__(self):
        self.found: dict[str, list[tuple[object, str]]] = {}

    def add(self, name, value, text):
        self.found.setdefault(name, []).append((value, text.strip()))

    def resolve(self) -> dict:
        out = {}
        for name, matches in self.found.items():
            values = []
            for v, _ in matches:
                if v not in values:
                    values.append(v)
            if len(values) > 1:
                raise AmbiguityError(name, matches)
            out[name] = values[0]
        return out


def _mask_spans(text: str, spans) -> str:
    chars = list(text)
    for start, end in spans:
        for i in range(start, end):
            if chars[i] != "\n":
                chars[i] = " "
    return "".join(chars)


def _parse_params(text: Optional[str]) -> list[tuple[str, int]]:
    if not text:
        return []
    out = []
    for item in text.split(","):
        key, _, value = item.partition("=")
        out.append((key.strip().lower(), int(value)))
    return out


def parse_spec(text: str) -> DesignSpec:
    """Extract whatever features ``text`` states; unmatched features stay None."""
    if not text or not text.strip():
        raise SpecError("empty design description")
    col = _Collector()

    # labels first; their spans are blanked so a label never feeds other rules
    spans = []
    for rule in _LABEL_RULES:
        for m in rule.finditer(text):
            col.add("label", m.group(1), m.group(0))
            spans.append(m.span(1))
    unit_words = {n.lower() for n in _unit_names()}
    for m in _FOR_RULE.finditer(text):
        if m.group(1).lower() in unit_words:
            continue
        col.add("label", m.group(1), m.group(0))
        spans.append(m.span(1))
    body = _mask_spans(text, spans)

    for rule in _SIZE_RULES:
        for m in rule.finditer(body):
            rows = int(m.group(1))
            cols = int(m.group(2)) if m.lastindex and m.lastindex >= 2 else rows
            col.add("rows", rows, m.group(0))
            col.add("cols", cols, m.group(0))
    for rules, names in ((_DW_RULES, ("dw",)), (_WW_RULES, ("ww",)), (_BOTH_WIDTH_RULES, ("dw", "ww"))):
        for rule in rules:
            for m in rule.finditer(body):
                for name in names:
                    col.add(name, int(m.group(1)), m.group(0))

    budget_parts = {}
    for m in _QUANTITY_RE.finditer(body):
        field_name, factor = _QUANTITY_UNITS[m.group(2).lower()]
        value = float(Decimal(m.group(1)) * factor)
        target = "clock_period_ns" if field_name == "clock_period_ns" else "budget." + field_name
        col.add(target, value, m.group(0))
        budget_parts[field_name] = True

    for m in _unit_regex().finditer(body):
        name = m.group("name").lower().replace("-", "_")
        name = _ALIASES.get(name, name)
        params = _parse_params(m.group("p1")) + _parse_params(m.group("p2"))
        role = _ROLE_WORDS.get((m.group("role") or "").lower())
        if role is None:
            prefix = _ROLE_PREFIX.search(body[:m.start()])
            if prefix:
                role = _ROLE_WORDS[prefix.group(1).lower()]
        if role is None:
            in_mult, in_add = name in MULTIPLIERS, name in ADDERS
            if in_mult and not in_add:
                role = "mult"
            elif in_add and not in_mult:
                role = "adder"
            elif name == "exact" and not params and _EXACT_CONTEXT.match(body[m.end():]):
                col.add("mult", Unit("mult", "exact"), m.group(0))
                col.add("adder", Unit("adder", "exact"), m.group(0))
                continue
            else:
                raise AmbiguityError("unit", [(f"{name} as multiplier or adder", m.group(0))])
        try:
            unit = Unit(role, name, tuple(params))
        except ArithParamError as e:
            raise SpecError(f"in {m.group(0).strip()!r}: {e}") from None
        col.add(role, unit, m.group(0))

    found = col.resolve()
    budget = None
    bvals = {k.split(".", 1)[1]: v for k, v in found.items() if k.startswith("budget.")}
    if bvals:
        budget = Budget(**bvals)
    return DesignSpec(
        rows=found.get("rows"),
        cols=found.get("cols"),
        dw=found.get("dw"),
        ww=found.get("ww"),
        mult=found.get("mult"),
        adder=found.get("adder"),
        budget=budget,
        label=found.get("label"),
        clock_period_ns=found.get("clock_period_ns"),
    )


# ---------------------------------------------------------------------------
# canonical form


def _default_label(spec: DesignSpec) -> str:
    features = replace(spec, label=None).to_json()
    return "tpu-" + hashlib.sha256(features.encode()).hexdigest()[:8]


def canonicalize(spec: DesignSpec) -> DesignSpec:
    """Bind every unbound feature to its default and range-check the result.

    Defaults: 8x8 array, 8-bit data and weights, exact multiplier and adder,
    2 ns clock, no budget.  Unit parameters are made explicit at the operand
    width max(dw, ww).
    """
    rows, cols = spec.rows, spec.cols
    if rows is None and cols is None:
        rows = cols = 8
    elif rows is None:
        rows = cols
    elif cols is None:
        cols = rows
    for v in (rows, cols):
        if v not in SUPPORTED_SIZES:
            raise SpecValidationError(f"array dimension {v} not in {SUPPORTED_SIZES}")
    dw = 8 if spec.dw is None else spec.dw
    ww = 8 if spec.ww is None else spec.ww
    if dw not in DATA_WIDTHS:
        raise SpecValidationError(f"data width {dw} not in {DATA_WIDTHS}")
    if ww not in WEIGHT_WIDTHS:
        raise SpecValidationError(f"weight width {ww} outside [3, 32]")
    width = max(dw, ww)
    try:
        mult = (spec.mult or Unit("mult", "exact")).resolved(width)
        adder = (spec.adder or Unit("adder", "exact")).resolved(width)
    except ArithParamError as e:
        raise SpecValidationError(str(e)) from None
    budget = spec.budget
    if budget is not None:
        for name, v in budget.items():
            if not v > 0:
                raise SpecValidationError(f"budget {name} must be positive, got {v}")
        if not budget.items():
            budget = None
    clock = DEFAULT_CLOCK_NS if spec.clock_period_ns is None else float(spec.clock_period_ns)
    if not clock > 0:
        raise SpecValidationError(f"clock period must be positive, got {clock}")
    out = DesignSpec(rows, cols, dw, ww, mult, adder, budget, None, clock)
    label = spec.label if spec.label is not None else _default_label(out)
    if not _LABEL_RE.match(label):
        raise SpecValidationError(f"label {label!r} must be a single token of [A-Za-z0-9_.-]")
    return replace(out, label=label)


def _fmt(x: float) -> str:
    s = repr(float(x))
    return s[:-2] if s.endswith(".0") else s


def render_prompt(spec: DesignSpec) -> str:
    """Fixed multi-line prompt; byte-stable for a given canonical spec."""
    if not spec.is_bound():
        raise SpecError("render_prompt needs a canonicalized spec")
    if spec.budget is None:
        budget = "none"
    else:
        parts = []
        for name, unit, what in (("power_mw", "mW", "power"), ("area_mm2", "mm2", "area"),
                                 ("latency_ms", "ms", "latency")):
            v = getattr(spec.budget, name)
            if v is not None:
                parts.append(f"{_fmt(v)} {unit} {what}")
        budget = ", ".join(parts)
    return "\n".join([
        PROMPT_HEADER,
        "Task: write the top-level Verilog module of an output-stationary systolic-array TPU.",
        f"Label: {spec.label}",
        f"Array size: {spec.rows}x{spec.cols}",
        f"Data width: {spec.dw} bits",
        f"Weight width: {spec.ww} bits",
        f"Multiplier: {spec.mult}",
        f"Adder: {spec.adder}",
        f"Clock period: {_fmt(spec.clock_period_ns)} ns",
        f"Budget: {budget}",
    ]) + "\n"
