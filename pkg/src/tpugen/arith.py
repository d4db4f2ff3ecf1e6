"""Bit-accurate behavioral models of exact and approximate adders and multipliers.

Every model works on unsigned magnitudes held in Python ints.  Multipliers that
have an operand pre-processing stage expose it as a separate conditioning step
(the PAU, pre-approximate unit) plus a core multiply (the APE datapath), so the
systolic simulator can condition an operand once per row/column and reuse it in
every cell.

Units are named with a small specifier syntax, ``NAME[:param=value,...]``::

    >>> u = parse_unit("drum:k=3", "mult")
    >>> approx_mul(u, 8, 12, 10)
    140
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional

__all__ = [
    "ArithParamError",
    "UnknownUnitError",
    "Unit",
    "AdderRule",
    "MultRule",
    "ConditionedOperand",
    "MacConfig",
    "ADDERS",
    "MULTIPLIERS",
    "register_adder",
    "register_multiplier",
    "parse_unit",
    "approx_add",
    "approx_mul",
    "pau_condition",
    "ape_core_mul",
    "mac_step",
    "mac_step_checked",
    "accumulate",
    "ape_core_fn",
    "has_conditioning",
    "mitchell_mul",
    "K_MAX",
    "acc_width_for",
]

K_MAX = 4096


class ArithParamError(ValueError):
    """A width or unit parameter is out of its legal range."""


class UnknownUnitError(ArithParamError):
    """A unit name or parameter name is not registered."""


def _mask(n: int) -> int:
    return (1 << n) - 1


def acc_width_for(width: int, k_max: int = K_MAX) -> int:
    """Accumulator width with guard bits for ``k_max`` accumulations."""
    return 2 * width + max(0, math.ceil(math.log2(k_max)))


# ---------------------------------------------------------------------------
# registry

@dataclass(frozen=True)
class AdderRule:
    name: str
    evaluate: Callable[[int, int, int, int], int]  # (width, m, a, b) -> sum
    description: str = ""
    accepts_m: bool = True


@dataclass(frozen=True)
class MultRule:
    """A multiplier variant.

    ``defaults`` maps each accepted parameter to its default: an int for a
    width-independent default, or a function of the operand width.  ``check`` raises ArithParamError for an
    illegal (width, params) pair.  ``condition``/``core`` are present only for
    variants with an operand pre-processing stage.
    """

    name: str
    defaults: dict
    check: Callable[[int, dict], None]
    evaluate: Callable[[int, dict, int, int], int]
    condition: Optional[Callable[[int, dict, int], "ConditionedOperand"]] = None
    core: Optional[Callable[[int, dict, "ConditionedOperand", "ConditionedOperand"], int]] = None
    description: str = ""
    symmetric: bool = True


ADDERS: dict[str, AdderRule] = {}
MULTIPLIERS: dict[str, MultRule] = {}
_BOUND: dict = {}  # (role, unit, width) -> evaluator; cleared on registration


def register_adder(rule: AdderRule) -> AdderRule:
    ADDERS[rule.name] = rule
    _BOUND.clear()
    return rule


def register_multiplier(rule: MultRule) -> MultRule:
    MULTIPLIERS[rule.name] = rule
    _BOUND.clear()
    return rule


# ---------------------------------------------------------------------------
# unit specifiers

_UNIT_RE = re.compile(r"^\s*([A-Za-z][A-Za-z0-9_-]*)\s*(?::\s*(.*))?$")


@dataclass(frozen=True, order=True)
class Unit:
    """An arithmetic unit choice: role ("mult" or "adder"), registry name and
    explicit parameter values.

    Parameters left out take their width-dependent defaults when the unit is
    evaluated; :meth:`resolved` pins them for a given width.
    """

    role: str
    kind: str
    params: tuple = field(default=())

    def __post_init__(self):
        if self.role not in ("mult", "adder"):
            raise ValueError(f"unknown unit role {self.role!r}")
        registry = MULTIPLIERS if self.role == "mult" else ADDERS
        if self.kind not in registry:
            raise UnknownUnitError(f"unknown {self.role} {self.kind!r}; known: {sorted(registry)}")
        accepted = self.accepted_params()
        for name, value in self.params:
            if name not in accepted:
                raise UnknownUnitError(f"{self.kind} does not accept parameter {name!r}")
            if not isinstance(value, int) or isinstance(value, bool):
                raise ArithParamError(f"parameter {name} must be an integer, got {value!r}")
        names = [n for n, _ in self.params]
        if len(set(names)) != len(names):
            raise ArithParamError(f"duplicate parameter in {self}")
        # keep params in the rule's declaration order so equal units compare equal
        order = {n: i for i, n in enumerate(accepted)}
        object.__setattr__(self, "params", tuple(sorted(self.params, key=lambda p: order[p[0]])))

    def accepted_params(self) -> list[str]:
        if self.role == "adder":
            return ["m"] if ADDERS[self.kind].accepts_m else []
        return list(MULTIPLIERS[self.kind].defaults)

    def param_dict(self, width: int) -> dict[str, int]:
        """All parameters at ``width``: explicit values over defaults, validated."""
        if self.role == "adder":
            values = {"m": width // 2} if ADDERS[self.kind].accepts_m else {"m": 0}
            values.update(self.params)
            _check_adder(width, values["m"])
            return values
        rule = MULTIPLIERS[self.kind]
        values = {name: fn(width) if callable(fn) else fn for name, fn in rule.defaults.items()}
        values.update(self.params)
        _check_width(width)
        rule.check(width, values)
        return values

    def resolved(self, width: int) -> "Unit":
        """Canonical form at ``width``: width-dependent defaults made explicit.

        Parameters with a constant default are dropped when at that default,
        so the canonical form does not depend on the width it was taken at.
        """
        values = self.param_dict(width)
        if self.role == "adder":
            if not ADDERS[self.kind].accepts_m:
                values = {}
        else:
            defaults = MULTIPLIERS[self.kind].defaults
            values = {k: v for k, v in values.items()
                      if callable(defaults[k]) or v != defaults[k]}
        return Unit(self.role, self.kind, tuple(values.items()))

    def get(self, name: str, default=None):
        return dict(self.params).get(name, default)

    def __str__(self) -> str:
        if not self.params:
            return self.kind
        return self.kind + ":" + ",".join(f"{k}={v}" for k, v in self.params)

    @property
    def is_exact_kind(self) -> bool:
        return self.kind == "exact"


def parse_unit(text: str, role: str) -> Unit:
    """Parse ``NAME[:param=value,...]``; names are case-insensitive."""
    m = _UNIT_RE.match(text)
    if not m:
        raise ArithParamError(f"malformed unit specifier {text!r}")
    name = m.group(1).lower().replace("-", "_")
    params = []
    if m.group(2):
        for item in m.group(2).split(","):
            item = item.strip()
            if not item:
                continue
            key, sep, value = item.partition("=")
            if not sep:
                raise ArithParamError(f"malformed parameter {item!r} in {text!r}")
            try:
                params.append((key.strip().lower(), int(value.strip())))
            except ValueError:
                raise ArithParamError(f"parameter {key.strip()} needs an integer value in {text!r}") from None
    return Unit(role, name, tuple(params))


def _check_width(width: int) -> None:
    if not isinstance(width, int) or not 2 <= width <= 64:
        raise ArithParamError(f"operand width must be in [2, 64], got {width!r}")


def _check_adder(width: int, m: int) -> None:
    # accumulator adders run at 2W + guard bits, beyond the 64-bit operand cap
    if not isinstance(width, int) or not 2 <= width <= 128:
        raise ArithParamError(f"adder width must be in [2, 128], got {width!r}")
    if not 0 <= m <= width:
        raise ArithParamError(f"imprecise part m={m} outside [0, {width}]")


def _check_operands(width: int, a: int, b: int) -> None:
    limit = 1 << width
    if not (0 <= a < limit and 0 <= b < limit):
        raise ArithParamError(f"operands ({a}, {b}) do not fit in {width} bits")


# ---------------------------------------------------------------------------
# adders


def _add_exact(width, m, a, b):
    return a + b


def _add_loa(width, m, a, b):
    if m == 0:
        return a + b
    cin = (a >> (m - 1)) & (b >> (m - 1)) & 1
    high = (a >> m) + (b >> m) + cin
    return (high << m) | ((a | b) & _mask(m))


def _add_loa_nocarry(width, m, a, b):
    if m == 0:
        return a + b
    return (((a >> m) + (b >> m)) << m) | ((a | b) & _mask(m))


def _add_trunc(width, m, a, b):
    return ((a >> m) + (b >> m)) << m


def _add_soa(width, m, a, b):
    return (((a >> m) + (b >> m)) << m) | _mask(m)


register_adder(AdderRule("exact", _add_exact, "exact ripple adder", accepts_m=False))
register_adder(AdderRule("loa", _add_loa, "lower-part OR adder with carry from the top inexact bit pair"))
register_adder(AdderRule("loa_nocarry", _add_loa_nocarry, "lower-part OR adder without carry-in"))
register_adder(AdderRule("trunc", _add_trunc, "truncated adder: low bits forced to zero"))
register_adder(AdderRule("soa", _add_soa, "set-one adder: low bits forced to one"))


def _bound_adder(unit: Unit, width: int):
    key = ("adder", unit, width)
    if key not in _BOUND:
        m = unit.param_dict(width).get("m", 0)
        fn = ADDERS[unit.kind].evaluate
        _BOUND[key] = lambda a, b: fn(width, m, a, b)
    return _BOUND[key]


def approx_add(unit: Unit, width: int, a: int, b: int) -> int:
    """Approximate sum of two ``width``-bit operands; result has width+1 bits."""
    if unit.role != "adder":
        raise ArithParamError(f"{unit} is not an adder")
    _check_operands(width, a, b)
    return _bound_adder(unit, width)(a, b)


# ---------------------------------------------------------------------------
# conditioned operands


@dataclass(frozen=True)
class ConditionedOperand:
    """Output of a PAU: the operand reduced to ``mantissa << shift``.

    ``raw`` keeps the unconditioned magnitude; RoBA's core needs both the
    rounded and the original operand.
    """

    mantissa: int
    shift: int = 0
    sign: int = 1
    raw: int = 0

    @property
    def value(self) -> int:
        return self.mantissa << self.shift


def _identity_condition(width, params, x):
    return ConditionedOperand(x, 0, 1, x)


# ---------------------------------------------------------------------------
# Mitchell logarithmic multiply


def _log_fields(width: int):
    frac = width - 1
    char_bits = max(1, (width - 1).bit_length())
    return frac, char_bits


def _mitchell_log(x: int, frac: int) -> int:
    k = x.bit_length() - 1
    return (k << frac) | ((x - (1 << k)) << (frac - k))


def mitchell_mul(width: int, a: int, b: int, log_adder: Optional[Unit] = None, m: int = 0) -> int:
    """Mitchell multiply: add fixed-point log2 approximations, then antilog.

    The log values carry ``width-1`` fraction bits; ``log_adder`` with
    imprecise part ``m`` sums them (exact when omitted).  The result wraps to
    2*width bits, as the hardware does.
    """
    if a == 0 or b == 0:
        return 0
    frac, char_bits = _log_fields(width)
    la, lb = _mitchell_log(a, frac), _mitchell_log(b, frac)
    if log_adder is None or m == 0:
        total = la + lb
    else:
        total = ADDERS[log_adder.kind].evaluate(frac + char_bits, m, la, lb)
    k = total >> frac
    mant = (1 << frac) | (total & _mask(frac))
    if k >= frac:
        out = mant << (k - frac)
    else:
        out = mant >> (frac - k)
    return out & _mask(2 * width)


# ---------------------------------------------------------------------------
# multipliers


def _need(cond: bool, msg: str) -> None:
    if not cond:
        raise ArithParamError(msg)


def _check_none(width, p):
    pass


def _mul_exact(width, p, a, b):
    return a * b


register_multiplier(MultRule("exact", {}, _check_none, _mul_exact, description="exact array multiplier"))


def _check_bam(width, p):
    _need(0 <= p["vbl"] <= 2 * width - 1, f"bam vbl={p['vbl']} outside [0, {2 * width - 1}]")


def _mul_bam(width, p, a, b):
    vbl = p["vbl"]
    total = 0
    for j in range(width):
        if (b >> j) & 1:
            lo = vbl - j
            if lo <= 0:
                total += a << j
            elif lo < width:
                total += ((a >> lo) << lo) << j
    return total


register_multiplier(MultRule(
    "bam", {"vbl": lambda w: w // 2}, _check_bam, _mul_bam,
    description="broken-array multiplier: partial-product bits in columns below vbl omitted"))


def _check_alm(width, p):
    _need(0 <= p["m"] <= width, f"alm m={p['m']} outside [0, {width}]")


def _alm(adder_kind):
    log_adder = []

    def evaluate(width, p, a, b):
        if not log_adder:
            log_adder.append(Unit("adder", adder_kind))
        return mitchell_mul(width, a, b, log_adder[0], p["m"])
    return evaluate


# MAA3 cell logic is not published; it reuses LOA semantics until a truth table
# for the MAA3 cell is supplied (register a replacement rule named "alm_maa3").
for _name, _adder in (("alm_loa", "loa"), ("alm_maa3", "loa"), ("alm_soa", "soa")):
    register_multiplier(MultRule(
        _name, {"m": lambda w: w // 2}, _check_alm, _alm(_adder),
        description=f"Mitchell logarithmic multiplier, log sum through a {_adder.upper()} adder"))


def _check_asm(width, p):
    nw, al = p["nibble_width"], p["alphabets"]
    _need(1 <= nw <= width and width % nw == 0, f"asm nibble_width={nw} must divide width {width}")
    _need(1 <= al <= 1 << (nw - 1), f"asm alphabets={al} outside [1, {1 << (nw - 1)}]")


@lru_cache(maxsize=None)
def asm_nibble_table(nibble_width: int, alphabets: int) -> tuple:
    """Value each nibble is approximated to: the largest odd-alphabet multiple
    ``a * 2**s`` not above it, with a drawn from {1, 3, ..., 2*alphabets-1}."""
    table = [0]
    reachable = sorted({a << s for a in range(1, 2 * alphabets, 2)
                        for s in range(nibble_width) if (a << s) < (1 << nibble_width)})
    for v in range(1, 1 << nibble_width):
        table.append(max(x for x in reachable if x <= v))
    return tuple(table)


def _mul_asm(width, p, a, b):
    nw = p["nibble_width"]
    table = asm_nibble_table(nw, p["alphabets"])
    total = 0
    for i in range(width // nw):
        total += (a * table[(b >> (i * nw)) & _mask(nw)]) << (i * nw)
    return total


register_multiplier(MultRule(
    "asm", {"nibble_width": 4, "alphabets": 4}, _check_asm, _mul_asm,
    description="alphabet-set multiplier: multiplier nibbles recoded onto odd alphabet multiples",
    symmetric=False))


def _check_dralm(width, p):
    _need(0 <= p["mult_dw"] < width, f"dralm mult_dw={p['mult_dw']} outside [0, {width - 1}]")


def _dralm_condition(width, p, x):
    d = p["mult_dw"]
    return ConditionedOperand(x >> d, d, 1, x)


def _dralm_core(width, p, ca, cb):
    return mitchell_mul(width, ca.value, cb.value)


def _mul_dralm(width, p, a, b):
    d = p["mult_dw"]
    return mitchell_mul(width, (a >> d) << d, (b >> d) << d)


register_multiplier(MultRule(
    "dralm", {"mult_dw": lambda w: w // 2}, _check_dralm, _mul_dralm,
    _dralm_condition, _dralm_core,
    description="operand-truncating Mitchell logarithmic multiplier"))


def _check_roba(width, p):
    _need(1 <= p["round_width"] <= 4, f"roba round_width={p['round_width']} outside [1, 4]")


def roba_round(width: int, x: int) -> int:
    """Exponent of the power of two nearest ``x`` (ties up), saturated at width-1."""
    if x == 0:
        return 0
    k = x.bit_length() - 1
    if k > 0 and (x >> (k - 1)) & 1:
        k += 1
    return min(k, width - 1)


def _roba_condition(width, p, x):
    if x == 0:
        return ConditionedOperand(0, 0, 1, 0)
    return ConditionedOperand(1, roba_round(width, x), 1, x)


def _roba_core(width, p, ca, cb):
    ar, br = ca.value, cb.value
    return ar * cb.raw + br * ca.raw - ar * br


def _mul_roba(width, p, a, b):
    return _roba_core(width, p, _roba_condition(width, p, a), _roba_condition(width, p, b))


register_multiplier(MultRule(
    "roba", {"round_width": 1}, _check_roba, _mul_roba,
    _roba_condition, _roba_core,
    description="rounding-based multiplier: operands rounded to powers of two"))


def _check_drum(width, p):
    _need(2 <= p["k"] <= width, f"drum k={p['k']} outside [2, {width}]")
    _need(p["unbias"] in (0, 1), "drum unbias must be 0 or 1")


def _drum_condition(width, p, x):
    k = p["k"]
    n = x.bit_length()
    if n <= k:
        return ConditionedOperand(x, 0, 1, x)
    t = n - k
    seg = x >> t
    if p["unbias"]:
        seg |= 1
    return ConditionedOperand(seg, t, 1, x)


def _drum_core(width, p, ca, cb):
    return (ca.mantissa * cb.mantissa) << (ca.shift + cb.shift)


def _mul_drum(width, p, a, b):
    return _drum_core(width, p, _drum_condition(width, p, a), _drum_condition(width, p, b))


register_multiplier(MultRule(
    "drum", {"k": lambda w: w // 2, "unbias": 1}, _check_drum, _mul_drum,
    _drum_condition, _drum_core,
    description="dynamic-range unbiased multiplier: k-bit leading-one segments"))


def _check_trunc(width, p):
    _need(0 <= p["mult_dw"] <= width, f"trunc mult_dw={p['mult_dw']} outside [0, {width}]")


def _mul_trunc(width, p, a, b):
    d = p["mult_dw"]
    return ((a >> d) << d) * ((b >> d) << d)


register_multiplier(MultRule(
    "trunc", {"mult_dw": lambda w: w // 2}, _check_trunc, _mul_trunc,
    description="operand-truncated exact multiplier"))


# ---------------------------------------------------------------------------
# evaluation entry points


def _bound_mult(unit: Unit, width: int):
    key = ("mult", unit, width)
    if key not in _BOUND:
        params = unit.param_dict(width)
        fn = MULTIPLIERS[unit.kind].evaluate

        def mul(a, b):
            if a == 0 or b == 0:
                return 0
            return fn(width, params, a, b)
        _BOUND[key] = mul
    return _BOUND[key]


def mult_fn(unit: Unit, width: int) -> Callable[[int, int], int]:
    """Validated two-argument callable for ``unit`` at ``width`` (no range checks)."""
    if unit.role != "mult":
        raise ArithParamError(f"{unit} is not a multiplier")
    return _bound_mult(unit, width)


def adder_fn(unit: Unit, width: int) -> Callable[[int, int], int]:
    if unit.role != "adder":
        raise ArithParamError(f"{unit} is not an adder")
    return _bound_adder(unit, width)


def approx_mul(unit: Unit, width: int, a: int, b: int) -> int:
    """Approximate product of two ``width``-bit unsigned operands."""
    fn = mult_fn(unit, width)
    _check_operands(width, a, b)
    return fn(a, b)


def has_conditioning(unit: Unit) -> bool:
    """True when the multiplier needs a PAU in front of its core."""
    return MULTIPLIERS[unit.kind].condition is not None


def pau_condition(unit: Unit, width: int, x: int) -> ConditionedOperand:
    """Pre-approximate an operand.

    Negative ``x`` is handled in sign-magnitude form: the magnitude is
    conditioned and the sign carried through to the core.
    """
    params = unit.param_dict(width)
    sign = -1 if x < 0 else 1
    mag = -x if x < 0 else x
    if mag >= 1 << width:
        raise ArithParamError(f"operand {x} does not fit in {width} bits")
    rule = MULTIPLIERS[unit.kind]
    cond = (rule.condition or _identity_condition)(width, params, mag)
    if sign < 0:
        cond = ConditionedOperand(cond.mantissa, cond.shift, -1, cond.raw)
    return cond


def ape_core_fn(unit: Unit, width: int) -> Callable[[ConditionedOperand, ConditionedOperand], int]:
    """Fast unsigned core multiply for conditioned operands (no range checks)."""
    key = ("core", unit, width)
    if key not in _BOUND:
        params = unit.param_dict(width)
        rule = MULTIPLIERS[unit.kind]
        if rule.core is None:
            fn = rule.evaluate

            def core(ca, cb):
                if ca.raw == 0 or cb.raw == 0:
                    return 0
                return fn(width, params, ca.raw, cb.raw)
        else:
            cfn = rule.core

            def core(ca, cb):
                if ca.raw == 0 or cb.raw == 0:
                    return 0
                return cfn(width, params, ca, cb)
        _BOUND[key] = core
    return _BOUND[key]


def ape_core_mul(unit: Unit, width: int, ca: ConditionedOperand, cb: ConditionedOperand) -> int:
    """Multiply two conditioned operands; the sign is the XOR of input signs."""
    params = unit.param_dict(width)
    rule = MULTIPLIERS[unit.kind]
    if ca.raw == 0 or cb.raw == 0:
        mag = 0
    elif rule.core is None:
        mag = rule.evaluate(width, params, ca.raw, cb.raw)
    else:
        mag = rule.core(width, params, ca, cb)
    if mag >> (2 * width):
        raise ArithParamError(f"{unit} product {mag} overflows {2 * width} bits")
    return mag if ca.sign * cb.sign > 0 else -mag


# ---------------------------------------------------------------------------
# MAC


@dataclass(frozen=True)
class MacConfig:
    """Multiplier at operand width plus accumulator adder at ``acc_width``."""

    mult: Unit
    adder: Unit
    width: int
    acc_width: int = 0

    def __post_init__(self):
        if not self.acc_width:
            object.__setattr__(self, "acc_width", acc_width_for(self.width))
        if self.acc_width < 2 * self.width:
            raise ArithParamError(f"acc_width {self.acc_width} below 2*width {2 * self.width}")
        self.mult.param_dict(self.width)
        self.adder.param_dict(self.acc_width)


def mac_step_checked(cfg: MacConfig, acc: int, a: int, b: int) -> tuple[int, bool]:
    """One multiply-accumulate; returns (new accumulator, wrapped)."""
    if not 0 <= acc < 1 << cfg.acc_width:
        raise ArithParamError(f"accumulator {acc} does not fit in {cfg.acc_width} bits")
    prod = approx_mul(cfg.mult, cfg.width, a, b)
    return accumulate(cfg, acc, prod)


def accumulate(cfg: MacConfig, acc: int, prod: int) -> tuple[int, bool]:
    """Add a product into the accumulator; returns (new accumulator, wrapped)."""
    # a zero product leaves the accumulator untouched whatever the adder
    if prod == 0:
        return acc, False
    total = adder_fn(cfg.adder, cfg.acc_width)(acc, prod)
    return total & _mask(cfg.acc_width), bool(total >> cfg.acc_width)


def mac_step(cfg: MacConfig, acc: int, a: int, b: int) -> int:
    return mac_step_checked(cfg, acc, a, b)[0]
