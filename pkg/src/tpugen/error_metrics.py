"""Error statistics for approximate units and whole-array configurations.

Distances are summed as integers and divided exactly at the end; the mean
relative error is summed with ``math.fsum`` (correctly rounded, so order
independent).  Reported means carry 12 significant digits.  MRED skips pairs
whose exact result is 0.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from fractions import Fraction

import numpy as np

from .arith import MULTIPLIERS, Unit, adder_fn, mult_fn
from .config import TpuConfig
from .simulator import SimError, reference_matmul, tiled_matmul

__all__ = [
    "ErrorReport",
    "MatErrorReport",
    "MetricsError",
    "EXHAUSTIVE_MAX_W",
    "exhaustive_report",
    "sampled_report",
    "unit_report",
    "matmul_error",
    "is_symmetric",
]

EXHAUSTIVE_MAX_W = 10
SIG_DIGITS = 12


class MetricsError(ValueError):
    pass


def _sig(x) -> float:
    return float(f"{float(x):.{SIG_DIGITS}g}")


@dataclass(frozen=True)
class ErrorReport:
    med: float
    nmed: float
    mred: float
    max_ed: int
    error_rate: float
    n_evaluated: int
    mode: str

    def to_dict(self) -> dict:
        return asdict(self)

    def statistics(self) -> dict:
        """Everything except ``mode``, for comparing sweeps."""
        d = asdict(self)
        del d["mode"]
        return d


@dataclass(frozen=True)
class MatErrorReport:
    med: float          # mean |C_approx - C_exact| over output elements
    rel_fro: float      # ||C_approx - C_exact||_F / ||C_exact||_F
    max_ed: int
    n_elements: int
    cycles: int

    def to_dict(self) -> dict:
        return asdict(self)


def _unit_fn(unit: Unit, width: int):
    if unit.role == "mult":
        return mult_fn(unit, width), (lambda a, b: a * b), ((1 << width) - 1) ** 2
    return adder_fn(unit, width), (lambda a, b: a + b), (1 << (width + 1)) - 2


def _stats(unit: Unit, width: int, pairs, mode: str) -> ErrorReport:
    approx, exact, norm = _unit_fn(unit, width)
    n = 0
    total_ed = 0
    max_ed = 0
    wrong = 0
    rel = []
    for a, b in pairs:
        e = exact(a, b)
        ed = abs(approx(a, b) - e)
        n += 1
        if ed:
            wrong += 1
            total_ed += ed
            if ed > max_ed:
                max_ed = ed
        if e:
            rel.append(ed / e)
    if n == 0:
        raise MetricsError("no operand pairs evaluated")
    med = Fraction(total_ed, n)
    mred = math.fsum(rel) / len(rel) if rel else 0.0
    return ErrorReport(_sig(med), _sig(med / norm), _sig(mred), max_ed, _sig(Fraction(wrong, n)), n, mode)


def _check_unit_width(unit: Unit, width: int):
    if width < 1:
        raise MetricsError("width must be positive")
    unit.param_dict(width)


def exhaustive_report(unit: Unit, width: int) -> ErrorReport:
    """Statistics over all 2^(2W) operand pairs."""
    _check_unit_width(unit, width)
    if width > EXHAUSTIVE_MAX_W:
        raise MetricsError(f"exhaustive evaluation limited to W <= {EXHAUSTIVE_MAX_W} "
                           f"(2^{2 * width} pairs requested); use sampled_report")
    r = range(1 << width)
    return _stats(unit, width, ((a, b) for a in r for b in r), "exhaustive")


def _sample_pairs(width: int, n: int, seed: int, distinct: bool) -> list:
    rng = np.random.Generator(np.random.PCG64(seed))
    total = 1 << (2 * width)
    if not distinct:
        hi = 1 << width
        a = rng.integers(0, hi, size=n, dtype=np.uint64)
        b = rng.integers(0, hi, size=n, dtype=np.uint64)
        return list(zip(a.tolist(), b.tolist()))
    if n > total:
        raise MetricsError(f"cannot draw {n} distinct pairs from {total}")
    if total <= 1 << 24:
        codes = rng.permutation(total)[:n].tolist()
    else:
        seen, codes = set(), []
        while len(codes) < n:
            for c in rng.integers(0, total, size=n - len(codes), dtype=np.uint64).tolist():
                if c not in seen:
                    seen.add(c)
                    codes.append(c)
    mask = (1 << width) - 1
    return [(c >> width, c & mask) for c in codes]


def sampled_report(unit: Unit, width: int, n_samples: int, seed: int = 0, distinct: bool = False) -> ErrorReport:
    """Statistics over uniformly drawn pairs (numpy PCG64 seeded with ``seed``).

    ``distinct`` draws without replacement; with n = 2^(2W) it is a full sweep.
    """
    _check_unit_width(unit, width)
    if n_samples < 1:
        raise MetricsError("n_samples must be at least 1")
    if not 0 <= seed < 1 << 64:
        raise MetricsError("seed must be a 64-bit unsigned integer")
    pairs = _sample_pairs(width, n_samples, seed, distinct)
    tag = f"sampled(seed={seed}{',distinct' if distinct else ''})"
    return _stats(unit, width, pairs, tag)


def unit_report(unit: Unit, width: int, mode: str = "auto", n_samples: int = 100_000, seed: int = 0) -> ErrorReport:
    """Exhaustive up to EXHAUSTIVE_MAX_W, sampled above (``mode`` 'auto')."""
    if mode == "exhaustive" or (mode == "auto" and width <= EXHAUSTIVE_MAX_W):
        return exhaustive_report(unit, width)
    if mode in ("sampled", "auto"):
        return sampled_report(unit, width, n_samples, seed)
    raise MetricsError(f"unknown mode {mode!r}")


def is_symmetric(unit: Unit) -> bool:
    return unit.role == "adder" or MULTIPLIERS[unit.kind].symmetric


def matmul_error(cfg: TpuConfig, A, B) -> MatErrorReport:
    """Compare the array's output with the exact product."""
    try:
        approx, cycles = tiled_matmul(cfg, A, B)
        exact = reference_matmul(A, B)
    except SimError as e:
        raise MetricsError(str(e)) from None
    total, sq_diff, sq_ref, max_ed, n = 0, 0, 0, 0, 0
    for ra, re_ in zip(approx, exact):
        for x, y in zip(ra, re_):
            d = abs(x - y)
            total += d
            sq_diff += d * d
            sq_ref += y * y
            max_ed = max(max_ed, d)
            n += 1
    if sq_ref:
        rel = math.sqrt(Fraction(sq_diff, sq_ref))
    else:
        rel = 0.0 if sq_diff == 0 else math.inf
    return MatErrorReport(_sig(Fraction(total, n)), _sig(rel), max_ed, n, cycles)
