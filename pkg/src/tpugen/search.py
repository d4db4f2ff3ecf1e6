"""Budget-constrained configuration search over PPA entries.

An entry is a (TpuConfig, PpaMetrics) pair, taken from dataset records or
from the mock model over a grid.  The scan is exhaustive.  Ties on the
objective fall back to (power, area, latency) and then to the configuration
sort key, which keeps the choice deterministic and never dominated.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .config import TpuConfig
from .ppa import PpaMetrics, Workload, mock_ppa
from .spec_parser import Budget

__all__ = [
    "OBJECTIVES",
    "SearchError",
    "Entry",
    "SearchOutcome",
    "entries_from_records",
    "entries_from_grid",
    "feasible",
    "slack",
    "search",
    "pareto_front",
    "deviation_report",
]

OBJECTIVES = ("power", "area", "latency", "weighted")
_FIELDS = {"power": "power_mw", "area": "area_mm2", "latency": "latency_ms"}


class SearchError(ValueError):
    pass


@dataclass(frozen=True)
class Entry:
    config: TpuConfig
    ppa: PpaMetrics

    @property
    def vector(self) -> tuple:
        return (self.ppa.power_mw, self.ppa.area_um2, self.ppa.latency_ms)

    def to_dict(self) -> dict:
        return {"config": self.config.to_dict(), "ppa": self.ppa.to_dict()}


@dataclass
class SearchOutcome:
    chosen: Entry
    feasible: bool
    feasible_count: int
    slack: dict                              # metric -> budget minus value (positive = headroom)
    pareto: list = field(default_factory=list)
    objective: str = "power"

    def to_dict(self) -> dict:
        return {"verdict": "feasible" if self.feasible else "infeasible", "objective": self.objective,
                "chosen": self.chosen.to_dict(), "feasible_count": self.feasible_count,
                "slack": self.slack, "pareto": [e.to_dict() for e in self.pareto]}


def entries_from_records(records) -> list:
    return [Entry(r.config, r.ppa) for r in records]


def entries_from_grid(configs, workload: Workload = Workload()) -> list:
    return [Entry(c, mock_ppa(c, workload)) for c in configs]


def _value(ppa: PpaMetrics, metric: str) -> float:
    return getattr(ppa, _FIELDS[metric])


def _limits(budget: Budget) -> dict:
    return {m: getattr(budget, f) for m, f in _FIELDS.items() if getattr(budget, f) is not None}


def slack(ppa: PpaMetrics, budget: Budget) -> dict:
    """Per constrained metric: budget minus value, in mW / mm^2 / ms."""
    return {m: limit - _value(ppa, m) for m, limit in _limits(budget).items()}


def feasible(ppa: PpaMetrics, budget: Budget) -> bool:
    return all(s >= 0 for s in slack(ppa, budget).values())


def _violation(ppa: PpaMetrics, budget: Budget) -> float:
    return sum(max(0.0, (_value(ppa, m) - lim) / lim) for m, lim in _limits(budget).items())


def _objective_fn(objective: str, budget: Budget, entries, weights: Optional[dict]):
    if objective not in OBJECTIVES:
        raise SearchError(f"unknown objective {objective!r}; choose from {OBJECTIVES}")
    if objective != "weighted":
        return lambda e: _value(e.ppa, objective)
    weights = dict(weights or {"power": 1.0, "area": 1.0, "latency": 1.0})
    if set(weights) - set(_FIELDS) or any(w < 0 for w in weights.values()):
        raise SearchError(f"weights must be non-negative and keyed by {sorted(_FIELDS)}")
    limits = _limits(budget)
    norm = {}
    for m in weights:
        ref = limits.get(m) or max(_value(e.ppa, m) for e in entries)
        norm[m] = ref if ref > 0 else 1.0
    return lambda e: sum(w * _value(e.ppa, m) / norm[m] for m, w in sorted(weights.items()))


def search(budget: Budget, entries, objective: str = "power", weights: Optional[dict] = None) -> SearchOutcome:
    """Objective minimizer among budget-feasible entries.

    With no feasible entry the least-violating entry (sum of relative
    overshoots) is returned, flagged infeasible.
    """
    entries = list(entries)
    if not entries:
        raise SearchError("search source is empty")
    obj = _objective_fn(objective, budget, entries, weights)
    ok = [e for e in entries if feasible(e.ppa, budget)]
    if ok:
        chosen = min(ok, key=lambda e: (obj(e), e.vector, e.config.sort_key()))
    else:
        chosen = min(entries, key=lambda e: (_violation(e.ppa, budget), obj(e), e.vector, e.config.sort_key()))
    return SearchOutcome(chosen, bool(ok), len(ok), slack(chosen.ppa, budget), pareto_front(entries), objective)


def _dominates(a: tuple, b: tuple) -> bool:
    return all(x <= y for x, y in zip(a, b)) and a != b


def pareto_front(entries) -> list:
    """Entries not dominated on (power, area, latency); input order kept."""
    entries = list(entries)
    order = sorted(range(len(entries)), key=lambda i: entries[i].vector)
    front = []        # vectors kept so far, all lexicographically <= the current one
    keep = set()
    for i in order:
        v = entries[i].vector
        if any(_dominates(f, v) for f in front):
            continue
        front.append(v)
        keep.add(i)
    return [e for i, e in enumerate(entries) if i in keep]


def deviation_report(chosen: PpaMetrics, reference: Budget) -> dict:
    """Signed relative deviation (value - reference) / reference per given metric."""
    return {m: (_value(chosen, m) - lim) / lim for m, lim in _limits(reference).items()}
