import pytest
from hypothesis import given
from hypothesis import strategies as st

from tpugen.config import TpuConfig
from tpugen.dataset import GridSpec, enumerate_grid
from tpugen.ppa import PpaMetrics
from tpugen.search import (Entry, SearchError, deviation_report, entries_from_grid, feasible, pareto_front, search,
                           slack)
from tpugen.spec_parser import Budget


def _e(p, a_um2, lat, S=4):
    return Entry(TpuConfig(S, 8, 8), PpaMetrics(a_um2, p, 1.0, lat, "t"))


def test_slack_and_feasible():
    ppa = PpaMetrics(250_000.0, 10.0, 1.0, 5.0, "t")
    b = Budget(power_mw=12.0, area_mm2=0.2)
    assert slack(ppa, b) == pytest.approx({"power": 2.0, "area": -0.05})
    assert not feasible(ppa, b)
    assert feasible(ppa, Budget(latency_ms=5.0))
    assert deviation_report(ppa, Budget(power_mw=8.0)) == pytest.approx({"power": 0.25})


def test_picks_min_power_among_feasible():
    entries = [_e(5, 100, 9), _e(3, 900, 1), _e(4, 100, 1)]
    out = search(Budget(area_mm2=0.0005), entries)
    assert out.feasible and out.feasible_count == 2
    assert out.chosen is entries[2]
    assert out.to_dict()["verdict"] == "feasible"


def test_other_objectives():
    entries = [_e(5, 100, 9), _e(3, 900, 1), _e(4, 50, 2)]
    assert search(Budget(), entries, "area").chosen is entries[2]
    assert search(Budget(), entries, "latency").chosen is entries[1]
    w = search(Budget(), entries, "weighted", {"latency": 1.0})
    assert w.chosen is entries[1]
    with pytest.raises(SearchError):
        search(Budget(), entries, "speed")
    with pytest.raises(SearchError):
        search(Budget(), entries, "weighted", {"power": -1.0})
    with pytest.raises(SearchError):
        search(Budget(), [])


def test_infeasible_returns_least_violation():
    entries = [_e(50, 100, 1), _e(12, 100, 1), _e(11, 100, 1.0)]
    out = search(Budget(power_mw=10.0, latency_ms=0.5), entries)
    assert not out.feasible and out.feasible_count == 0
    assert out.chosen is entries[2]
    assert out.slack["power"] == pytest.approx(-1.0)


def test_ties_break_deterministically():
    a, b = _e(1, 100, 1, S=8), _e(1, 100, 1, S=4)
    assert search(Budget(), [a, b]).chosen is b
    assert search(Budget(), [b, a]).chosen is b


def test_pareto_front():
    entries = [_e(1, 5, 5), _e(2, 2, 2), _e(3, 3, 3), _e(1, 5, 5), _e(5, 1, 9)]
    front = pareto_front(entries)
    assert entries[2] not in front
    assert front == [entries[0], entries[1], entries[3], entries[4]]


vec = st.tuples(st.integers(1, 6), st.integers(1, 6), st.integers(1, 6))


@given(st.lists(vec, min_size=1, max_size=25))
def test_pareto_matches_quadratic_definition(vs):
    entries = [_e(p, a, l) for p, a, l in vs]
    front = pareto_front(entries)
    for e in entries:
        dominated = any(all(x <= y for x, y in zip(o.vector, e.vector)) and o.vector != e.vector for o in entries)
        assert (e in front) == (not dominated)


@given(st.lists(vec, min_size=1, max_size=25), st.integers(1, 8), st.integers(1, 8))
def test_search_matches_filter_then_min(vs, pmax, lmax):
    entries = [_e(p, a, l) for p, a, l in vs]
    budget = Budget(power_mw=float(pmax), latency_ms=float(lmax))
    out = search(budget, entries)
    ok = [e for e in entries if e.ppa.power_mw <= pmax and e.ppa.latency_ms <= lmax]
    assert out.feasible == bool(ok) and out.feasible_count == len(ok)
    if ok:
        assert out.chosen.ppa.power_mw == min(e.ppa.power_mw for e in ok)


def test_entries_from_grid():
    cfgs = list(enumerate_grid(GridSpec.from_dict({"sizes": [4, 8], "mults": ["exact", "bam"]})))
    entries = entries_from_grid(cfgs)
    assert len(entries) == 4
    out = search(Budget(), entries, "area")
    assert out.chosen.config.S == 4 and out.chosen.config.mult.kind == "bam"
