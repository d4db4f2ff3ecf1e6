import json
from dataclasses import replace

import pytest
from hypothesis import given
from hypothesis import strategies as st

from tpugen.arith import ADDERS, MULTIPLIERS, Unit, parse_unit
from tpugen.spec_parser import (DATA_WIDTHS, PROMPT_HEADER, SUPPORTED_SIZES, WEIGHT_WIDTHS, AmbiguityError, Budget,
                                DesignSpec, SpecError, SpecValidationError, canonicalize, parse_spec, render_prompt)


def test_unbound_features_stay_none():
    s = parse_spec("make it 16x16 please")
    assert (s.rows, s.cols) == (16, 16)
    assert s.dw is s.ww is s.mult is s.adder is s.budget is s.label is None


def test_empty_text_rejected():
    with pytest.raises(SpecError):
        parse_spec("   ")


def test_units_and_roles():
    s = parse_spec("8x8 TPU with a drum:k=5 multiplier and loa m=3 adder, 8-bit data, 4-bit weights")
    assert s.mult == parse_unit("drum:k=5", "mult")
    assert s.adder == parse_unit("loa:m=3", "adder")
    assert (s.dw, s.ww) == (8, 4)


def test_trunc_role_from_prefix():
    # trunc exists as both multiplier and adder; the role word decides
    s = parse_spec("multiplier: trunc mult_dw=2; adder: trunc m=3")
    assert s.mult.kind == "trunc" and s.adder.kind == "trunc"
    assert s.adder.params == (("m", 3),)


def test_exact_binds_both_roles():
    s = parse_spec("exact arithmetic units on a 4x4 array")
    assert s.mult == Unit("mult", "exact") and s.adder == Unit("adder", "exact")


def test_contradiction_raises():
    with pytest.raises(AmbiguityError) as ei:
        parse_spec("an 8x8 array ... actually a 16x16 array")
    assert ei.value.field in ("rows", "cols")
    # repeating the same value is not a contradiction
    assert parse_spec("8x8 array, yes 8x8").rows == 8


def test_bare_trunc_is_ambiguous():
    with pytest.raises(AmbiguityError):
        parse_spec("use trunc everywhere")


def test_bad_unit_params():
    with pytest.raises(SpecError):
        parse_spec("bam multiplier with k=3")


def test_budget_units():
    s = parse_spec("8x8, power under 0.5 W, area 250000 um2, latency 1500 us, clock 2.5 ns")
    assert s.budget == Budget(power_mw=500.0, area_mm2=0.25, latency_ms=1.5)
    assert s.clock_period_ns == 2.5


def test_label():
    assert canonicalize(parse_spec("label: edge_v2\n4x4 array")).label == "edge_v2"
    assert parse_spec("a 4x4 array named edge-3").label == "edge-3"


def test_canonical_defaults():
    s = canonicalize(DesignSpec())
    assert (s.rows, s.cols, s.dw, s.ww) == (8, 8, 8, 8)
    assert str(s.mult) == "exact" and str(s.adder) == "exact"
    assert s.clock_period_ns == 2.0 and s.budget is None
    assert s.label.startswith("tpu-") and s.is_bound()
    # the default label depends on features only
    assert canonicalize(DesignSpec()).label == s.label
    assert canonicalize(DesignSpec(dw=16)).label != s.label


def test_canonical_resolves_params_at_operand_width():
    s = canonicalize(DesignSpec(dw=8, ww=16, mult=Unit("mult", "drum"), adder=Unit("adder", "loa")))
    assert str(s.mult) == "drum:k=8,unbias=1" or str(s.mult) == "drum:k=8"
    assert str(s.adder) == "loa:m=8"


def test_canonical_fills_single_dimension():
    assert canonicalize(DesignSpec(rows=16)).cols == 16
    assert canonicalize(DesignSpec(cols=4)).rows == 4


@pytest.mark.parametrize("spec", [
    DesignSpec(rows=12), DesignSpec(dw=12), DesignSpec(ww=2), DesignSpec(ww=33),
    DesignSpec(mult=Unit("mult", "bam", (("vbl", 40),))),
    DesignSpec(budget=Budget(power_mw=0.0)), DesignSpec(clock_period_ns=-1.0),
    DesignSpec(label="two words"),
])
def test_canonical_rejects(spec):
    with pytest.raises(SpecValidationError):
        canonicalize(spec)


def test_dict_round_trip():
    s = canonicalize(DesignSpec(budget=Budget(area_mm2=0.3), mult=Unit("mult", "roba")))
    assert DesignSpec.from_dict(json.loads(s.to_json())) == s


def test_prompt_shape():
    p = render_prompt(canonicalize(DesignSpec(rows=4, budget=Budget(power_mw=12.5))))
    lines = p.splitlines()
    assert lines[0] == PROMPT_HEADER
    assert "Array size: 4x4" in lines
    assert any(line.startswith("Budget:") and "12.5" in line for line in lines)
    assert p.endswith("\n")


@st.composite
def canonical_specs(draw):
    dw = draw(st.sampled_from(DATA_WIDTHS))
    ww = draw(st.sampled_from(WEIGHT_WIDTHS))
    w = max(dw, ww)

    def unit(role, registry):
        kind = draw(st.sampled_from(sorted(registry)))
        u = Unit(role, kind)
        params = tuple((n, draw(st.integers(0, w))) for n in u.accepted_params() if draw(st.booleans()))
        cand = Unit(role, kind, params)
        try:
            cand.param_dict(w)
            return cand
        except ValueError:
            return u if _legal(u, w) else Unit(role, "exact")

    size = draw(st.sampled_from(SUPPORTED_SIZES))
    budget = draw(st.one_of(st.none(), st.builds(
        Budget,
        power_mw=st.one_of(st.none(), st.integers(1, 10**4).map(lambda v: v / 100)),
        area_mm2=st.one_of(st.none(), st.integers(1, 10**4).map(lambda v: v / 1000)),
        latency_ms=st.one_of(st.none(), st.integers(1, 10**5).map(lambda v: v / 10)))))
    label = draw(st.one_of(st.none(), st.from_regex(r"[a-z][a-z0-9_]{0,10}", fullmatch=True)))
    clock = draw(st.one_of(st.none(), st.sampled_from([0.5, 1.0, 2.0, 3.3, 10.0])))
    return canonicalize(DesignSpec(size, size, dw, ww, unit("mult", MULTIPLIERS), unit("adder", ADDERS),
                                   budget, label, clock))


def _legal(u, w):
    try:
        u.param_dict(w)
        return True
    except ValueError:
        return False


@given(canonical_specs())
def test_prompt_round_trip(spec):
    assert canonicalize(parse_spec(render_prompt(spec))) == spec


@given(canonical_specs())
def test_canonicalize_idempotent(spec):
    assert canonicalize(spec) == spec
    assert canonicalize(replace(spec, label=None)).label.startswith("tpu-")
