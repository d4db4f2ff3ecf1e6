import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles as O
from tpugen.arith import (ADDERS, MULTIPLIERS, ArithParamError, MacConfig, Unit, UnknownUnitError, accumulate,
                          acc_width_for, approx_add, approx_mul, ape_core_mul, asm_nibble_table, has_conditioning,
                          mac_step, mac_step_checked, mitchell_mul, parse_unit, pau_condition, roba_round)


# [PAPER] published multiplier hyper-parameter defaults
@pytest.mark.parametrize("kind,param,expect", [
    ("bam", "vbl", lambda w: w // 2),
    ("alm_loa", "m", lambda w: w // 2),
    ("alm_maa3", "m", lambda w: w // 2),
    ("alm_soa", "m", lambda w: w // 2),
    ("asm", "nibble_width", lambda w: 4),
    ("dralm", "mult_dw", lambda w: w // 2),
    ("roba", "round_width", lambda w: 1),
])
@pytest.mark.parametrize("w", [8, 16, 32])
def test_published_parameter_defaults(kind, param, expect, w):
    assert Unit("mult", kind).param_dict(w)[param] == expect(w)


def test_registry_contents():
    assert set(ADDERS) == {"exact", "loa", "loa_nocarry", "trunc", "soa"}
    assert set(MULTIPLIERS) == {"exact", "bam", "alm_loa", "alm_maa3", "alm_soa", "asm", "dralm", "roba", "drum",
                                "trunc"}


def test_docstring_example():
    assert approx_mul(parse_unit("drum:k=3", "mult"), 8, 12, 10) == 140


def test_parse_unit_forms():
    u = parse_unit(" DRUM : k = 5 , unbias=0 ", "mult")
    assert str(u) == "drum:k=5,unbias=0"
    assert parse_unit("alm-loa:m=3", "mult").kind == "alm_loa"
    assert parse_unit("drum:unbias=1,k=4", "mult") == parse_unit("drum:k=4,unbias=1", "mult")
    with pytest.raises(UnknownUnitError):
        parse_unit("wallace", "mult")
    with pytest.raises(UnknownUnitError):
        parse_unit("bam:k=3", "mult")
    with pytest.raises(ArithParamError):
        parse_unit("bam:vbl", "mult")
    with pytest.raises(ArithParamError):
        parse_unit("bam:vbl=x", "mult")
    with pytest.raises(ArithParamError):
        parse_unit("bam:vbl=1,vbl=2", "mult")


def test_resolved_is_width_independent_for_constants():
    assert str(Unit("mult", "roba").resolved(8)) == "roba"
    assert str(Unit("mult", "drum").resolved(16)) == "drum:k=8"
    assert str(Unit("mult", "asm").resolved(8)) == "asm"
    assert str(Unit("adder", "loa").resolved(20)) == "loa:m=10"
    assert str(Unit("adder", "exact").resolved(20)) == "exact"


@pytest.mark.parametrize("text,w", [("bam:vbl=16", 8), ("drum:k=1", 8), ("drum:unbias=2", 8), ("dralm:mult_dw=8", 8),
                                    ("trunc:mult_dw=9", 8), ("asm:nibble_width=3", 8), ("asm:alphabets=9", 8),
                                    ("roba:round_width=5", 8), ("alm_loa:m=9", 8), ("exact", 1), ("exact", 65)])
def test_illegal_parameters(text, w):
    with pytest.raises(ArithParamError):
        parse_unit(text, "mult").param_dict(w)


def test_adder_param_range():
    with pytest.raises(ArithParamError):
        Unit("adder", "loa", (("m", 9),)).param_dict(8)
    with pytest.raises(ArithParamError):
        Unit("adder", "loa").param_dict(129)


def test_operand_range_checked():
    with pytest.raises(ArithParamError):
        approx_mul(Unit("mult", "exact"), 4, 16, 1)
    with pytest.raises(ArithParamError):
        approx_add(Unit("adder", "exact"), 4, -1, 1)
    with pytest.raises(ArithParamError):
        approx_add(Unit("mult", "exact"), 4, 1, 1)


def test_acc_width():
    assert acc_width_for(8) == 28
    assert acc_width_for(16) == 44
    assert acc_width_for(8, 1) == 16


# [DERIVED] hand-checked values
def test_known_values():
    assert mitchell_mul(8, 3, 3) == 8
    assert mitchell_mul(8, 0, 7) == 0
    assert approx_mul(Unit("mult", "roba"), 8, 3, 5) == 4 * 5 + 4 * 3 - 16
    assert approx_add(Unit("adder", "loa", (("m", 2),)), 8, 0b0111, 0b0011) == 0b1011
    assert approx_add(Unit("adder", "soa", (("m", 3),)), 8, 8, 8) == 23
    assert approx_add(Unit("adder", "trunc", (("m", 3),)), 8, 15, 15) == 16
    assert roba_round(8, 6) == 3 and roba_round(8, 5) == 2 and roba_round(8, 255) == 7
    assert asm_nibble_table(4, 2)[:8] == (0, 1, 2, 3, 4, 4, 6, 6)


mult_kinds = st.sampled_from(sorted(MULTIPLIERS))


@st.composite
def unit_and_operands(draw):
    w = draw(st.sampled_from([4, 8, 12, 16]))
    kind = draw(mult_kinds)
    u = Unit("mult", kind)
    try:
        u.param_dict(w)
    except ArithParamError:
        u = Unit("mult", "exact")
    a = draw(st.integers(0, (1 << w) - 1))
    b = draw(st.integers(0, (1 << w) - 1))
    return u, w, a, b


@given(unit_and_operands())
def test_matches_oracle(case):
    u, w, a, b = case
    assert approx_mul(u, w, a, b) == O.MULT_ORACLES[u.kind](w, u.param_dict(w), a, b)


@given(unit_and_operands())
def test_zero_annihilates_and_fits(case):
    u, w, a, b = case
    assert approx_mul(u, w, 0, b) == 0 and approx_mul(u, w, a, 0) == 0
    assert 0 <= approx_mul(u, w, a, b) < 1 << (2 * w)


@given(unit_and_operands())
def test_symmetry_flag(case):
    u, w, a, b = case
    if MULTIPLIERS[u.kind].symmetric:
        assert approx_mul(u, w, a, b) == approx_mul(u, w, b, a)


@given(unit_and_operands(), st.booleans(), st.booleans())
def test_pau_then_core_signed(case, neg_a, neg_b):
    u, w, a, b = case
    ca = pau_condition(u, w, -a if neg_a else a)
    cb = pau_condition(u, w, -b if neg_b else b)
    mag = approx_mul(u, w, a, b)
    sign = -1 if (neg_a != neg_b) and a and b else 1
    assert ape_core_mul(u, w, ca, cb) == sign * mag


def test_conditioning_set():
    assert {k for k in MULTIPLIERS if has_conditioning(Unit("mult", k))} == {"dralm", "roba", "drum"}


@given(st.sampled_from(sorted(ADDERS)), st.integers(2, 40), st.data())
def test_adders_against_oracle(kind, w, data):
    m = 0 if kind == "exact" else data.draw(st.integers(0, w))
    u = Unit("adder", kind, () if kind == "exact" else (("m", m),))
    a = data.draw(st.integers(0, (1 << w) - 1))
    b = data.draw(st.integers(0, (1 << w) - 1))
    got = approx_add(u, w, a, b)
    assert got == O.ADDER_ORACLES[kind](w, m, a, b)
    assert got < 1 << (w + 1)
    # the high part is always exact up to the carry policy
    assert abs(got - (a + b)) < 1 << max(m, 1) + 1


def test_mac_config_and_step():
    cfg = MacConfig(Unit("mult", "exact"), Unit("adder", "exact"), 8)
    assert cfg.acc_width == 28
    assert mac_step(cfg, 5, 3, 4) == 17
    acc, wrapped = mac_step_checked(MacConfig(Unit("mult", "exact"), Unit("adder", "exact"), 8, 16), 65535, 1, 1)
    assert (acc, wrapped) == (0, True)
    with pytest.raises(ArithParamError):
        MacConfig(Unit("mult", "exact"), Unit("adder", "exact"), 8, 15)
    with pytest.raises(ArithParamError):
        mac_step_checked(cfg, 1 << 28, 1, 1)


def test_zero_product_skips_adder():
    # an SOA accumulator would force low ones; a zero product must leave acc alone
    cfg = MacConfig(Unit("mult", "exact"), Unit("adder", "soa", (("m", 4),)), 8)
    assert accumulate(cfg, 0, 0) == (0, False)
    assert accumulate(cfg, 0, 1)[0] == 15
