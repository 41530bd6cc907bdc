import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from she_lab.coefficients import (
    Coefficient,
    MollifierLadder,
    SampleSpec,
    check_growth,
    check_holder_sigma,
    check_lipschitz,
    cutoff,
    ladder_eval,
    mollify_drift,
    parse_coefficient,
    power_law_pair,
    recompose,
)
from she_lab.errors import ConfigError, ParameterOutOfRegime

DRIFT = parse_coefficient("power_drift:0.9")
LADDER = MollifierLadder(DRIFT)

# values of b_m(u) = int -|v|^0.9 G_{2^-m}(u - v) Psi_m(v) dv from adaptive scipy quad
ORACLE_B_AT_1 = {
    4: -0.9970712482660353,
    5: -0.9985664380724116,
    6: -0.9992903063266119,
    7: -0.999646824263253,
    8: -0.9998238188799746,
    9: -0.9999120098272475,
    10: -0.9999560298524237,
}
ORACLE_B_AT_03 = {4: -0.35925654678275937, 8: -0.3377041327631922, 12: -0.3383420902412815}


def test_registry_labels():
    u = np.array([-2.0, 0.0, 3.0])
    assert np.all(parse_coefficient("zero")(0, 0, u) == 0)
    assert np.all(parse_coefficient("const:2.5")(0, 0, u) == 2.5)
    assert np.all(parse_coefficient("linear:-1")(0, 0, u) == -u)
    assert np.allclose(parse_coefficient("power_sigma:0.8")(0, 0, u), np.abs(u) ** 0.8)
    assert np.allclose(parse_coefficient("power_drift:0.9")(0, 0, u), -np.abs(u) ** 0.9)
    assert np.allclose(parse_coefficient("sqrt")(0, 0, u), [0.0, 0.0, math.sqrt(3)])
    s = parse_coefficient("power_drift:0.95 + const:0.5")
    assert np.allclose(s(0, 0, u), -np.abs(u) ** 0.95 + 0.5)


@pytest.mark.parametrize("label", ["cubic:2", "const", "const:x", "power_sigma:1.5", "zero:1"])
def test_registry_rejects(label):
    with pytest.raises(ConfigError):
        parse_coefficient(label)


def test_declared_holder_index_in_regime():
    with pytest.raises(ParameterOutOfRegime):
        Coefficient(lambda t, x, u: u, holder_index=0.7)
    assert parse_coefficient("power_sigma:0.8").holder_index == 0.8
    assert parse_coefficient("power_sigma:0.5").holder_index is None


def test_cutoff_values():
    assert cutoff(3, 2.5) == 1.0
    assert cutoff(3, -6.0) == 0.0
    assert 0.0 < cutoff(3, 4.0) < 1.0


def test_cutoff_slope_bounded():
    x = np.arange(-7000, 7001) * 1e-3
    psi = cutoff(3, x)
    assert np.max(np.abs(np.diff(psi) / 1e-3)) <= 1.0
    assert np.array_equal(psi, psi[::-1])
    assert np.all(psi[np.abs(x) <= 3] == 1.0) and np.all(psi[np.abs(x) >= 5] == 0.0)


@given(st.integers(1, 20), st.floats(-40, 40))
def test_cutoff_range(n, x):
    v = cutoff(n, x)
    assert 0.0 <= v <= 1.0
    assert v == cutoff(n, -x)


def test_mollify_zero():
    assert mollify_drift(parse_coefficient("zero"), 5, 0.0, 0.0, 1.3) == 0.0


def test_mollify_constant():
    assert abs(mollify_drift(parse_coefficient("const:1"), 8, 0.0, 0.0, 0.0) - 1.0) < 1e-3


def test_mollify_power_drift_oracle():
    v = mollify_drift(DRIFT, 8, 0.0, 0.0, 1.0)
    assert v == pytest.approx(ORACLE_B_AT_1[8], abs=1e-9)
    assert abs(v + 1.0) < 2.0**-8


@pytest.mark.parametrize("m", [4, 8, 12])
def test_mollify_near_origin_oracle(m):
    assert mollify_drift(DRIFT, m, 0.0, 0.0, 0.3) == pytest.approx(ORACLE_B_AT_03[m], abs=1e-9)


def test_ladder_single_level():
    assert ladder_eval(LADDER, 6, 6, 0.0, 0.0, 1.0) == mollify_drift(DRIFT, 6, 0.0, 0.0, 1.0)


def test_ladder_min_oracle():
    assert ladder_eval(LADDER, 4, 10, 0.0, 0.0, 1.0) == pytest.approx(min(ORACLE_B_AT_1.values()), abs=1e-9)


U = np.linspace(-6.0, 6.0, 97)


def test_ladder_decreasing_in_k():
    prev = ladder_eval(LADDER, 3, 3, 0.0, 0.0, U)
    for k in range(4, 12):
        cur = ladder_eval(LADDER, 3, k, 0.0, 0.0, U)
        assert np.all(cur <= prev)
        prev = cur


def test_ladder_limit_increasing_in_n_and_below_b():
    tables = [LADDER.min_table(n, 24) for n in (4, 8, 12, 16)]
    g = LADDER.grid
    inside = np.abs(g) <= 4
    for lo, hi in zip(tables, tables[1:]):
        assert np.all(hi[inside] >= lo[inside] - 1e-9)
    assert np.all(tables[-1] <= DRIFT(0, 0, g) + 1e-4)
    assert np.max(np.abs(tables[-1] - DRIFT(0, 0, g))[inside]) < np.max(np.abs(tables[0] - DRIFT(0, 0, g))[inside])


def test_tabulated_drift_matches_direct():
    drift = LADDER.drift(8, 12)
    u = np.array([-3.3, -0.01, 0.0, 0.77, 11.9, 13.5])
    # linear interpolation on the 1/256 table; the error peaks at the kink near u = 0
    assert np.allclose(drift(0, 0, u), ladder_eval(LADDER, 8, 12, 0.0, 0.0, u), rtol=0, atol=1e-4)
    assert drift(0, 0, u)[-1] == ladder_eval(LADDER, 8, 12, 0.0, 0.0, 13.5)


def test_mollified_growth_and_lipschitz():
    m = 6
    u = np.linspace(-10, 10, 2001)
    bm = mollify_drift(DRIFT, m, 0.0, 0.0, u)
    assert np.all(np.abs(bm) <= 1.0 + np.abs(u))
    slopes = np.abs(np.diff(bm) / np.diff(u))
    assert slopes.max() < 10.0


def test_mollified_converges_pointwise():
    u = np.array([-2.0, -0.5, 0.25, 1.0, 3.0])
    errs = [np.max(np.abs(mollify_drift(DRIFT, m, 0.0, 0.0, u) - DRIFT(0, 0, u))) for m in (4, 8, 12, 16)]
    assert all(b < a for a, b in zip(errs, errs[1:]))


def test_growth_checks():
    assert check_growth(parse_coefficient("power_sigma:0.8"), 1.0, 1.0).passed
    sq = Coefficient(lambda t, x, u: u * u, "square")
    rep = check_growth(sq, 1.0, 100.0)
    assert not rep.passed and abs(rep.witness["u"]) > 99
    zero = check_growth(parse_coefficient("zero"), 1.0, 1.0)
    assert zero.passed and zero.worst_ratio == 0.0


def test_holder_checks():
    s = parse_coefficient("power_sigma:0.8")
    assert check_holder_sigma(s, 0.8, 1.0, 0.0, 0.0).passed
    lin = parse_coefficient("linear:1")
    assert not check_holder_sigma(lin, 0.8, 1.0, 0.0, 0.0).passed
    assert check_holder_sigma(lin, 0.8, 1.0, 0.0, 1.0).passed
    const = check_holder_sigma(parse_coefficient("const:3"), 0.8, 1.0, 0.0, 0.0)
    assert const.passed and const.worst_ratio == 0.0


def test_lipschitz_checks():
    assert check_lipschitz(parse_coefficient("linear:-1"), 1.0).passed
    rep = check_lipschitz(DRIFT, 1000.0)
    assert not rep.passed
    assert min(abs(rep.witness["u"]), abs(rep.witness["u_prime"])) < 1e-3
    five = check_lipschitz(parse_coefficient("const:5"), 1.0)
    assert five.passed and five.worst_ratio == 0.0


def test_check_respects_custom_samples():
    rep = check_growth(parse_coefficient("linear:2"), 1.0, 2.0, SampleSpec(n_random=10, u_max_decades=2))
    assert rep.passed and rep.n_checked == 3 * 3 * 35 + 10


def test_power_law_pair_values():
    sigma, b, z = power_law_pair(0.8, 1.0)
    assert b(0, 0, 2.0) == -2.0
    assert sigma(0, 0, 2.0) == pytest.approx(1.7411011265922482, rel=1e-14)
    assert z(0, 0, 2.0) == pytest.approx(1.148698354997035, rel=1e-14)
    assert -z(0, 0, 2.0) * sigma(0, 0, 2.0) == pytest.approx(-2.0, rel=1e-14)
    assert sigma(0, 0, 0.0) == b(0, 0, 0.0) == z(0, 0, 0.0) == 0.0
    assert sigma.holder_index == 0.8


def test_power_law_pair_regime():
    with pytest.raises(ParameterOutOfRegime):
        power_law_pair(0.7, 0.8)
    with pytest.raises(ParameterOutOfRegime):
        power_law_pair(0.9, 0.85)


@given(st.floats(0.76, 0.99), st.floats(-1e3, 1e3))
def test_power_law_identity(p, u):
    q = min(1.0, p + 0.01 + (1 - p) / 2)
    sigma, b, z = power_law_pair(p, q)
    rec = recompose(z, sigma, -1.0)
    assert rec(0, 0, u) == pytest.approx(b(0, 0, u), rel=1e-12, abs=1e-300)
