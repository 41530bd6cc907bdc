import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from she_lab.coefficients import Coefficient, MollifierLadder, parse_coefficient, power_law_pair
from she_lab.errors import BlowUp, DegenerateTrajectory, InitialOrderViolation, SupportViolation
from she_lab.kernel import semigroup_apply
from she_lab.lattice import Field, build_lattice
from she_lab.noise import sample_noise
from she_lab.solver import (
    SCHEME_VERSION,
    SolverConfig,
    Trajectory,
    em_step,
    holder_exponent_estimate,
    ladder_solution_sequence,
    mild_residual,
    simulate,
    simulate_coupled,
)

ZERO = parse_coefficient("zero")
ONE = parse_coefficient("const:1")
LIN = parse_coefficient("linear:1")
LAT = build_lattice(4.0, 0.1, 0.004, 0.2)


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(LAT, clamp_threshold=0)
    with pytest.raises(ValueError):
        SolverConfig(LAT, record_every=0)


def test_em_step_constant_is_harmonic(periodic_lattice):
    u = Field.constant(2.5, periodic_lattice)
    out = em_step(u, np.zeros(periodic_lattice.n_space), ZERO, ZERO, 0.0, periodic_lattice)
    assert np.array_equal(out.values, u.values)


def test_em_step_dirichlet_constant_interior():
    u = Field.constant(2.5, LAT)
    out = em_step(u, np.zeros(LAT.n_space), ZERO, ZERO, 0.0, LAT).values
    assert out[0] == out[-1] == 0.0
    assert np.all(out[2:-2] == 2.5)


def test_em_step_unit_drift_adds_dt():
    u = Field.from_function(lambda x: np.exp(-x * x), LAT)
    heat = em_step(u, np.zeros(LAT.n_space), ZERO, ZERO, 0.0, LAT).values
    forced = em_step(u, np.zeros(LAT.n_space), ZERO, ONE, 0.0, LAT).values
    assert np.allclose(forced[1:-1] - heat[1:-1], LAT.dt, rtol=0, atol=1e-15)


def test_em_step_update_formula():
    u = Field.from_function(lambda x: np.sin(x), LAT)
    row = sample_noise(LAT, 3).row(0)
    sigma = parse_coefficient("power_sigma:0.8")
    b = parse_coefficient("linear:-0.5")
    out = em_step(u, row, sigma, b, 0.0, LAT).values
    v, dx, dt = u.values, LAT.dx, LAT.dt
    j = np.arange(1, LAT.n_space - 1)
    expected = (v[j] + dt * ((v[j + 1] - 2 * v[j] + v[j - 1]) / (2 * dx * dx) - 0.5 * v[j])
                + np.abs(v[j]) ** 0.8 * row[j] / dx)
    assert np.allclose(out[j], expected, rtol=1e-14, atol=1e-15)


def test_em_step_additive_noise_variance():
    lat = build_lattice(50.0, 0.1, 0.004, 0.4)
    u = Field.constant(0.0, lat)
    samples = np.concatenate([
        em_step(u, sample_noise(lat, s).row(0), ONE, ZERO, 0.0, lat).values[1:-1] for s in range(20)
    ])
    assert abs(samples.var() / (lat.dt / lat.dx) - 1) < 0.02


def test_em_step_blowup():
    u = Field.constant(10.0, LAT)
    with pytest.raises(BlowUp):
        em_step(u, np.zeros(LAT.n_space), ZERO, ONE, 0.0, LAT, clamp_threshold=5.0)


def test_simulate_blowup_reports_step():
    big = parse_coefficient("const:1000")
    with pytest.raises(BlowUp) as info:
        simulate(SolverConfig(LAT, clamp_threshold=10.0), Field.constant(0.0, LAT), ZERO, big, 0)
    assert info.value.time_index == 3


def test_unit_drift_periodic_gives_t(periodic_lattice):
    lat = periodic_lattice
    traj = simulate(SolverConfig(lat), Field.constant(0.0, lat), ZERO, ONE, 0)
    assert np.max(np.abs(traj.values - traj.times[:, None])) < 1e-13


def test_delta_initial_data_follows_semigroup():
    lat = build_lattice(6.0, 0.1, 0.0025, 0.5)
    traj = simulate(SolverConfig(lat), Field.delta(lat), ZERO, ZERO, 0)
    ref = semigroup_apply(Field.delta(lat), lat.T).values
    inner = lat.interior_mask(6 * math.sqrt(lat.T))
    assert np.max(np.abs(traj.values[-1] - ref)[inner]) < lat.dx


def test_simulate_deterministic_and_streaming_equivalent():
    sigma = parse_coefficient("power_sigma:0.8")
    b = parse_coefficient("power_drift:0.9")
    u0 = Field.constant(1.0, LAT)
    a = simulate(SolverConfig(LAT), u0, sigma, b, sample_noise(LAT, 7))
    c = simulate(SolverConfig(LAT), u0, sigma, b, 7)
    assert np.array_equal(a.values, c.values)
    assert a.provenance == c.provenance
    assert a.provenance["scheme_version"] == SCHEME_VERSION and a.provenance["seed"] == 7


def test_record_every_subsamples():
    u0 = Field.constant(1.0, LAT)
    full = simulate(SolverConfig(LAT), u0, LIN, ZERO, 2)
    sub = simulate(SolverConfig(LAT, record_every=7), u0, LIN, ZERO, 2)
    steps = np.rint(sub.times / LAT.dt).astype(int)
    assert steps[0] == 0 and steps[-1] == LAT.n_time
    assert np.array_equal(sub.values, full.values[steps])


def test_trajectory_roundtrip(tmp_path):
    traj = simulate(SolverConfig(LAT, record_every=10), Field.constant(1.0, LAT), LIN, ZERO, 1)
    back = Trajectory.load(traj.save(tmp_path / "t.bin"))
    assert np.array_equal(back.values, traj.values) and np.array_equal(back.times, traj.times)
    assert back.provenance == traj.provenance
    lines = traj.to_csv(tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "t,x,u" and len(lines) == 1 + traj.values.size


def test_coupled_identical_inputs_bitwise():
    u0 = Field.constant(1.0, LAT)
    t1, t2 = simulate_coupled(SolverConfig(LAT), u0, u0, LIN, ONE, ONE, 4)
    assert np.array_equal(t1.values, t2.values)
    single = simulate(SolverConfig(LAT), u0, LIN, ONE, 4)
    assert np.array_equal(single.values, t1.values)


def test_coupled_consumes_each_row_once():
    class Counting:
        calls = 0

        def __call__(self, t, x, u):
            Counting.calls += 1
            return u

    sigma = Coefficient(Counting(), "counting")
    u0 = Field.constant(1.0, LAT)
    simulate_coupled(SolverConfig(LAT), u0, u0, sigma, ZERO, ONE, sample_noise(LAT, 0))
    # both members are evaluated together, one call per step
    assert Counting.calls == LAT.n_time


def test_coupled_initial_order():
    with pytest.raises(InitialOrderViolation):
        simulate_coupled(SolverConfig(LAT), Field.constant(2.0, LAT), Field.constant(1.0, LAT), LIN, ZERO, ZERO, 0)


def test_coupled_ordering_lipschitz():
    u0 = Field.constant(1.0, LAT)
    for seed in range(10):
        t1, t2 = simulate_coupled(SolverConfig(LAT), u0, u0, LIN, ZERO, ONE, seed)
        assert np.all(t2.values >= t1.values - 10 * LAT.dx)


@given(st.floats(-2.0, 2.0), st.floats(0.0, 1.0), st.integers(0, 2**32))
def test_coupled_ordering_property(c, gap, seed):
    lat = build_lattice(1.0, 0.1, 0.005, 0.05)
    u1, u2 = Field.constant(c, lat), Field.constant(c + gap, lat)
    b2 = parse_coefficient(f"const:{gap}")
    t1, t2 = simulate_coupled(SolverConfig(lat), u1, u2, LIN, ZERO, b2, seed)
    assert np.min(t2.values - t1.values) >= -10 * lat.dx


def test_mild_residual_zero_trajectory():
    lat = build_lattice(8.0, 0.1, 0.004, 1.0)
    traj = simulate(SolverConfig(lat), Field.constant(0.0, lat), LIN, ZERO, 0)
    phi = Field.from_function(lambda x: np.where(np.abs(x) < 1.5, (1.5**2 - x * x) ** 3, 0.0), lat)
    assert np.all(mild_residual(traj, phi, sample_noise(lat, 0), LIN, ZERO) == 0.0)


def _bump(x):
    out = np.zeros_like(x)
    inside = np.abs(x) < 1.5
    out[inside] = np.exp(-1.0 / (1.0 - (x[inside] / 1.5) ** 2))
    return out


def _deterministic_residual(dx):
    lat = build_lattice(8.0, dx, dx * dx / 4, 1.0)
    u0 = Field.from_function(lambda x: np.exp(-x * x), lat)
    traj = simulate(SolverConfig(lat), u0, ZERO, ZERO, 0)
    phi = Field.from_function(_bump, lat)
    return np.max(mild_residual(traj, phi, sample_noise(lat, 0), ZERO, ZERO))


def test_mild_residual_deterministic_refines():
    r = [_deterministic_residual(dx) for dx in (0.2, 0.1, 0.05)]
    assert r[0] > r[1] > r[2]
    assert r[2] < 1e-3


def test_mild_residual_support_violation():
    lat = build_lattice(8.0, 0.1, 0.004, 1.0)
    traj = simulate(SolverConfig(lat), Field.constant(0.0, lat), ZERO, ZERO, 0)
    with pytest.raises(SupportViolation):
        mild_residual(traj, Field.constant(1.0, lat), sample_noise(lat, 0), ZERO, ZERO)


def test_mild_residual_noisy_run_is_consistent():
    # the scheme satisfies the weak form up to the space discretization of phi''
    lat = build_lattice(8.0, 0.05, 0.001, 1.0)
    sigma = parse_coefficient("power_sigma:0.8")
    b = parse_coefficient("power_drift:0.9")
    noise = sample_noise(lat, 3)
    traj = simulate(SolverConfig(lat), Field.constant(1.0, lat), sigma, b, noise)
    phi = Field.from_function(_bump, lat)
    assert np.max(mild_residual(traj, phi, noise, sigma, b)) < 1e-3


@pytest.mark.slow
def test_mild_residual_noisy_refinement():
    sigma = parse_coefficient("power_sigma:0.8")
    b = parse_coefficient("power_drift:0.9")
    means = []
    for dx in (0.2, 0.1, 0.05):
        lat = build_lattice(8.0, dx, dx * dx / 4, 1.0)
        phi = Field.from_function(_bump, lat)
        res = []
        for seed in range(20):
            noise = sample_noise(lat, seed)
            traj = simulate(SolverConfig(lat), Field.constant(1.0, lat), sigma, b, noise)
            res.append(np.max(mild_residual(traj, phi, noise, sigma, b)))
        means.append(np.mean(res))
    # each refinement quarters dt, so a rate of dt^{1/4} shrinks the residual by 2^{-1/2}
    for coarse, fine in zip(means, means[1:]):
        assert fine <= coarse * 2 ** -0.5


def test_ladder_with_lipschitz_drift_matches_direct():
    lat = build_lattice(4.0, 0.1, 0.004, 0.4)
    b = parse_coefficient("linear:-1")
    ladder = MollifierLadder(b)
    u0 = Field.constant(1.0, lat)
    noise = sample_noise(lat, 5)
    direct = simulate(SolverConfig(lat), u0, LIN, b, noise)
    for traj in ladder_solution_sequence(SolverConfig(lat), u0, LIN, ladder, noise, [4, 8, 12]):
        assert traj.sup_distance(direct) < 0.05
        assert traj.provenance["K_max_converged"]


def test_ladder_monotone_and_cauchy():
    lat = build_lattice(4.0, 0.1, 0.004, 0.4)
    sigma = parse_coefficient("power_sigma:0.8")
    ladder = MollifierLadder(parse_coefficient("power_drift:0.9"))
    trajs = ladder_solution_sequence(SolverConfig(lat), Field.constant(1.0, lat), sigma, ladder, 2, [4, 8, 12, 16])
    for a, b in zip(trajs, trajs[1:]):
        assert np.max(a.values - b.values) <= 10 * lat.dx
    d = [a.sup_distance(b) for a, b in zip(trajs, trajs[1:])]
    assert d[0] > d[1] > d[2]


def test_ladder_rejects_unsorted_levels():
    with pytest.raises(ValueError):
        ladder_solution_sequence(SolverConfig(LAT), Field.constant(1.0, LAT), LIN,
                                 MollifierLadder(ZERO), 0, [8, 4])


@pytest.fixture(scope="module")
def additive_run():
    lat = build_lattice(10.0, 0.05, 0.001, 1.0)
    return simulate(SolverConfig(lat), Field.constant(0.0, lat), ONE, ZERO, 0)


def test_holder_time_exponent(additive_run):
    est = holder_exponent_estimate(additive_run, "time")
    assert 0.2 <= est.exponent <= 0.3
    assert est.ci_low < est.exponent < est.ci_high
    assert est.lags[-1] / est.lags[0] >= 10**1.5 * 0.95


def test_holder_space_exponent(additive_run):
    est = holder_exponent_estimate(additive_run, "space")
    assert 0.35 <= est.exponent <= 0.6
    assert est.lags[-1] / est.lags[0] >= 10**1.5 * 0.95


def test_holder_rejects_smooth_paths():
    lat = build_lattice(10.0, 0.05, 0.001, 1.0)
    traj = simulate(SolverConfig(lat), Field.from_function(lambda x: np.exp(-x * x / 4), lat), ZERO, ZERO, 0)
    with pytest.raises(DegenerateTrajectory):
        holder_exponent_estimate(traj, "time")


def test_holder_rejects_constant_paths():
    traj = simulate(SolverConfig(LAT), Field.constant(0.0, LAT), ZERO, ZERO, 0)
    with pytest.raises(DegenerateTrajectory):
        holder_exponent_estimate(traj, "space", lags=[1, 2, 4])


def test_holder_power_law_run():
    lat = build_lattice(10.0, 0.05, 0.001, 1.0)
    sigma, b, _ = power_law_pair(0.8, 0.9)
    traj = simulate(SolverConfig(lat), Field.constant(1.0, lat), sigma, b, 1)
    assert 0.2 <= holder_exponent_estimate(traj, "time").exponent <= 0.35
