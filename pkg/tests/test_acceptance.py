"""Acceptance criteria AC-1 to AC-9 at full scale.

Each test prints one PASS/FAIL line in the "acceptance criteria" section of
the pytest terminal summary.  The whole module takes roughly ten minutes on
one core.
"""

import math
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from she_lab.coefficients import parse_coefficient
from she_lab.config import load_config
from she_lab.experiments import run_experiment
from she_lab.kernel import semigroup_apply
from she_lab.lattice import Field, build_lattice
from she_lab.report import write_report
from she_lab.solver import SolverConfig, simulate

pytestmark = [pytest.mark.slow, pytest.mark.acceptance]

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
_REPORTS = {}


def report(name):
    if name not in _REPORTS:
        _REPORTS[name] = run_experiment(load_config(CONFIGS / f"{name}.toml"))
    return _REPORTS[name]


def _failed(rep):
    return [v.name for v in rep.verdicts if v.asserted and not v.passed]


def test_ac1_comparison(acceptance_line):
    parts, ok = [], True
    for name in ("comparison_linear", "comparison_holder"):
        rep = report(name)
        agg = rep.aggregate
        ok &= rep.passed and {v.name for v in rep.verdicts} == {"ordering", "refinement", "control_violation"}
        parts.append(
            f"{rep.config['coefficients']['sigma']}: clean {agg['clean_seed_fraction']:.2f}, "
            f"worst {agg['worst_violation']:.2e} -> {agg['worst_violation_refined']:.2e}, "
            f"control {agg['control_seeds_with_violation']}/100"
        )
    control = report("comparison_control")
    ok &= control.passed
    parts.append(f"b1 > b2 control: {control.verdict('control_violation').detail['seeds_with_violation']}/100 violate")
    acceptance_line("AC-1", ok, "; ".join(parts))
    assert ok


def test_ac2_monotone_ladder(acceptance_line):
    rep = report("uniqueness_ladder")
    agg = rep.aggregate
    ok = rep.verdict("ladder_ordering").passed and rep.verdict("ladder_cauchy").passed
    d = ", ".join(f"{v:.3g}" for v in agg["mean_sup_distances"])
    acceptance_line("AC-2", ok, f"ordered {agg['ordered_fraction']:.2f} (>= 0.90), "
                    f"Cauchy {agg['cauchy_fraction']:.2f} (>= 0.80), mean distances [{d}]")
    assert ok


def test_ac3_drift_reconstruction(acceptance_line):
    rep = report("uniqueness_ladder")
    agg = rep.aggregate
    ok = rep.verdict("drift_reconstruction").passed and rep.verdict("z_field_power_law").passed
    acceptance_line("AC-3", ok, f"sup distance {agg['reconstruction_sup_distance']:.1e} (<= 1e-12), "
                    f"|Z| vs |u|^0.2 error {agg['z_abs_error']:.1e}, signed error {agg['z_signed_error']:.1e}")
    assert ok


def test_ac4_moment_bound(acceptance_line):
    rep = report("moments")
    (v,) = [v for v in rep.verdicts if v.criterion == "AC-4"]
    est, ch = v.detail["estimates"], v.detail["relative_change"]
    acceptance_line("AC-4", v.passed, f"E sup |u|^2 e^-|x| = {est['base']:.4f}; refined changes {ch['refined']:.1%}, "
                    f"L doubled changes {ch['widened']:.1%} (<= 30%)")
    assert v.passed


def test_ac5_path_regularity(acceptance_line):
    rep = report("holder")
    t, s = rep.aggregate["time"], rep.aggregate["space"]
    ok = rep.passed
    acceptance_line("AC-5", ok, f"time {t['mean']:.3f} CI [{t['ci95'][0]:.3f}, {t['ci95'][1]:.3f}] in [0.2, 0.3]; "
                    f"space {s['mean']:.3f} CI [{s['ci95'][0]:.3f}, {s['ci95'][1]:.3f}] in [0.4, 0.6]")
    assert ok


def test_ac6_girsanov_mean(acceptance_line):
    rep = report("girsanov")
    mw = rep.verdict("mean_weight")
    ok = rep.passed and mw.asserted and rep.aggregate["n_seeds"] == 10_000
    d = mw.detail
    acceptance_line("AC-6", ok, f"mean L_T {d['mean_L_T']:.4f} +- {d['stderr']:.4f} over {d['n']} seeds "
                    f"(|mean-1| <= 3 se), T_K monotone in {rep.verdict('T_K_monotone').detail['seeds_monotone']} seeds")
    assert ok


def test_ac7_kernel_estimates(acceptance_line):
    rep = report("kernel_audit")
    d, l2 = rep.verdict("difference_bound_stable").detail, rep.verdict("l2_increment_bound_stable").detail
    cf = rep.verdict("closed_form").detail
    acceptance_line("AC-7", rep.passed,
                    f"difference C {d['coarse_max']:.4f} -> {d['fine_max']:.4f} ({d['relative_change']:.1%}); "
                    f"L2 C {l2['coarse_max']:.4f} -> {l2['fine_max']:.4f} ({l2['relative_change']:.1%}); "
                    f"degenerate lhs 0; 1/sqrt(pi) error {cf['relative_error']:.1e}")
    assert rep.passed


def test_ac8_deterministic_consistency(acceptance_line):
    zero = parse_coefficient("zero")
    errors = []
    dxs = (0.2, 0.1, 0.05, 0.025)
    for dx in dxs:
        lat = build_lattice(10.0, dx, dx * dx / 4, 1.0)
        u0 = Field.from_function(lambda x: np.exp(-x * x), lat)
        traj = simulate(SolverConfig(lat), u0, zero, zero, 0)
        exact = semigroup_apply(u0, lat.T).values
        inner = lat.interior_mask(6.0 * math.sqrt(lat.T))
        errors.append(float(np.max(np.abs(traj.values[-1] - exact)[inner])))
    orders = [math.log2(a / b) for a, b in zip(errors, errors[1:])]
    ok = min(orders) >= 1.8
    acceptance_line("AC-8", ok, "sup errors " + ", ".join(f"{e:.2e}" for e in errors)
                    + "; orders " + ", ".join(f"{o:.3f}" for o in orders) + " (>= 1.8)")
    assert ok


def _bytes_twice(cfg, tmp_path, tag):
    paths = []
    for k in range(2):
        paths.append(write_report(run_experiment(cfg), tmp_path / f"{tag}{k}"))
    return [p.read_bytes() for p in paths]


def test_ac9_reproducibility(acceptance_line, tmp_path):
    checked = []
    # full configs that are quick to rerun, compared against the runs above
    for name in ("holder", "girsanov", "uniqueness_ladder"):
        again = write_report(run_experiment(load_config(CONFIGS / f"{name}.toml")), tmp_path / name)
        first = write_report(report(name), tmp_path / f"{name}_first")
        checked.append((name, again.read_bytes() == first.read_bytes()))
    # reduced versions of the slower experiments, plus a multi-process run
    for name, seeds, opts in (
        ("comparison_linear", 4, {}),
        ("comparison_holder", 4, {}),
        ("moments", 4, {}),
        ("kernel_audit", 1, {"difference_n": 12, "l2_n": 5}),
    ):
        cfg = load_config(CONFIGS / f"{name}.toml").with_seed_count(seeds)
        cfg = replace(cfg, options={**cfg.options, **opts})
        a, b = _bytes_twice(cfg, tmp_path, name)
        checked.append((f"{name}[reduced]", a == b))
    cfg = load_config(CONFIGS / "comparison_holder.toml").with_seed_count(4)
    serial = run_experiment(cfg).to_json()
    pooled = run_experiment(replace(cfg, workers=2)).to_json()
    checked.append(("comparison_holder[workers=2]", serial == pooled))
    ok = all(same for _, same in checked)
    bad = [n for n, same in checked if not same]
    acceptance_line("AC-9", ok, f"{sum(s for _, s in checked)}/{len(checked)} reruns byte-identical"
                    + (f"; differing: {', '.join(bad)}" if bad else ""))
    assert ok
