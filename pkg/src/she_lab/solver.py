"""Explicit Euler-Maruyama scheme for the stochastic heat equation.

The scheme advances ``du = (1/2) u_xx dt + b(t, x, u) dt + sigma(t, x, u) W(dt, dx)``
on a :class:`~she_lab.lattice.Lattice` with

    u'_j = u_j + dt * [(u_{j+1} - 2 u_j + u_{j-1}) / (2 dx^2) + b_j] + sigma_j * xi_j / dx

where ``xi_j`` is the noise mass of cell ``j``.  Dirichlet lattices pin the end
nodes to zero; periodic lattices identify them.

Several solutions driven by the same noise are advanced together as a stacked
array, so coupled and ladder runs read every noise row exactly once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np
from scipy import stats

from .coefficients import Coefficient, MollifierLadder
from .errors import (
    BlowUp,
    DegenerateTrajectory,
    InitialOrderViolation,
    LatticeMismatch,
    SupportViolation,
)
from .io import read_blob, write_blob, write_trajectory_csv
from .lattice import Boundary, Field, Lattice, build_lattice, check_finite
from .noise import NoiseSheet, iter_noise_rows

SCHEME_VERSION = "explicit-em/1"
_MAGIC = b"SHETRAJ1"


@dataclass(frozen=True)
class SolverConfig:
    lattice: Lattice
    clamp_threshold: float = 1e9
    record_every: int = 1
    positivity: bool = False

    def __post_init__(self):
        if not self.clamp_threshold > 0:
            raise ValueError(f"clamp_threshold must be positive, got {self.clamp_threshold}")
        if int(self.record_every) != self.record_every or self.record_every < 1:
            raise ValueError(f"record_every must be a positive integer, got {self.record_every}")


@dataclass(eq=False)
class Trajectory:
    """Recorded solution ``values[r, j] = u(times[r], x_j)``."""

    times: np.ndarray
    values: np.ndarray
    lattice: Lattice = field(repr=False)
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.times.size, self.lattice.n_space):
            raise LatticeMismatch(
                f"values have shape {self.values.shape}, expected ({self.times.size}, {self.lattice.n_space})"
            )
        self.times.flags.writeable = False
        self.values.flags.writeable = False

    @property
    def fields(self) -> list[Field]:
        return [Field(v, self.lattice) for v in self.values]

    @property
    def final(self) -> Field:
        return Field(self.values[-1], self.lattice)

    def sup_distance(self, other: "Trajectory") -> float:
        return float(np.max(np.abs(self.values - other.values)))

    def to_csv(self, path) -> Path:
        return write_trajectory_csv(self, path)

    def save(self, path) -> Path:
        header = {"lattice": self.lattice.describe(), "times": self.times.tolist(), "provenance": self.provenance}
        return write_blob(path, _MAGIC, header, self.values)

    @classmethod
    def load(cls, path) -> "Trajectory":
        header, payload = read_blob(path, _MAGIC)
        d = header["lattice"]
        lat = build_lattice(d["L"], d["dx"], d["dt"], d["T"], d["boundary"])
        times = np.asarray(header["times"], dtype=float)
        return cls(times, payload.reshape(times.size, lat.n_space).copy(), lat, header["provenance"])


# -- single step ------------------------------------------------------------------


def _advance(u: np.ndarray, row: np.ndarray, sigma: Coefficient, drifts, t: float, lat: Lattice) -> np.ndarray:
    """One explicit step for a stack ``u`` of shape ``(k, n)``; ``drifts`` has one entry per member."""
    x = lat.x
    sig = np.broadcast_to(sigma(t, x, u), u.shape)
    drift = np.stack([np.broadcast_to(b(t, x, u[k]), x.shape) for k, b in enumerate(drifts)])
    coef = lat.dt / (2.0 * lat.dx * lat.dx)
    out = np.empty_like(u)
    if lat.boundary is Boundary.PERIODIC:
        v = u[:, :-1]
        xi = row[:-1].copy()
        xi[0] += row[-1]  # the two end cells form one periodic cell
        lap = np.roll(v, -1, axis=1) - 2.0 * v + np.roll(v, 1, axis=1)
        out[:, :-1] = v + coef * lap + lat.dt * drift[:, :-1] + sig[:, :-1] * xi / lat.dx
        out[:, -1] = out[:, 0]
    else:
        lap = u[:, 2:] - 2.0 * u[:, 1:-1] + u[:, :-2]
        out[:, 1:-1] = (
            u[:, 1:-1] + coef * lap + lat.dt * drift[:, 1:-1] + sig[:, 1:-1] * row[1:-1] / lat.dx
        )
        out[:, 0] = out[:, -1] = 0.0
    return out


def em_step(u: Field, row: np.ndarray, sigma: Coefficient, b: Coefficient, t: float, lattice: Lattice,
            clamp_threshold: float = 1e9) -> Field:
    """Advance ``u`` from ``t`` to ``t + dt`` with one row of noise increments."""
    out = _advance(np.asarray(u.values)[None, :], np.asarray(row), sigma, [b], t, lattice)[0]
    _check_blowup(out, clamp_threshold, None)
    return Field(out, lattice)


def _check_blowup(u: np.ndarray, threshold: float, step) -> None:
    peak = np.max(np.abs(u))
    if not np.isfinite(peak) or peak > threshold:
        raise BlowUp(f"sup|u| = {peak:.3g} exceeds {threshold:.3g} at time index {step}", time_index=step)


def _rows(noise, lat: Lattice) -> tuple[Iterator[np.ndarray], int | None]:
    if isinstance(noise, NoiseSheet):
        if noise.lattice != lat:
            raise LatticeMismatch("noise sheet and solver use different lattices")
        return iter(noise.increments), noise.seed
    return iter_noise_rows(lat, int(noise)), int(noise)


def _run_stack(cfg: SolverConfig, u0: np.ndarray, sigma: Coefficient, drifts: Sequence[Coefficient], noise):
    lat = cfg.lattice
    rows, seed = _rows(noise, lat)
    u = np.array(u0, dtype=float)
    check_finite(u, "initial data")
    steps = lat.n_time
    rec = [0] + [i for i in range(1, steps + 1) if i % cfg.record_every == 0 or i == steps]
    out = np.empty((len(rec), u.shape[0], lat.n_space))
    out[0] = u
    r = 1
    for i in range(steps):
        u = _advance(u, next(rows), sigma, drifts, i * lat.dt, lat)
        if cfg.positivity:
            np.maximum(u, 0.0, out=u)
        _check_blowup(u, cfg.clamp_threshold, i + 1)
        if r < len(rec) and rec[r] == i + 1:
            out[r] = u
            r += 1
    return np.asarray(rec, dtype=float) * lat.dt, out, seed


def _provenance(cfg, seed, sigma, b, u0_label, **extra) -> dict:
    prov = {
        "seed": seed,
        "sigma": sigma.label,
        "b": b.label,
        "u0": u0_label,
        "scheme_version": SCHEME_VERSION,
        "lattice": cfg.lattice.describe(),
        "record_every": cfg.record_every,
    }
    if cfg.positivity:
        prov["positivity_projection"] = True
    prov.update(extra)
    return prov


def simulate(cfg: SolverConfig, u0: Field, sigma: Coefficient, b: Coefficient, noise, *,
             u0_label: str = "field") -> Trajectory:
    """Iterate :func:`em_step` over the whole horizon.

    ``noise`` is a :class:`NoiseSheet` on ``cfg.lattice`` or an integer seed,
    in which case rows are streamed without materializing the sheet.

    Raises
    ------
    BlowUp
        ``sup|u|`` exceeds ``cfg.clamp_threshold``; ``time_index`` names the step.
    """
    times, out, seed = _run_stack(cfg, np.asarray(u0.values)[None, :], sigma, [b], noise)
    return Trajectory(times, out[:, 0], cfg.lattice, _provenance(cfg, seed, sigma, b, u0_label))


def simulate_coupled(cfg: SolverConfig, u0_1: Field, u0_2: Field, sigma: Coefficient,
                     b1: Coefficient, b2: Coefficient, noise, *, check_order: bool = True,
                     u0_label: str = "field") -> tuple[Trajectory, Trajectory]:
    """Advance two solutions in lockstep on identical noise increments.

    With ``check_order`` (default) the initial data must satisfy
    ``u0_1 <= u0_2``; otherwise :class:`InitialOrderViolation` is raised.
    """
    if check_order and np.any(u0_1.values > u0_2.values):
        j = int(np.argmax(u0_1.values > u0_2.values))
        raise InitialOrderViolation(f"u0_1 > u0_2 at x = {cfg.lattice.x[j]:g}")
    stack = np.stack([u0_1.values, u0_2.values])
    times, out, seed = _run_stack(cfg, stack, sigma, [b1, b2], noise)
    return (
        Trajectory(times, out[:, 0], cfg.lattice, _provenance(cfg, seed, sigma, b1, u0_label, member=1)),
        Trajectory(times, out[:, 1], cfg.lattice, _provenance(cfg, seed, sigma, b2, u0_label, member=2)),
    )


def ladder_solution_sequence(cfg: SolverConfig, u0: Field, sigma: Coefficient, ladder: MollifierLadder,
                             noise, n_list: Sequence[int], K_max: int = 24, *,
                             u0_label: str = "field") -> list[Trajectory]:
    """Solutions driven by the smoothed drifts ``b_{n, K_max}`` for each ``n``.

    All members share the noise.  Each provenance records whether
    ``b_{n, k}`` had settled by ``K_max`` on the tabulated range.
    """
    n_list = [int(n) for n in n_list]
    if any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise ValueError(f"n_list must be strictly increasing, got {n_list}")
    drifts = [ladder.drift(n, K_max) for n in n_list]
    stack = np.repeat(np.asarray(u0.values)[None, :], len(n_list), axis=0)
    times, out, seed = _run_stack(cfg, stack, sigma, drifts, noise)
    trajs = []
    for k, (n, drift) in enumerate(zip(n_list, drifts)):
        extra = {"ladder_n": n, "K_max": K_max}
        if ladder.base.autonomous:
            ok, gap = ladder.converged(n, K_max)
            extra.update(K_max_converged=ok, K_max_gap=gap)
        trajs.append(Trajectory(times, out[:, k], cfg.lattice, _provenance(cfg, seed, sigma, drift, u0_label, **extra)))
    return trajs


# -- weak-form residual -----------------------------------------------------------


def _laplacian4(phi: np.ndarray, dx: float) -> np.ndarray:
    """Fourth-order central second difference; zero on the two outer nodes of each side."""
    out = np.zeros_like(phi)
    out[2:-2] = (-phi[4:] + 16.0 * phi[3:-1] - 30.0 * phi[2:-2] + 16.0 * phi[1:-3] - phi[:-4]) / (12.0 * dx * dx)
    return out


def mild_residual(traj: Trajectory, phi: Field, noise: NoiseSheet, sigma: Coefficient, b: Coefficient,
                  laplacian: Callable | np.ndarray | None = None) -> np.ndarray:
    """``|R(t)|`` of the weak form at every recorded time.

    ``R(t) = <u(t),phi> - <u0,phi> - int_0^t <u(s), phi''/2> ds
    - int_0^t <b(s,.,u(s)), phi> ds - sum sigma(s, x_j, u) phi(x_j) xi``,
    with left-point sums in time.  ``phi''`` is the fourth-order difference of
    ``phi`` unless ``laplacian`` (a callable of ``x`` or an array) supplies it.
    On a subsampled trajectory the last recorded state is used between records.

    Raises
    ------
    SupportViolation
        ``phi`` is nonzero within ``6 sqrt(T)`` of the truncation boundary.
    """
    lat = traj.lattice
    if noise.lattice != lat:
        raise LatticeMismatch("noise sheet and trajectory use different lattices")
    margin = 6.0 * math.sqrt(lat.T)
    if np.any(phi.values[~lat.interior_mask(margin)] != 0):
        raise SupportViolation(f"test function must vanish within {margin:g} of the boundary")
    x, w = lat.x, lat.weights
    if laplacian is None:
        lap = _laplacian4(phi.values, lat.dx)
    elif callable(laplacian):
        lap = np.asarray(laplacian(x), dtype=float)
    else:
        lap = np.asarray(laplacian, dtype=float)

    steps = np.arange(lat.n_time)
    t_steps = steps * lat.dt
    rec_steps = np.rint(traj.times / lat.dt).astype(int)
    state = np.searchsorted(rec_steps, steps, side="right") - 1  # last record at or before each step
    u = traj.values[state]
    heat = u @ (0.5 * lap * w)
    drift = np.broadcast_to(b(t_steps[:, None], x[None, :], u), u.shape) @ (phi.values * w)
    sig = np.broadcast_to(sigma(t_steps[:, None], x[None, :], u), u.shape)
    stoch = np.sum(sig * phi.values * noise.increments, axis=1)
    increments = lat.dt * (heat + drift) + stoch
    cumulative = np.concatenate([[0.0], np.cumsum(increments)])
    pair = traj.values @ (phi.values * w)
    return np.abs(pair - pair[0] - cumulative[rec_steps])


# -- path regularity --------------------------------------------------------------


@dataclass
class HolderEstimate:
    axis: str
    exponent: float
    ci_low: float
    ci_high: float
    lags: np.ndarray
    medians: np.ndarray

    def to_dict(self) -> dict:
        return {
            "axis": self.axis,
            "exponent": self.exponent,
            "ci": [self.ci_low, self.ci_high],
            "lags": self.lags.tolist(),
            "medians": self.medians.tolist(),
        }


NON_ROUGH_SLOPE = 0.75


LAG_DECADES = 1.5


def _default_lags(traj: Trajectory, axis: str) -> np.ndarray:
    """Twelve geometric lags spanning 1.5 decades."""
    lat = traj.lattice
    if axis == "time":
        step = traj.times[1] - traj.times[0]
        # start above dx^2, below which the lattice behaves like a Brownian path
        lo = max(1, int(math.ceil(4.0 * lat.dx**2 / step)))
        hi = min(int(round(lo * 10**LAG_DECADES)), (traj.times.size - 1) // 2)
    else:
        lo = 1
        hi = min(int(math.ceil(10**LAG_DECADES)), lat.n_space // 4)
    return np.unique(np.round(np.geomspace(lo, max(hi, lo + 2), 12)).astype(int))


def holder_exponent_estimate(traj: Trajectory, axis: str = "time", lags: Iterable[int] | None = None,
                             margin: float | None = None, t_min: float | None = None) -> HolderEstimate:
    """Log-log slope of the median absolute increment against the lag.

    ``lags`` are in units of recorded time steps (``axis="time"``) or grid
    nodes (``axis="space"``).  Increments are taken at nodes at least
    ``margin`` (default ``min(L/2, 3 sqrt(T))``) from the boundary and, for the
    spatial axis, at recorded times ``>= t_min`` (default ``3T/4``).  The interval is the 95%
    t-interval of the regression slope.

    Raises
    ------
    DegenerateTrajectory
        Zero increments, or a slope of at least 0.75, which marks a smooth
        rather than rough path.
    """
    if axis not in ("time", "space"):
        raise ValueError(f"axis must be 'time' or 'space', got {axis!r}")
    lat = traj.lattice
    lags = _default_lags(traj, axis) if lags is None else np.asarray(sorted(set(int(k) for k in lags)))
    if lags.size < 3 or lags[0] < 1:
        raise ValueError("need at least three positive lags")
    inner = lat.interior_mask(min(lat.L / 2, 3.0 * math.sqrt(lat.T)) if margin is None else margin)
    vals = traj.values
    step = traj.times[1] - traj.times[0] if traj.times.size > 1 else lat.dt
    med = []
    for k in lags:
        if axis == "time":
            d = vals[k:, inner] - vals[:-k, inner]
        else:
            late = traj.times >= (0.75 * lat.T if t_min is None else t_min)
            idx = np.flatnonzero(inner)
            idx = idx[idx + k < lat.n_space]
            d = vals[np.ix_(late, idx + k)] - vals[np.ix_(late, idx)]
        med.append(np.median(np.abs(d)) if d.size else 0.0)
    med = np.asarray(med)
    if np.any(med <= 0):
        raise DegenerateTrajectory(f"zero median {axis} increment; the path carries no roughness")
    scale = step if axis == "time" else lat.dx
    fit = stats.linregress(np.log(lags * scale), np.log(med))
    if not np.isfinite(fit.slope) or fit.slope >= NON_ROUGH_SLOPE:
        raise DegenerateTrajectory(f"{axis} slope {fit.slope:.3f} >= {NON_ROUGH_SLOPE}: path is not rough")
    q = stats.t.ppf(0.975, lags.size - 2)
    return HolderEstimate(
        axis, float(fit.slope), float(fit.slope - q * fit.stderr), float(fit.slope + q * fit.stderr),
        lags * scale, med,
    )
