"""Drift-to-noise ratio, exponential weights and localization times.

When the drift factors as ``b = Z sigma``, the density

    L_t = exp( int_0^t int Z W(ds, dx) - 1/2 int_0^t int Z^2 dx ds )

turns the driving noise into ``W + Z dx ds``.  On the lattice the stochastic
integral is the left-point sum ``sum_i sum_j Z(t_i, x_j) xi_ij`` and the
quadratic variation is ``sum_i sum_j Z(t_i, x_j)^2 w_j dt``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import partial
from typing import Sequence

import numpy as np

from .coefficients import Coefficient
from .errors import (
    AssumptionAViolation,
    InsufficientEnsemble,
    LatticeMismatch,
    NonMonotoneAccumulator,
)
from .lattice import Lattice
from .noise import NoiseSheet

ASSUMPTION_ATOL = 1e-12
OVERFLOW_EXPONENT = 700.0
MIN_ENSEMBLE = 100


@dataclass(eq=False)
class ZField:
    """Grid values ``Z(times[r], x_j)``."""

    values: np.ndarray
    times: np.ndarray
    lattice: Lattice = field(repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.times = np.asarray(self.times, dtype=float)
        if self.values.shape != (self.times.size, self.lattice.n_space):
            raise LatticeMismatch(
                f"Z has shape {self.values.shape}, expected ({self.times.size}, {self.lattice.n_space})"
            )

    @classmethod
    def constant(cls, c: float, lattice: Lattice) -> "ZField":
        times = lattice.times
        return cls(np.full((times.size, lattice.n_space), float(c)), times, lattice)

    def quad_var(self) -> float:
        """``sum_{t_i < T} sum_j Z^2 w_j dt`` over the rows that drive a step."""
        lat = self.lattice
        rows = self.values[: lat.n_time]
        return float(lat.dt * np.sum(rows * rows * lat.weights))


def z_field(b: Coefficient, sigma: Coefficient, traj, atol: float = ASSUMPTION_ATOL) -> ZField:
    """``Z = b / sigma`` along a trajectory.

    Where ``sigma`` vanishes, ``|b| <= atol`` is required and ``Z`` is set to 0.
    The sign is kept, so ``b = Z sigma`` holds pointwise.

    Raises
    ------
    AssumptionAViolation
        ``sigma = 0`` but ``|b| > atol`` at some grid point; ``witness`` holds
        ``(t, x, u, b)`` of the first one.
    """
    lat = traj.lattice
    t = np.asarray(traj.times)[:, None]
    x = lat.x[None, :]
    u = np.asarray(traj.values)
    sv = np.broadcast_to(sigma(t, x, u), u.shape)
    bv = np.broadcast_to(b(t, x, u), u.shape)
    zero = sv == 0
    bad = zero & (np.abs(bv) > atol)
    if np.any(bad):
        r, j = np.unravel_index(int(np.argmax(bad)), bad.shape)
        witness = {"t": float(traj.times[r]), "x": float(lat.x[j]), "u": float(u[r, j]), "b": float(bv[r, j])}
        raise AssumptionAViolation(f"sigma vanishes but b = {bv[r, j]:.3g} at {witness}", witness=witness)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(zero, 0.0, bv / np.where(zero, 1.0, sv))
    return ZField(z, np.asarray(traj.times, dtype=float), lat)


@dataclass(eq=False)
class GirsanovWeight:
    times: np.ndarray
    log_L: np.ndarray
    quad_var: np.ndarray
    seed: int | None = None
    provenance: dict = field(default_factory=dict)

    @property
    def log_L_T(self) -> float:
        return float(self.log_L[-1])

    @property
    def L_T(self) -> float:
        return math.exp(self.log_L_T)

    @property
    def quad_var_T(self) -> float:
        return float(self.quad_var[-1])


def log_weight(Z: ZField, noise: NoiseSheet, provenance: dict | None = None) -> GirsanovWeight:
    """Discrete ``log L`` at every lattice time, with ``Z`` taken at the left endpoint.

    ``Z`` must be recorded at every time step of the noise lattice.
    """
    lat = noise.lattice
    if Z.lattice != lat:
        raise LatticeMismatch("Z field and noise sheet use different lattices")
    if Z.values.shape[0] < lat.n_time or not np.allclose(Z.times[: lat.n_time], lat.times[: lat.n_time]):
        raise LatticeMismatch("Z must be recorded at every time step of the noise lattice")
    z = Z.values[: lat.n_time]
    stoch = np.sum(z * noise.increments, axis=1)
    quad = lat.dt * np.sum(z * z * lat.weights, axis=1)
    log_l = np.concatenate([[0.0], np.cumsum(stoch - 0.5 * quad)])
    qv = np.concatenate([[0.0], np.cumsum(quad)])
    return GirsanovWeight(lat.times, log_l, qv, noise.seed, dict(provenance or {}))


@dataclass
class NovikovEstimate:
    half_quad_var: list
    quad_var_total: float
    exp_moment_estimate: float | str

    def to_dict(self) -> dict:
        return {
            "quad_var_total": self.quad_var_total,
            "exp_moment_estimate": self.exp_moment_estimate,
            "n": len(self.half_quad_var),
        }


def novikov_estimate(Z) -> NovikovEstimate:
    """Empirical ``E exp(1/2 int int Z^2)`` over one or several realizations.

    ``Z`` is a :class:`ZField`, a :class:`GirsanovWeight`, or a sequence of
    them.  ``quad_var_total`` is the ensemble mean.  The moment is reported as
    ``"overflow"`` when any exponent exceeds 700.
    """
    items = Z if isinstance(Z, (list, tuple)) else [Z]
    qv = np.array([z.quad_var() if isinstance(z, ZField) else z.quad_var_T for z in items])
    half = 0.5 * qv
    if np.any(half > OVERFLOW_EXPONENT):
        moment: float | str = "overflow"
    else:
        moment = float(np.mean(np.exp(half)))
    return NovikovEstimate(half.tolist(), float(np.mean(qv)), moment)


@dataclass
class StoppingState:
    K: float
    T_K: float | None  # None: not reached by the horizon
    accumulators: tuple

    @property
    def reached(self) -> bool:
        return self.T_K is not None


_EXCEED_RTOL = 1e-12


def stopping_time(quad_vars: Sequence, K: float, times: np.ndarray | None = None) -> StoppingState:
    """First recorded time the larger of the two accumulators exceeds ``K``.

    ``quad_vars`` holds two accumulator series (arrays or :class:`GirsanovWeight`).
    Exceeding means ``> K (1 + 1e-12)``, so rounding in a cumulative sum cannot
    make an exact hit count.

    Raises
    ------
    NonMonotoneAccumulator
        An accumulator decreases somewhere.
    """
    if not K > 0:
        raise ValueError(f"K must be positive, got {K}")
    series = []
    for q in quad_vars:
        if isinstance(q, GirsanovWeight):
            times = q.times if times is None else times
            q = q.quad_var
        series.append(np.asarray(q, dtype=float))
    if times is None:
        raise ValueError("times are required when accumulators are plain arrays")
    for q in series:
        if np.any(np.diff(q) < 0):
            raise NonMonotoneAccumulator(f"accumulator decreases at index {int(np.argmax(np.diff(q) < 0)) + 1}")
    peak = np.maximum.reduce(series)
    hit = np.flatnonzero(peak > K * (1.0 + _EXCEED_RTOL))
    t_k = float(times[hit[0]]) if hit.size else None
    return StoppingState(float(K), t_k, tuple(series))


@dataclass
class MeanWeightResult:
    n: int
    mean_L_T: float
    stderr: float
    passed: bool
    high_variance: bool
    mean_quad_var: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


HIGH_VARIANCE_QV = 1.0


def mean_weight_test(ensemble: Sequence[GirsanovWeight]) -> MeanWeightResult:
    """Sample mean of ``L_T`` against 1; passes iff ``|mean - 1| <= 3 stderr``.

    Ensembles with mean quadratic variation above 1 are flagged as
    high-variance: the heavy right tail of ``L_T`` makes the sample mean an
    unreliable check there.
    """
    if len(ensemble) < MIN_ENSEMBLE:
        raise InsufficientEnsemble(f"need at least {MIN_ENSEMBLE} realizations, got {len(ensemble)}")
    lt = np.exp(np.array([w.log_L_T for w in ensemble]))
    mean = float(np.mean(lt))
    se = float(np.std(lt, ddof=1) / math.sqrt(lt.size))
    qv = float(np.mean([w.quad_var_T for w in ensemble]))
    return MeanWeightResult(
        len(ensemble), mean, se, bool(abs(mean - 1.0) <= 3.0 * se), qv > HIGH_VARIANCE_QV, qv
    )


def _truncated(b, t_k, t, x, u):
    return np.where(np.asarray(t) <= t_k, b(t, x, u), 0.0)


def truncate_drift(b: Coefficient, T_K: float | None) -> Coefficient:
    """``b_K(t, x, u) = b(t, x, u) 1{t <= T_K}``; unchanged if ``T_K`` is None."""
    if T_K is None:
        return b
    return Coefficient(partial(_truncated, b.func, float(T_K)), f"({b.label})*1[t<={T_K:g}]")
