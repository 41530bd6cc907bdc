"""Gaussian heat kernel, its semigroup on the lattice, and kernel-bound audits.

Two classical estimates are audited numerically:

* the pointwise difference bound
  ``|G_t(x) - G_t(y)| <= C |x - y| t^{-1} (exp(-c x^2/t) + exp(-c y^2/t))``,
* the weighted L2 increment bound
  ``int_0^{t v t'} int e^{lam|y|} (G_{t'-s}(x'-y) - G_{t-s}(x-y))^2 dy ds
  <= C e^{lam|x|} e^{lam|x-x'|} (|t'-t|^{1/2} + |x'-x|)``.

Neither bound comes with explicit constants; the audits estimate them as the
largest observed ratio of left side to right-hand shape and check that this
estimate settles under sweep refinement.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erfcx, ndtr

from .errors import EmptySweep, InvalidTimes, NonPositiveTime
from .lattice import Boundary, Field

MIN_AUDIT_TIME = 1e-4
DEFAULT_C_PRIME = 0.25

_SQRT_2PI = math.sqrt(2.0 * math.pi)
_SQRT_PI = math.sqrt(math.pi)
_SQRT2 = math.sqrt(2.0)


def heat_kernel(t, x):
    """``G_t(x) = exp(-x^2 / 2t) / sqrt(2 pi t)``, vectorized over ``t`` and ``x``."""
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise NonPositiveTime(f"heat kernel needs t > 0, got {t.min() if t.ndim else t}")
    x = np.asarray(x, dtype=float)
    out = np.exp(-(x * x) / (2.0 * t)) / np.sqrt(2.0 * np.pi * t)
    return float(out) if out.ndim == 0 else out


def _periodic_kernel(t: float, d: np.ndarray, period: float) -> np.ndarray:
    n_images = int(math.ceil(10.0 * math.sqrt(t) / period)) + 1
    shifts = period * np.arange(-n_images, n_images + 1)
    return heat_kernel(t, d[..., None] + shifts).sum(axis=-1)


def semigroup_apply(f: Field, t: float) -> Field:
    """Riemann-sum approximation of ``G_t f(x) = int G_t(x - y) f(y) dy``.

    With Dirichlet truncation ``f`` is taken to vanish outside ``[-L, L]``;
    with periodic truncation the kernel is wrapped onto the circle of length
    ``2L`` and the duplicated end node is kept equal to the first.
    """
    if t <= 0:
        raise NonPositiveTime(f"semigroup time must be positive, got {t}")
    lat = f.lattice
    x = lat.x
    if lat.boundary is Boundary.PERIODIC:
        xs = x[:-1]
        d = xs[:, None] - xs[None, :]
        out = _periodic_kernel(t, d, 2.0 * lat.L) @ (f.values[:-1] * lat.dx)
        out = np.append(out, out[0])
    else:
        out = heat_kernel(t, x[:, None] - x[None, :]) @ (f.values * lat.weights)
    return Field(out, lat)


# ---------------------------------------------------------------------------
# weighted L2 increment of the kernel
# ---------------------------------------------------------------------------


def _tilted_tail(mu, v, lam, sv):
    """``exp(lam mu + lam^2 v / 2) Phi((mu + lam v) / sqrt(v))`` without overflow."""
    z = (mu + lam * v) / sv
    with np.errstate(over="ignore", invalid="ignore"):
        upper = np.exp(lam * mu + 0.5 * lam * lam * v) * ndtr(z)
        # for z < 0 the exponent collapses to -mu^2 / 2v
        lower = np.exp(-(mu * mu) / (2.0 * v)) * 0.5 * erfcx(-z / _SQRT2)
    return np.where(z >= 0, upper, lower)


def _weighted_gauss_mass(mu, v, lam):
    """``int e^{lam|y|} N(y; mu, v) dy`` in closed form; ``v = 0`` is a point mass at ``mu``."""
    if np.all(lam == 0):
        return np.ones(np.broadcast(mu, v).shape)
    # v underflows to 0 for denormal time gaps
    point = v <= 0
    safe = np.where(point, 1.0, v)
    sv = np.sqrt(safe)
    mass = _tilted_tail(mu, safe, lam, sv) + _tilted_tail(-mu, safe, lam, sv)
    return np.where(point, np.exp(lam * np.abs(mu)), mass)


def _gauss_legendre(n):
    nodes, weights = np.polynomial.legendre.leggauss(n)
    return 0.5 * (nodes + 1.0), 0.5 * weights


def _graded_panels(n_panels: int, ratio: float = 0.5) -> np.ndarray:
    edges = ratio ** np.arange(n_panels - 1, -1, -1, dtype=float)
    return np.concatenate([[0.0], edges])


def _both_alive(w, m, delta, x_short, x_long, lam):
    """Integrand in ``w`` on ``s = m - w^2`` (both kernels alive).

    ``x_short`` belongs to the kernel whose time ``m - s = w^2`` vanishes at
    the singular end; the other kernel has time ``delta + w^2``.  Includes the
    Jacobian ``2w``.
    """
    b = w * w
    a = delta + b
    with np.errstate(divide="ignore", invalid="ignore"):
        short = np.where(b > 0, _weighted_gauss_mass(x_short, 0.5 * b, lam) / _SQRT_PI, 0.0)
        long_ = np.where(
            a > 0, w * _weighted_gauss_mass(x_long, 0.5 * a, lam) / (_SQRT_PI * np.sqrt(a)), 0.0
        )
        s = a + b
        diff = x_long - x_short
        mu = (x_long * b + x_short * a) / s
        v = a * b / s
        cross = np.exp(-(diff * diff) / (2.0 * s)) / np.sqrt(2.0 * np.pi * s)
        cross = np.where(b > 0, 2.0 * w * cross * _weighted_gauss_mass(mu, v, lam), 0.0)
    return short + long_ - 2.0 * cross


def _one_alive(w, x_long, lam):
    """Integrand in ``w`` on ``s = M - w^2`` when only one kernel is alive."""
    with np.errstate(divide="ignore", invalid="ignore"):
        return _weighted_gauss_mass(x_long, 0.5 * w * w, lam) / _SQRT_PI


def _integrate(cases, n_nodes: int, n_panels: int):
    t, tp, x, xp, lam = cases
    m = np.minimum(t, tp)
    big = np.maximum(t, tp)
    delta = big - m
    # the kernel attached to the smaller time is the one that degenerates first
    x_short = np.where(t <= tp, x, xp)
    x_long = np.where(t <= tp, xp, x)

    u, wts = _gauss_legendre(n_nodes)
    edges = _graded_panels(n_panels)
    lo, hi = edges[:-1], edges[1:]
    # unit-interval nodes for the graded composite rule, shape (P * n,)
    g_nodes = (lo[:, None] + (hi - lo)[:, None] * u[None, :]).ravel()
    g_wts = ((hi - lo)[:, None] * wts[None, :]).ravel()

    col = lambda a: a[:, None]  # noqa: E731
    root_m = np.sqrt(m)
    w1 = col(root_m) * g_nodes[None, :]
    part1 = np.sum(
        _both_alive(w1, col(m), col(delta), col(x_short), col(x_long), col(lam)) * g_wts, axis=1
    ) * root_m

    u2, wts2 = _gauss_legendre(2 * n_nodes)
    root_d = np.sqrt(delta)
    w2 = col(root_d) * u2[None, :]
    part2 = np.sum(_one_alive(w2, col(x_long), col(lam)) * wts2, axis=1) * root_d
    return part1 + part2


_NODE_BUDGET = 2_000_000


def _integrate_chunked(cases, n_nodes: int, n_panels: int):
    # bound the (cases x nodes) temporaries
    step = max(1, _NODE_BUDGET // (n_nodes * n_panels))
    n = cases[0].size
    return np.concatenate(
        [_integrate(tuple(a[i : i + step] for a in cases), n_nodes, n_panels) for i in range(0, n, step)]
        or [np.empty(0)]
    )


def kernel_l2_increment_many(t, tp, x, xp, lam, *, n_nodes=8, n_panels=24, return_error=False):
    """Vectorized weighted L2 increment of the heat kernel.

    The space integral is done in closed form (Gaussian products against
    ``e^{lam|y|}``); the time integral uses a graded Gauss-Legendre rule in
    the variable ``w = sqrt(time to the singular end)``, which removes the
    inverse square-root singularities.  With ``return_error`` the difference
    to a rule with half the nodes per panel is returned as an error estimate.
    """
    t, tp, x, xp, lam = (np.atleast_1d(np.asarray(a, dtype=float)) for a in (t, tp, x, xp, lam))
    t, tp, x, xp, lam = np.broadcast_arrays(t, tp, x, xp, lam)
    if np.any(t < 0) or np.any(tp < 0):
        raise InvalidTimes("kernel_l2_increment needs t, t' >= 0")
    if np.any(lam < 0):
        raise InvalidTimes("kernel_l2_increment needs lambda >= 0")
    cases = tuple(np.ascontiguousarray(a).ravel() for a in (t, tp, x, xp, lam))
    same = (cases[0] == cases[1]) & (cases[2] == cases[3])
    value = _integrate_chunked(cases, n_nodes, n_panels)
    value = np.where(same, 0.0, np.maximum(value, 0.0))
    if not return_error:
        return value.reshape(t.shape)
    coarse = np.where(same, 0.0, _integrate_chunked(cases, max(n_nodes // 2, 2), n_panels))
    return value.reshape(t.shape), np.abs(value - coarse).reshape(t.shape)


def kernel_l2_increment(t, tp, x, xp, lam=0.0) -> float:
    """``int_0^{t v t'} int e^{lam|y|} (G_{t'-s}(x'-y) - G_{t-s}(x-y))^2 dy ds``.

    Kernels with non-positive time are zero.  Identical arguments give exactly 0.
    """
    return float(kernel_l2_increment_many(t, tp, x, xp, lam)[0])


# ---------------------------------------------------------------------------
# audits
# ---------------------------------------------------------------------------


@dataclass
class KernelAuditReport:
    kind: str
    cases: np.ndarray  # (n_cases, 5): t, t', x, x', lam  (t' = t, lam = 0 for "difference")
    lhs: np.ndarray
    rhs_bound_shape: np.ndarray
    ratio: np.ndarray
    max_ratio: float
    params: dict = field(default_factory=dict)
    excluded: int = 0

    @property
    def argmax_case(self) -> tuple:
        return tuple(float(v) for v in self.cases[int(np.argmax(self.ratio))])

    def to_dict(self, max_cases: int | None = 200) -> dict:
        order = np.argsort(-self.ratio, kind="stable")
        keep = order if max_cases is None else order[:max_cases]
        names = ("t", "t_prime", "x", "x_prime", "lambda")
        return {
            "kind": self.kind,
            "n_cases": int(len(self.ratio)),
            "excluded": self.excluded,
            "params": self.params,
            "max_ratio": self.max_ratio,
            "argmax_case": dict(zip(names, self.argmax_case)),
            "cases": [
                {
                    **dict(zip(names, (float(v) for v in self.cases[i]))),
                    "lhs": float(self.lhs[i]),
                    "rhs_bound_shape": float(self.rhs_bound_shape[i]),
                    "ratio": float(self.ratio[i]),
                }
                for i in keep
            ],
        }


def _log_abs_diff_exp(a, b):
    hi = np.maximum(a, b)
    gap = -np.abs(a - b)
    with np.errstate(divide="ignore"):
        return hi + np.log(-np.expm1(gap))


def audit_difference_bound(t, x, y, c_prime: float = DEFAULT_C_PRIME) -> KernelAuditReport:
    """Audit ``|G_t(x)-G_t(y)|`` against ``|x-y| t^{-1} (e^{-c x^2/t} + e^{-c y^2/t})``.

    Ratios are computed in log space so that far tails neither underflow nor
    produce 0/0.  Cases with ``x == y`` have lhs 0 and ratio 0.
    """
    t, x, y = (np.ravel(np.asarray(a, dtype=float)) for a in np.broadcast_arrays(t, x, y))
    if t.size == 0:
        raise EmptySweep("empty sweep")
    keep = t >= MIN_AUDIT_TIME
    excluded = int((~keep).sum())
    t, x, y = t[keep], x[keep], y[keep]
    if t.size == 0:
        raise EmptySweep(f"every case has t < {MIN_AUDIT_TIME}")
    log_norm = -0.5 * np.log(2.0 * np.pi * t)
    log_lhs = log_norm + _log_abs_diff_exp(-(x * x) / (2 * t), -(y * y) / (2 * t))
    with np.errstate(divide="ignore"):
        log_rhs = (
            np.log(np.abs(x - y)) - np.log(t) + np.logaddexp(-c_prime * x * x / t, -c_prime * y * y / t)
        )
    degenerate = x == y
    gap = np.where(degenerate, 0.0, log_lhs - np.where(degenerate, 0.0, log_rhs))
    ratio = np.where(degenerate, 0.0, np.exp(gap))
    lhs = np.where(degenerate, 0.0, np.exp(log_lhs))
    rhs = np.exp(log_rhs)
    cases = np.column_stack([t, t, x, y, np.zeros_like(t)])
    return KernelAuditReport(
        kind="difference",
        cases=cases,
        lhs=lhs,
        rhs_bound_shape=rhs,
        ratio=ratio,
        max_ratio=float(ratio.max()),
        params={"c_prime": c_prime, "min_time": MIN_AUDIT_TIME},
        excluded=excluded,
    )


AUDIT_NODES = 4
AUDIT_PANELS = 14


def audit_l2_increment_bound(
    t, tp, x, xp, lam, chunk: int = 20000, n_nodes: int = AUDIT_NODES, n_panels: int = AUDIT_PANELS
) -> KernelAuditReport:
    """Audit the weighted L2 increment against ``e^{lam|x|} e^{lam|x-x'|} (|t-t'|^{1/2} + |x-x'|)``.

    The sweep uses a lighter quadrature than :func:`kernel_l2_increment`; its
    worst embedded error estimate is reported in ``params``.
    """
    arrays = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (t, tp, x, xp, lam)))
    cases = np.column_stack([np.ravel(a) for a in arrays])
    if cases.shape[0] == 0:
        raise EmptySweep("empty sweep")
    lhs = np.empty(cases.shape[0])
    err = np.empty(cases.shape[0])
    for lo in range(0, cases.shape[0], chunk):
        c = cases[lo : lo + chunk]
        lhs[lo : lo + chunk], err[lo : lo + chunk] = kernel_l2_increment_many(
            *c.T, n_nodes=n_nodes, n_panels=n_panels, return_error=True
        )
    t, tp, x, xp, lam = cases.T
    dx = np.abs(x - xp)
    rhs = np.exp(lam * np.abs(x)) * np.exp(lam * dx) * (np.sqrt(np.abs(t - tp)) + dx)
    degenerate = rhs == 0
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(degenerate, 0.0, lhs / np.where(degenerate, 1.0, rhs))
    rel_err = np.where(lhs > 0, err / np.where(lhs > 0, lhs, 1.0), 0.0)
    return KernelAuditReport(
        kind="l2_increment",
        cases=cases,
        lhs=lhs,
        rhs_bound_shape=rhs,
        ratio=ratio,
        max_ratio=float(ratio.max()),
        params={"max_quadrature_rel_error": float(rel_err.max())},
    )


def audit_kernel_bounds(sweep, kind: str = "l2_increment", **kw) -> KernelAuditReport:
    """Dispatch on ``kind``; ``sweep`` rows are ``(t, t', x, x', lam)``.

    For ``kind="difference"`` the rows are read as ``(t, _, x, y, _)``.
    """
    sweep = np.asarray(sweep, dtype=float)
    if sweep.size == 0:
        raise EmptySweep("empty sweep")
    sweep = np.atleast_2d(sweep)
    if kind == "difference":
        return audit_difference_bound(sweep[:, 0], sweep[:, 2], sweep[:, 3], **kw)
    if kind == "l2_increment":
        return audit_l2_increment_bound(*sweep.T, **kw)
    raise ValueError(f"unknown audit kind {kind!r}")


def difference_sweep(n: int, t_range=(0.01, 1.0), x_max: float = 5.0) -> np.ndarray:
    """``n^3`` grid over ``(t, x, y)``; rows ``(t, t, x, y, 0)``."""
    t = np.linspace(*t_range, n)
    x = np.linspace(-x_max, x_max, n)
    tt, xx, yy = np.meshgrid(t, x, x, indexing="ij")
    z = np.zeros(tt.size)
    return np.column_stack([tt.ravel(), tt.ravel(), xx.ravel(), yy.ravel(), z])


def l2_increment_sweep(n: int, T: float = 1.0, lam: float = 1.0, x_max: float = 2.0, max_gap: float = 1.0):
    """``n^4`` grid over ``(t, t', x, x - x')`` with ``|x - x'| <= max_gap``."""
    t = np.linspace(0.0, T, n)
    x = np.linspace(-x_max, x_max, n)
    d = np.linspace(-max_gap, max_gap, n)
    tt, tp, xx, dd = np.meshgrid(t, t, x, d, indexing="ij")
    return np.column_stack(
        [tt.ravel(), tp.ravel(), xx.ravel(), (xx + dd).ravel(), np.full(tt.size, float(lam))]
    )


@dataclass
class RefinementVerdict:
    coarse_max: float
    fine_max: float
    relative_change: float
    stable: bool
    unbounded: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def refinement_verdict(coarse: KernelAuditReport, fine: KernelAuditReport, rtol: float = 0.2) -> RefinementVerdict:
    """Compare empirical constants of a sweep and its 2x refinement.

    ``unbounded`` flags growth by more than 10x, the signature of a bound that
    does not hold with any finite constant.
    """
    a, b = coarse.max_ratio, fine.max_ratio
    change = abs(b - a) / a if a > 0 else (0.0 if b == 0 else math.inf)
    unbounded = not math.isfinite(b) or (a > 0 and b > 10.0 * a)
    return RefinementVerdict(a, b, change, bool(change <= rtol and not unbounded), bool(unbounded))
