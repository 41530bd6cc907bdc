"""Noise and drift coefficients, their regularity checks, and mollified drifts.

A :class:`Coefficient` wraps a vectorized callable ``f(t, x, u)`` together with
the constants it is declared to satisfy.  Coefficients are built from string
labels (``"zero"``, ``"const:c"``, ``"linear:a"``, ``"power_sigma:p"``,
``"power_drift:q"``, ``"sqrt"``; labels joined by ``" + "`` are summed).

The drift smoothing machinery follows the usual monotone-approximation
construction: ``b_m = int b(u') G_{2^-m}(u - u') Psi_m(u') du'``, the running
minima ``b_{n,k} = min_{n<=m<=k} b_m`` (non-increasing in ``k``) and their
limits ``b_n`` (non-decreasing in ``n``, converging up to ``b``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import partial
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, ParameterOutOfRegime, QuadratureFailure

HOLDER_REGIME = (0.75, 1.0)


@dataclass(frozen=True)
class Coefficient:
    """A real function of ``(t, x, u)`` with declared regularity metadata.

    ``func`` must accept broadcastable numpy arrays and must not mutate state.
    ``autonomous`` declares that the value depends on ``u`` only, which lets
    drift ladders tabulate it once.
    """

    func: Callable = field(repr=False)
    label: str = "custom"
    growth_constant: float | None = None
    holder_index: float | None = None
    lipschitz_constant: float | None = None
    autonomous: bool = False

    def __post_init__(self):
        g = self.holder_index
        if g is not None and not (HOLDER_REGIME[0] < g <= HOLDER_REGIME[1]):
            raise ParameterOutOfRegime(f"declared Hoelder index {g} outside (3/4, 1]")

    def __call__(self, t, x, u):
        return self.func(t, x, u)

    def metadata(self) -> dict:
        return {
            "label": self.label,
            "growth_constant": self.growth_constant,
            "holder_index": self.holder_index,
            "lipschitz_constant": self.lipschitz_constant,
            "autonomous": self.autonomous,
        }


# -- registry -----------------------------------------------------------------


def _zero(t, x, u):
    return np.zeros(np.broadcast(t, x, u).shape)


def _const(c, t, x, u):
    return np.full(np.broadcast(t, x, u).shape, c)


def _linear(a, t, x, u):
    return a * np.asarray(u, dtype=float)


def _abs_power(p, t, x, u):
    return np.abs(u) ** p


def _neg_abs_power(q, t, x, u):
    return -(np.abs(u) ** q)


def _sqrt_positive(t, x, u):
    return np.sqrt(np.maximum(u, 0.0))


def _sum(funcs, t, x, u):
    out = funcs[0](t, x, u)
    for f in funcs[1:]:
        out = out + f(t, x, u)
    return out


def _product(f, g, scale, t, x, u):
    return scale * f(t, x, u) * g(t, x, u)


def _in_regime(p):
    return p if HOLDER_REGIME[0] < p <= HOLDER_REGIME[1] else None


def _parse_single(label: str) -> Coefficient:
    name, _, arg = label.strip().partition(":")
    try:
        value = float(arg) if arg else None
    except ValueError:
        raise ConfigError(f"bad numeric argument in coefficient label {label!r}") from None
    if name == "zero" and value is None:
        return Coefficient(_zero, "zero", 0.0, 1.0, 0.0, True)
    if name == "const" and value is not None:
        return Coefficient(partial(_const, value), label, abs(value), 1.0, 0.0, True)
    if name == "linear" and value is not None:
        return Coefficient(partial(_linear, value), label, abs(value), 1.0, abs(value), True)
    if name in ("power_sigma", "power_drift") and value is not None:
        if not 0 < value <= 1:
            raise ConfigError(f"power exponent must lie in (0, 1], got {value}")
        func = partial(_abs_power if name == "power_sigma" else _neg_abs_power, value)
        lip = 1.0 if value == 1 else None
        return Coefficient(func, label, 1.0, _in_regime(value), lip, True)
    if name == "sqrt" and value is None:
        return Coefficient(_sqrt_positive, "sqrt", 1.0, None, None, True)
    raise ConfigError(f"unknown coefficient label {label!r}")


def parse_coefficient(label: str) -> Coefficient:
    """Build a coefficient from its registry label."""
    parts = [p for p in label.split(" + ")]
    if len(parts) == 1:
        return _parse_single(label)
    coeffs = [_parse_single(p) for p in parts]
    growth = [c.growth_constant for c in coeffs]
    lip = [c.lipschitz_constant for c in coeffs]
    holder = [c.holder_index for c in coeffs]
    return Coefficient(
        partial(_sum, tuple(c.func for c in coeffs)),
        label,
        None if None in growth else float(sum(growth)),
        None if None in holder else min(holder),
        None if None in lip else float(sum(lip)),
        all(c.autonomous for c in coeffs),
    )


def power_law_pair(p: float, q: float):
    """``sigma = |u|^p``, ``b = -|u|^q`` and ``Z = |u|^{q-p}`` with ``b = -Z sigma``.

    Requires ``3/4 < p < q <= 1``.
    """
    if not (0.75 < p < q <= 1.0):
        raise ParameterOutOfRegime(f"need 3/4 < p < q <= 1, got p={p}, q={q}")
    sigma = Coefficient(partial(_abs_power, p), f"power_sigma:{p:g}", 1.0, p, 1.0 if p == 1 else None, True)
    b = Coefficient(partial(_neg_abs_power, q), f"power_drift:{q:g}", 1.0, None, 1.0 if q == 1 else None, True)
    z = Coefficient(partial(_abs_power, q - p), f"power_ratio:{q - p:g}", 1.0, None, None, True)
    return sigma, b, z


def recompose(z: Coefficient, sigma: Coefficient, sign: float = 1.0) -> Coefficient:
    """Pointwise product ``sign * Z * sigma`` as a drift coefficient."""
    return Coefficient(
        partial(_product, z.func, sigma.func, sign),
        f"{'-' if sign < 0 else ''}({z.label})*({sigma.label})",
        autonomous=z.autonomous and sigma.autonomous,
    )


# -- cutoff and mollification -----------------------------------------------------


def _smoothstep(s):
    return s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)


def cutoff(n: int, x):
    """Symmetric cutoff: 1 on ``[-n, n]``, 0 outside ``(-n-2, n+2)``.

    The transition bands use the quintic smoothstep stretched over width 2, so
    the slope never exceeds 15/16.
    """
    if n < 1:
        raise ValueError(f"cutoff index must be >= 1, got {n}")
    s = np.clip((np.abs(np.asarray(x, dtype=float)) - n) / 2.0, 0.0, 1.0)
    out = 1.0 - _smoothstep(s)
    return float(out) if out.ndim == 0 else out


_QUAD_RTOL = 1e-4
_QUAD_ATOL = 1e-10


def _gauss_legendre_unit(n: int):
    nodes, weights = np.polynomial.legendre.leggauss(n)
    return 0.5 * (nodes + 1.0), 0.5 * weights


def _mollify(b: Coefficient, m: int, t, x, u, half_width: float, nodes: int):
    """Composite Gauss-Legendre value and error estimate of ``b_m`` at points ``u``."""
    t, x, u = (np.asarray(a, dtype=float) for a in np.broadcast_arrays(t, x, u))
    shape = u.shape
    t, x, u = t.ravel(), x.ravel(), u.ravel()
    scale = 2.0 ** (-m / 2.0)
    edge = m + 2.0
    lo = np.maximum(u - half_width * scale, -edge)
    hi = np.minimum(u + half_width * scale, edge)
    hi = np.maximum(hi, lo)
    # panels of width 2*scale, split at the cutoff kinks and graded towards
    # the origin where power-law drifts lose smoothness
    grade = scale * 4.0 ** -np.arange(1, 6)
    kinks = np.concatenate([[-edge, -float(m), 0.0, float(m), edge], grade, -grade])
    steps = u[:, None] + scale * np.arange(-half_width, half_width + 1.0, 2.0)[None, :]
    pts = np.clip(np.concatenate([np.broadcast_to(kinks, (u.size, kinks.size)), steps], axis=1), lo[:, None], hi[:, None])
    edges = np.sort(np.concatenate([lo[:, None], pts, hi[:, None]], axis=1), axis=1)
    a_, b_ = edges[:, :-1], edges[:, 1:]

    def rule(k):
        g, w = _gauss_legendre_unit(k)
        up = a_[:, :, None] + (b_ - a_)[:, :, None] * g  # (N, P, k)
        wt = (b_ - a_)[:, :, None] * w
        d = u[:, None, None] - up
        kern = np.exp(-(d * d) / (2.0 * scale * scale)) / (math.sqrt(2.0 * math.pi) * scale)
        vals = b(t[:, None, None], x[:, None, None], up) * kern * cutoff(m, up)
        return np.sum(vals * wt, axis=(1, 2))

    fine = rule(nodes)
    coarse = rule(max(nodes // 2, 2))
    return fine.reshape(shape), np.abs(fine - coarse).reshape(shape)


def mollify_drift(b: Coefficient, m: int, t, x, u, *, half_width: float = 8.0, nodes: int = 12):
    """``b_m(t, x, u) = int b(t, x, u') G_{2^-m}(u - u') Psi_m(u') du'``.

    Vectorized over ``(t, x, u)``.  Raises :class:`QuadratureFailure` when the
    embedded error estimate exceeds ``1e-4`` relative (``1e-10`` absolute).
    """
    if m < 1:
        raise ValueError(f"mollification level must be >= 1, got {m}")
    value, err = _mollify(b, m, t, x, u, half_width, nodes)
    bad = err > _QUAD_RTOL * np.abs(value) + _QUAD_ATOL
    if np.any(bad):
        i = int(np.argmax(np.ravel(bad)))
        raise QuadratureFailure(
            f"b_{m}: error estimate {np.ravel(err)[i]:.3g} exceeds target at u={np.ravel(np.broadcast_to(u, value.shape))[i]:.6g}"
        )
    return float(value) if value.ndim == 0 else value


@dataclass
class MollifierLadder:
    """Lazily tabulated family ``b_m`` and its running minima.

    For autonomous drifts ``b_m`` is tabulated on a uniform ``u`` grid
    ``[-u_max, u_max]`` with spacing ``h`` and interpolated linearly; points
    outside the table fall back to direct quadrature.  Tables are filled once
    and only read afterwards.
    """

    base: Coefficient
    half_width: float = 8.0
    nodes: int = 12
    u_max: float = 12.0
    h: float = 1.0 / 256.0
    _tables: dict = field(default_factory=dict, repr=False)

    def level(self, m: int, t, x, u):
        return mollify_drift(self.base, m, t, x, u, half_width=self.half_width, nodes=self.nodes)

    @property
    def grid(self) -> np.ndarray:
        n = int(round(2 * self.u_max / self.h))
        return np.linspace(-self.u_max, self.u_max, n + 1)

    def table(self, m: int) -> np.ndarray:
        if m not in self._tables:
            g = self.grid
            tab = self.level(m, 0.0, 0.0, g)
            tab.flags.writeable = False
            self._tables[m] = tab
        return self._tables[m]

    def min_table(self, n: int, k: int) -> np.ndarray:
        return np.min(np.stack([self.table(m) for m in range(n, k + 1)]), axis=0)

    def drift(self, n: int, k: int) -> Coefficient:
        """``b_{n,k}`` as a coefficient usable by the solver."""
        _check_levels(n, k)
        if self.base.autonomous:
            func = TabulatedDrift(self.grid, self.min_table(n, k), self, n, k)
        else:
            func = partial(_direct_ladder, self, n, k)
        return Coefficient(
            func,
            f"ladder[{self.base.label}]({n},{k})",
            self.base.growth_constant,
            autonomous=self.base.autonomous,
        )

    def converged(self, n: int, k: int, lag: int = 4, tol: float = 1e-3) -> tuple[bool, float]:
        """Whether ``b_{n,k}`` has settled: ``max |b_{n,k} - b_{n,k-lag}| < tol`` on the table."""
        k0 = max(n, k - lag)
        gap = float(np.max(np.abs(self.min_table(n, k) - self.min_table(n, k0))))
        return gap < tol, gap


def _check_levels(n, k):
    if not 1 <= n <= k:
        raise ValueError(f"ladder needs 1 <= n <= k, got n={n}, k={k}")


def _direct_ladder(ladder, n, k, t, x, u):
    return ladder_eval(ladder, n, k, t, x, u)


class TabulatedDrift:
    """Callable ``(t, x, u) -> b_{n,k}(u)`` backed by a lookup table."""

    def __init__(self, grid, values, ladder, n, k):
        self.grid = grid
        self.values = values
        self.ladder = ladder
        self.n, self.k = n, k
        self.lo, self.hi = float(grid[0]), float(grid[-1])

    def __call__(self, t, x, u):
        u = np.asarray(u, dtype=float)
        out = np.interp(u, self.grid, self.values)
        outside = (u < self.lo) | (u > self.hi)
        if np.any(outside):
            out = np.array(out, copy=True)
            out[outside] = ladder_eval(self.ladder, self.n, self.k, 0.0, 0.0, u[outside])
        return out


def ladder_eval(ladder: MollifierLadder, n: int, k: int, t, x, u):
    """``b_{n,k}(t, x, u) = min_{n <= m <= k} b_m(t, x, u)`` by direct quadrature."""
    _check_levels(n, k)
    out = ladder.level(n, t, x, u)
    for m in range(n + 1, k + 1):
        out = np.minimum(out, ladder.level(m, t, x, u))
    return float(out) if np.ndim(out) == 0 else out


# -- regularity checks ------------------------------------------------------------


@dataclass(frozen=True)
class SampleSpec:
    """Where the condition checkers probe a coefficient.

    A deterministic mesh ``t_values x x_values x u_values`` plus ``n_random``
    seeded random points.  Pair checks add near-coincident pairs at gaps
    ``gaps`` and, anchored at ``u = 0``, gaps down to ``1e-300``.
    """

    t_values: Sequence[float] = (0.0, 0.5, 1.0)
    x_values: Sequence[float] = (-5.0, 0.0, 5.0)
    u_max_decades: int = 6
    u_per_decade: int = 4
    n_random: int = 2000
    gaps: Sequence[float] = (1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6)
    origin_gap_decades: int = 300
    seed: int = 0

    def u_values(self) -> np.ndarray:
        mags = np.logspace(-self.u_max_decades, self.u_max_decades, 2 * self.u_max_decades * self.u_per_decade + 1)
        return np.concatenate([-mags[::-1], [0.0], mags])


@dataclass
class CheckReport:
    condition: str
    passed: bool
    worst_ratio: float
    witness: dict | None
    n_checked: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _random_u(rng, n, decades):
    return rng.choice([-1.0, 1.0], n) * 10.0 ** rng.uniform(-decades, decades, n)


def _points(samples: SampleSpec, T: float | None = None):
    tv = np.asarray(samples.t_values, dtype=float)
    if T is not None:
        tv = tv * T
    tt, xx, uu = np.meshgrid(tv, samples.x_values, samples.u_values(), indexing="ij")
    rng = np.random.default_rng(samples.seed)
    tmax = T if T is not None else float(max(samples.t_values))
    xmax = float(max(abs(v) for v in samples.x_values))
    rt = rng.uniform(0.0, tmax, samples.n_random)
    rx = rng.uniform(-xmax, xmax, samples.n_random)
    ru = _random_u(rng, samples.n_random, samples.u_max_decades)
    return (
        np.concatenate([tt.ravel(), rt]),
        np.concatenate([xx.ravel(), rx]),
        np.concatenate([uu.ravel(), ru]),
    )


def _pairs(samples: SampleSpec):
    t, x, u = _points(samples)
    ts, xs, us, vs = [t], [x], [u], [-u * 0.5]  # cross-sign pairs
    for g in samples.gaps:
        for sgn in (1.0, -1.0):
            ts.append(t)
            xs.append(x)
            us.append(u)
            vs.append(u + sgn * g)
    rng = np.random.default_rng(samples.seed + 1)
    ts.append(t)
    xs.append(x)
    us.append(u)
    vs.append(_random_u(rng, u.size, samples.u_max_decades))
    origin = 10.0 ** -np.arange(1, samples.origin_gap_decades + 1, dtype=float)
    for tv in samples.t_values:
        for xv in samples.x_values:
            ts.append(np.full(origin.size, tv))
            xs.append(np.full(origin.size, xv))
            us.append(np.zeros(origin.size))
            vs.append(origin)
    t, x, u, v = (np.concatenate(a) for a in (ts, xs, us, vs))
    keep = u != v
    return t[keep], x[keep], u[keep], v[keep]


def _report(condition, num, den, coords, tol=1e-9) -> CheckReport:
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(num == 0, 0.0, num / den)
    ratio = np.where(np.isnan(ratio), np.inf, ratio)
    worst = int(np.argmax(ratio)) if ratio.size else 0
    passed = bool(np.all(ratio <= 1.0 + tol))
    if passed:
        i = worst
    else:
        i = int(np.argmax(ratio > 1.0 + tol))
    witness = {k: float(v[i]) for k, v in coords.items()} if ratio.size else None
    if witness is not None:
        witness["ratio"] = float(ratio[i])
    return CheckReport(condition, passed, float(ratio[worst]) if ratio.size else 0.0, witness, int(ratio.size))


def check_growth(c: Coefficient, T: float, C: float, samples: SampleSpec | None = None) -> CheckReport:
    """Check ``|c(t, x, u)| <= C (1 + |u|)`` on ``[0, T]`` at the sample points.

    The witness is the first violating point, or the worst point when passing.
    """
    samples = samples or SampleSpec()
    t, x, u = _points(samples, T)
    num = np.abs(np.broadcast_to(c(t, x, u), u.shape))
    return _report("growth", num, C * (1.0 + np.abs(u)), {"t": t, "x": x, "u": u})


def check_holder_sigma(
    sigma: Coefficient, gamma: float, R0: float, R1: float, R2: float, samples: SampleSpec | None = None
) -> CheckReport:
    """Check ``|s(u) - s(u')| <= R0 e^{R1|x|} (1 + |u| + |u'|)^R2 |u - u'|^gamma``."""
    if not 0 < gamma <= 1:
        raise ValueError(f"gamma must lie in (0, 1], got {gamma}")
    samples = samples or SampleSpec()
    t, x, u, v = _pairs(samples)
    num = np.abs(sigma(t, x, u) - sigma(t, x, v))
    den = R0 * np.exp(R1 * np.abs(x)) * (1.0 + np.abs(u) + np.abs(v)) ** R2 * np.abs(u - v) ** gamma
    return _report("holder", num, den, {"t": t, "x": x, "u": u, "u_prime": v})


def check_lipschitz(b: Coefficient, B: float, samples: SampleSpec | None = None) -> CheckReport:
    """Check ``|b(u) - b(u')| <= B |u - u'|``."""
    samples = samples or SampleSpec()
    t, x, u, v = _pairs(samples)
    num = np.abs(b(t, x, u) - b(t, x, v))
    return _report("lipschitz", num, B * np.abs(u - v), {"t": t, "x": x, "u": u, "u_prime": v})
