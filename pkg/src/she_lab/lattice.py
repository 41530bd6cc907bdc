"""Truncated space-time grid, grid fields and the weighted sup norms.

The spatial domain is ``[-L, L]`` sampled at ``n_space = 2L/dx + 1`` nodes and
time runs over ``[0, T]`` in ``n_time = T/dt`` explicit steps.  Every node
``x_j`` owns the cell ``[x_j - dx/2, x_j + dx/2]`` clipped to ``[-L, L]``, so
the two end cells are half as wide.  The resulting trapezoid weights are used
for every spatial integral in the package (inner products, noise cell masses,
quadratic variations), which makes them tile ``[-L, L]`` exactly.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import EmptyInput, GeometryError, NonFiniteField, StabilityViolation

_DIVISIBILITY_RTOL = 1e-9
_STABILITY_RTOL = 1e-12


class Boundary(str, enum.Enum):
    DIRICHLET_ZERO = "dirichlet_zero"
    PERIODIC = "periodic"


@dataclass(frozen=True)
class Lattice:
    L: float
    dx: float
    dt: float
    n_space: int
    n_time: int
    T: float
    boundary: Boundary = Boundary.DIRICHLET_ZERO

    def __post_init__(self):
        if not self.L > 0:
            raise GeometryError(f"half width must be positive, got L={self.L}")
        if self.n_space < 3:
            raise GeometryError(f"need at least 3 space points, got {self.n_space}")
        if self.n_time < 1:
            raise GeometryError(f"need at least one time step, got {self.n_time}")
        if self.dt > 0.5 * self.dx**2 * (1.0 + _STABILITY_RTOL):
            raise StabilityViolation(
                f"dt={self.dt:g} exceeds the explicit-scheme bound dx^2/2={0.5 * self.dx**2:g}"
            )

    @cached_property
    def x(self) -> np.ndarray:
        x = np.linspace(-self.L, self.L, self.n_space)
        x.flags.writeable = False
        return x

    @cached_property
    def weights(self) -> np.ndarray:
        """Trapezoid cell widths; they sum to ``2L``."""
        w = np.full(self.n_space, self.dx)
        w[0] = w[-1] = 0.5 * self.dx
        w.flags.writeable = False
        return w

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_time + 1) * self.dt

    def index_of(self, x: float) -> int:
        """Index of the grid node nearest to ``x``."""
        return int(round((x + self.L) / self.dx))

    def interior_mask(self, margin: float) -> np.ndarray:
        """Nodes at distance at least ``margin`` from the truncation boundary."""
        return np.abs(self.x) <= self.L - margin + 1e-12

    def refined(self, factor: int = 2) -> "Lattice":
        """Parabolic refinement: ``dx / factor`` and ``dt / factor**2``."""
        return build_lattice(self.L, self.dx / factor, self.dt / factor**2, self.T, self.boundary)

    def widened(self, factor: float = 2.0) -> "Lattice":
        return build_lattice(self.L * factor, self.dx, self.dt, self.T, self.boundary)

    def describe(self) -> dict:
        return {
            "L": self.L,
            "dx": self.dx,
            "dt": self.dt,
            "T": self.T,
            "n_space": self.n_space,
            "n_time": self.n_time,
            "boundary": self.boundary.value,
        }


def _integral_ratio(num: float, den: float, what: str) -> int:
    ratio = num / den
    k = round(ratio)
    if k < 1 or abs(ratio - k) > _DIVISIBILITY_RTOL * max(1.0, ratio):
        raise GeometryError(f"{what}: {num:g}/{den:g} = {ratio:.12g} is not an integer")
    return int(k)


def build_lattice(L, dx, dt, T, boundary="dirichlet_zero") -> Lattice:
    """Validate the geometry and build a :class:`Lattice`.

    Raises
    ------
    GeometryError
        Non-positive sizes, or ``dx`` (``dt``) not dividing ``2L`` (``T``).
    StabilityViolation
        ``dt > dx**2 / 2``.
    """
    for name, value in (("L", L), ("dx", dx), ("dt", dt), ("T", T)):
        if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
            raise GeometryError(f"{name} must be a positive finite number, got {value!r}")
    boundary = Boundary(boundary)
    n_cells = _integral_ratio(2.0 * L, dx, "2L/dx")
    n_time = _integral_ratio(T, dt, "T/dt")
    return Lattice(
        L=float(L),
        dx=float(dx),
        dt=float(dt),
        n_space=n_cells + 1,
        n_time=n_time,
        T=float(T),
        boundary=boundary,
    )


def check_finite(values: np.ndarray, what: str = "field") -> None:
    bad = ~np.isfinite(values)
    if bad.any():
        first = np.unravel_index(int(np.argmax(bad)), values.shape)
        idx = first[0] if len(first) == 1 else first
        raise NonFiniteField(f"{what} has a non-finite entry at index {idx}: {values[first]!r}")


@dataclass(frozen=True, eq=False)
class Field:
    """Values of a function on the space grid of ``lattice`` (read-only)."""

    values: np.ndarray
    lattice: Lattice = field(repr=False)

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.shape != (self.lattice.n_space,):
            raise ValueError(
                f"field has shape {values.shape}, lattice expects ({self.lattice.n_space},)"
            )
        check_finite(values)
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @classmethod
    def from_function(cls, f, lattice: Lattice) -> "Field":
        return cls(np.broadcast_to(f(lattice.x), lattice.x.shape), lattice)

    @classmethod
    def constant(cls, c: float, lattice: Lattice) -> "Field":
        return cls(np.full(lattice.n_space, float(c)), lattice)

    @classmethod
    def delta(cls, lattice: Lattice, x0: float = 0.0, mass: float = 1.0) -> "Field":
        """Discrete point mass: ``mass / dx`` at the node nearest ``x0``."""
        v = np.zeros(lattice.n_space)
        v[lattice.index_of(x0)] = mass / lattice.dx
        return cls(v, lattice)

    def inner(self, other) -> float:
        """Trapezoid approximation of the L2 pairing on ``[-L, L]``."""
        other = other.values if isinstance(other, Field) else np.asarray(other)
        return float(np.sum(self.lattice.weights * self.values * other))

    def __len__(self):
        return self.lattice.n_space


def weighted_sup_norm(f, lam: float) -> float:
    """``max_j |f(x_j)| exp(-lam |x_j|)``.

    A lower bound for the continuum norm ``sup_x |f(x)| e^{-lam|x|}``;
    ``lam > 0`` gives the tempered norms, ``lam < 0`` the rapid-decay ones.
    Accepts a :class:`Field` or a ``(values, lattice)``-like pair.
    """
    if isinstance(f, Field):
        values, x = f.values, f.lattice.x
    else:
        values, lattice = f
        values = np.asarray(values, dtype=float)
        x = lattice.x
    check_finite(values)
    return float(np.max(np.abs(values) * np.exp(-lam * np.abs(x))))


def ctem_profile(traj, lambdas: Sequence[float]) -> list[tuple[float, float]]:
    """One ``(lam, sup_t ||u(t)||_lam)`` row per requested ``lam``.

    ``traj`` is anything with a 2-D ``values`` array (time x space) and a
    ``lattice``, e.g. a solver Trajectory.
    """
    lambdas = list(lambdas)
    if not lambdas:
        raise EmptyInput("ctem_profile needs at least one lambda")
    values = np.asarray(traj.values, dtype=float)
    if values.ndim != 2 or values.shape[0] == 0:
        raise EmptyInput("trajectory holds no recorded fields")
    check_finite(values, "trajectory")
    absx = np.abs(traj.lattice.x)
    absu = np.abs(values)
    rows = []
    for lam in lambdas:
        rows.append((float(lam), float(np.max(absu * np.exp(-lam * absx)))))
    return rows
