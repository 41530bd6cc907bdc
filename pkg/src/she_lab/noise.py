"""Discrete space-time white noise on a :class:`~she_lab.lattice.Lattice`.

Entry ``xi[i, j]`` is the white-noise mass of the cell
``[t_i, t_{i+1}) x ([x_j - dx/2, x_j + dx/2] clipped to [-L, L])``, a centred
Gaussian with variance ``dt * w_j`` where ``w_j`` is the trapezoid width of the
cell (``dx`` inside, ``dx/2`` for the two end nodes).  The solver injects it as
the density ``xi / (dt * dx)``.

Streams come from a counter-based Philox generator keyed by the seed, drawn
row-major.  Row ``i`` therefore occupies the same stretch of the stream whether
the sheet is materialized at once or produced row by row.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, Iterator

import numpy as np

from .errors import LatticeMismatch, OutOfDomain, TimeOutOfRange
from .lattice import Lattice, build_lattice

GENERATOR_ID = "numpy.random.Philox(key=seed).standard_normal/row-major"
_MAGIC = b"SHENOISE"
_EPS = 1e-9


def _generator(seed: int) -> np.random.Generator:
    seed = int(seed)
    if seed < 0 or seed >= 2**64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return np.random.Generator(np.random.Philox(key=seed))


def _row_scale(lattice: Lattice) -> np.ndarray:
    return np.sqrt(lattice.dt * lattice.weights)


def iter_noise_rows(lattice: Lattice, seed: int) -> Iterator[np.ndarray]:
    """Yield the increments one time level at a time.

    Produces exactly the rows of ``sample_noise(lattice, seed).increments``
    without holding the whole sheet in memory.
    """
    gen = _generator(seed)
    scale = _row_scale(lattice)
    for _ in range(lattice.n_time):
        yield gen.standard_normal(lattice.n_space) * scale


@dataclass(frozen=True, eq=False)
class NoiseSheet:
    increments: np.ndarray
    seed: int
    lattice: Lattice = field(repr=False)

    def __post_init__(self):
        shape = (self.lattice.n_time, self.lattice.n_space)
        if self.increments.shape != shape:
            raise LatticeMismatch(f"increments have shape {self.increments.shape}, expected {shape}")
        self.increments.flags.writeable = False

    def row(self, i: int) -> np.ndarray:
        return self.increments[i]

    @cached_property
    def _cumulative(self) -> np.ndarray:
        # S[m, k] = sum_{i < m} sum_{j <= k} xi[i, j]
        s = np.zeros((self.lattice.n_time + 1, self.lattice.n_space))
        np.cumsum(np.cumsum(self.increments, axis=0), axis=1, out=s[1:])
        s.flags.writeable = False
        return s

    def rectangle_sum(self, m0: int, m1: int, k0: int, k1: int) -> float:
        """Sum of ``xi[i, j]`` over ``m0 <= i < m1`` and ``k0 < j <= k1``."""
        s = self._cumulative
        return float(s[m1, k1] - s[m0, k1] - s[m1, k0] + s[m0, k0])


def sample_noise(lattice: Lattice, seed: int) -> NoiseSheet:
    gen = _generator(seed)
    xi = gen.standard_normal((lattice.n_time, lattice.n_space))
    xi *= _row_scale(lattice)
    return NoiseSheet(xi, int(seed), lattice)


def integrate_test_function(sheet: NoiseSheet, phi: Callable, t_end: float) -> float:
    """Discrete Wiener integral ``sum_{t_i < t_end} sum_j phi(t_i, x_j) xi_ij``.

    ``phi`` is called once with broadcastable arrays ``t`` (column) and ``x``
    (row).
    """
    lat = sheet.lattice
    if t_end < 0 or t_end > lat.T * (1 + _EPS):
        raise TimeOutOfRange(f"t_end={t_end} outside [0, {lat.T}]")
    m = int(np.ceil(t_end / lat.dt - _EPS))
    if m == 0:
        return 0.0
    t = (np.arange(m) * lat.dt)[:, None]
    values = np.broadcast_to(phi(t, lat.x[None, :]), (m, lat.n_space))
    return float(np.sum(values * sheet.increments[:m]))


def brownian_sheet_value(sheet: NoiseSheet, t: float, x: float) -> float:
    """Signed Brownian sheet ``W(t, x)`` built from the increments.

    For ``x >= 0`` it sums the cells with nodes in ``(0, x]``; for ``x < 0`` it
    is minus the sum over nodes in ``(x, 0]``.  Time rows with ``t_i + dt <= t``
    are included.
    """
    lat = sheet.lattice
    if not (-_EPS <= t <= lat.T * (1 + _EPS)) or abs(x) > lat.L * (1 + _EPS):
        raise OutOfDomain(f"({t}, {x}) outside [0, {lat.T}] x [-{lat.L}, {lat.L}]")
    m = min(int(np.floor(t / lat.dt + _EPS)), lat.n_time)
    k = int(np.floor((x + lat.L) / lat.dx + _EPS))
    k = min(max(k, 0), lat.n_space - 1)
    k_origin = lat.index_of(0.0)
    if k >= k_origin:
        return sheet.rectangle_sum(0, m, k_origin, k)
    return -sheet.rectangle_sum(0, m, k, k_origin)


def save_noise(sheet: NoiseSheet, path) -> Path:
    from .io import write_blob

    header = {"seed": sheet.seed, "generator": GENERATOR_ID, **sheet.lattice.describe()}
    return write_blob(path, _MAGIC, header, sheet.increments)


def load_noise(path) -> NoiseSheet:
    from .io import read_blob

    header, payload = read_blob(path, _MAGIC)
    lat = build_lattice(header["L"], header["dx"], header["dt"], header["T"], header["boundary"])
    return NoiseSheet(payload.reshape(lat.n_time, lat.n_space).copy(), int(header["seed"]), lat)

