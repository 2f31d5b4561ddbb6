"""Grids, time slabs, norms and spatial/temporal difference operators.

Fields are plain ``numpy`` arrays paired with a grid.  Two-dimensional
arrays are indexed ``[i1, i2]`` (x1 outer, x2 inner), so transposing an
array is exactly the particle-label swap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

PERIODIC = "periodic"
DIRICHLET = "dirichlet_zero"
SCHEMES = ("spectral", "fd2", "fd4")


class SchemeError(ValueError):
    """Raised for an invalid scheme/boundary/axis combination."""


@dataclass(frozen=True)
class Grid1D:
    n: int
    x_min: float
    x_max: float
    boundary: str = PERIODIC

    def __post_init__(self):
        if self.n < 8:
            raise ValueError(f"grid needs at least 8 points, got n={self.n}")
        if self.boundary not in (PERIODIC, DIRICHLET):
            raise ValueError(f"unknown boundary {self.boundary!r}")
        if not self.x_max > self.x_min:
            raise ValueError("x_max must exceed x_min")

    @property
    def dx(self) -> float:
        length = self.x_max - self.x_min
        return length / self.n if self.boundary == PERIODIC else length / (self.n - 1)

    @property
    def length(self) -> float:
        return self.x_max - self.x_min

    @property
    def x(self) -> np.ndarray:
        return self.x_min + self.dx * np.arange(self.n)

    @property
    def k(self) -> np.ndarray:
        """Angular wavenumbers in FFT order (periodic grids)."""
        return 2.0 * np.pi * np.fft.fftfreq(self.n, d=self.dx)

    @property
    def shape(self) -> tuple[int]:
        return (self.n,)

    @property
    def ndim(self) -> int:
        return 1

    @property
    def cell_volume(self) -> float:
        return self.dx

    @property
    def axes(self) -> tuple["Grid1D"]:
        return (self,)

    def refined(self, n: int) -> "Grid1D":
        return Grid1D(n, self.x_min, self.x_max, self.boundary)


@dataclass(frozen=True)
class Grid2D:
    axis1: Grid1D
    axis2: Grid1D

    @classmethod
    def square(cls, n: int, x_min: float, x_max: float, boundary: str = PERIODIC) -> "Grid2D":
        ax = Grid1D(n, x_min, x_max, boundary)
        return cls(ax, ax)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.axis1.n, self.axis2.n)

    @property
    def ndim(self) -> int:
        return 2

    @property
    def axes(self) -> tuple[Grid1D, Grid1D]:
        return (self.axis1, self.axis2)

    @property
    def cell_volume(self) -> float:
        return self.axis1.dx * self.axis2.dx

    @property
    def dx(self) -> float:
        return max(self.axis1.dx, self.axis2.dx)

    @property
    def is_square(self) -> bool:
        return self.axis1 == self.axis2

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.axis1.x, self.axis2.x, indexing="ij")

    def refined(self, n: int) -> "Grid2D":
        return Grid2D(self.axis1.refined(n), self.axis2.refined(n))


Grid = Grid1D | Grid2D


@dataclass(frozen=True)
class TimeSlabs:
    """Three snapshots of one field at ``t - dt``, ``t`` and ``t + dt``."""

    prev: np.ndarray
    cur: np.ndarray
    next: np.ndarray
    dt: float

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not (self.prev.shape == self.cur.shape == self.next.shape):
            raise ValueError(
                f"slab shapes differ: {self.prev.shape}, {self.cur.shape}, {self.next.shape}"
            )

    def map(self, func) -> "TimeSlabs":
        return TimeSlabs(func(self.prev), func(self.cur), func(self.next), self.dt)


def first_time_derivative(slabs: TimeSlabs) -> np.ndarray:
    return (slabs.next - slabs.prev) / (2.0 * slabs.dt)


def second_time_derivative(slabs: TimeSlabs) -> np.ndarray:
    return (slabs.next - 2.0 * slabs.cur + slabs.prev) / slabs.dt**2


@lru_cache(maxsize=None)
def fd_weights(offsets: tuple[int, ...], order: int) -> np.ndarray:
    """Finite-difference weights on integer ``offsets`` for a unit spacing.

    Solves the Vandermonde moment system, so a stencil of ``p`` points is
    exact for polynomials of degree ``p - 1``.
    """
    offs = np.asarray(offsets, dtype=float)
    m = len(offs)
    a = np.vander(offs, m, increasing=True).T
    rhs = np.zeros(m)
    rhs[order] = math.factorial(order)
    w = np.linalg.solve(a, rhs)
    w[np.abs(w) < 1e-12 * np.max(np.abs(w))] = 0.0
    w.setflags(write=False)
    return w


def _fd_last_axis(f: np.ndarray, dx: float, order: int, accuracy: int, periodic: bool) -> np.ndarray:
    r = accuracy // 2
    centered = fd_weights(tuple(range(-r, r + 1)), order)
    out = np.zeros_like(f)
    if periodic:
        for off, w in zip(range(-r, r + 1), centered):
            if w != 0.0:
                out = out + w * np.roll(f, -off, axis=-1)
        return out / dx**order
    n = f.shape[-1]
    for off, w in zip(range(-r, r + 1), centered):
        if w != 0.0:
            out[..., r:n - r] += w * f[..., r + off:n - r + off]
    width = accuracy + order
    for i in range(r):
        offs = tuple(range(-i, -i + width))
        for off, w in zip(offs, fd_weights(offs, order)):
            out[..., i] += w * f[..., i + off]
        j = n - 1 - i
        offs = tuple(range(i - width + 1, i + 1))
        for off, w in zip(offs, fd_weights(offs, order)):
            out[..., j] += w * f[..., j + off]
    return out / dx**order


def _spectral_last_axis(f: np.ndarray, axis_grid: Grid1D, order: int) -> np.ndarray:
    k = axis_grid.k
    if order == 1:
        mult = 1j * k
        if axis_grid.n % 2 == 0:
            mult[axis_grid.n // 2] = 0.0
    else:
        mult = -(k**2)
    out = np.fft.ifft(np.fft.fft(f, axis=-1) * mult, axis=-1)
    return out.real if np.isrealobj(f) else out


def diff(f: np.ndarray, grid: Grid, axis: int = 0, order: int = 1, scheme: str = "spectral") -> np.ndarray:
    """Derivative of ``f`` along ``axis`` of ``grid``.

    ``scheme`` is one of ``spectral`` (periodic grids only), ``fd2`` or
    ``fd4`` (centered stencils; one-sided closures on non-periodic axes).
    """
    if order not in (1, 2):
        raise ValueError(f"derivative order must be 1 or 2, got {order}")
    if scheme not in SCHEMES:
        raise SchemeError(f"unknown scheme {scheme!r}")
    if not 0 <= axis < grid.ndim:
        raise SchemeError(f"axis {axis} out of range for a {grid.ndim}D grid")
    f = np.asarray(f)
    if f.shape != grid.shape:
        raise ValueError(f"field shape {f.shape} does not match grid {grid.shape}")
    ax = grid.axes[axis]
    periodic = ax.boundary == PERIODIC
    if scheme == "spectral" and not periodic:
        raise SchemeError("spectral differentiation requires a periodic axis")
    moved = np.moveaxis(f, axis, -1)
    if scheme == "spectral":
        out = _spectral_last_axis(moved, ax, order)
    else:
        acc = 2 if scheme == "fd2" else 4
        out = _fd_last_axis(moved.astype(np.result_type(moved, float)), ax.dx, order, acc, periodic)
    return np.moveaxis(out, -1, axis)


def diff_weighted(f: np.ndarray, weight: np.ndarray, grid: Grid, axis: int = 0,
                  scheme: str = "spectral", cut: float = 1e-10,
                  product: np.ndarray | None = None) -> np.ndarray:
    """First derivative of a field that is only meaningful where ``weight`` is not small.

    Uses ``d f = (d(w f) - f d w) / w`` so only the decaying product ``w f``
    and ``w`` are differentiated.  Velocities and quantum potentials grow
    without bound towards the edge of a periodic box; differentiating them
    directly with a global (spectral) stencil would pollute the interior.
    Cells with ``w <= cut * max(w)`` are returned as zero.  ``product``
    supplies ``w f`` when it is known in a smoother closed form.
    """
    w = np.asarray(weight)
    keep = w > cut * np.max(w)
    out = np.zeros(np.shape(f), dtype=np.result_type(f, float))
    wf = w * f if product is None else product
    d = diff(wf, grid, axis, 1, scheme) - f * diff(w, grid, axis, 1, scheme)
    out[keep] = d[keep] / w[keep]
    return out


def norm(f: np.ndarray, grid: Grid | None = None, kind: str = "L2", weighted: bool = True,
         mask: np.ndarray | None = None) -> float:
    """Discrete L1/L2/Linf norm, optionally weighted by the cell volume."""
    vals = np.abs(np.asarray(f))
    if mask is not None:
        vals = vals[mask]
    if vals.size == 0:
        return 0.0
    vol = grid.cell_volume if (weighted and grid is not None) else 1.0
    if kind == "L1":
        return float(np.sum(vals) * vol)
    if kind == "L2":
        return float(np.sqrt(np.sum(vals**2) * vol))
    if kind == "Linf":
        return float(np.max(vals))
    raise ValueError(f"unknown norm kind {kind!r}")


def integrate(f: np.ndarray, grid: Grid) -> float:
    return float(np.sum(f) * grid.cell_volume)


def observed_order(coarse: float, fine: float, ratio: float = 2.0) -> float:
    """Two-grid estimate of the convergence exponent."""
    if coarse <= 0 or fine <= 0:
        return float("nan")
    return math.log(coarse / fine) / math.log(ratio)
