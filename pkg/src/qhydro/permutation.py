"""Particle-label swap, the linear density operator of the two-body wave equation, and swap tests."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .madelung import FieldSlabs, TwoBodyFields, extract_slabs, interior_mask, material_derivative, velocity_gradient
from .numerics import Grid2D, TimeSlabs, diff, norm, second_time_derivative
from .schrodinger import Potential, QuantumState, evolve, snapshot_states


@dataclass(frozen=True)
class SwapMap:
    grid: Grid2D

    def __post_init__(self):
        if self.grid.ndim != 2 or not self.grid.is_square:
            raise ValueError("swap needs a 2D grid with identical axes")


def swap(f: np.ndarray, smap: SwapMap | None = None) -> np.ndarray:
    """out[i, j] = f[j, i]."""
    if smap is not None and f.shape != smap.grid.shape:
        raise ValueError("field does not live on the swap grid")
    if f.ndim != 2 or f.shape[0] != f.shape[1]:
        raise ValueError(f"swap needs a square 2D field, got shape {f.shape}")
    return np.ascontiguousarray(f.T)


@dataclass
class LambdaOperator:
    """Right-hand side of the two-body density wave equation as a linear map on densities.

    The velocity fields (and their time derivatives) are frozen at
    construction from a slab triple; applying the operator to rho = |psi|^2
    reproduces the wave-equation right-hand side.
    """

    grid: Grid2D
    scheme: str
    v: tuple[np.ndarray, np.ndarray]
    material: tuple[np.ndarray, np.ndarray]
    dv: tuple[np.ndarray, np.ndarray]
    masses: tuple[float, float]
    dt: float
    ref_rho: np.ndarray = field(repr=False)

    @classmethod
    def from_slabs(cls, slabs: FieldSlabs) -> "LambdaOperator":
        f = slabs.cur
        if not isinstance(f, TwoBodyFields):
            raise ValueError("the operator is defined for two-body fields")
        v = (f.v1.copy(), f.v2.copy())
        material = tuple(material_derivative(slabs, i) for i in (0, 1))
        dv = tuple(velocity_gradient(f, v[i], i) for i in (0, 1))
        return cls(f.grid, f.scheme, v, material, dv, f.masses, slabs.dt, f.rho.copy())

    def _d(self, a, axis, order=1):
        return diff(a, self.grid, axis, order, self.scheme)

    def single_and_cross(self, rho: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        if rho.shape != self.grid.shape:
            raise ValueError(f"density shape {rho.shape} does not match the operator grid {self.grid.shape}")
        single = np.zeros_like(rho, dtype=float)
        cross = np.zeros_like(rho, dtype=float)
        for i in (0, 1):
            k = 1 - i
            vi = self.v[i]
            single += self._d(rho * vi * vi, i, 2) - self._d(rho * self.material[i], i)
            flux_k = rho * self.v[k]
            cross += self.dv[i] * self._d(flux_k, k) + vi * self._d(self._d(flux_k, k), i)
        return single, cross

    def __call__(self, rho: np.ndarray) -> np.ndarray:
        single, cross = self.single_and_cross(rho)
        return single + cross


def apply_lambda(op: LambdaOperator, rho: np.ndarray) -> np.ndarray:
    return op(rho)


def wave_operator_residual(op: LambdaOperator, rho: TimeSlabs) -> np.ndarray:
    """(d_t^2 - Lambda) applied to a density slab triple."""
    return second_time_derivative(rho) - op(rho.cur)


def smooth_random_probes(grid: Grid2D, envelope: np.ndarray, count: int, seed: int = 0,
                         modes: int = 4, depth: float = 0.5) -> list[np.ndarray]:
    """Positive probe densities: ``envelope`` times a smooth random modulation."""
    rng = np.random.default_rng(seed)
    x1, x2 = grid.mesh()
    l1, l2 = grid.axis1.length, grid.axis2.length
    out = []
    for _ in range(count):
        mod = np.zeros(grid.shape)
        for _ in range(modes):
            a, b = rng.integers(-3, 4, size=2)
            ph = rng.uniform(0, 2 * np.pi)
            mod += rng.normal() * np.cos(2 * np.pi * (a * x1 / l1 + b * x2 / l2) + ph)
        mod /= max(np.max(np.abs(mod)), 1e-300)
        out.append(envelope * (1.0 + depth * mod))
    return out


def lambda_linearity_defect(op: LambdaOperator, probes: list[np.ndarray], seed: int = 0) -> float:
    """max over probe pairs of |L(a p + b q) - a L p - b L q|_inf / (|a| |L p|_inf + |b| |L q|_inf)."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    images = [op(p) for p in probes]
    for i in range(len(probes)):
        j = (i + 1) % len(probes)
        a, b = rng.normal(size=2)
        lhs = op(a * probes[i] + b * probes[j])
        rhs = a * images[i] + b * images[j]
        scale = abs(a) * np.max(np.abs(images[i])) + abs(b) * np.max(np.abs(images[j]))
        if scale > 0:
            worst = max(worst, float(np.max(np.abs(lhs - rhs)) / scale))
    return worst


def lambda_symmetry_defect(op: LambdaOperator, probes: list[np.ndarray], smap: SwapMap,
                           mask: np.ndarray | None = None) -> float:
    """max over probes of |swap(L rho) - L(swap rho)|_inf / |L rho|_inf on ``mask``.

    ``mask`` should be swap-symmetric; by default the interior of the
    reference density symmetrized over the swap.  Outside it the velocities
    are round-off ratios of vanishing numbers and carry no information.
    """
    if mask is None:
        mask = interior_mask(op.ref_rho + swap(op.ref_rho))
    worst = 0.0
    for rho in probes:
        lr = op(rho)
        scale = np.max(np.abs(lr[mask]))
        if scale == 0:
            continue
        d = swap(lr, smap) - op(swap(rho, smap))
        worst = max(worst, float(np.max(np.abs(d[mask])) / scale))
    return worst


@dataclass
class PermutationReport:
    times: list[float] = field(default_factory=list)
    delta_linf: list[float] = field(default_factory=list)
    delta_rel: list[float] = field(default_factory=list)
    eq21_linf: list[float] = field(default_factory=list)
    lambda_defect: list[float] = field(default_factory=list)
    equal_masses: bool = True
    symmetric_potential: bool = True

    def rows(self) -> list[dict]:
        return [dict(time=t, delta_linf=a, delta_rel=b, eq21_linf=c, lambda_defect=d)
                for t, a, b, c, d in zip(self.times, self.delta_linf, self.delta_rel,
                                         self.eq21_linf, self.lambda_defect)]


def born_permutation_test(state: QuantumState, potential: Potential, dt: float, n_samples: int,
                          steps_between: int, method: str = "split_step_spectral",
                          scheme: str = "spectral", n_probes: int = 4, seed: int = 0) -> PermutationReport:
    """Track rho - swap(rho) and its wave-operator residual along a Schrödinger run.

    At each sample time the operator is rebuilt from the current velocity
    slabs; the residual (d_t^2 - Lambda)(rho - swap rho) is evaluated on the
    interior of rho + swap(rho).
    """
    grid = state.grid
    smap = SwapMap(grid)
    rep = PermutationReport(equal_masses=state.params.m1 == state.params.m2,
                            symmetric_potential=potential.is_swap_symmetric(grid))
    cur = state
    for k in range(n_samples):
        if k > 0:
            cur = evolve(cur, potential, dt, steps_between, method)
        states = snapshot_states(cur, potential, dt, method)
        slabs = extract_slabs(states, potential, dt, scheme=scheme)
        op = LambdaOperator.from_slabs(slabs)
        rho = slabs.slab("rho")
        delta = rho.map(lambda r: r - swap(r))
        mask = interior_mask(rho.cur + swap(rho.cur))
        res = wave_operator_residual(op, delta)
        probes = [rho.cur] + smooth_random_probes(grid, rho.cur, n_probes, seed + k)
        rep.times.append(cur.t)
        rep.delta_linf.append(norm(delta.cur, grid, "Linf"))
        rep.delta_rel.append(norm(delta.cur, grid, "Linf") / norm(rho.cur, grid, "Linf"))
        rep.eq21_linf.append(norm(res, grid, "Linf", mask=mask))
        rep.lambda_defect.append(lambda_symmetry_defect(op, probes, smap, mask))
    return rep
