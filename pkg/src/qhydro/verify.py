"""Residuals of the hydrodynamic equations, refinement studies and the classicality metric."""

from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .madelung import (
    FieldSlabs, HydroFields, TwoBodyFields, interior_mask, material_derivative,
    rho_times_gradient, velocity_gradient,
)
from .numerics import TimeSlabs, diff, first_time_derivative, norm, observed_order, second_time_derivative


class EquationId(str, enum.Enum):
    continuity_1p = "continuity_1p"
    hj_1p = "hj_1p"
    momentum_1p = "momentum_1p"
    wave_1p = "wave_1p"
    wave_equilibrium_1p = "wave_equilibrium_1p"
    continuity_2p = "continuity_2p"
    hj_2p = "hj_2p"
    momentum_2p_1 = "momentum_2p_1"
    momentum_2p_2 = "momentum_2p_2"
    wave_2p = "wave_2p"

    @property
    def two_body(self) -> bool:
        return self.value.endswith("2p") or "_2p_" in self.value


ONE_BODY = [e for e in EquationId if not e.two_body]
TWO_BODY = [e for e in EquationId if e.two_body]


@dataclass
class ResidualReport:
    equation: str
    L1: float
    L2: float
    Linf: float
    n: int
    dx: float
    dt: float
    interior_fraction: float
    scheme: str
    scenario: str = ""
    level: int = 0
    extra: dict = field(default_factory=dict)

    def as_row(self) -> dict:
        return {k: v for k, v in asdict(self).items() if k != "extra"}


@dataclass
class ClassicalityMetric:
    cross_norm: float
    single_norm: float
    total_norm: float

    @property
    def ratio(self) -> float:
        return self.cross_norm / self.total_norm if self.total_norm > 0 else float("nan")


def _d(fields, arr, axis, order=1):
    return diff(arr, fields.grid, axis, order, fields.scheme)


def _time_phase_rate(slabs: FieldSlabs) -> np.ndarray:
    """d_t S from the phase advance between the outer slabs (no unwrapping needed)."""
    return slabs.cur.hbar * np.angle(slabs.next.psi * np.conj(slabs.prev.psi)) / (2 * slabs.dt)


# --- single-particle assemblies --------------------------------------------

def _continuity_1p(s: FieldSlabs):
    f = s.cur
    return first_time_derivative(s.slab("rho")) + _d(f, f.j, 0)


def _hj_1p(s: FieldSlabs):
    f = s.cur
    return -_time_phase_rate(s) - 0.5 * f.m * f.v**2 - f.V - f.Q


def _momentum_1p(s: FieldSlabs):
    f = s.cur
    return (first_time_derivative(s.slab("j")) + _d(f, f.Pi, 0) / f.m
            + rho_times_gradient(f, f.V, 0) / f.m)


def _wave_1p(s: FieldSlabs):
    f = s.cur
    return (second_time_derivative(s.slab("rho")) - _d(f, f.Pi, 0, 2)
            - _d(f, rho_times_gradient(f, f.V, 0), 0))


def equilibrium_wave_operator(s: FieldSlabs, rho: TimeSlabs, velocities: TimeSlabs | None = None) -> np.ndarray:
    """d_t^2 rho - d^2(rho v^2) + d[rho (d_t + v d) v] with the velocity held fixed.

    Linear in ``rho``; with rho = |psi|^2 and the extracted velocity this is
    the residual of the linear equilibrium wave equation.
    """
    f = s.cur
    v = f.v if velocities is None else velocities.cur
    md = material_derivative(s, 0, velocities)
    return second_time_derivative(rho) - _d(f, rho.cur * v**2, 0, 2) + _d(f, rho.cur * md, 0)


def _wave_equilibrium_1p(s: FieldSlabs):
    return equilibrium_wave_operator(s, s.slab("rho"))


# --- two-particle assemblies -----------------------------------------------

def _continuity_2p(s: FieldSlabs):
    f = s.cur
    return first_time_derivative(s.slab("rho")) + _d(f, f.j1, 0) + _d(f, f.j2, 1)


def _hj_2p(s: FieldSlabs):
    f = s.cur
    return (-_time_phase_rate(s) - 0.5 * f.m1 * f.v1**2 - 0.5 * f.m2 * f.v2**2 - f.V - f.Q)


def _momentum_2p(s: FieldSlabs, i: int):
    """Momentum balance for particle ``i`` derived from the two-body HJ equation.

    d_t(rho v_i) = -d_i(rho v_i^2) - rho v_k d_k v_i - v_i d_k(rho v_k) - (rho/m_i) d_i(V+Q),
    with k the other particle; valid for unequal masses.
    """
    f = s.cur
    k = 1 - i
    vi, vk, jk = f.velocity(i), f.velocity(k), f.current(k)
    mi = f.masses[i]
    return (first_time_derivative(s.slab(("j1", "j2")[i])) + _d(f, f.current(i) * vi, i)
            + f.rho * vk * velocity_gradient(f, vi, k) + vi * _d(f, jk, k)
            + (rho_times_gradient(f, f.V, i) + rho_times_gradient(f, f.Q, i)) / mi)


def two_body_wave_terms(s: FieldSlabs) -> tuple[np.ndarray, np.ndarray]:
    """(single-particle group, inter-particle cross group) of the two-body wave equation RHS."""
    f = s.cur
    single = np.zeros_like(f.rho)
    cross = np.zeros_like(f.rho)
    for i in (0, 1):
        k = 1 - i
        vi, ji = f.velocity(i), f.current(i)
        single += _d(f, ji * vi, i, 2) - _d(f, f.rho * material_derivative(s, i), i)
        cross += (velocity_gradient(f, vi, i) * _d(f, f.current(k), k)
                  + vi * _d(f, _d(f, f.current(k), k), i))
    return single, cross


def _wave_2p(s: FieldSlabs):
    single, cross = two_body_wave_terms(s)
    return second_time_derivative(s.slab("rho")) - single - cross


ASSEMBLERS: dict[EquationId, Callable[[FieldSlabs], np.ndarray]] = {
    EquationId.continuity_1p: _continuity_1p,
    EquationId.hj_1p: _hj_1p,
    EquationId.momentum_1p: _momentum_1p,
    EquationId.wave_1p: _wave_1p,
    EquationId.wave_equilibrium_1p: _wave_equilibrium_1p,
    EquationId.continuity_2p: _continuity_2p,
    EquationId.hj_2p: _hj_2p,
    EquationId.momentum_2p_1: lambda s: _momentum_2p(s, 0),
    EquationId.momentum_2p_2: lambda s: _momentum_2p(s, 1),
    EquationId.wave_2p: _wave_2p,
}


def residual_mask(s: FieldSlabs) -> np.ndarray:
    return interior_mask(s.cur.rho) & ~s.cur.node_mask


def report_from_field(eq: str, r: np.ndarray, s: FieldSlabs, mask: np.ndarray | None = None,
                      **meta) -> ResidualReport:
    mask = residual_mask(s) if mask is None else mask
    g = s.grid
    return ResidualReport(
        equation=str(eq), L1=norm(r, g, "L1", mask=mask), L2=norm(r, g, "L2", mask=mask),
        Linf=norm(r, g, "Linf", mask=mask), n=g.shape[0], dx=g.axes[0].dx, dt=s.dt,
        interior_fraction=float(np.mean(mask)), scheme=s.cur.scheme, **meta)


def residual_field(eq: EquationId | str, slabs: FieldSlabs) -> np.ndarray:
    eq = EquationId(eq)
    if eq.two_body != isinstance(slabs.cur, TwoBodyFields):
        raise ValueError(f"{eq.value} does not match the dimensionality of the fields")
    if not (slabs.prev.scheme == slabs.cur.scheme == slabs.next.scheme):
        raise ValueError("slabs were extracted with different schemes")
    return ASSEMBLERS[eq](slabs)


def residual(eq: EquationId | str, slabs: FieldSlabs, **meta) -> ResidualReport:
    """Pointwise LHS - RHS of ``eq`` reduced to L1/L2/Linf norms over the interior."""
    eq = EquationId(eq)
    return report_from_field(eq.value, residual_field(eq, slabs), slabs, **meta)


# --- printed-form discrepancies -------------------------------------------

def velocity_equation_residuals(s: FieldSlabs, literal: bool = False) -> dict[str, float]:
    """Linf residuals of the two-body velocity equations.

    Derived form: d_t v_i = -v_i d_i v_i - (m_k/m_i) v_k d_i v_k - (1/m_i) d_i(V+Q).
    ``literal=True`` uses the literal coefficients (unit mass ratio in both,
    1/m1 on the force of particle 2).
    """
    f = s.cur
    mask = residual_mask(s)
    out = {}
    force_mass = (f.m1, f.m1) if literal else (f.m1, f.m2)
    for i in (0, 1):
        k = 1 - i
        vi, vk = f.velocity(i), f.velocity(k)
        ratio = 1.0 if literal else f.masses[k] / f.masses[i]
        dvi = first_time_derivative(s.slab(("v1", "v2")[i]))
        force = velocity_gradient(f, f.V + f.Q, i)
        r = (dvi + vi * velocity_gradient(f, vi, i) + ratio * vk * velocity_gradient(f, vk, i)
             + force / force_mass[i])
        out[f"velocity_{i + 1}"] = norm(r, f.grid, "Linf", mask=mask)
    return out


def stress_form_residuals(s: FieldSlabs) -> dict[str, float]:
    """Momentum residual (L2) with each stress form; the consistent one vanishes."""
    from .madelung import quantum_stress

    out = {}
    f = s.cur
    mask = residual_mask(s)
    for form in ("standard", "literal"):
        pi = quantum_stress(f.rho, f.amp, f.j, f.v, f.grid, f.m, f.hbar, f.scheme, form)
        r = (first_time_derivative(s.slab("j")) + _d(f, pi, 0) / f.m
             + rho_times_gradient(f, f.V, 0) / f.m)
        out[form] = norm(r, f.grid, "L2", mask=mask)
    return out


# --- velocity uniqueness ---------------------------------------------------

def velocity_uniqueness_probe(s: FieldSlabs, c: float) -> tuple[ResidualReport, ResidualReport]:
    """Equilibrium wave residual with v and with v + c/rho (same flux divergence)."""
    if not isinstance(s.cur, HydroFields):
        raise ValueError("velocity uniqueness probe is one-dimensional")
    mask = residual_mask(s)
    if not np.any(mask):
        raise ValueError("no cells above the node threshold")
    clean = report_from_field("wave_equilibrium_1p", _wave_equilibrium_1p(s), s, mask)

    def shifted(f: HydroFields):
        out = f.v.copy()
        out[mask] += c / f.rho[mask]
        return out

    vs = TimeSlabs(shifted(s.prev), shifted(s.cur), shifted(s.next), s.dt)
    corrupted = equilibrium_wave_operator(s, s.slab("rho"), vs)
    return clean, report_from_field("wave_equilibrium_1p_shifted", corrupted, s, mask, extra={"c": c})


# --- classicality ----------------------------------------------------------

def classicality(s: FieldSlabs, mask: np.ndarray | None = None) -> ClassicalityMetric:
    """L2 norms of the cross-term group, single-particle group and full RHS."""
    single, cross = two_body_wave_terms(s)
    mask = residual_mask(s) if mask is None else mask
    g = s.grid
    return ClassicalityMetric(norm(cross, g, "L2", mask=mask), norm(single, g, "L2", mask=mask),
                              norm(single + cross, g, "L2", mask=mask))


# --- refinement studies ----------------------------------------------------

@dataclass
class ConvergenceRow:
    level: int
    n: int
    dx: float
    dt: float
    L1: float
    L2: float
    Linf: float
    order_L2: float | None
    order_Linf: float | None


def convergence_table(reports: Sequence[ResidualReport]) -> list[ConvergenceRow]:
    rows = []
    for i, r in enumerate(reports):
        o2 = oinf = None
        if i > 0:
            ratio = reports[i - 1].dx / r.dx
            o2 = observed_order(reports[i - 1].L2, r.L2, ratio)
            oinf = observed_order(reports[i - 1].Linf, r.Linf, ratio)
        rows.append(ConvergenceRow(i, r.n, r.dx, r.dt, r.L1, r.L2, r.Linf, o2, oinf))
    return rows


def non_monotone(rows: Sequence[ConvergenceRow]) -> bool:
    return any(b.L2 >= a.L2 for a, b in zip(rows, rows[1:]))


def convergence_study(make_slabs: Callable[[int], FieldSlabs], equations: Sequence[EquationId | str],
                      refinements: Sequence[int], scenario: str = "") -> dict[str, list[ConvergenceRow]]:
    """Residual norms and observed orders for each equation over a refinement ladder.

    ``make_slabs(n)`` builds the field slabs at resolution ``n`` (with dt
    tied to dx by the caller).  Non-monotone sequences are reported by
    :func:`non_monotone`, never averaged away.
    """
    if len(refinements) < 3:
        raise ValueError("a convergence study needs at least 3 refinement levels")
    if list(refinements) != sorted(set(refinements)):
        raise ValueError("refinements must be strictly increasing")
    reports: dict[str, list[ResidualReport]] = {EquationId(e).value: [] for e in equations}
    for level, n in enumerate(refinements):
        slabs = make_slabs(n)
        for e in reports:
            reports[e].append(residual(e, slabs, scenario=scenario, level=level))
    return {e: convergence_table(rs) for e, rs in reports.items()}


def min_order(rows: Sequence[ConvergenceRow], kind: str = "L2") -> float:
    vals = [getattr(r, f"order_{kind}") for r in rows[1:]]
    return min(vals) if vals else math.nan
