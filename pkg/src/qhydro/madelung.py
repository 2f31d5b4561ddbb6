"""Hydrodynamic fields (density, phase, velocity, quantum potential, stress) from wavefunctions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import binary_dilation, binary_erosion

from .numerics import Grid, Grid1D, TimeSlabs, diff, diff_weighted, first_time_derivative, norm
from .schrodinger import Potential, QuantumState

EPS_NODE = 1e-12
# below this fraction of max(rho) velocities are set to zero (phase is round-off)
TAIL_CUT = 1e-20
# residual interior: rho above this fraction of max(rho), minus a halo
INTERIOR_REL = 1e-10
HALO = 2
# mixed-velocity identity: round-off in d(rho v) / rho stays below ~1e-6 above this level
MIXED_REL = 1e-8
PI_FORMS = ("standard", "literal")


class DegenerateStateError(ValueError):
    """Raised when the density is entirely below the node threshold."""


@dataclass(frozen=True)
class HydroFields:
    """Single-particle fields on a 1D grid.

    ``j`` is the probability current hbar Im(psi* dpsi)/m and ``amp`` is
    sqrt(rho); both stay smooth into the tails and are what derivatives act on.
    """

    grid: Grid
    psi: np.ndarray
    rho: np.ndarray
    amp: np.ndarray
    S: np.ndarray
    v: np.ndarray
    j: np.ndarray
    Q: np.ndarray
    Pi: np.ndarray
    V: np.ndarray
    node_mask: np.ndarray
    S_unreliable: np.ndarray
    hbar: float
    m: float
    t: float
    scheme: str
    pi_form: str


@dataclass(frozen=True)
class TwoBodyFields:
    grid: Grid
    psi: np.ndarray
    rho: np.ndarray
    amp: np.ndarray
    S: np.ndarray
    v1: np.ndarray
    v2: np.ndarray
    j1: np.ndarray
    j2: np.ndarray
    Q: np.ndarray
    V: np.ndarray
    node_mask: np.ndarray
    S_unreliable: np.ndarray
    hbar: float
    m1: float
    m2: float
    t: float
    scheme: str

    @property
    def masses(self) -> tuple[float, float]:
        return (self.m1, self.m2)

    def velocity(self, axis: int) -> np.ndarray:
        return self.v1 if axis == 0 else self.v2

    def current(self, axis: int) -> np.ndarray:
        return self.j1 if axis == 0 else self.j2


@dataclass(frozen=True)
class FieldSlabs:
    """Extracted fields at three consecutive times."""

    prev: HydroFields | TwoBodyFields
    cur: HydroFields | TwoBodyFields
    next: HydroFields | TwoBodyFields
    dt: float

    @property
    def grid(self) -> Grid:
        return self.cur.grid

    def slab(self, name: str) -> TimeSlabs:
        return TimeSlabs(getattr(self.prev, name), getattr(self.cur, name),
                         getattr(self.next, name), self.dt)


def _unwrap_line(phase: np.ndarray, anchor: int) -> np.ndarray:
    right = np.unwrap(phase[anchor:])
    left = np.unwrap(phase[anchor::-1])[::-1]
    return np.concatenate([left[:-1], right])


def unwrap_phase(psi: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """Phase of ``psi`` unwrapped along grid lines from the density maximum.

    The branch is fixed so the phase at argmax(rho) lies in [0, 2 pi).  In
    2D the anchor row is unwrapped along x2 first, then every column along x1.
    """
    raw = np.angle(psi)
    idx = np.unravel_index(int(np.argmax(rho)), rho.shape)
    if psi.ndim == 1:
        out = _unwrap_line(raw, idx[0])
    else:
        i0, j0 = idx
        out = np.empty_like(raw)
        row = _unwrap_line(raw[i0], j0)
        cols = raw - raw[i0][None, :] + row[None, :]
        for j in range(raw.shape[1]):
            out[:, j] = _unwrap_line(cols[:, j], i0)
        out[i0] = row
    return out - 2 * np.pi * np.floor(out[idx] / (2 * np.pi))


def interior_mask(rho: np.ndarray, rel: float = INTERIOR_REL, halo: int = HALO) -> np.ndarray:
    """Cells with rho > rel * max(rho), shrunk by a ``halo``-cell margin."""
    mask = rho > rel * np.max(rho)
    if halo > 0:
        mask = binary_erosion(mask, structure=np.ones((3,) * rho.ndim, bool), iterations=halo,
                              border_value=0)
    return mask


def quantum_potential_amplitude(amp: np.ndarray, grid: Grid, masses, hbar: float,
                                scheme: str) -> np.ndarray:
    """Q = -sum_i hbar^2/(2 m_i) d_i^2 sqrt(rho) / sqrt(rho)."""
    curv = sum(-(hbar**2) / (2 * m) * diff(amp, grid, ax, 2, scheme) for ax, m in enumerate(masses))
    q = np.zeros_like(amp)
    keep = amp > np.sqrt(TAIL_CUT) * amp.max()
    q[keep] = curv[keep] / amp[keep]
    return q


def quantum_potential_density(rho: np.ndarray, grid: Grid, m: float, hbar: float,
                              scheme: str) -> np.ndarray:
    """Second form, -hbar^2/(4 m rho) [rho'' - rho'^2 / (2 rho)] (1D)."""
    d1 = diff(rho, grid, 0, 1, scheme)
    d2 = diff(rho, grid, 0, 2, scheme)
    q = np.zeros_like(rho)
    keep = rho > TAIL_CUT * rho.max()
    r = rho[keep]
    q[keep] = -(hbar**2) / (4 * m * r) * (d2[keep] - d1[keep] ** 2 / (2 * r))
    return q


def quantum_stress(rho, amp, j, v, grid: Grid, m: float, hbar: float, scheme: str,
                   form: str = "standard") -> np.ndarray:
    """Momentum-flux density rho v^2 + (hbar^2/4m^2)(rho'^2/rho - rho'').

    ``form="literal"`` swaps rho'^2/rho for (d ln rho)/rho, a dimensionally
    inconsistent variant kept only so the momentum residual can rule on it.
    rho'^2/rho is evaluated as 4 (d sqrt(rho))^2 to stay finite in the tails.
    """
    d2 = diff(rho, grid, 0, 2, scheme)
    if form == "standard":
        grad_term = 4.0 * diff(amp, grid, 0, 1, scheme) ** 2
    elif form == "literal":
        d1 = diff(rho, grid, 0, 1, scheme)
        grad_term = np.zeros_like(rho)
        keep = rho > EPS_NODE * rho.max()
        grad_term[keep] = d1[keep] / rho[keep] ** 2
    else:
        raise ValueError(f"unknown stress form {form!r}")
    return j * v + hbar**2 / (4 * m**2) * (grad_term - d2)


def _current(psi, grid, axis, m, hbar, scheme):
    return hbar / m * np.imag(np.conj(psi) * diff(psi, grid, axis, 1, scheme))


def _velocity(j, rho):
    v = np.zeros_like(rho)
    keep = rho > TAIL_CUT * rho.max()
    v[keep] = j[keep] / rho[keep]
    return v


def extract(state: QuantumState, potential: Potential | None = None, eps_node: float = EPS_NODE,
            scheme: str = "spectral", pi_form: str = "standard") -> HydroFields | TwoBodyFields:
    """Madelung fields of ``state``; 1D states give HydroFields, 2D TwoBodyFields."""
    grid, params, psi = state.grid, state.params, state.psi
    rho = np.abs(psi) ** 2
    if not np.max(rho) > 0:
        raise DegenerateStateError("density vanishes everywhere")
    node_mask = rho < eps_node * np.max(rho)
    if np.all(node_mask):
        raise DegenerateStateError("state lies entirely below the node threshold")
    amp = np.abs(psi)
    hbar = params.hbar
    S = hbar * unwrap_phase(psi, rho)
    S_unreliable = binary_dilation(node_mask, iterations=1) if node_mask.any() else node_mask
    V = (potential or Potential("free")).sample(grid, params, state.t)
    if grid.ndim == 1:
        j = _current(psi, grid, 0, params.m, hbar, scheme)
        v = _velocity(j, rho)
        Q = quantum_potential_amplitude(amp, grid, (params.m,), hbar, scheme)
        Pi = quantum_stress(rho, amp, j, v, grid, params.m, hbar, scheme, pi_form)
        return HydroFields(grid, psi, rho, amp, S, v, j, Q, Pi, V, node_mask, S_unreliable,
                           hbar, params.m, state.t, scheme, pi_form)
    j1 = _current(psi, grid, 0, params.m1, hbar, scheme)
    j2 = _current(psi, grid, 1, params.m2, hbar, scheme)
    Q = quantum_potential_amplitude(amp, grid, (params.m1, params.m2), hbar, scheme)
    return TwoBodyFields(grid, psi, rho, amp, S, _velocity(j1, rho), _velocity(j2, rho), j1, j2,
                         Q, V, node_mask, S_unreliable, hbar, params.m1, params.m2, state.t, scheme)


def extract_slabs(states, potential: Potential | None = None, dt: float | None = None,
                  **kwargs) -> FieldSlabs:
    """Extract fields from the (past, present, future) triple of states."""
    back, cur, fwd = states
    if dt is None:
        dt = fwd.t - cur.t
    if not (np.isclose(cur.t - back.t, dt) and np.isclose(fwd.t - cur.t, dt)):
        raise ValueError("states are not equally spaced in time")
    return FieldSlabs(*(extract(s, potential, **kwargs) for s in (back, cur, fwd)), dt)


def _phase_gradient(f: HydroFields | TwoBodyFields, i: int, k: int) -> np.ndarray:
    """d_k v_i = (hbar / m_i) Im(d_k d_i psi / psi - d_k psi d_i psi / psi^2).

    Only derivatives of psi enter, so the result stays smooth across
    nodal lines where |psi| (and any sqrt(rho) weighting) has a kink.
    """
    m = f.m if isinstance(f, HydroFields) else f.masses[i]
    psi, grid, sch = f.psi, f.grid, f.scheme
    di = diff(psi, grid, i, 1, sch)
    dki = diff(psi, grid, i, 2, sch) if k == i else diff(di, grid, k, 1, sch)
    dk = di if k == i else diff(psi, grid, k, 1, sch)
    out = np.zeros(psi.shape)
    keep = f.rho > TAIL_CUT * f.rho.max()
    inv = 1.0 / psi[keep]
    out[keep] = f.hbar / m * np.imag(dki[keep] * inv - dk[keep] * di[keep] * inv**2)
    return out


def velocity_gradient(f: HydroFields | TwoBodyFields, v: np.ndarray, axis: int) -> np.ndarray:
    """d_axis v for a velocity-like field.

    The extracted velocities are differentiated through the phase of psi
    (see ``_phase_gradient``), whether passed by reference or as an equal
    copy; any other field is differentiated through sqrt(rho) with
    :func:`diff_weighted`.
    """
    owners = [f.v] if isinstance(f, HydroFields) else [f.v1, f.v2]
    for i, vi in enumerate(owners):
        if v is vi:
            return _phase_gradient(f, i, axis)
    for i, vi in enumerate(owners):
        if np.array_equal(v, vi):
            return _phase_gradient(f, i, axis)
    return diff_weighted(v, f.amp, f.grid, axis, f.scheme, cut=np.sqrt(TAIL_CUT))


def material_derivative(slabs: FieldSlabs, axis: int = 0, velocities: TimeSlabs | None = None) -> np.ndarray:
    """(d_t + v_i d_i) v_i at the middle time of ``slabs``.

    ``velocities`` overrides the extracted velocity slabs (used to probe
    modified velocity fields).
    """
    if velocities is None:
        name = "v" if isinstance(slabs.cur, HydroFields) else ("v1", "v2")[axis]
        velocities = slabs.slab(name)
    elif not np.isclose(velocities.dt, slabs.dt):
        raise ValueError("velocity slabs use a different time step")
    v = velocities.cur
    return first_time_derivative(velocities) + v * velocity_gradient(slabs.cur, v, axis)


def mixed_velocity_check(f: TwoBodyFields, mask: np.ndarray | None = None) -> float:
    """Linf of (1/m2) d2 v1 - (1/m1) d1 v2 over the interior.

    The velocity fields themselves are differentiated through the density
    (rho v_i = j_i), independently of the phase route of
    :func:`velocity_gradient`.  rho is smooth across nodes and interference
    dips, where sqrt(rho) has kinks.  Spectral round-off in d(rho v) is
    divided by rho, so the default mask stops at MIXED_REL * max(rho).
    """
    d2v1 = diff_weighted(f.v1, f.rho, f.grid, 1, f.scheme, cut=TAIL_CUT, product=f.j1)
    d1v2 = diff_weighted(f.v2, f.rho, f.grid, 0, f.scheme, cut=TAIL_CUT, product=f.j2)
    if mask is None:
        mask = interior_mask(f.rho, MIXED_REL) & ~f.node_mask
    return norm(d2v1 / f.m2 - d1v2 / f.m1, f.grid, "Linf", mask=mask)


def rho_times_gradient(f: HydroFields | TwoBodyFields, g: np.ndarray, axis: int) -> np.ndarray:
    """rho * d_axis g for a field ``g`` that need not decay (potentials)."""
    d = diff(f.rho * g, f.grid, axis, 1, f.scheme) - g * diff(f.rho, f.grid, axis, 1, f.scheme)
    return d
