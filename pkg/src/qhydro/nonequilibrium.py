"""Density dynamics with rho allowed to differ from |psi|^2.

Two modes, both storing the log-density ``w = ln rho`` so positivity holds
by representation:

* ``guided_transport`` -- rho is carried by the velocity field of a
  separately evolved wavefunction (continuity equation with an external
  guide).  A conservative MUSCL/minmod upwind scheme advances rho itself;
  ``w`` is refreshed after every step.
* ``self_consistent`` -- the closed (w, v) system
  ``w_t = -v w_x - v_x``, ``v_t = -v v_x - (V + Q[e^w])_x / m`` with the
  quantum potential recomputed from the evolving density at every stage.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .madelung import _current, _velocity
from .numerics import PERIODIC, SCHEMES, Grid1D, diff, integrate
from .schrodinger import NumericalAbort, PhysParams, Potential, QuantumState, evolve

GUIDED = "guided_transport"
SELF_CONSISTENT = "self_consistent"
MODES = (GUIDED, SELF_CONSISTENT)

MASS_TOL = 1e-6
MAX_DW = 2.0
RHO_FLOOR = 1e-14
# per-step strength of the sixth-difference dissipation of the (w, v) system
KO_STRENGTH = 1.0


class CFLViolation(NumericalAbort):
    """|v| dt / dx exceeded 1."""


class StepRejected(NumericalAbort):
    """The self-consistent step changed w by more than the stiffness guard allows."""


@dataclass(frozen=True)
class NoneqState:
    w: np.ndarray
    v: np.ndarray | None
    t: float
    mode: str
    grid: Grid1D
    params: PhysParams = field(default_factory=PhysParams)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.grid.ndim != 1:
            raise ValueError("non-equilibrium dynamics is one-dimensional")
        if self.w.shape != self.grid.shape:
            raise ValueError("w does not match the grid")
        if self.mode == SELF_CONSISTENT and (self.v is None or self.v.shape != self.grid.shape):
            raise ValueError("self-consistent mode needs a velocity field on the grid")

    @property
    def rho(self) -> np.ndarray:
        return np.exp(self.w)

    @property
    def mass(self) -> float:
        return integrate(self.rho, self.grid)

    @classmethod
    def from_density(cls, rho: np.ndarray, grid: Grid1D, mode: str, v=None, t: float = 0.0,
                     params: PhysParams | None = None) -> "NoneqState":
        rho = np.asarray(rho, dtype=float)
        if np.any(rho < 0):
            raise ValueError("density must be non-negative")
        w = np.log(np.maximum(rho, np.finfo(float).tiny))
        return cls(w, None if v is None else np.asarray(v, float), t, mode, grid,
                   params or PhysParams())


# ---------------------------------------------------------------- deviation

@dataclass
class DeviationTrace:
    """Distances between rho and |psi|^2 along a run.

    ``ratio`` is max |rho / |psi|^2 - 1| over cells where |psi|^2 exceeds
    ``ratio_floor`` times its maximum.
    """

    times: list[float] = field(default_factory=list)
    L1: list[float] = field(default_factory=list)
    Linf: list[float] = field(default_factory=list)
    ratio: list[float] = field(default_factory=list)
    ratio_floor: float = 1e-6

    def rows(self) -> list[dict]:
        return [dict(time=t, L1=a, Linf=b) for t, a, b in zip(self.times, self.L1, self.Linf)]

    def write_csv(self, path, scenario_id: str | None = None) -> None:
        cols = (["scenario_id"] if scenario_id is not None else []) + ["time", "L1", "Linf"]
        with open(path, "w", newline="") as fh:
            wr = csv.DictWriter(fh, fieldnames=cols)
            wr.writeheader()
            for row in self.rows():
                if scenario_id is not None:
                    row = {"scenario_id": scenario_id, **row}
                wr.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def distances(rho: np.ndarray, ref: np.ndarray, grid: Grid1D, ratio_floor: float = 1e-6):
    """(L1, Linf, ratio) distances between two densities on the same grid."""
    if rho.shape != ref.shape or rho.shape != grid.shape:
        raise ValueError("densities must share the grid")
    d = np.abs(rho - ref)
    keep = ref > ratio_floor * np.max(ref)
    ratio = float(np.max(np.abs(rho[keep] / ref[keep] - 1.0))) if keep.any() else 0.0
    return integrate(d, grid), float(np.max(d)), ratio


def deviation(trace: DeviationTrace, state: NoneqState, ref: np.ndarray, ref_t: float | None = None,
              atol: float = 1e-12) -> DeviationTrace:
    """Append the distance between ``state.rho`` and the reference density."""
    if ref_t is not None and abs(ref_t - state.t) > atol * max(1.0, abs(state.t)):
        raise ValueError(f"time mismatch: state at t={state.t}, reference at t={ref_t}")
    l1, linf, ratio = distances(state.rho, ref, state.grid, trace.ratio_floor)
    trace.times.append(state.t)
    trace.L1.append(l1)
    trace.Linf.append(linf)
    trace.ratio.append(ratio)
    return trace


# ---------------------------------------------------------- guided transport

def _minmod(a, b):
    return np.where(a * b > 0, np.sign(a) * np.minimum(np.abs(a), np.abs(b)), 0.0)


def transport_rate(rho: np.ndarray, v: np.ndarray, dx: float) -> np.ndarray:
    """-d(rho v)/dx with MUSCL/minmod reconstruction and upwind face fluxes (periodic)."""
    slope = _minmod(rho - np.roll(rho, 1), np.roll(rho, -1) - rho)
    left = rho + 0.5 * slope                          # face i+1/2 from cell i
    right = np.roll(rho - 0.5 * slope, -1)            # face i+1/2 from cell i+1
    vf = 0.5 * (v + np.roll(v, -1))
    flux = np.maximum(vf, 0.0) * left + np.minimum(vf, 0.0) * right
    return -(flux - np.roll(flux, 1)) / dx


def courant(v: np.ndarray, dt: float, dx: float) -> float:
    return float(np.max(np.abs(v))) * dt / dx


def _check_cfl(v, dt, dx):
    c = courant(v, dt, dx)
    if not np.isfinite(c) or c > 1.0:
        raise CFLViolation(f"CFL violation: |v| dt/dx = {c:.3g} > 1")


def step_guided(state: NoneqState, v_now: np.ndarray, v_next: np.ndarray, dt: float) -> NoneqState:
    """One Heun (SSP-RK2) step of the continuity equation with guidance at t and t + dt."""
    if state.mode != GUIDED:
        raise ValueError("step_guided needs a guided_transport state")
    if state.grid.boundary != PERIODIC:
        raise ValueError("guided transport runs on a periodic grid")
    for v in (v_now, v_next):
        _check_cfl(v, dt, state.grid.dx)
    dx = state.grid.dx
    rho = state.rho
    r1 = rho + dt * transport_rate(rho, v_now, dx)
    r2 = 0.5 * (rho + r1 + dt * transport_rate(r1, v_next, dx))
    w = np.log(np.maximum(r2, np.finfo(float).tiny))
    return replace(state, w=w, t=state.t + dt)


def guidance_velocity(psi_state: QuantumState, scheme: str = "spectral") -> np.ndarray:
    """hbar Im(psi* psi') / (m |psi|^2), zero in the numerically empty tails."""
    p = psi_state.params
    j = _current(psi_state.psi, psi_state.grid, 0, p.m, p.hbar, scheme)
    return _velocity(j, np.abs(psi_state.psi) ** 2)


@dataclass
class NoneqRun:
    state: NoneqState
    trace: DeviationTrace
    mass_error: float
    steps_done: int
    rejected: str | None = None

    @property
    def mass_ok(self) -> bool:
        return self.mass_error < MASS_TOL


def run_guided(psi0: QuantumState, potential: Potential, dt: float, n_steps: int,
               rho0: np.ndarray | None = None, sample_every: int = 1,
               method: str = "split_step_spectral", scheme: str = "spectral") -> NoneqRun:
    """Transport ``rho0`` (default |psi0|^2) along the guidance of the evolving ``psi0``.

    The deviation from |psi(t)|^2 is sampled every ``sample_every`` steps.
    """
    rho0 = np.abs(psi0.psi) ** 2 if rho0 is None else np.asarray(rho0, float)
    state = NoneqState.from_density(rho0, psi0.grid, GUIDED, t=psi0.t, params=psi0.params)
    trace = deviation(DeviationTrace(), state, np.abs(psi0.psi) ** 2, psi0.t)
    psi = psi0
    v_now = guidance_velocity(psi, scheme)
    mass0 = state.mass
    worst = abs(mass0 - 1.0)
    for k in range(1, n_steps + 1):
        psi = evolve(psi, potential, dt, 1, method)
        v_next = guidance_velocity(psi, scheme)
        state = step_guided(state, v_now, v_next, dt)
        state = replace(state, t=psi.t)
        v_now = v_next
        worst = max(worst, abs(state.mass - 1.0))
        if k % sample_every == 0 or k == n_steps:
            deviation(trace, state, np.abs(psi.psi) ** 2, psi.t)
    return NoneqRun(state, trace, worst, n_steps)


# ------------------------------------------------------ self-consistent (w, v)

def quantum_potential_log(w: np.ndarray, grid: Grid1D, params: PhysParams, scheme: str = "fd4") -> np.ndarray:
    """Q = -(hbar^2 / 2m) (w''/2 + w'^2/4), the quantum potential of rho = e^w."""
    w1 = diff(w, grid, 0, 1, scheme)
    w2 = diff(w, grid, 0, 2, scheme)
    return -(params.hbar**2) / (2 * params.m) * (0.5 * w2 + 0.25 * w1**2)


def self_consistent_rhs(w, v, V, grid: Grid1D, params: PhysParams, scheme: str = "fd4"):
    d = lambda f: diff(f, grid, 0, 1, scheme)  # noqa: E731
    q = quantum_potential_log(w, grid, params, scheme)
    dw = -v * d(w) - d(v)
    dv = -v * d(v) - d(V + q) / params.m
    return dw, dv


def dispersive_dt(grid: Grid1D, params: PhysParams, safety: float = 0.3) -> float:
    """Time step keeping the fastest linear dispersive mode inside RK2's stable range.

    Linearized about a smooth density the system oscillates like a free
    particle, omega = hbar k^2 / 2m.  Heun's method amplifies an undamped
    mode by sqrt(1 + z^4/4) per step with z = omega dt, so z is held at
    ``safety``.  The fd4 second-difference symbol peaks at 16/3 dx^-2.
    """
    omega_max = params.hbar / (2 * params.m) * (16.0 / 3.0) / grid.dx**2
    return safety / omega_max


_KO_ORDER = 6
_KO_COEF = np.array([(-1) ** k * math.comb(_KO_ORDER, k) for k in range(_KO_ORDER + 1)], dtype=float)


def dissipation_filter(f: np.ndarray, strength: float = KO_STRENGTH) -> np.ndarray:
    """f - strength * delta^6 f / 64, the sixth undivided difference damping.

    Centered in the interior; near the ends the same stencil is shifted
    inwards.  Polynomials of degree <= 5 pass through unchanged, and with
    ``strength = 1`` the odd-even (Nyquist) mode is removed in one step.
    """
    if strength == 0:
        return f
    n, r = f.shape[-1], _KO_ORDER // 2
    d6 = np.zeros_like(f)
    for k, c in enumerate(_KO_COEF):
        d6[r:n - r] += c * f[k:n - 2 * r + k]
    for i in list(range(r)) + list(range(n - r, n)):
        lo = min(max(i - r, 0), n - _KO_ORDER - 1)
        d6[i] = _KO_COEF @ f[lo:lo + _KO_ORDER + 1]
    # delta^6 has symbol -(2 sin(theta/2))^6, so subtracting -d6/64 damps
    return f + strength * d6 / 64.0


def step_self_consistent(state: NoneqState, potential: Potential, dt: float,
                         scheme: str = "fd4", dissipation: float = KO_STRENGTH) -> NoneqState:
    """One Heun step of the (w, v) system followed by sixth-difference dissipation.

    Without dissipation the discrete system has grid-scale modes, pinned
    where |w'| is large, that grow at a rate ~ |w'| / dx; round-off alone
    ends a run within a fraction of a time unit.  The dissipation leaves
    quadratic w and linear v (Gaussian packets, oscillator ground states)
    untouched and vanishes like dx^4 (with dt ~ dx^2) on smooth data.

    Raises StepRejected when the density leaves the supported range or a
    step changes w by more than ``MAX_DW``; CFLViolation when |v| dt/dx > 1.
    """
    if state.mode != SELF_CONSISTENT:
        raise ValueError("step_self_consistent needs a self_consistent state")
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    grid, p = state.grid, state.params
    if np.min(state.w) < np.max(state.w) + math.log(RHO_FLOOR):
        raise StepRejected(
            f"density fell below {RHO_FLOOR:g} of its maximum at t={state.t:.6g}; "
            "widen the domain")
    _check_cfl(state.v, dt, grid.dx)
    V0 = potential.sample(grid, p, state.t)
    V1 = V0 if potential.is_static else potential.sample(grid, p, state.t + dt)
    k1w, k1v = self_consistent_rhs(state.w, state.v, V0, grid, p, scheme)
    w1, v1 = state.w + dt * k1w, state.v + dt * k1v
    k2w, k2v = self_consistent_rhs(w1, v1, V1, grid, p, scheme)
    w = state.w + 0.5 * dt * (k1w + k2w)
    v = state.v + 0.5 * dt * (k1v + k2v)
    if grid.boundary != PERIODIC:
        w = dissipation_filter(w, dissipation)
        v = dissipation_filter(v, dissipation)
    dw = np.abs(w - state.w)
    if not (np.all(np.isfinite(w)) and np.all(np.isfinite(v))) or np.max(dw) > MAX_DW:
        i = int(np.argmax(np.where(np.isfinite(dw), dw, np.inf)))
        raise StepRejected(
            f"stiffness guard: |dw| = {dw[i]:.3g} > {MAX_DW} at x = {grid.x[i]:.4g}, t = {state.t:.6g}")
    _check_cfl(v, dt, grid.dx)
    return replace(state, w=w, v=v, t=state.t + dt)


def equilibrium_state(psi: QuantumState, grid: Grid1D | None = None, offset: int = 0,
                      scheme: str = "spectral") -> NoneqState:
    """Self-consistent state (ln|psi|^2, v) restricted to ``grid`` starting at ``offset``."""
    rho = np.abs(psi.psi) ** 2
    v = guidance_velocity(psi, scheme)
    grid = grid or psi.grid
    sl = slice(offset, offset + grid.n)
    return NoneqState(np.log(rho[sl]), v[sl].copy(), psi.t, SELF_CONSISTENT, grid, psi.params)


def embedding_grid(grid: Grid1D, pad: int) -> tuple[Grid1D, int]:
    """Periodic grid with the same spacing whose points include every point of ``grid``.

    Returns the grid and the index of ``grid.x[0]`` within it.
    """
    x_min = grid.x_min - pad * grid.dx
    n = grid.n + 2 * pad
    return Grid1D(n, x_min, x_min + n * grid.dx, PERIODIC), pad


def run_self_consistent(state: NoneqState, potential: Potential, dt: float, n_steps: int,
                        reference: QuantumState | None = None, offset: int = 0,
                        sample_every: int = 1, scheme: str = "fd4",
                        method: str = "split_step_spectral", dissipation: float = KO_STRENGTH) -> NoneqRun:
    """Integrate the (w, v) system; optionally co-evolve ``reference`` for the deviation trace.

    ``reference`` lives on a (larger, periodic) grid that contains the
    state's grid points starting at index ``offset``.  A rejected step
    ends the run early; the reason is returned in ``NoneqRun.rejected``.
    """
    sl = slice(offset, offset + state.grid.n)
    if reference is not None and not np.allclose(reference.grid.x[sl], state.grid.x, atol=1e-9 * state.grid.dx):
        raise ValueError("reference grid does not contain the state grid points")
    trace = DeviationTrace()

    def sample(s, ref):
        if ref is not None:
            r = np.abs(ref.psi[sl]) ** 2
            deviation(trace, s, r, ref.t)

    sample(state, reference)
    worst = abs(state.mass - 1.0)
    rejected = None
    done = 0
    for k in range(1, n_steps + 1):
        try:
            state = step_self_consistent(state, potential, dt, scheme, dissipation)
        except StepRejected as exc:
            rejected = str(exc)
            break
        if reference is not None:
            reference = evolve(reference, potential, dt, 1, method)
            state = replace(state, t=reference.t)
        done = k
        worst = max(worst, abs(state.mass - 1.0))
        if k % sample_every == 0 or k == n_steps:
            sample(state, reference)
    return NoneqRun(state, trace, worst, done, rejected)


def perturbed_density(rho: np.ndarray, grid: Grid1D, amplitude: float = 0.3) -> np.ndarray:
    """rho (1 + a sin(2 pi x / L)), renormalized."""
    out = rho * (1.0 + amplitude * np.sin(2 * np.pi * grid.x / grid.length))
    return out / integrate(out, grid)


def perturbed_log_density(w: np.ndarray, grid: Grid1D, amplitude: float = 0.1) -> np.ndarray:
    """w + a sin(2 pi x / L), shifted so e^w stays normalized."""
    out = w + amplitude * np.sin(2 * np.pi * grid.x / grid.length)
    return out - math.log(integrate(np.exp(out), grid))

