"""Time-dependent Schrödinger evolution on 1D (one particle) and 2D (two particles) grids."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .numerics import PERIODIC, Grid, Grid1D, Grid2D, TimeSlabs, integrate

NORM_TOL = 1e-9
STEP_DRIFT_TOL = 1e-12
ABORT_DRIFT_TOL = 1e-8
# largest phase spread (rad) across populated modes/cells per step
MAX_STEP_PHASE = math.pi
POPULATED = 1e-6


class NumericalAbort(RuntimeError):
    """Evolution stopped by the norm-drift or time-step resolution guard."""


@dataclass(frozen=True)
class PhysParams:
    hbar: float = 1.0
    m: float = 1.0
    m1: float = 1.0
    m2: float = 1.0

    def __post_init__(self):
        for name in ("hbar", "m", "m1", "m2"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")

    def masses(self, ndim: int) -> tuple[float, ...]:
        return (self.m,) if ndim == 1 else (self.m1, self.m2)


@dataclass(frozen=True)
class Potential:
    """External potential.

    ``kind`` is ``free``, ``harmonic`` (omega, center), ``barrier`` (a
    Gaussian bump: height, width, center), ``coupled_harmonic`` (omega,
    kappa; 2D only) or ``custom`` (``samples`` on the grid).  On a 2D grid the
    one-body kinds act on each particle separately.  ``time_dependence`` is an
    optional multiplier ``f(t)``.
    """

    kind: str = "free"
    omega: float = 1.0
    center: float = 0.0
    height: float = 0.0
    width: float = 1.0
    kappa: float = 0.0
    samples: np.ndarray | None = field(default=None, compare=False, repr=False)
    time_dependence: Callable[[float], float] | None = field(default=None, compare=False)

    KINDS = ("free", "harmonic", "barrier", "coupled_harmonic", "custom")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown potential kind {self.kind!r}")
        if self.kind == "custom":
            if self.samples is None or not np.all(np.isfinite(self.samples)):
                raise ValueError("custom potential needs finite samples")

    @property
    def is_static(self) -> bool:
        return self.time_dependence is None

    def _one_body(self, x: np.ndarray, m: float) -> np.ndarray:
        if self.kind == "harmonic" or self.kind == "coupled_harmonic":
            return 0.5 * m * self.omega**2 * (x - self.center) ** 2
        if self.kind == "barrier":
            return self.height * np.exp(-((x - self.center) ** 2) / (2 * self.width**2))
        return np.zeros_like(x)

    def sample(self, grid: Grid, params: PhysParams, t: float = 0.0) -> np.ndarray:
        if self.kind == "custom":
            v = np.array(self.samples, dtype=float)
            if v.shape != grid.shape:
                raise ValueError("custom potential samples do not match the grid")
        elif grid.ndim == 1:
            if self.kind == "coupled_harmonic":
                raise ValueError("coupled_harmonic requires a 2D grid")
            v = self._one_body(grid.x, params.m)
        else:
            x1, x2 = grid.mesh()
            v = self._one_body(x1, params.m1) + self._one_body(x2, params.m2)
            if self.kind == "coupled_harmonic":
                v = v + self.kappa * (x1 - x2) ** 2
        if self.time_dependence is not None:
            v = v * float(self.time_dependence(t))
        return v

    def is_swap_symmetric(self, grid: Grid) -> bool:
        if grid.ndim != 2 or not grid.is_square:
            return False
        v = self.sample(grid, PhysParams())
        return bool(np.allclose(v, v.T, rtol=0, atol=1e-12 * max(1.0, np.max(np.abs(v)))))


@dataclass(frozen=True)
class QuantumState:
    psi: np.ndarray
    grid: Grid
    t: float = 0.0
    params: PhysParams = field(default_factory=PhysParams)

    def __post_init__(self):
        if self.psi.shape != self.grid.shape:
            raise ValueError(f"psi shape {self.psi.shape} does not match grid {self.grid.shape}")
        nrm = self.norm()
        if abs(nrm - 1.0) > NORM_TOL:
            raise ValueError(f"state is not normalized (norm = {nrm:.12g})")

    @property
    def rho(self) -> np.ndarray:
        return np.abs(self.psi) ** 2

    def norm(self) -> float:
        return math.sqrt(integrate(np.abs(self.psi) ** 2, self.grid))

    def energy(self, potential: Potential) -> float:
        """Expectation value of the Hamiltonian (spectral kinetic energy)."""
        return _energy(self.psi, self.grid, self.params, potential.sample(self.grid, self.params, self.t))


def normalize(psi: np.ndarray, grid: Grid) -> np.ndarray:
    nrm = math.sqrt(integrate(np.abs(psi) ** 2, grid))
    if not nrm > 0 or not math.isfinite(nrm):
        raise ValueError("cannot normalize a zero-norm wavefunction")
    return psi / nrm


# --- initial states -------------------------------------------------------

def gaussian(x: np.ndarray, x0: float = 0.0, sigma: float = 1.0, k0: float = 0.0) -> np.ndarray:
    """Gaussian packet whose density has standard deviation ``sigma``."""
    return (2 * np.pi * sigma**2) ** -0.25 * np.exp(-((x - x0) ** 2) / (4 * sigma**2) + 1j * k0 * x)


def ho_eigenfunction(x: np.ndarray, n: int, mass: float = 1.0, omega: float = 1.0,
                     hbar: float = 1.0, center: float = 0.0) -> np.ndarray:
    ell = math.sqrt(hbar / (mass * omega))
    xi = (x - center) / ell
    herm = np.polynomial.hermite.hermval(xi, [0] * n + [1])
    c = 1.0 / math.sqrt(2.0**n * math.factorial(n) * ell * math.sqrt(math.pi))
    return (c * herm * np.exp(-xi**2 / 2)).astype(complex)


def _check_resolved(grid1: Grid1D, sigma: float):
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    if sigma / grid1.dx < 8:
        raise ValueError(f"sigma={sigma} is under-resolved: needs >= 8 points per sigma (dx={grid1.dx:.4g})")


def orbital(spec: dict, grid1: Grid1D, mass: float, hbar: float) -> np.ndarray:
    """Unnormalized-safe one-particle orbital from a spec dictionary."""
    kind = spec.get("kind", "gaussian")
    if kind == "gaussian":
        sigma = float(spec.get("sigma", 1.0))
        _check_resolved(grid1, sigma)
        return gaussian(grid1.x, float(spec.get("x0", 0.0)), sigma, float(spec.get("k0", 0.0)))
    if kind == "ho_ground" or kind == "ho_eigen":
        omega = float(spec.get("omega", 1.0))
        _check_resolved(grid1, math.sqrt(hbar / (2 * mass * omega)))
        return ho_eigenfunction(grid1.x, int(spec.get("level", 0)), mass, omega, hbar,
                                float(spec.get("center", 0.0)))
    if kind == "uniform":
        k0 = float(spec.get("k0", 0.0))
        return np.exp(1j * k0 * grid1.x) / math.sqrt(grid1.length)
    raise ValueError(f"unknown orbital kind {kind!r}")


def product(phi: np.ndarray, chi: np.ndarray) -> np.ndarray:
    return np.multiply.outer(phi, chi)


def symmetrized(phi: np.ndarray, chi: np.ndarray, sign: int = 1) -> np.ndarray:
    """``phi(x1) chi(x2) + sign * phi(x2) chi(x1)`` (unnormalized)."""
    a = product(phi, chi)
    return a + sign * a.T


def coupled_ho_superposition(grid: Grid2D, params: PhysParams, omega: float, kappa: float,
                             amplitudes: dict[tuple[int, int], complex]) -> np.ndarray:
    """Superposition of normal-mode eigenstates of the equal-mass coupled oscillator.

    ``amplitudes`` maps (center-of-mass level, relative level) to a complex
    coefficient.  The relative coordinate has frequency sqrt(omega^2 + 4 kappa/m).
    """
    if params.m1 != params.m2:
        raise ValueError("normal-mode construction assumes equal masses")
    m, hbar = params.m1, params.hbar
    x1, x2 = grid.mesh()
    com = (x1 + x2) / math.sqrt(2)
    rel = (x1 - x2) / math.sqrt(2)
    omega_rel = math.sqrt(omega**2 + 4 * kappa / m)
    psi = np.zeros(grid.shape, dtype=complex)
    for (nc, nr), c in amplitudes.items():
        psi += c * ho_eigenfunction(com, nc, m, omega, hbar) * ho_eigenfunction(rel, nr, m, omega_rel, hbar)
    return psi


def initial_state(grid: Grid, params: PhysParams, spec: dict) -> QuantumState:
    """Build a normalized state from a declarative spec.

    Kinds: ``gaussian`` / ``ho_ground`` / ``ho_eigen`` / ``uniform`` on 1D;
    ``product`` and ``symmetrized`` (``orbitals``: two 1D specs, ``sign``) and
    ``coupled_ho`` (``omega``, ``kappa``, ``amplitudes``) on 2D; ``custom`` with
    an explicit ``psi`` array on either.
    """
    kind = spec.get("kind", "gaussian")
    if kind == "custom":
        psi = np.asarray(spec["psi"], dtype=complex)
    elif grid.ndim == 1:
        psi = orbital(spec, grid, params.m, params.hbar)
    else:
        if kind in ("product", "symmetrized"):
            s1, s2 = spec["orbitals"]
            phi = orbital(s1, grid.axis1, params.m1, params.hbar)
            chi = orbital(s2, grid.axis2, params.m2, params.hbar)
            if kind == "product":
                psi = product(phi, chi)
            else:
                if not grid.is_square:
                    raise ValueError("symmetrization needs identical axes")
                psi = symmetrized(phi, chi, int(spec.get("sign", 1)))
                if integrate(np.abs(psi) ** 2, grid) < 1e-20:
                    raise ValueError("symmetrized state has zero norm (identical orbitals, sign -1)")
        elif kind == "coupled_ho":
            amps = {tuple(int(i) for i in key.split(",")) if isinstance(key, str) else tuple(key): complex(*val) if isinstance(val, (list, tuple)) else complex(val)
                    for key, val in dict(spec.get("amplitudes", {"0,0": 1.0})).items()}
            psi = coupled_ho_superposition(grid, params, float(spec.get("omega", 1.0)),
                                           float(spec.get("kappa", 0.0)), amps)
        else:
            raise ValueError(f"unknown 2D initial state kind {kind!r}")
    return QuantumState(normalize(psi, grid), grid, float(spec.get("t", 0.0)), params)


# --- propagation ----------------------------------------------------------

def _kinetic_symbol(grid: Grid, params: PhysParams) -> np.ndarray:
    """hbar^2 k^2 / 2m on the FFT grid (sum over particles in 2D)."""
    if grid.ndim == 1:
        return params.hbar**2 * grid.k**2 / (2 * params.m)
    k1, k2 = np.meshgrid(grid.axis1.k, grid.axis2.k, indexing="ij")
    return params.hbar**2 * (k1**2 / (2 * params.m1) + k2**2 / (2 * params.m2))


def _fft(a):
    return np.fft.fftn(a)


def _ifft(a):
    return np.fft.ifftn(a)


def _energy(psi, grid, params, v) -> float:
    if all(ax.boundary == PERIODIC for ax in grid.axes):
        psik = _fft(psi)
        kin = np.sum(_kinetic_symbol(grid, params) * np.abs(psik) ** 2) / psi.size
    else:
        kin = np.vdot(psi, _laplacian_matrix(grid, params) @ psi.ravel()).real
    return float((kin + np.sum(v * np.abs(psi) ** 2)) * grid.cell_volume)


def step_phase(state: QuantumState, potential: Potential, dt: float, threshold: float = POPULATED) -> float:
    """Phase spread per step over the modes and cells that carry significant weight.

    A constant potential offset is a global phase, so only the spread of V
    over the populated cells counts.
    """
    grid, params = state.grid, state.params
    weight = np.abs(np.fft.fftn(state.psi)) ** 2
    sig_k = weight > threshold * weight.max()
    kin = float(np.max(_kinetic_symbol(grid, params)[sig_k]))
    rho = state.rho
    sig_x = rho > threshold * rho.max()
    v = potential.sample(grid, params, state.t)
    pot = float(np.ptp(v[sig_x]))
    return abs(dt) * (kin + pot) / params.hbar


def _laplacian_1d(ax: Grid1D) -> sp.csr_matrix:
    n, dx = ax.n, ax.dx
    lap = sp.diags([np.ones(n - 1), -2 * np.ones(n), np.ones(n - 1)], [-1, 0, 1], format="lil")
    if ax.boundary == PERIODIC:
        lap[0, n - 1] = 1.0
        lap[n - 1, 0] = 1.0
    return (lap / dx**2).tocsr()


def _laplacian_matrix(grid: Grid, params: PhysParams) -> sp.csr_matrix:
    """Second-order kinetic operator -hbar^2/2m d^2 as a sparse matrix."""
    h2 = params.hbar**2
    if grid.ndim == 1:
        return (-h2 / (2 * params.m)) * _laplacian_1d(grid)
    i1 = sp.identity(grid.axis1.n, format="csr")
    i2 = sp.identity(grid.axis2.n, format="csr")
    return ((-h2 / (2 * params.m1)) * sp.kron(_laplacian_1d(grid.axis1), i2)
            + (-h2 / (2 * params.m2)) * sp.kron(i1, _laplacian_1d(grid.axis2))).tocsr()


class _SplitStep:
    def __init__(self, grid, params, potential, dt):
        self.grid, self.params, self.potential, self.dt = grid, params, potential, dt
        self.kin_phase = np.exp(-1j * dt * _kinetic_symbol(grid, params) / params.hbar)
        self._half_v = None if not potential.is_static else self._half_kick(0.0)

    def _half_kick(self, t):
        v = self.potential.sample(self.grid, self.params, t)
        return np.exp(-0.5j * self.dt * v / self.params.hbar)

    def __call__(self, psi, t):
        if self._half_v is not None:
            a = b = self._half_v
        else:
            a, b = self._half_kick(t), self._half_kick(t + self.dt)
        return b * _ifft(self.kin_phase * _fft(a * psi))


class _CrankNicolson:
    def __init__(self, grid, params, potential, dt):
        self.grid, self.params, self.potential, self.dt = grid, params, potential, dt
        self.kin = _laplacian_matrix(grid, params)
        self.eye = sp.identity(self.kin.shape[0], format="csc", dtype=complex)
        self._lu = None
        if potential.is_static:
            self._lu, self._rhs_op = self._factor(0.0)

    def _factor(self, t_mid):
        v = self.potential.sample(self.grid, self.params, t_mid).ravel()
        h = (self.kin + sp.diags(v)).tocsc()
        c = 0.5j * self.dt / self.params.hbar
        return spla.splu((self.eye + c * h).tocsc()), (self.eye - c * h).tocsr()

    def __call__(self, psi, t):
        lu, rhs_op = (self._lu, self._rhs_op) if self._lu is not None else self._factor(t + 0.5 * self.dt)
        return lu.solve(rhs_op @ psi.ravel()).reshape(psi.shape)


METHODS = {"split_step_spectral": _SplitStep, "crank_nicolson": _CrankNicolson}


def evolve(state: QuantumState, potential: Potential, dt: float, n_steps: int,
           method: str = "split_step_spectral", check_phase: bool = True) -> QuantumState:
    """Advance ``state`` by ``n_steps`` steps of size ``dt`` (negative ``dt`` runs backwards).

    The norm is monitored every step and never renormalized; drift above
    the per-step or cumulative tolerance raises :class:`NumericalAbort`.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    if method == "split_step_spectral" and not all(ax.boundary == PERIODIC for ax in state.grid.axes):
        raise ValueError("split_step_spectral requires a periodic grid")
    if n_steps < 0:
        raise ValueError("n_steps must be non-negative")
    if n_steps == 0:
        return state
    if check_phase:
        phase = step_phase(state, potential, dt)
        if phase > MAX_STEP_PHASE:
            raise NumericalAbort(
                f"time step too large: dt={dt:.4g} gives a phase of {phase:.3g} rad per step "
                f"on populated modes (limit {MAX_STEP_PHASE})"
            )
    stepper = METHODS[method](state.grid, state.params, potential, dt)
    psi, t = state.psi, state.t
    norm0 = prev = state.norm() ** 2
    dv = state.grid.cell_volume
    for i in range(n_steps):
        psi = stepper(psi, t)
        t = state.t + (i + 1) * dt
        cur = float(np.sum(np.abs(psi) ** 2) * dv)
        if not math.isfinite(cur) or abs(cur - prev) > STEP_DRIFT_TOL or abs(cur - norm0) > ABORT_DRIFT_TOL:
            raise NumericalAbort(
                f"norm drift at step {i + 1} (t={t:.6g}): |psi|^2 integral {cur:.15g}, "
                f"previous {prev:.15g}, initial {norm0:.15g}"
            )
        prev = cur
    return replace(state, psi=psi, t=t)


def snapshot_states(state: QuantumState, potential: Potential, dt: float,
                    method: str = "split_step_spectral") -> tuple[QuantumState, QuantumState, QuantumState]:
    """States at ``t - dt``, ``t``, ``t + dt``; the past one by running the scheme backwards."""
    back = evolve(state, potential, -dt, 1, method)
    fwd = evolve(state, potential, dt, 1, method)
    return back, state, fwd


def snapshot_slabs(state: QuantumState, potential: Potential, dt: float,
                   method: str = "split_step_spectral") -> TimeSlabs:
    b, c, f = snapshot_states(state, potential, dt, method)
    return TimeSlabs(b.rho, c.rho, f.rho, dt)


def free_gaussian_width(t: float, sigma0: float, hbar: float = 1.0, m: float = 1.0) -> float:
    return sigma0 * math.sqrt(1.0 + (hbar * t / (2 * m * sigma0**2)) ** 2)


def density_width(state: QuantumState) -> float:
    """Standard deviation of |psi|^2 (1D)."""
    x, rho = state.grid.x, state.rho
    mean = integrate(x * rho, state.grid)
    return math.sqrt(integrate((x - mean) ** 2 * rho, state.grid))
