import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qhydro.numerics import DIRICHLET, Grid1D, Grid2D, integrate, second_time_derivative
from qhydro.schrodinger import (
    NumericalAbort, PhysParams, Potential, QuantumState, density_width, evolve,
    free_gaussian_width, initial_state, snapshot_slabs, snapshot_states,
)

G = Grid1D(512, -16.0, 16.0)
P = PhysParams()


def test_gaussian_density_is_normalized_and_centred():
    s = initial_state(G, P, {"kind": "gaussian", "x0": 0.0, "sigma": 1.0})
    assert integrate(s.rho, G) == pytest.approx(1.0, abs=1e-12)
    assert G.x[np.argmax(s.rho)] == 0.0


def test_symmetrized_state_is_swap_symmetric():
    g = Grid2D.square(128, -8.0, 8.0)
    spec = {"kind": "symmetrized", "orbitals": [{"x0": -1.0, "k0": 0.5}, {"x0": 2.0}], "sign": 1}
    s = initial_state(g, P, spec)
    np.testing.assert_array_equal(s.psi, s.psi.T)
    anti = initial_state(g, P, {**spec, "sign": -1})
    np.testing.assert_array_equal(anti.psi, -anti.psi.T)


def test_antisymmetrized_identical_orbitals_rejected():
    g = Grid2D.square(128, -8.0, 8.0)
    with pytest.raises(ValueError, match="zero norm"):
        initial_state(g, P, {"kind": "symmetrized", "orbitals": [{"x0": 0.5}, {"x0": 0.5}], "sign": -1})


def test_unnormalized_state_rejected():
    with pytest.raises(ValueError, match="normalized"):
        QuantumState(np.ones(G.n, complex), G)


def test_under_resolved_orbital_rejected():
    with pytest.raises(ValueError, match="under-resolved"):
        initial_state(Grid1D(64, -16.0, 16.0), P, {"kind": "gaussian", "sigma": 1.0})


def test_nonpositive_mass_rejected():
    with pytest.raises(ValueError):
        PhysParams(m=0.0)


def test_ground_state_slabs_are_stationary():
    pot = Potential("harmonic")
    s = initial_state(G, P, {"kind": "ho_ground"})
    # Strang splitting is stationary on an eigenstate only up to O(dt^3) per step.
    slabs = snapshot_slabs(s, pot, 0.002)
    assert np.max(np.abs(slabs.prev - slabs.cur)) < 1e-10
    assert np.max(np.abs(slabs.next - slabs.cur)) < 1e-10


def test_free_gaussian_peak_decays():
    s = initial_state(G, P, {"kind": "gaussian", "sigma": 1.0})
    d2 = second_time_derivative(snapshot_slabs(s, Potential(), 0.01))
    assert d2[G.n // 2] < 0


def test_uniform_state_has_no_density_acceleration():
    s = initial_state(G, P, {"kind": "uniform", "k0": 2 * np.pi * 3 / G.length})
    d2 = second_time_derivative(snapshot_slabs(s, Potential(), 0.01))
    assert np.max(np.abs(d2)) < 1e-9


def test_snapshot_times():
    s = initial_state(G, P, {"kind": "gaussian"})
    b, c, f = snapshot_states(s, Potential(), 0.02)
    assert (b.t, c.t, f.t) == pytest.approx((-0.02, 0.0, 0.02))


@pytest.mark.parametrize("method", ["split_step_spectral", "crank_nicolson"])
def test_unitarity_over_1000_steps(method):
    g = Grid1D(256, -12.0, 12.0)
    s = initial_state(g, P, {"kind": "gaussian", "k0": 1.0, "sigma": 1.0})
    out = evolve(s, Potential("harmonic"), 0.005, 1000, method)
    assert abs(out.norm() - 1.0) < 1e-10


def test_energy_drift_static_potential():
    # The split-step energy error is a bounded O(dt^2) oscillation; 1e-8 needs dt ~ 1e-4.
    pot = Potential("harmonic")
    s = initial_state(G, P, {"kind": "gaussian", "x0": 1.5, "sigma": 0.8, "k0": 0.3})
    e0 = s.energy(pot)
    e1 = evolve(s, pot, 1e-4, 20000).energy(pot)
    assert abs(e1 - e0) / abs(e0) < 1e-8
    coarse = evolve(s, pot, 1e-3, 2000).energy(pot)
    assert abs(coarse - e0) / abs(e0) > 1e-8


def test_free_spreading_matches_closed_form():
    s = initial_state(G, P, {"kind": "gaussian", "sigma": 1.0})
    out = evolve(s, Potential(), 0.01, 150)
    assert density_width(out) == pytest.approx(free_gaussian_width(1.5, 1.0), rel=1e-8)


def test_split_step_and_crank_nicolson_agree_to_second_order():
    g = Grid1D(512, -16.0, 16.0)
    s = initial_state(g, P, {"kind": "gaussian", "sigma": 1.0, "k0": 0.5})
    pot = Potential("harmonic", omega=0.5)
    diffs = []
    for dt in (0.02, 0.01):
        a = evolve(s, pot, dt, round(1.0 / dt), "split_step_spectral")
        b = evolve(s, pot, dt, round(1.0 / dt), "crank_nicolson")
        diffs.append(np.sqrt(integrate(np.abs(a.psi - b.psi) ** 2, g)))
    # CN uses a second-order Laplacian, so the gap also contains O(dx^2);
    # halving dt alone must not make it grow and it must stay small.
    assert diffs[1] <= diffs[0] * 1.01
    assert diffs[1] < 5e-2


def test_cn_temporal_order_two():
    g = Grid1D(256, -12.0, 12.0)
    s = initial_state(g, P, {"kind": "gaussian", "sigma": 1.0, "k0": 0.5})
    pot = Potential("harmonic")
    ref = evolve(s, pot, 0.00125, 800, "crank_nicolson")
    errs = [np.sqrt(integrate(np.abs(evolve(s, pot, dt, round(1.0 / dt), "crank_nicolson").psi - ref.psi) ** 2, g))
            for dt in (0.02, 0.01)]
    assert math.log2(errs[0] / errs[1]) == pytest.approx(2.0, abs=0.2)


def test_time_reversal_returns_initial_state():
    s = initial_state(G, P, {"kind": "gaussian", "k0": 1.0})
    pot = Potential("barrier", height=0.5)
    back = evolve(evolve(s, pot, 0.01, 50), pot, -0.01, 50)
    assert np.max(np.abs(back.psi - s.psi)) < 1e-12


def test_oversized_step_aborts():
    s = initial_state(G, P, {"kind": "gaussian", "k0": 2.0})
    with pytest.raises(NumericalAbort, match="time step"):
        evolve(s, Potential(), 5.0, 1)


def test_split_step_needs_periodic_grid():
    g = Grid1D(257, -16.0, 16.0, DIRICHLET)
    s = initial_state(g, P, {"kind": "gaussian"})
    with pytest.raises(ValueError, match="periodic"):
        evolve(s, Potential(), 0.01, 1)


def test_two_body_unequal_masses_conserve_norm():
    g = Grid2D.square(128, -8.0, 8.0)
    p = PhysParams(m1=1.0, m2=2.0)
    s = initial_state(g, p, {"kind": "product", "orbitals": [{"x0": -1.0, "sigma": 1.0}, {"x0": 1.0, "sigma": 1.0}]})
    out = evolve(s, Potential("coupled_harmonic", kappa=0.5), 0.01, 200)
    assert abs(out.norm() - 1.0) < 1e-10


@given(st.floats(min_value=-3.0, max_value=3.0), st.floats(min_value=-1.0, max_value=1.0))
@settings(max_examples=15, deadline=None)
def test_norm_preserved_for_random_packets(x0, k0):
    s = initial_state(G, P, {"kind": "gaussian", "x0": x0, "k0": k0, "sigma": 1.0})
    assert abs(evolve(s, Potential("harmonic"), 0.01, 100).norm() - 1.0) < 1e-11
