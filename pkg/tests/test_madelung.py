import numpy as np
import pytest

from qhydro.madelung import (
    DegenerateStateError, extract, extract_slabs, interior_mask,
    material_derivative, mixed_velocity_check, quantum_potential_density, velocity_gradient,
)
from qhydro.numerics import Grid1D, Grid2D, diff, integrate, norm
from qhydro.schrodinger import PhysParams, Potential, QuantumState, evolve, initial_state, snapshot_states

G = Grid1D(512, -16.0, 16.0)
P = PhysParams()


def _slabs(state, pot, dt=0.005, **kw):
    return extract_slabs(snapshot_states(state, pot, dt), pot, dt, **kw)


def test_plane_wave_fields():
    k = 2 * np.pi * 5 / G.length
    s = initial_state(G, P, {"kind": "uniform", "k0": k})
    f = extract(s)
    np.testing.assert_allclose(f.v, k, rtol=1e-12)
    assert np.max(np.abs(f.Q)) < 1e-10
    np.testing.assert_allclose(f.Pi, f.rho * f.v**2, rtol=1e-9)
    assert not f.node_mask.any()


@pytest.mark.parametrize("sigma,m,hbar", [(1.0, 1.0, 1.0), (0.7, 2.0, 0.5)])
def test_gaussian_quantum_potential(sigma, m, hbar):
    p = PhysParams(hbar=hbar, m=m)
    s = initial_state(G, p, {"kind": "gaussian", "sigma": sigma})
    f = extract(s)
    q0 = hbar**2 / (4 * m * sigma**2)
    assert f.Q[G.n // 2] == pytest.approx(q0, rel=1e-8)
    bulk = np.abs(G.x) < 4 * sigma
    expected = q0 * (1 - G.x**2 / (2 * sigma**2))
    np.testing.assert_allclose(f.Q[bulk], expected[bulk], rtol=0, atol=1e-8 * q0)


def test_ground_state_is_at_rest_with_flat_total_potential():
    pot = Potential("harmonic", omega=1.3)
    s = initial_state(G, P, {"kind": "ho_ground", "omega": 1.3})
    f = extract(s, pot)
    assert norm(f.v, G, "Linf", mask=interior_mask(f.rho)) < 1e-10
    bulk = interior_mask(f.rho, 1e-8)
    np.testing.assert_allclose((f.V + f.Q)[bulk], 0.65, atol=1e-7)


def test_current_definition_consistency():
    s = initial_state(G, P, {"kind": "gaussian", "k0": 0.8, "x0": 1.0})
    f = extract(s)
    j = np.imag(np.conj(s.psi) * diff(s.psi, G, 0, 1, "spectral"))
    keep = ~f.node_mask
    np.testing.assert_allclose((f.m * f.v * f.rho)[keep], j[keep], atol=1e-14)


def test_phase_slope_matches_velocity():
    # A spreading Gaussian has an exactly quadratic phase, so the centred
    # difference of the unwrapped S must reproduce v to round-off.
    st = evolve(initial_state(G, P, {"kind": "gaussian", "k0": 0.8}), Potential(), 0.01, 100)
    f = extract(st)
    dS = np.gradient(f.S, G.dx)
    m = interior_mask(f.rho, 1e-6) & ~f.S_unreliable
    assert norm(dS / f.m - f.v, G, "Linf", mask=m) < 1e-9


def test_two_quantum_potential_forms_agree():
    s = evolve(initial_state(G, P, {"kind": "gaussian", "sigma": 0.9, "k0": 0.4}), Potential("harmonic"), 0.01, 50)
    f = extract(s)
    q2 = quantum_potential_density(f.rho, G, f.m, f.hbar, "spectral")
    bulk = interior_mask(f.rho, 1e-6)
    assert norm(f.Q - q2, G, "Linf", mask=bulk) < 1e-7


def test_phase_anchor_range():
    s = initial_state(G, P, {"kind": "gaussian", "k0": 3.0, "x0": 2.0})
    f = extract(s)
    anchor = f.S[np.argmax(f.rho)]
    assert 0.0 <= anchor < 2 * np.pi * f.hbar


def test_degenerate_state_rejected():
    s = initial_state(G, P, {"kind": "gaussian"})
    zero = QuantumState.__new__(QuantumState)
    object.__setattr__(zero, "psi", np.zeros(G.n, complex))
    object.__setattr__(zero, "grid", G)
    object.__setattr__(zero, "t", 0.0)
    object.__setattr__(zero, "params", s.params)
    with pytest.raises(DegenerateStateError):
        extract(zero)


def test_unknown_stress_form_rejected():
    s = initial_state(G, P, {"kind": "gaussian"})
    with pytest.raises(ValueError, match="stress form"):
        extract(s, pi_form="typo")


def test_material_derivative_ground_state_vanishes():
    pot = Potential("harmonic")
    s = initial_state(G, P, {"kind": "ho_ground"})
    # Strang splitting leaves an O(dt^2) spurious velocity on an eigenstate.
    errs = [norm(material_derivative(sl), G, "Linf", mask=interior_mask(sl.cur.rho))
            for sl in (_slabs(s, pot, 0.005), _slabs(s, pot, 0.001))]
    assert errs[1] < 2e-6
    assert errs[0] / errs[1] == pytest.approx(25.0, rel=0.2)


def test_material_derivative_plane_wave_vanishes():
    s = initial_state(G, P, {"kind": "uniform", "k0": 2 * np.pi * 4 / G.length})
    assert np.max(np.abs(material_derivative(_slabs(s, Potential())))) < 1e-8


def test_material_derivative_free_gaussian_is_quantum_force():
    pot = Potential()
    s = evolve(initial_state(G, P, {"kind": "gaussian", "sigma": 1.0}), pot, 0.01, 50)
    sl = _slabs(s, pot, 0.002)
    lhs = material_derivative(sl)
    rhs = -velocity_gradient(sl.cur, sl.cur.Q, 0) / sl.cur.m
    bulk = interior_mask(sl.cur.rho, 1e-6)
    assert norm(lhs - rhs, G, "Linf", mask=bulk) < 1e-5


def test_mismatched_slab_times_rejected():
    pot = Potential()
    s = initial_state(G, P, {"kind": "gaussian"})
    b, c, f = snapshot_states(s, pot, 0.01)
    f2 = evolve(f, pot, 0.01, 1)
    with pytest.raises(ValueError, match="equally spaced"):
        extract_slabs((b, c, f2), pot)


def test_node_mask_marks_nodes():
    s = initial_state(G, P, {"kind": "ho_eigen", "level": 1})
    f = extract(s)
    assert f.node_mask[G.n // 2]
    assert not f.node_mask[G.n // 2 + 4]


# --- two-body ---------------------------------------------------------------

G2 = Grid2D.square(192, -12.0, 12.0)


def test_mixed_velocity_product_state_is_roundoff():
    spec = {"kind": "product", "orbitals": [{"x0": -1.0, "k0": 0.5}, {"x0": 1.0, "k0": -0.2}]}
    f = extract(initial_state(G2, P, spec))
    # both sides vanish analytically; what remains is round-off divided by rho >= 1e-8 max
    assert mixed_velocity_check(f) < 1e-7


def test_two_body_velocity_definition():
    spec = {"kind": "product", "orbitals": [{"x0": -1.0, "k0": 0.5}, {"x0": 1.0, "k0": -0.2}]}
    f = extract(initial_state(G2, PhysParams(m1=1.0, m2=2.0), spec))
    bulk = interior_mask(f.rho, 1e-6)
    np.testing.assert_allclose(f.v1[bulk], 0.5, atol=1e-10)
    np.testing.assert_allclose(f.v2[bulk], -0.1, atol=1e-10)


def _entangled(n, params, spec):
    g = Grid2D.square(n, -12.0, 12.0)
    pot = Potential("coupled_harmonic", kappa=0.5)
    return evolve(initial_state(g, params, spec), pot, 0.005, 200)


@pytest.mark.parametrize("params,spec", [
    (PhysParams(), {"kind": "symmetrized", "orbitals": [{"x0": -1.0, "k0": 0.7}, {"x0": 1.5, "k0": -0.3}], "sign": 1}),
    (PhysParams(), {"kind": "symmetrized", "orbitals": [{"x0": -1.0, "k0": 0.7}, {"x0": 1.5, "k0": -0.3}], "sign": -1}),
    (PhysParams(m1=1.0, m2=2.0), {"kind": "product", "orbitals": [{"x0": -1.0}, {"x0": 1.0}]}),
])
def test_mixed_velocity_identity(params, spec):
    # Spectral differentiation leaves only round-off, which grows (slowly) with n.
    for n in (192, 384):
        assert mixed_velocity_check(extract(_entangled(n, params, spec))) < 1e-5


def test_two_body_density_normalized():
    f = extract(initial_state(G2, P, {"kind": "coupled_ho", "kappa": 1.0, "amplitudes": {"0,0": 1, "1,1": 0.5}}))
    assert integrate(f.rho, G2) == pytest.approx(1.0, abs=1e-8)
    assert np.all(f.rho >= 0)
