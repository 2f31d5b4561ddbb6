import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from qhydro.madelung import extract_slabs, interior_mask
from qhydro.numerics import Grid1D, Grid2D, norm
from qhydro.permutation import (
    LambdaOperator, SwapMap, apply_lambda, born_permutation_test, lambda_linearity_defect,
    lambda_symmetry_defect, smooth_random_probes, swap, wave_operator_residual,
)
from qhydro.schrodinger import PhysParams, Potential, evolve, initial_state, snapshot_states
from qhydro.verify import residual_field

ORBITALS = [{"x0": -1.0, "k0": 0.7}, {"x0": 1.5, "k0": -0.3}]
POT = Potential("coupled_harmonic", kappa=1.0)


def _state(n, sign=1, params=PhysParams(), kind="symmetrized", L=12.0, pot=POT, t=0.5):
    g = Grid2D.square(n, -L, L)
    spec = {"kind": kind, "orbitals": ORBITALS if kind == "symmetrized" else [{"x0": -1.0}, {"x0": 1.0}],
            "sign": sign}
    s = initial_state(g, params, spec)
    return evolve(s, pot, 0.01, round(t / 0.01)) if t else s


def _op(state, pot=POT, dt=0.0125):
    slabs = extract_slabs(snapshot_states(state, pot, dt), pot, dt)
    return LambdaOperator.from_slabs(slabs), slabs


@given(arrays(np.float64, (6, 6), elements=st.floats(-1e3, 1e3)))
@settings(max_examples=30, deadline=None)
def test_swap_is_an_involution(f):
    np.testing.assert_array_equal(swap(swap(f)), f)


def test_swap_leaves_symmetric_field_unchanged():
    g = Grid2D.square(16, -1.0, 1.0)
    x1, x2 = g.mesh()
    f = np.exp(-(x1**2 + x2**2)) + x1 * x2
    np.testing.assert_array_equal(swap(f, SwapMap(g)), f)


def test_swap_rejects_non_square():
    with pytest.raises(ValueError):
        swap(np.zeros((4, 5)))
    with pytest.raises(ValueError):
        SwapMap(Grid2D(Grid1D(16, 0.0, 1.0), Grid1D(32, 0.0, 1.0)))


def test_symmetrized_density_swap_invariant():
    for sign in (1, -1):
        rho = _state(128, sign, L=8.0, t=0).rho
        np.testing.assert_allclose(swap(rho), rho, rtol=0, atol=1e-15)


def test_lambda_of_zero_is_zero():
    op, _ = _op(_state(192))
    assert np.max(np.abs(apply_lambda(op, np.zeros(op.grid.shape)))) == 0.0


def test_lambda_needs_two_body_fields():
    g = Grid1D(512, -16.0, 16.0)
    s = initial_state(g, PhysParams(), {"kind": "gaussian"})
    pot = Potential()
    with pytest.raises(ValueError, match="two-body"):
        LambdaOperator.from_slabs(extract_slabs(snapshot_states(s, pot, 0.01), pot, 0.01))


def test_lambda_matches_wave_equation_residual():
    op, slabs = _op(_state(192))
    r_op = wave_operator_residual(op, slabs.slab("rho"))
    r_eq = residual_field("wave_2p", slabs)
    mask = interior_mask(slabs.cur.rho)
    assert np.max(np.abs((r_op - r_eq)[mask])) <= 1e-12 * np.max(np.abs(r_eq[mask]))


def test_lambda_linearity_on_random_probes():
    op, slabs = _op(_state(192))
    probes = smooth_random_probes(op.grid, slabs.cur.rho, 100, seed=3)
    assert lambda_linearity_defect(op, probes, seed=3) < 1e-12


def test_probes_are_seeded():
    g = Grid2D.square(32, -4.0, 4.0)
    env = np.ones(g.shape)
    a = smooth_random_probes(g, env, 3, seed=7)
    b = smooth_random_probes(g, env, 3, seed=7)
    for p, q in zip(a, b):
        np.testing.assert_array_equal(p, q)
        assert np.all(p > 0)


@pytest.mark.parametrize("sign", [1, -1])
def test_equal_mass_swap_defect_below_c_dx2(sign):
    op, slabs = _op(_state(192, sign))
    smap = SwapMap(op.grid)
    probes = [slabs.cur.rho] + smooth_random_probes(op.grid, slabs.cur.rho, 4, seed=1)
    dx = op.grid.axis1.dx
    assert lambda_symmetry_defect(op, probes, smap) < 1e-8 * dx**2


def test_constant_probe_follows_general_defect():
    # A constant probe leaves only derivatives of the (non-decaying) velocity
    # fields, so round-off is amplified; it must still sit far below the O(0.1)
    # defect produced by unequal masses.
    op, slabs = _op(_state(192))
    mask = interior_mask(slabs.cur.rho + swap(slabs.cur.rho))
    smap = SwapMap(op.grid)
    general = lambda_symmetry_defect(op, [slabs.cur.rho], smap, mask)
    const = lambda_symmetry_defect(op, [np.ones(op.grid.shape)], smap, mask)
    assert general < 1e-10
    assert const < 1e-4


def test_unequal_mass_defect_persists_under_refinement():
    params = PhysParams(m1=1.0, m2=2.0)
    pot = Potential("coupled_harmonic", kappa=0.5)
    defects = []
    for n in (192, 256):
        op, slabs = _op(_state(n, params=params, kind="product", pot=pot), pot, 0.1 * 24.0 / n)
        probes = [slabs.cur.rho] + smooth_random_probes(op.grid, slabs.cur.rho, 2, seed=0)
        defects.append(lambda_symmetry_defect(op, probes, SwapMap(op.grid)))
    assert min(defects) > 0.05
    assert defects[1] > 0.5 * defects[0]


def test_born_permutation_run_equal_masses():
    s = _state(128, 1, L=8.0, t=0)
    rep = born_permutation_test(s, POT, 0.0125, 3, 20, n_probes=2)
    assert rep.equal_masses and rep.symmetric_potential
    assert max(rep.delta_linf) < 1e-8
    assert len(rep.rows()) == 3
    assert max(rep.lambda_defect) < 1e-8 * 0.125**2


def test_born_permutation_run_detects_asymmetric_potential():
    s = _state(128, 1, L=8.0, t=0)
    g = s.grid
    x1, x2 = g.mesh()
    lopsided = Potential("custom", samples=0.5 * x1**2 + 0.3 * x2**2)
    rep = born_permutation_test(s, lopsided, 0.0125, 3, 20, n_probes=1)
    assert not rep.symmetric_potential
    assert max(rep.delta_linf) > 1e-4
    assert norm(np.array(rep.delta_rel), None, "Linf") > 1e-4
