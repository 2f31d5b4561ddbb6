# ---
# jupyter:
#   jupytext:
#     formats: ipynb,py:percent
#     text_representation:
#       extension: .py
#       format_name: percent
#       format_version: '1.3'
#   kernelspec:
#     display_name: Python 3
#     language: python
#     name: python3
# ---

# %% [markdown]
# # Label swaps and the two-body density operator
#
# For two particles, the density obeys a linear operator equation,
# d_t^2 rho = Lambda rho. Lambda is built from the velocity and
# quantum-potential fields. For identical masses and a symmetric
# potential, swapping the particle labels should commute with Lambda. For
# unequal masses it should not.

# %%
from qhydro.madelung import extract_slabs
from qhydro.numerics import Grid2D
from qhydro.permutation import LambdaOperator, SwapMap, born_permutation_test, lambda_symmetry_defect, smooth_random_probes
from qhydro.schrodinger import PhysParams, Potential, initial_state, snapshot_states

g = Grid2D.square(192, -12.0, 12.0)
orbitals = [{"x0": -1.0, "k0": 0.7}, {"x0": 1.5, "k0": -0.3}]

# %% [markdown]
# ## Equal masses: symmetric and antisymmetric states

# %%
pot = Potential("coupled_harmonic", kappa=1.0)
for sign in (1, -1):
    s = initial_state(g, PhysParams(), {"kind": "symmetrized", "orbitals": orbitals, "sign": sign})
    rep = born_permutation_test(s, pot, 0.02, 3, 25, n_probes=2)
    print(f"sign {sign:+d}: max |rho - swap rho| {max(rep.delta_linf):.1e}, "
          f"max Lambda swap defect {max(rep.lambda_defect):.1e}")

# %% [markdown]
# ## Unequal masses
#
# Here the product state is evolved with m2 = 2 m1. The same defect is now of order 0.1.

# %%
params = PhysParams(m1=1.0, m2=2.0)
pot = Potential("coupled_harmonic", kappa=0.5)
s = initial_state(g, params, {"kind": "product", "orbitals": [{"x0": -1.0}, {"x0": 1.0}]})
dt = 0.02
sl = extract_slabs(snapshot_states(s, pot, dt), pot, dt)
op = LambdaOperator.from_slabs(sl)
probes = [sl.cur.rho] + smooth_random_probes(g, sl.cur.rho, 3, seed=0)
print(f"unequal-mass Lambda swap defect {lambda_symmetry_defect(op, probes, SwapMap(g)):.3f}")
