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
# # Does |psi|^2 solve the density wave equation?
#
# We evolve a moving Gaussian with the split-step solver, then extract the
# hydrodynamic fields: density, phase, velocity and quantum potential.
# Every hydrodynamic equation is checked on three grids. Each residual
# should shrink like dx^2, because the time step is tied to dx.

# %%
from qhydro.madelung import extract, extract_slabs
from qhydro.numerics import Grid1D
from qhydro.schrodinger import PhysParams, Potential, evolve, initial_state, snapshot_states
from qhydro.verify import ONE_BODY, convergence_study, stress_form_residuals

P = PhysParams()
FREE = Potential()


def slabs(n):
    g = Grid1D(n, -20.0, 20.0)
    s = evolve(initial_state(g, P, {"kind": "gaussian", "sigma": 1.0, "k0": 0.5}), FREE, 0.01, 50)
    dt = 0.1 * g.dx
    return extract_slabs(snapshot_states(s, FREE, dt), FREE, dt)


# %% [markdown]
# ## Fields at t = 0.5

# %%
f = extract(evolve(initial_state(Grid1D(1024, -20.0, 20.0), P, {"kind": "gaussian", "k0": 0.5}), FREE, 0.01, 50))
i = f.rho.argmax()
print(f"peak rho {f.rho[i]:.4f} at x = {f.grid.x[i]:.3f}; v there {f.v[i]:.4f}; Q there {f.Q[i]:.4f}")

# %% [markdown]
# ## Convergence table

# %%
table = convergence_study(slabs, ONE_BODY, (512, 1024, 2048))
for eq, rows in table.items():
    orders = ", ".join(f"{r.order_L2:.2f}" for r in rows[1:])
    print(f"{eq:22s} final Linf {rows[-1].Linf:.2e}   L2 orders {orders}")

# %% [markdown]
# ## Which stress tensor?
#
# The momentum balance is evaluated with two quantum stress forms. The
# dimensionally consistent (d rho)^2 / rho form closes the balance. The
# form with d(ln rho) / rho leaves a residual that is many orders larger.

# %%
for form, r in stress_form_residuals(slabs(1024)).items():
    print(f"{form:9s} momentum residual Linf {r:.2e}")
