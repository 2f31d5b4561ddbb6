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
# # Densities that start away from |psi|^2
#
# The continuity equation does not fix rho = |psi|^2 by itself. We transport
# an arbitrary density along the guidance field of an evolving wavefunction
# and record its distance from |psi|^2 over time. Starting from |psi|^2, the
# distance should stay at discretization level. A perturbed start is simply
# recorded; no relaxation is assumed.

# %%
from qhydro import nonequilibrium as neq
from qhydro.numerics import Grid1D
from qhydro.schrodinger import PhysParams, Potential, initial_state

g = Grid1D(512, -10.0, 10.0)
psi0 = initial_state(g, PhysParams(), {"kind": "gaussian", "x0": 2.0, "sigma": 0.7071})
ho = Potential("harmonic")

# %%
eq = neq.run_guided(psi0, ho, 0.01, 1000, sample_every=100)
pert = neq.run_guided(psi0, ho, 0.01, 1000, rho0=neq.perturbed_density(psi0.rho, g, 0.3), sample_every=100)
print("   t    L1 (equilibrium)   L1 (perturbed)")
for t, a, b in zip(eq.trace.times, eq.trace.L1, pert.trace.L1):
    print(f"{t:5.1f}   {a:.3e}          {b:.3e}")
print(f"mass error {eq.mass_error:.1e}")

# %% [markdown]
# ## Self-consistent density and velocity
#
# Next, the log-density and velocity are evolved as a closed system, with the
# quantum potential recomputed from the density at every stage. The
# Schrodinger solution is evolved alongside for comparison. Below, the packet
# is followed until its width has grown by 20 %.

# %%
import math

from qhydro.numerics import DIRICHLET

box = Grid1D(129, -8.0, 8.0, DIRICHLET)
big, off = neq.embedding_grid(box, 96)
ref = initial_state(big, PhysParams(), {"kind": "gaussian", "sigma": 1.0})
t_end = 2.0 * math.sqrt(1.2**2 - 1.0)
steps = math.ceil(t_end / neq.dispersive_dt(box, PhysParams()))
run = neq.run_self_consistent(neq.equilibrium_state(ref, box, off), Potential(), t_end / steps, steps,
                              reference=ref, offset=off, sample_every=steps // 4)
for t, d in zip(run.trace.times, run.trace.L1):
    print(f"t = {t:.3f}: L1 distance to |psi|^2 = {d:.2e}")
