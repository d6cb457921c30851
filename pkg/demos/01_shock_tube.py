"""
Shock tube on the channel solver
================================

A one-dimensional Sod problem embedded in a flat two-dimensional channel,
advanced with explicit steps, next to the exact solution.
"""

# %%
import numpy as np

from adaptive_euler import euler
from adaptive_euler import forward as fw
from adaptive_euler.geometry import AdaptiveMesh, GridMapping, Hierarchy

left = euler.primitive_to_conserved(np.array([1.0, 0.0, 0.0, 1.0]))
right = euler.primitive_to_conserved(np.array([0.125, 0.0, 0.0, 0.1]))

# %%
# A flat strip [0, 1] x [0, 0.04]; level 3 gives 200 x 8 cells.
h = Hierarchy(GridMapping(1.0, 0.04, 1.0, 0.0), 3, 25, 1)
mesh = AdaptiveMesh(h, h.full_tree())
x = mesh.centers[:, 0]
U = np.where((x < 0.5)[:, None], left, right)

problem = fw.FlowProblem(h, fw.ChannelBoundary(right, lambda t: left, "slip"),
                         np.array([1.0, 1.0, 1.0, 2.5]), adapt=False)
state = fw.SolverState(mesh, U)
T = 0.15
while state.t < T - 1e-14:
    dt = min(0.8 / fw.wave_rate(mesh, state.field), T - state.t)
    state = fw.explicit_step(state, dt, problem)

# %%
# Density along the bottom row.
row = mesh.j == 0
order = np.argsort(x[row])
rho = state.field[row][order, 0]
for xi, r in zip(x[row][order][::20], rho[::20]):
    print(f"x = {xi:.3f}  rho = {r:.4f}")

# %%
# The interface flux at the initial discontinuity.  The Roe average has
# zero velocity here, so its momentum flux is the plain mean of the two
# pressures.
F = euler.roe_flux(left, right, np.array([1.0, 0.0]))
print("Roe flux at t=0:", F)

try:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 3))
    ax.plot(x[row][order], rho, ".", ms=3)
    ax.set_xlabel("x")
    ax.set_ylabel("density")
    fig.tight_layout()
    fig.savefig("shock_tube.png", dpi=120)
except ImportError:
    pass
