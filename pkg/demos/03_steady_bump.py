"""
Steady transonic flow over the bump
===================================

Implicit pseudo-time stepping at CFL 200 from free stream on the level-2
hierarchy (about a minute on one core).  The converged field has a
supersonic pocket closed by a shock.
"""

# %%
import time

import numpy as np

from adaptive_euler import scenario as sc

cfg = sc.ChannelConfig()
t0 = time.perf_counter()
res = sc.steady_state(cfg, 2, progress=lambda k, s, r: print(k, s.mesh.n_cells, f"{r:.1e}")
                      if k % 10 == 0 else None)
print(f"{res.steps} steps, {res.state.mesh.n_cells} cells, {time.perf_counter() - t0:.0f}s")
print("max Mach:", sc.max_mach(res.state, cfg.gamma))

# %%
# Pressure along the bottom wall.
from adaptive_euler.forward import bottom_pressure

x, p, _ = bottom_pressure(res.state.mesh, res.state.field, cfg.gamma)
for xi, pi in zip(x[::16], p[::16]):
    print(f"x = {xi:5.2f}  p/p_inf = {pi / cfg.p_inf:.4f}")

sc.write_field(res.state, "steady_L2.csv")
