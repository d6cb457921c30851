"""
Multiresolution adaptation
==========================

Cell averages on the bump channel are split into coarse averages and
details; thresholding the details picks the mesh.
"""

# %%
import numpy as np

from adaptive_euler import multiresolution as mr
from adaptive_euler.geometry import AdaptiveMesh
from adaptive_euler.scenario import ChannelConfig

cfg = ChannelConfig(nx0=20, ny0=4)
h = cfg.hierarchy(4)
full = AdaptiveMesh(h, h.full_tree())
print("uniform level-4 mesh:", full.n_cells, "cells")

# %%
# A smooth background with an oblique jump.
xc, yc = full.centers.T
U = np.tile(cfg.free_stream, (full.n_cells, 1))
U[:, 0] *= 1.0 + 0.05 * np.sin(xc) + 0.3 * (xc + 0.5 * yc > 3.5)

# %%
for eps in (1e-2, 1e-3, 1e-4):
    mesh, V = mr.adapt(full, U, eps, cfg.scale)
    per_level = np.bincount(mesh.level, minlength=h.L + 1)
    mass = (mesh.volumes @ V)[0] / (full.volumes @ U)[0] - 1
    print(f"eps={eps:g}: {mesh.n_cells:5d} cells, per level {per_level.tolist()}, "
          f"mass change {mass:.1e}")

# %%
# Details of a linear ramp halve from one level to the next finer one.
ramp = full.centers[:, :1].copy()
_, det = mr.decompose(full, ramp)
for lev, d in enumerate(det.details):
    print(lev, np.abs(d[..., 0, 0]).max())
