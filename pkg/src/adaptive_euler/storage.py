"""Trajectories and solver states on disk (``.npz``)."""
from __future__ import annotations

import numpy as np

from . import forward as fw
from . import multiresolution as mr
from .geometry import Hierarchy


def _tree_bits(tree):
    return np.concatenate([t.ravel() for t in tree]).astype(np.uint8)


def _bits_tree(bits, hierarchy: Hierarchy):
    tree, pos = [], 0
    for lev in range(hierarchy.L):
        shape = hierarchy.shape(lev)
        n = shape[0] * shape[1]
        tree.append(bits[pos:pos + n].astype(bool).reshape(shape))
        pos += n
    return tree


def save_trajectory(trajectory: fw.Trajectory, path):
    """Meshes are stored once per distinct tree; fields are concatenated."""
    keys, trees, which = {}, [], []
    for mesh in trajectory.meshes:
        if mesh.key not in keys:
            keys[mesh.key] = len(trees)
            trees.append(_tree_bits(mesh.tree))
        which.append(keys[mesh.key])
    sizes = np.array([f.shape[0] for f in trajectory.fields])
    newton = np.array([[r.iterations, r.linear_iterations_total] if r else [0, 0]
                       for r in trajectory.newton], dtype=int).reshape(-1, 2)
    np.savez_compressed(
        path, trees=np.array(trees), which=np.array(which), sizes=sizes,
        fields=np.concatenate(trajectory.fields), times=np.array(trajectory.times),
        dts=np.array(trajectory.dts), kinds=np.array(trajectory.kinds, dtype="U8"),
        rates=np.array(trajectory.rates), newton=newton,
        recorded=np.array(trajectory.recorded))


def load_trajectory(path, hierarchy: Hierarchy, gamma=1.4):
    z = np.load(path)
    cache = {}
    meshes = [mr.mesh_from_tree(hierarchy, _bits_tree(z["trees"][w], hierarchy), cache)
              for w in z["which"]]
    fields = np.split(z["fields"], np.cumsum(z["sizes"])[:-1])
    traj = fw.Trajectory(recorded=bool(z["recorded"]))
    traj.times = [float(t) for t in z["times"]]
    traj.meshes = meshes
    traj.fields = list(fields)
    traj.dts = [float(d) for d in z["dts"]]
    traj.kinds = [str(k) for k in z["kinds"]]
    traj.rates = [float(r) for r in z["rates"]]
    traj.newton = [fw.NewtonReport(int(a), np.nan, int(b), []) if k == "implicit" else None
                   for (a, b), k in zip(z["newton"], traj.kinds)]
    if traj.recorded:
        traj.pressure_trace = [(t,) + fw.bottom_pressure(m, f, gamma)
                               for t, m, f in zip(traj.times, meshes, fields)]
    return traj


def save_state(state: fw.SolverState, path, floor=None):
    extra = {} if floor is None else {"floor": _tree_bits(floor)}
    np.savez_compressed(path, tree=_tree_bits(state.mesh.tree), field=state.field,
                        t=np.array(state.t), **extra)


def load_state(path, hierarchy: Hierarchy):
    """Returns ``(state, floor)``; ``floor`` is ``None`` when not stored."""
    z = np.load(path)
    mesh = mr.mesh_from_tree(hierarchy, _bits_tree(z["tree"], hierarchy))
    floor = _bits_tree(z["floor"], hierarchy) if "floor" in z else None
    return fw.SolverState(mesh, z["field"], float(z["t"]), 0), floor
