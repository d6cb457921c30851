"""Cell-average (Haar) multiresolution on the quadtree hierarchy.

Children of a cell ``(l, i, j)`` are ordered ``00, 10, 01, 11`` (first digit
along xi).  Details of a 2x2 block are the three Haar differences of the
children averages; the parent average is the volume-weighted mean, and the
block is recovered exactly from both.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import (AdaptiveMesh, Hierarchy, coarsen_any, dilate,
                       refine_repeat)

# Haar patterns over children (00, 10, 01, 11)
HAAR = np.array([[1.0, -1.0, 1.0, -1.0],
                 [1.0, 1.0, -1.0, -1.0],
                 [1.0, -1.0, -1.0, 1.0]])


@dataclass
class DetailArray:
    """Per level ``l < L``: details ``(nx_l, ny_l, 3, m)`` and the mask of
    cells that carry them (the refined cells)."""

    details: list
    mask: list

    @property
    def L(self):
        return len(self.details)


@dataclass
class SignificantSet:
    cells: list  # per-level boolean arrays
    epsilon: float

    def as_set(self):
        from .geometry import tree_to_set
        return tree_to_set(self.cells)

    def __len__(self):
        return int(sum(a.sum() for a in self.cells))


def _children(a):
    return (a[0::2, 0::2], a[1::2, 0::2], a[0::2, 1::2], a[1::2, 1::2])


def node_averages(mesh: AdaptiveMesh, field):
    """Averages on every existing node of the tree (NaN elsewhere)."""
    h = mesh.hierarchy
    field = np.asarray(field, dtype=float)
    tail = field.shape[1:]
    avg = []
    for lev in range(h.L + 1):
        a = np.full(h.shape(lev) + tail, np.nan)
        sel = mesh.level == lev
        a[mesh.i[sel], mesh.j[sel]] = field[sel]
        avg.append(a)
    for lev in range(h.L - 1, -1, -1):
        ref = mesh.tree[lev] & mesh.exists[lev]
        if not np.any(ref):
            continue
        V = h.volumes[lev + 1]
        expand = (slice(None), slice(None)) + (None,) * len(tail)
        ch = _children(avg[lev + 1] * V[expand])
        total = ch[0] + ch[1] + ch[2] + ch[3]
        parent = total / h.volumes[lev][expand]
        avg[lev][ref] = parent[ref]
    return avg


def decompose(mesh: AdaptiveMesh, field):
    """Return ``(coarse averages on level 0, DetailArray)``."""
    h = mesh.hierarchy
    avg = node_averages(mesh, field)
    tail = np.asarray(field).shape[1:]
    details, masks = [], []
    for lev in range(h.L):
        ref = mesh.tree[lev] & mesh.exists[lev]
        ch = _children(avg[lev + 1])
        d = np.zeros(h.shape(lev) + (3,) + tail)
        for k in range(3):
            acc = sum(HAAR[k, c] * ch[c] for c in range(4)) * 0.25
            d[:, :, k][ref] = acc[ref]
        details.append(d)
        masks.append(ref.copy())
    return avg[0], DetailArray(details, masks)


def reconstruct(mesh: AdaptiveMesh, coarse, details: DetailArray):
    """Inverse of :func:`decompose` onto the leaves of ``mesh``."""
    h = mesh.hierarchy
    coarse = np.asarray(coarse, dtype=float)
    tail = coarse.shape[2:]
    expand = (slice(None), slice(None)) + (None,) * len(tail)
    vals = [coarse]
    for lev in range(h.L):
        parent = vals[lev]
        ref = details.mask[lev]
        d = details.details[lev]
        Vc = _children(h.volumes[lev + 1])
        Vp = h.volumes[lev]
        # a = s + sum_k d_k h_k with s fixed by the weighted mean
        corr = 0.0
        for k in range(3):
            w = sum(HAAR[k, c] * Vc[c] for c in range(4)) / Vp
            corr = corr + d[:, :, k] * w[expand]
        s = parent - corr
        child = np.full(h.shape(lev + 1) + tail, np.nan)
        for c, (a, b) in enumerate(((0, 0), (1, 0), (0, 1), (1, 1))):
            val = s + sum(d[:, :, k] * HAAR[k, c] for k in range(3))
            block = child[a::2, b::2]
            block[ref] = val[ref]
        vals.append(child)
    out = np.empty((mesh.n_cells,) + tail)
    for lev in range(h.L + 1):
        sel = mesh.level == lev
        out[sel] = vals[lev][mesh.i[sel], mesh.j[sel]]
    return out


def threshold(details: DetailArray, eps: float, L: int | None = None, scale=None) -> SignificantSet:
    """Cells with ``max |d| / scale > eps * 2**(l - L)``.

    ``scale`` holds one reference magnitude per component (default 1).
    """
    if eps <= 0:
        raise ValueError("threshold must be positive")
    L = details.L if L is None else L
    cells = []
    for lev, (d, m) in enumerate(zip(details.details, details.mask)):
        mag = np.abs(d)
        if scale is not None:
            mag = mag / np.asarray(scale, dtype=float)
        mag = mag.reshape(mag.shape[:2] + (-1,)).max(axis=-1)
        cells.append(m & (mag > eps * 2.0 ** (lev - L)))
    return SignificantSet(cells, eps)


def predict_and_grade(significant, hierarchy: Hierarchy):
    """Graded, parent-closed refinement tree covering the significant set.

    Each significant cell is kept refined together with its eight same-level
    neighbours, and its children are refined too when that stays below the
    finest level.  A fine-to-coarse sweep then adds parents and the parents
    of face neighbours.
    """
    cells = significant.cells if isinstance(significant, SignificantSet) else significant
    L = hierarchy.L
    tree = [np.zeros(hierarchy.shape(lev), dtype=bool) for lev in range(L)]
    for lev in range(L):
        s = cells[lev]
        if not np.any(s):
            continue
        tree[lev] |= dilate(s, corners=True)
        if lev + 1 < L:
            tree[lev + 1] |= refine_repeat(s)
    for lev in range(L - 1, 0, -1):
        tree[lev - 1] |= coarsen_any(dilate(tree[lev]))
    return tree


def complete_pyramid(mesh: AdaptiveMesh, field):
    """Node averages extended below the leaves by piecewise-constant prolongation."""
    avg = node_averages(mesh, field)
    for lev in range(1, mesh.hierarchy.L + 1):
        missing = ~mesh.exists[lev]
        if np.any(missing):
            up = refine_repeat(avg[lev - 1])
            avg[lev][missing] = up[missing]
    return avg


def adapt_field(old_mesh: AdaptiveMesh, field, new_mesh: AdaptiveMesh):
    """Transfer cell averages between two trees of the same hierarchy.

    Coarsened cells receive volume-weighted averages and refined cells inherit
    their ancestor's value, so every cell integral is preserved.
    """
    if new_mesh.key == old_mesh.key:
        return np.asarray(field)
    pyr = complete_pyramid(old_mesh, field)
    out = np.empty((new_mesh.n_cells,) + np.asarray(field).shape[1:])
    for lev in range(new_mesh.hierarchy.L + 1):
        sel = new_mesh.level == lev
        out[sel] = pyr[lev][new_mesh.i[sel], new_mesh.j[sel]]
    return out


def adapt(mesh: AdaptiveMesh, field, eps: float, scale=None, mesh_cache=None, floor=None):
    """One decompose/threshold/predict/adapt cycle; returns ``(mesh, field)``.

    ``floor`` is an optional graded tree that the new tree always contains
    (unions of graded trees stay graded).
    """
    _, det = decompose(mesh, field)
    sig = threshold(det, eps, mesh.hierarchy.L, scale)
    tree = predict_and_grade(sig, mesh.hierarchy)
    if floor is not None:
        tree = [a | b for a, b in zip(tree, floor)]
    new_mesh = mesh_from_tree(mesh.hierarchy, tree, mesh_cache)
    return new_mesh, adapt_field(mesh, field, new_mesh)


def mesh_from_tree(hierarchy, tree, cache=None):
    if cache is None:
        return AdaptiveMesh(hierarchy, tree)
    key = b"".join(np.packbits(t).tobytes() for t in tree)
    m = cache.get(key)
    if m is None:
        m = AdaptiveMesh(hierarchy, tree)
        if len(cache) > 64:
            cache.pop(next(iter(cache)))
        cache[key] = m
    return m
