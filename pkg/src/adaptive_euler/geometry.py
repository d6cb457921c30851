"""Curvilinear quadtree meshes for the bump channel.

The parameter square is covered by a root grid of ``nx0 x ny0`` cells at
level 0; every level halves the parameter spacing.  A tree is stored as one
boolean "refined" array per level, so index arithmetic stays exact and all
mesh construction is vectorised.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .euler import INFLOW, INTERIOR, OUTFLOW, WALL

BOUNDARY_NAMES = {INFLOW: "inflow", OUTFLOW: "outflow", WALL: "wall"}


@dataclass(frozen=True)
class GridMapping:
    """Blended circular-arc bump channel, ``(xi, zeta) -> (x, y)``.

    The bottom edge follows the wall (flat, arc, flat); vertical lines are
    blended linearly up to the flat top wall.  The channel spans
    ``x in [0, channel_length]`` with the bump centred at mid-length.
    """

    channel_length: float = 6.0
    channel_height: float = 2.0
    bump_secant: float = 1.0
    bump_height: float = 0.024

    @property
    def bump_center(self):
        return 0.5 * self.channel_length

    def wall_height(self, x):
        x = np.asarray(x, dtype=float)
        h = self.bump_height
        if h == 0.0:
            return np.zeros_like(x)
        half = 0.5 * self.bump_secant
        radius = (half * half + h * h) / (2.0 * h)
        dx = x - self.bump_center
        inside = np.abs(dx) < half
        y = np.zeros_like(x)
        y[inside] = np.sqrt(radius * radius - dx[inside] ** 2) + h - radius
        return y

    def map(self, xi, zeta):
        xi = np.asarray(xi, dtype=float)
        zeta = np.asarray(zeta, dtype=float)
        x = xi * self.channel_length
        yb = self.wall_height(x)
        y = yb + zeta * (self.channel_height - yb)
        return x, y

    def jacobian_det(self, xi, zeta):
        x = np.asarray(xi, dtype=float) * self.channel_length
        return self.channel_length * (self.channel_height - self.wall_height(x))


def build_bump_mapping(config) -> GridMapping:
    """Mapping for a :class:`~adaptive_euler.scenario.ChannelConfig`-like object."""
    length = float(config.length)
    height = float(config.height)
    secant = float(config.bump_secant)
    bump = float(config.bump_height)
    if length <= 0 or height <= 0 or secant <= 0 or bump < 0:
        raise ValueError("channel dimensions must be positive")
    if bump >= height:
        raise ValueError("bump_height must be below channel_height")
    if secant >= length:
        raise ValueError("bump_secant must be shorter than the channel")
    return GridMapping(length, height, secant, bump)


@dataclass(frozen=True)
class CellIndex:
    level: int
    i: int
    j: int

    def children(self):
        return [CellIndex(self.level + 1, 2 * self.i + a, 2 * self.j + b)
                for b in (0, 1) for a in (0, 1)]

    def parent(self):
        return CellIndex(self.level - 1, self.i // 2, self.j // 2)


@dataclass(frozen=True)
class FaceGeom:
    area: float
    normal: tuple
    neighbor: object  # CellIndex or boundary name


class MeshError(ValueError):
    pass


class Hierarchy:
    """Per-level geometry shared by every mesh over one mapping and depth.

    Corner points are evaluated on each level's lattice.  Cell volumes are
    accumulated from the finest level upwards, so a parent volume is the
    floating-point sum of its children.
    """

    def __init__(self, mapping: GridMapping, max_level: int, nx0: int = 1, ny0: int = 1):
        if max_level < 0:
            raise ValueError("max_level must be >= 0")
        self.mapping = mapping
        self.L = int(max_level)
        self.nx0 = int(nx0)
        self.ny0 = int(ny0)
        self.corners = []
        for lev in range(self.L + 1):
            nx, ny = self.shape(lev)
            xi = np.linspace(0.0, 1.0, nx + 1)
            ze = np.linspace(0.0, 1.0, ny + 1)
            X, Y = mapping.map(*np.meshgrid(xi, ze, indexing="ij"))
            self.corners.append((X, Y))
        vols = [None] * (self.L + 1)
        X, Y = self.corners[self.L]
        vols[self.L] = _quad_area(X, Y)
        for lev in range(self.L - 1, -1, -1):
            vols[lev] = coarsen_sum(vols[lev + 1])
        self.volumes = vols
        self.centers = []
        for lev in range(self.L + 1):
            X, Y = self.corners[lev]
            cx = 0.25 * (X[:-1, :-1] + X[1:, :-1] + X[:-1, 1:] + X[1:, 1:])
            cy = 0.25 * (Y[:-1, :-1] + Y[1:, :-1] + Y[:-1, 1:] + Y[1:, 1:])
            self.centers.append((cx, cy))

    def shape(self, level):
        return self.nx0 << level, self.ny0 << level

    def empty_tree(self):
        return [np.zeros(self.shape(lev), dtype=bool) for lev in range(self.L)]

    def full_tree(self, depth=None):
        depth = self.L if depth is None else depth
        return [np.full(self.shape(lev), lev < depth, dtype=bool) for lev in range(self.L)]


def _quad_area(X, Y):
    # shoelace on (SW, SE, NE, NW)
    x0, y0 = X[:-1, :-1], Y[:-1, :-1]
    x1, y1 = X[1:, :-1], Y[1:, :-1]
    x2, y2 = X[1:, 1:], Y[1:, 1:]
    x3, y3 = X[:-1, 1:], Y[:-1, 1:]
    return 0.5 * ((x0 * y1 - x1 * y0) + (x1 * y2 - x2 * y1)
                  + (x2 * y3 - x3 * y2) + (x3 * y0 - x0 * y3))


def coarsen_sum(a):
    """Sum 2x2 blocks along the first two axes."""
    return a[0::2, 0::2] + a[1::2, 0::2] + a[0::2, 1::2] + a[1::2, 1::2]


def refine_repeat(a):
    """Copy every entry to its 2x2 block of children."""
    return np.repeat(np.repeat(a, 2, axis=0), 2, axis=1)


def coarsen_any(a):
    return a[0::2, 0::2] | a[1::2, 0::2] | a[0::2, 1::2] | a[1::2, 1::2]


def dilate(a, corners=False):
    out = a.copy()
    out[1:, :] |= a[:-1, :]
    out[:-1, :] |= a[1:, :]
    out[:, 1:] |= a[:, :-1]
    out[:, :-1] |= a[:, 1:]
    if corners:
        out[1:, 1:] |= a[:-1, :-1]
        out[:-1, :-1] |= a[1:, 1:]
        out[1:, :-1] |= a[:-1, 1:]
        out[:-1, 1:] |= a[1:, :-1]
    return out


def tree_exists(tree, hierarchy):
    """Boolean arrays of existing cells for levels ``0..L``."""
    exists = [np.ones(hierarchy.shape(0), dtype=bool)]
    for lev in range(hierarchy.L):
        exists.append(refine_repeat(tree[lev] & exists[lev]))
    return exists


def validate_tree(tree, hierarchy):
    """Raise :class:`MeshError` unless ``tree`` is parent-closed and graded."""
    if len(tree) != hierarchy.L:
        raise MeshError("tree depth does not match the hierarchy")
    for lev in range(hierarchy.L):
        if tree[lev].shape != hierarchy.shape(lev):
            raise MeshError(f"level {lev} array has the wrong shape")
    for lev in range(1, hierarchy.L):
        parents = refine_repeat(tree[lev - 1])
        if np.any(tree[lev] & ~parents):
            raise MeshError(f"refined cell on level {lev} without refined parent")
        # a refined cell needs all face-neighbour positions to exist
        if np.any(dilate(tree[lev]) & ~parents):
            raise MeshError(f"tree is not graded at level {lev}")


def tree_from_set(cells, hierarchy):
    tree = hierarchy.empty_tree()
    for c in cells:
        if not 0 <= c.level < hierarchy.L:
            raise MeshError(f"{c} cannot be refined with max level {hierarchy.L}")
        nx, ny = hierarchy.shape(c.level)
        if not (0 <= c.i < nx and 0 <= c.j < ny):
            raise MeshError(f"{c} lies outside the root grid")
        tree[c.level][c.i, c.j] = True
    return tree


def tree_to_set(tree):
    out = set()
    for lev, a in enumerate(tree):
        for i, j in zip(*np.nonzero(a)):
            out.add(CellIndex(lev, int(i), int(j)))
    return out


# side order: east, north, west, south
_SIDES = ((1, 0), (0, 1), (-1, 0), (0, -1))


class AdaptiveMesh:
    """Leaves of a graded tree with flux-ready face arrays.

    Cells are ordered level by level, each level in C order of ``(i, j)``.
    Face ``f`` joins ``owner[f]`` to ``neighbor[f]`` (``-1`` on the boundary)
    with unit normal ``normal[f]`` pointing out of the owner.
    """

    def __init__(self, hierarchy: Hierarchy, tree):
        validate_tree(tree, hierarchy)
        self.hierarchy = hierarchy
        self.tree = [np.array(t, dtype=bool) for t in tree]
        self.key = b"".join(np.packbits(t).tobytes() for t in self.tree)
        h = hierarchy
        exists = tree_exists(self.tree, h)
        refined = self.tree + [np.zeros(h.shape(h.L), dtype=bool)]
        self.exists = exists
        leaf = [exists[lev] & ~refined[lev] for lev in range(h.L + 1)]
        self.leaf = leaf
        index = []
        levels, ii, jj = [], [], []
        start = 0
        for lev in range(h.L + 1):
            idx = np.full(h.shape(lev), -1, dtype=np.int64)
            li, lj = np.nonzero(leaf[lev])
            idx[li, lj] = np.arange(start, start + li.size)
            start += li.size
            index.append(idx)
            levels.append(np.full(li.size, lev))
            ii.append(li)
            jj.append(lj)
        self.index = index
        self.level = np.concatenate(levels)
        self.i = np.concatenate(ii)
        self.j = np.concatenate(jj)
        self.n_cells = start
        self.volumes = np.concatenate(
            [h.volumes[lev][ii[lev], jj[lev]] for lev in range(h.L + 1)])
        self.centers = np.column_stack([
            np.concatenate([h.centers[lev][0][ii[lev], jj[lev]] for lev in range(h.L + 1)]),
            np.concatenate([h.centers[lev][1][ii[lev], jj[lev]] for lev in range(h.L + 1)]),
        ])
        self._build_faces(exists, leaf)

    def _build_faces(self, exists, leaf):
        h = self.hierarchy
        owner, nbr, tag, pa, pb = [], [], [], [], []
        for lev in range(h.L + 1):
            nx, ny = h.shape(lev)
            X, Y = h.corners[lev]
            li, lj = np.nonzero(leaf[lev])
            own = self.index[lev][li, lj]
            for side, (di, dj) in enumerate(_SIDES):
                ni, nj = li + di, lj + dj
                inside = (ni >= 0) & (ni < nx) & (nj >= 0) & (nj < ny)
                # corner endpoints, counter-clockwise around the cell
                if side == 0:
                    a = (li + 1, lj); b = (li + 1, lj + 1)
                elif side == 1:
                    a = (li + 1, lj + 1); b = (li, lj + 1)
                elif side == 2:
                    a = (li, lj + 1); b = (li, lj)
                else:
                    a = (li, lj); b = (li + 1, lj)
                pax = X[a]; pay = Y[a]; pbx = X[b]; pby = Y[b]

                bsel = ~inside
                if np.any(bsel):
                    t = {0: OUTFLOW, 1: WALL, 2: INFLOW, 3: WALL}[side]
                    owner.append(own[bsel]); nbr.append(np.full(bsel.sum(), -1))
                    tag.append(np.full(bsel.sum(), t))
                    pa.append(np.column_stack([pax[bsel], pay[bsel]]))
                    pb.append(np.column_stack([pbx[bsel], pby[bsel]]))
                ci = np.where(inside, ni, 0)
                cj = np.where(inside, nj, 0)
                if side in (0, 1):
                    same = inside & leaf[lev][ci, cj]
                    if np.any(same):
                        owner.append(own[same]); nbr.append(self.index[lev][ci[same], cj[same]])
                        tag.append(np.full(same.sum(), INTERIOR))
                        pa.append(np.column_stack([pax[same], pay[same]]))
                        pb.append(np.column_stack([pbx[same], pby[same]]))
                if lev > 0:
                    coarse = inside & ~exists[lev][ci, cj]
                    if np.any(coarse):
                        cidx = self.index[lev - 1][ci[coarse] // 2, cj[coarse] // 2]
                        if np.any(cidx < 0):
                            raise MeshError("ungraded neighbour found while building faces")
                        owner.append(own[coarse]); nbr.append(cidx)
                        tag.append(np.full(coarse.sum(), INTERIOR))
                        pa.append(np.column_stack([pax[coarse], pay[coarse]]))
                        pb.append(np.column_stack([pbx[coarse], pby[coarse]]))
        self.owner = np.concatenate(owner).astype(np.int64)
        self.neighbor = np.concatenate(nbr).astype(np.int64)
        self.tag = np.concatenate(tag).astype(np.int64)
        pa = np.concatenate(pa)
        pb = np.concatenate(pb)
        d = pb - pa
        self.area = np.hypot(d[:, 0], d[:, 1])
        self.normal = np.column_stack([d[:, 1], -d[:, 0]]) / self.area[:, None]
        self.midpoint = 0.5 * (pa + pb)
        self.endpoints = (pa, pb)
        self.interior = self.neighbor >= 0
        self.boundary = ~self.interior
        nf = self.owner.size
        rows = np.concatenate([self.owner, self.neighbor[self.interior]])
        cols = np.concatenate([np.arange(nf), np.nonzero(self.interior)[0]])
        vals = np.concatenate([np.ones(nf), -np.ones(self.interior.sum())])
        # cell_sum @ face_values accumulates owner(+)/neighbour(-) contributions
        self.cell_sum = sp.csr_matrix((vals, (rows, cols)), shape=(self.n_cells, nf))

    # ----------------------------------------------------------------- queries
    @property
    def L(self):
        return self.hierarchy.L

    @property
    def mapping(self):
        return self.hierarchy.mapping

    @cached_property
    def active(self):
        return [CellIndex(int(l), int(i), int(j)) for l, i, j in zip(self.level, self.i, self.j)]

    @cached_property
    def perimeter(self):
        return self.cell_sum.__abs__() @ self.area

    @cached_property
    def face_width(self):
        """Incident cell width ``volume / face area`` on both sides of each face."""
        wo = self.volumes[self.owner] / self.area
        wn = np.full_like(wo, np.inf)
        wn[self.interior] = self.volumes[self.neighbor[self.interior]] / self.area[self.interior]
        return np.minimum(wo, wn)

    def cell_faces(self, c):
        """FaceGeom records of cell number ``c`` with normals pointing out of it."""
        out = []
        for f in np.nonzero(self.owner == c)[0]:
            nb = self.neighbor[f]
            out.append(FaceGeom(float(self.area[f]), tuple(self.normal[f]),
                                self.active[nb] if nb >= 0 else BOUNDARY_NAMES[int(self.tag[f])]))
        for f in np.nonzero(self.neighbor == c)[0]:
            out.append(FaceGeom(float(self.area[f]), tuple(-self.normal[f]),
                                self.active[self.owner[f]]))
        return out

    def face_sum(self, values):
        """Owner-minus-neighbour accumulation of per-face values into cells."""
        return self.cell_sum @ values

    def wall_faces(self, bottom=True):
        sel = self.tag == WALL
        # bottom wall normals point downwards
        return np.nonzero(sel & ((self.normal[:, 1] < 0) if bottom else (self.normal[:, 1] > 0)))[0]

    def parameter_area(self):
        h = self.hierarchy
        return float(sum((1.0 / (h.nx0 * h.ny0)) * 0.25 ** lev for lev in self.level))


def synthesize_mesh(hierarchy: Hierarchy, refine_set) -> AdaptiveMesh:
    """Mesh whose active cells are the leaves of ``refine_set``.

    ``refine_set`` may be a set of :class:`CellIndex` or per-level boolean
    arrays.
    """
    if isinstance(refine_set, (set, frozenset)):
        tree = tree_from_set(refine_set, hierarchy)
    else:
        tree = refine_set
    return AdaptiveMesh(hierarchy, tree)


def facewise_consistency_check(mesh: AdaptiveMesh, normals=None) -> float:
    """Max over cells of ``|sum_j |G_ij| n_ij| / perimeter``."""
    n = mesh.normal if normals is None else normals
    s = mesh.face_sum(mesh.area[:, None] * n)
    return float(np.max(np.hypot(s[:, 0], s[:, 1]) / mesh.perimeter))


def dump_mesh(mesh: AdaptiveMesh, path):
    data = np.column_stack([mesh.level, mesh.i, mesh.j, mesh.centers, mesh.volumes])
    np.savetxt(path, data, fmt=["%d", "%d", "%d", "%.12e", "%.12e", "%.12e"], delimiter=",",
               header="level,i,j,x_center,y_center,volume", comments="")
