"""Conservative dual problem for ``w = grad(phi)``, marched backward in time.

Per cell the dual field is a ``(2, 4)`` block ``W`` (rows: derivative
direction).  Its flux in direction ``n`` is ``n_k H`` with
``H = A_x^T W_x + A_y^T W_y`` and ``A_k`` the Cartesian flux Jacobians of
the recorded forward solution.  Time is reversed (``s = T - t``), so the
update uses the flux ``-n_k H`` with a Lax-Friedrichs dissipation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import euler
from . import multiresolution as mr
from .euler import GAMMA
from .forward import CFLViolation, wave_rate
from .geometry import AdaptiveMesh

_EX = np.array([1.0, 0.0])
_EY = np.array([0.0, 1.0])


def cell_H(U, W, gamma=GAMMA):
    """``sum_k A_k(U)^T W_k`` per cell."""
    Ax = euler.directional_jacobian(U, _EX, gamma)
    Ay = euler.directional_jacobian(U, _EY, gamma)
    return (np.einsum("nji,nj->ni", Ax, W[:, 0])
            + np.einsum("nji,nj->ni", Ay, W[:, 1]))


def _face_alpha(mesh: AdaptiveMesh, U, gamma):
    c = euler.sound_speed(U, gamma)
    vel = U[:, 1:3] / U[:, :1]
    it = mesh.interior
    o, nb = mesh.owner[it], mesh.neighbor[it]
    n = mesh.normal[it]
    so = np.abs(np.einsum("ij,ij->i", vel[o], n)) + c[o]
    sn = np.abs(np.einsum("ij,ij->i", vel[nb], n)) + c[nb]
    return np.maximum(so, sn)


def dual_boundary_flux(W_in, U_trace, n, psi_now=None, psi_prev=None, dt=None,
                       U_prev=None, psi_interior=None, gamma=GAMMA):
    """Normal flux rows ``n_k H`` on boundary faces, shape ``(nb, 2, 4)``.

    ``H = (I - P+)^T H_int + P+^T H_Gamma`` where the incoming part is the
    backward difference
    ``-(P+^T(U_trace) psi_now - P+^T(U_prev) psi_prev) / dt + P+^T(U_prev) psi``.
    ``U_prev`` defaults to ``U_trace``; missing weights count as zero.
    Also returns ``H`` itself.
    """
    W_in = np.asarray(W_in, dtype=float)
    U_trace = np.asarray(U_trace, dtype=float)
    n = np.asarray(n, dtype=float)
    H_int = cell_H(U_trace, W_in, gamma)
    cd = euler.char_decomp(U_trace, n, gamma)
    PpT = np.swapaxes(cd.P_plus, -1, -2)
    H = H_int - np.einsum("nij,nj->ni", PpT, H_int)
    if psi_now is not None or psi_prev is not None or psi_interior is not None:
        if U_prev is None:
            PpT_prev = PpT
        else:
            PpT_prev = np.swapaxes(euler.char_decomp(U_prev, n, gamma).P_plus, -1, -2)
        inc = np.zeros_like(H)
        if psi_now is not None:
            inc -= np.einsum("nij,nj->ni", PpT, psi_now) / dt
        if psi_prev is not None:
            inc += np.einsum("nij,nj->ni", PpT_prev, psi_prev) / dt
        if psi_interior is not None:
            inc += np.einsum("nij,nj->ni", PpT_prev, psi_interior)
        H = H + inc
    return n[:, :, None] * H[:, None, :], H


def green_gauss_gradient(mesh: AdaptiveMesh, q):
    """Cell gradients ``(n, 2, m)`` of cell data ``q`` (boundary: own value)."""
    q = np.asarray(q, dtype=float)
    qf = q[mesh.owner].copy()
    it = mesh.interior
    qf[it] = 0.5 * (qf[it] + q[mesh.neighbor[it]])
    contrib = (mesh.area[:, None, None] * mesh.normal[:, :, None]) * qf[:, None, :]
    g = mesh.face_sum(contrib.reshape(contrib.shape[0], -1)).reshape(-1, 2, q.shape[1])
    return g / mesh.volumes[:, None, None]


def dual_step_backward(mesh: AdaptiveMesh, U, W, dt, boundary_rows=None, source=None,
                       gamma=GAMMA, cfl_limit=1.0, alpha=None):
    """One explicit Lax-Friedrichs step of the reversed-time dual system.

    ``boundary_rows`` are the forward-time boundary fluxes ``n_k H`` from
    :func:`dual_boundary_flux` (default: purely interior traces, no incoming
    data); ``source`` is ``grad(psi)`` per cell.  Returns ``W`` at ``t - dt``.
    """
    W = np.asarray(W, dtype=float)
    if dt * wave_rate(mesh, U, gamma) > cfl_limit * (1 + 1e-9):
        raise CFLViolation("dual step exceeds the CFL limit")
    H = cell_H(U, W, gamma)
    it = mesh.interior
    o, nb = mesh.owner[it], mesh.neighbor[it]
    n = mesh.normal[it]
    a = _face_alpha(mesh, U, gamma) if alpha is None else alpha
    nf = mesh.owner.size
    F = np.empty((nf, 2, 4))
    # reversed-time flux -n_k H plus dissipation
    F[it] = (-0.5 * n[:, :, None] * (H[o] + H[nb])[:, None, :]
             - 0.5 * a[:, None, None] * (W[nb] - W[o]))
    b = mesh.boundary
    if boundary_rows is None:
        boundary_rows, _ = dual_boundary_flux(W[mesh.owner[b]], U[mesh.owner[b]],
                                              mesh.normal[b], gamma=gamma)
    F[b] = -boundary_rows
    div = mesh.face_sum((mesh.area[:, None, None] * F).reshape(nf, 8)).reshape(-1, 2, 4)
    Wn = W - (dt / mesh.volumes)[:, None, None] * div
    if source is not None:
        Wn = Wn - dt * source
    return Wn


@dataclass
class DualSolution:
    """Dual fields at the forward time points and interval means.

    ``W[m]`` lives on ``meshes[m]`` (time ``times[m]``); ``W_mean[m-1]`` and
    ``H_mean[m-1]`` are time averages over interval ``m`` on ``meshes[m]``.
    """

    times: list
    meshes: list
    W: list
    W_mean: list = field(default_factory=list)
    H_mean: list = field(default_factory=list)
    substeps: list = field(default_factory=list)

    def __iter__(self):
        return iter(zip(self.times, self.W))

    def __len__(self):
        return len(self.W)


def _boundary_cells(mesh):
    b = np.nonzero(mesh.boundary)[0]
    return b, mesh.owner[b], mesh.normal[b]


def run_dual(trajectory, functional, gamma=GAMMA, cfl=0.9, keep_fields=True):
    """March the dual backward over every recorded forward interval.

    ``functional`` provides ``boundary_weight(mesh)`` (``psi_Gamma`` per
    boundary face) and optionally ``interior_weight(mesh)`` (``psi`` per
    cell).  The terminal value is ``W(T) = 0`` and the boundary weight is
    taken as switched off at ``T``, so the last interval carries the onset
    of the boundary data.  With ``keep_fields=False`` only the interval
    means (all the indicators need) and the initial field are kept.
    """
    if not trajectory.recorded or len(trajectory.fields) != len(trajectory.times):
        raise ValueError("the dual needs a trajectory with all snapshots recorded")
    if not 0 < cfl <= 1:
        raise ValueError("dual CFL must lie in (0, 1]")
    N = trajectory.n_steps
    meshes = trajectory.meshes
    fields_ = trajectory.fields
    interior_w = getattr(functional, "interior_weight", None)
    W_out = [None] * (N + 1)
    W_mean = [None] * N
    H_mean = [None] * N
    subs = [0] * N
    W = np.zeros((meshes[N].n_cells, 2, 4))
    W_out[N] = W
    for m in range(N, 0, -1):
        mesh = meshes[m]
        U1 = fields_[m]
        U0 = mr.adapt_field(meshes[m - 1], fields_[m - 1], mesh)
        dt_m = trajectory.dts[m - 1]
        rate = max(wave_rate(mesh, U0, gamma), wave_rate(mesh, U1, gamma))
        k = max(1, math.ceil(dt_m * rate / cfl - 1e-12))
        ds = dt_m / k
        subs[m - 1] = k
        b, ob, nbnd = _boundary_cells(mesh)
        psi_b = functional.boundary_weight(mesh)
        psi_now = np.zeros_like(psi_b) if m == N else psi_b
        psi_cell = interior_w(mesh) if interior_w is not None else None
        source = None
        psi_int_b = None
        if psi_cell is not None:
            source = green_gauss_gradient(mesh, psi_cell)
            psi_int_b = psi_cell[ob]
        Wacc = np.zeros_like(W)
        Hacc = np.zeros((mesh.n_cells, 4))
        for j in range(k):
            theta = 1.0 - (j + 0.5) / k
            U = (1.0 - theta) * U0 + theta * U1
            rows, _ = dual_boundary_flux(W[ob], U[ob], nbnd, psi_now, psi_b, dt_m,
                                         U_prev=U0[ob], psi_interior=psi_int_b, gamma=gamma)
            Wn = dual_step_backward(mesh, U, W, ds, rows, source, gamma, cfl_limit=1.0)
            Wacc += 0.5 * (W + Wn)
            Hacc += 0.5 * (cell_H(U, W, gamma) + cell_H(U, Wn, gamma))
            W = Wn
        W_mean[m - 1] = Wacc / k
        H_mean[m - 1] = Hacc / k
        if not np.all(np.isfinite(W)):
            raise FloatingPointError(f"dual field diverged on interval {m}")
        if not keep_fields and m < N:
            W_out[m] = None
        W = mr.adapt_field(mesh, W.reshape(-1, 8), meshes[m - 1]).reshape(-1, 2, 4)
        W_out[m - 1] = W
    return DualSolution(list(trajectory.times), list(meshes), W_out, W_mean, H_mean, subs)
