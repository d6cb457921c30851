"""Explicit and implicit Euler finite-volume stepping on adaptive meshes."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import euler
from . import multiresolution as mr
from .euler import GAMMA, INFLOW, OUTFLOW, WALL
from .geometry import AdaptiveMesh, Hierarchy

log = logging.getLogger(__name__)


class CFLViolation(ValueError):
    pass


class StepRejected(RuntimeError):
    pass


class LinearSolveError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# boundary data


@dataclass
class ChannelBoundary:
    """Exterior states for the characteristic boundary flux.

    ``inflow_state(t)`` gives the prescribed inflow state, ``outflow_state``
    the far-field state behind the outlet.  ``walls="slip"`` reflects the
    interior state; ``walls="farfield"`` treats walls like the outlet.
    """

    free_stream: np.ndarray
    inflow_state: Callable[[float], np.ndarray] | None = None
    walls: str = "slip"

    def exterior(self, mesh: AdaptiveMesh, U, t):
        b = mesh.boundary
        tags = mesh.tag[b]
        U_in = U[mesh.owner[b]]
        n = mesh.normal[b]
        ext = np.empty_like(U_in)
        ext[:] = self.free_stream
        if self.inflow_state is not None:
            ext[tags == INFLOW] = self.inflow_state(t)
        if self.walls == "slip":
            w = tags == WALL
            ext[w] = euler.mirror_state(U_in[w], n[w])
        return ext


def characteristic_flux(U_in, n, ext, gamma=GAMMA, decomp=None):
    cd = euler.char_decomp(U_in, n, gamma) if decomp is None else decomp
    fin = euler.normal_flux(U_in, n, gamma)
    g = euler.normal_flux(ext, n, gamma)
    F = (np.einsum("nij,nj->ni", cd.P_plus, fin)
         + np.einsum("nij,nj->ni", cd.P_minus, g))
    return F, cd


# --------------------------------------------------------------------------
# spatial operator


def face_fluxes(mesh: AdaptiveMesh, U, t, boundary: ChannelBoundary, gamma=GAMMA,
                jacobian=False):
    """Numerical flux on every face (owner-outward normal)."""
    F = np.empty((mesh.owner.size, 4))
    it = mesh.interior
    UL = U[mesh.owner[it]]
    UR = U[mesh.neighbor[it]]
    n_int = mesh.normal[it]
    parts = {}
    if jacobian:
        Fi, absA = euler.roe_flux(UL, UR, n_int, gamma, return_dissipation=True)
        parts["absA"] = absA
    else:
        Fi = euler.roe_flux(UL, UR, n_int, gamma)
    F[it] = Fi
    b = mesh.boundary
    ext = boundary.exterior(mesh, U, t)
    Fb, cd = characteristic_flux(U[mesh.owner[b]], mesh.normal[b], ext, gamma)
    F[b] = Fb
    if jacobian:
        parts["decomp"] = cd
        parts["ext"] = ext
    return (F, parts) if jacobian else F


def residual(mesh: AdaptiveMesh, U, t, boundary, gamma=GAMMA):
    """``sum_j |G_ij| F_ij`` per cell."""
    F = face_fluxes(mesh, U, t, boundary, gamma)
    return mesh.face_sum(mesh.area[:, None] * F)


def jacobian_blocks(mesh, U, t, boundary, dt, scale, gamma=GAMMA):
    """4x4 blocks of the first-order Jacobian of the scaled implicit residual.

    Interior faces use ``0.5*(A(U) +- |A_roe|)``; boundary faces freeze the
    projections.  Returns ``(diag, rows, cols, off)`` with ``diag`` of shape
    ``(n_cells, 4, 4)`` and off-diagonal blocks ``off[k]`` at ``(rows[k], cols[k])``.
    """
    _, parts = face_fluxes(mesh, U, t, boundary, gamma, jacobian=True)
    it = mesh.interior
    o = mesh.owner[it]
    nb = mesh.neighbor[it]
    n_int = mesh.normal[it]
    absA = parts["absA"]
    AL = euler.directional_jacobian(U[o], n_int, gamma)
    AR = euler.directional_jacobian(U[nb], n_int, gamma)
    a = mesh.area[it][:, None, None]
    dL = 0.5 * a * (AL + absA)
    dR = 0.5 * a * (AR - absA)

    b = mesh.boundary
    ob = mesh.owner[b]
    nbnd = mesh.normal[b]
    cd = parts["decomp"]
    Ain = euler.directional_jacobian(U[ob], nbnd, gamma)
    dB = cd.P_plus @ Ain
    wall = mesh.tag[b] == WALL
    if np.any(wall):
        ext = parts["ext"][wall]
        Aext = euler.directional_jacobian(ext, nbnd[wall], gamma)
        nw = nbnd[wall]
        # d(mirror)/dU
        M = np.broadcast_to(np.eye(4), (nw.shape[0], 4, 4)).copy()
        M[:, 1:3, 1:3] -= 2 * nw[:, :, None] * nw[:, None, :]
        dB[wall] += cd.P_minus[wall] @ Aext @ M
    dB *= mesh.area[b][:, None, None]

    nc = mesh.n_cells
    diag = np.zeros((nc, 4, 4))
    np.add.at(diag, o, dL)
    np.add.at(diag, nb, -dR)
    np.add.at(diag, ob, dB)
    rows = np.concatenate([o, nb])
    cols = np.concatenate([nb, o])
    off = np.concatenate([dR, -dL])

    s = np.asarray(scale, dtype=float)
    sc = s[None, None, :] / s[None, :, None]
    diag = diag * (dt / mesh.volumes)[:, None, None] * sc
    diag += np.eye(4)
    off = off * (dt / mesh.volumes)[rows][:, None, None] * sc
    return diag, rows, cols, off


def approximate_jacobian(mesh, U, t, boundary, dt, scale, gamma=GAMMA):
    """Sparse (CSC) assembly of :func:`jacobian_blocks`."""
    diag, rows, cols, off = jacobian_blocks(mesh, U, t, boundary, dt, scale, gamma)
    nc = mesh.n_cells
    R = np.concatenate([np.arange(nc), rows])
    C = np.concatenate([np.arange(nc), cols])
    blocks = np.concatenate([diag, off])
    k = np.arange(4)
    r = np.broadcast_to(4 * R[:, None, None] + k[None, :, None], blocks.shape)
    c = np.broadcast_to(4 * C[:, None, None] + k[None, None, :], blocks.shape)
    return sp.csc_matrix((blocks.ravel(), (r.ravel(), c.ravel())), shape=(4 * nc, 4 * nc))


# --------------------------------------------------------------------------
# linear algebra


@dataclass
class LinearReport:
    iterations: int
    residual: float


def linear_solve(jacobian_apply, rhs, tol=1e-4, preconditioner=None, maxiter=200,
                 restart=40):
    """Solve ``J x = rhs`` with restarted GMRES to relative residual ``tol``.

    ``jacobian_apply`` is a callable or a scipy ``LinearOperator``/matrix;
    ``preconditioner`` approximates ``J^-1``.  Returns ``(x, LinearReport)``.
    """
    rhs = np.asarray(rhs, dtype=float)
    n = rhs.size
    bnorm = np.linalg.norm(rhs)
    if bnorm == 0.0:
        return np.zeros_like(rhs), LinearReport(0, 0.0)
    A = jacobian_apply
    if callable(A) and not isinstance(A, spla.LinearOperator) and not sp.issparse(A):
        # copy: gmres may reuse the returned buffer, which must not alias its input
        A = spla.LinearOperator((n, n), matvec=lambda v: np.array(jacobian_apply(v), dtype=float),
                                dtype=float)
    M = preconditioner
    if M is not None and callable(M) and not isinstance(M, spla.LinearOperator):
        M = spla.LinearOperator((n, n), matvec=preconditioner, dtype=float)
    count = [0]

    def cb(_):
        count[0] += 1

    x, info = spla.gmres(A, rhs, rtol=tol, atol=0.0, restart=min(restart, n),
                         maxiter=maxiter, M=M, callback=cb, callback_type="pr_norm")
    Ax = A @ x if not isinstance(A, spla.LinearOperator) else A.matvec(x)
    rel = float(np.linalg.norm(rhs - Ax) / bnorm)
    if info != 0 and rel > 10 * tol:
        raise LinearSolveError(f"GMRES stagnated (info={info}, rel. residual {rel:.2e})")
    return x, LinearReport(count[0], rel)


# --------------------------------------------------------------------------
# stepping


@dataclass
class FlowProblem:
    hierarchy: Hierarchy
    boundary: ChannelBoundary
    scale: np.ndarray  # free-stream magnitude per conserved component
    mr_threshold: float = 1e-3
    adapt: bool = True
    gamma: float = GAMMA
    max_newton: int = 20
    linear_tol: float = 1e-4
    precond_max_age: int = 20
    block_jacobi_cfl: float = 4.0
    min_tree: list | None = None
    mesh_cache: dict = field(default_factory=dict)
    _precond: dict = field(default_factory=dict, repr=False)

    def preconditioner(self, mesh, U, t, dt, refresh=False):
        """Approximate inverse of the Newton matrix as a ``solve(b)`` callable.

        Below ``block_jacobi_cfl`` the inverted 4x4 diagonal blocks are
        enough; above it a sparse LU is factorised and reused while the mesh
        and ``dt`` are unchanged (at most ``precond_max_age`` uses).
        """
        key = (mesh.key, dt)
        entry = self._precond.get("entry")
        if refresh or entry is None or entry[0] != key or entry[2] >= self.precond_max_age:
            if cfl_of(dt, mesh, U, self.gamma) < self.block_jacobi_cfl:
                diag = jacobian_blocks(mesh, U, t, self.boundary, dt, self.scale, self.gamma)[0]
                inv = np.linalg.inv(diag)

                def solve(b, inv=inv):
                    return np.einsum("nij,nj->ni", inv, b.reshape(-1, 4)).ravel()
            else:
                J = approximate_jacobian(mesh, U, t, self.boundary, dt, self.scale, self.gamma)
                try:
                    solve = spla.splu(J).solve
                except RuntimeError as exc:  # singular preconditioner
                    raise StepRejected(f"preconditioner factorisation failed: {exc}") from exc
            entry = [key, solve, 0]
            self._precond["entry"] = entry
        entry[2] += 1
        return entry[1]


@dataclass
class SolverState:
    mesh: AdaptiveMesh
    field: np.ndarray
    t: float = 0.0
    step_index: int = 0


@dataclass
class NewtonReport:
    iterations: int
    final_defect: float
    linear_iterations_total: int
    defects: list = field(default_factory=list)


def wave_rate(mesh: AdaptiveMesh, U, gamma=GAMMA):
    """``max_faces (|v.n| + c) / width`` so that ``CFL = dt * rate``."""
    c = euler.sound_speed(U, gamma)
    vel = U[:, 1:3] / U[:, :1]
    o = mesh.owner
    so = np.abs(np.einsum("ij,ij->i", vel[o], mesh.normal)) + c[o]
    rate = so * mesh.area / mesh.volumes[o]
    it = mesh.interior
    nb = mesh.neighbor[it]
    sn = np.abs(np.einsum("ij,ij->i", vel[nb], mesh.normal[it])) + c[nb]
    rate_n = sn * mesh.area[it] / mesh.volumes[nb]
    return float(max(rate.max(), rate_n.max() if rate_n.size else 0.0))


def cfl_of(dt, mesh, U, gamma=GAMMA):
    return dt * wave_rate(mesh, U, gamma)


def defect_norm(G_scaled, volumes):
    """Volume-weighted mean of ``|G|`` per component, maximised over components."""
    return float(np.max(volumes @ np.abs(G_scaled)) / volumes.sum())


def explicit_step(state: SolverState, dt, problem: FlowProblem, cfl_limit=1.0):
    mesh, U = state.mesh, state.field
    if dt <= 0:
        raise ValueError("dt must be positive")
    cfl = cfl_of(dt, mesh, U, problem.gamma)
    if cfl > cfl_limit * (1 + 1e-9):
        raise CFLViolation(f"CFL {cfl:.3f} exceeds {cfl_limit}")
    R = residual(mesh, U, state.t, problem.boundary, problem.gamma)
    Unew = U - (dt / mesh.volumes)[:, None] * R
    try:
        euler.check_states(Unew, problem.gamma)
    except euler.InvalidStateError as exc:
        raise StepRejected(f"explicit step produced an invalid state: {exc}") from exc
    return SolverState(mesh, Unew, state.t + dt, state.step_index + 1)


def implicit_residual(mesh, U, U_old, t_new, dt, problem):
    R = residual(mesh, U, t_new, problem.boundary, problem.gamma)
    return U + (dt / mesh.volumes)[:, None] * R - U_old


def implicit_step(state: SolverState, dt, problem: FlowProblem, break_threshold=None):
    """Backward-Euler step solved by Jacobian-free Newton-Krylov.

    The Newton loop starts from the old solution and stops once the scaled
    defect drops to ``break_threshold`` (default: the multiresolution
    threshold).  At least one iteration is done unless the old solution is
    already an exact root.
    """
    thr = problem.mr_threshold if break_threshold is None else break_threshold
    mesh = state.mesh
    U_old = state.field
    s = problem.scale
    t_new = state.t + dt
    vol = mesh.volumes

    def G(x):
        U = x.reshape(-1, 4) * s
        return (implicit_residual(mesh, U, U_old, t_new, dt, problem) / s).ravel()

    x = (U_old / s).ravel()
    g = G(x)
    defect = defect_norm(g.reshape(-1, 4), vol)
    report = NewtonReport(0, defect, 0, [defect])
    if defect <= 1e-13:
        return SolverState(mesh, U_old.copy(), t_new, state.step_index + 1), report

    lu = problem.preconditioner(mesh, U_old, t_new, dt)
    fresh = problem._precond["entry"][2] == 1

    for k in range(1, problem.max_newton + 1):
        gx = g
        xk = x
        xnorm = np.sqrt(np.mean(xk * xk))

        def jv(v, xk=xk, gx=gx):
            vn = np.sqrt(np.mean(v * v))
            if vn == 0.0:
                return np.zeros_like(v)
            eps = 1e-7 * (1.0 + xnorm) / vn
            return (G(xk + eps * v) - gx) / eps

        try:
            delta, lrep = linear_solve(jv, -gx, problem.linear_tol, lu)
            if lrep.iterations > 15 and not fresh:
                lu = problem.preconditioner(mesh, x.reshape(-1, 4) * s, t_new, dt, refresh=True)
                fresh = True
        except (LinearSolveError, euler.InvalidStateError) as exc:
            if fresh:
                raise StepRejected(str(exc)) from exc
            lu = problem.preconditioner(mesh, x.reshape(-1, 4) * s, t_new, dt, refresh=True)
            fresh = True
            try:
                delta, lrep = linear_solve(jv, -gx, problem.linear_tol, lu)
            except (LinearSolveError, euler.InvalidStateError) as exc2:
                raise StepRejected(str(exc2)) from exc2
        report.linear_iterations_total += lrep.iterations
        lam = 1.0
        for _ in range(6):
            x_try = x + lam * delta
            U_try = x_try.reshape(-1, 4) * s
            if np.all(U_try[:, 0] > 0) and np.all(euler.pressure(U_try, problem.gamma) > 0):
                break
            lam *= 0.5
        else:
            raise StepRejected("Newton update leaves the admissible state set")
        x = x_try
        g = G(x)
        defect = defect_norm(g.reshape(-1, 4), vol)
        report.iterations = k
        report.final_defect = defect
        report.defects.append(defect)
        if defect <= thr:
            U = x.reshape(-1, 4) * s
            return SolverState(mesh, U, t_new, state.step_index + 1), report
    raise StepRejected(f"Newton did not reach {thr:.1e} in {problem.max_newton} iterations "
                       f"(defect {defect:.2e})")


# --------------------------------------------------------------------------
# trajectories


@dataclass
class Trajectory:
    """Accepted steps of a forward run.

    ``times[m]``, ``meshes[m]`` and ``fields[m]`` describe the adapted
    solution after step ``m`` (index 0 is the initial state).  ``dts``,
    ``kinds``, ``rates`` and ``newton`` have one entry per step.
    """

    times: list = field(default_factory=list)
    meshes: list = field(default_factory=list)
    fields: list = field(default_factory=list)
    dts: list = field(default_factory=list)
    kinds: list = field(default_factory=list)
    rates: list = field(default_factory=list)
    newton: list = field(default_factory=list)
    pressure_trace: list = field(default_factory=list)  # (t, x, p, ds) per time level
    deviations: list = field(default_factory=list)
    recorded: bool = True

    @property
    def n_steps(self):
        return len(self.dts)

    @property
    def T(self):
        return self.times[-1]

    def final_state(self):
        return SolverState(self.meshes[-1], self.fields[-1], self.times[-1], self.n_steps)

    def cell_counts(self):
        return [m.n_cells for m in self.meshes]


def bottom_pressure(mesh: AdaptiveMesh, U, gamma=GAMMA):
    """``(x, p, ds)`` at bottom-wall face midpoints, sorted by ``x``."""
    f = mesh.wall_faces(bottom=True)
    f = f[np.argsort(mesh.midpoint[f, 0])]
    return mesh.midpoint[f, 0], euler.pressure(U[mesh.owner[f]], gamma), mesh.area[f]


def _advance(state, dt, kind, problem, break_threshold):
    if kind == "explicit":
        return explicit_step(state, dt, problem), None
    return implicit_step(state, dt, problem, break_threshold)


def run_forward(problem: FlowProblem, initial: SolverState, plan, record=True,
                break_threshold=None, max_halvings=3, progress=None):
    """Integrate along ``plan`` (entries ``(dt, kind)``) with per-step adaptation.

    A rejected step is retried as two halves, recursively up to
    ``max_halvings`` times; such deviations are logged and kept in
    ``Trajectory.deviations``.  With ``record=False`` only the final state and
    the wall-pressure trace are kept.
    """
    traj = Trajectory(recorded=record)
    state = SolverState(initial.mesh, np.asarray(initial.field, dtype=float), initial.t, 0)
    traj.times.append(state.t)
    traj.meshes.append(state.mesh)
    traj.fields.append(state.field)
    traj.pressure_trace.append((state.t,) + bottom_pressure(state.mesh, state.field, problem.gamma))
    t_end = initial.t + math.fsum(e[0] for e in plan)
    taken = []
    n_plan = len(plan)
    for m, (dt, kind) in enumerate(plan):
        queue = [(dt, 0)]
        while queue:
            sdt, depth = queue.pop(0)
            rate = wave_rate(state.mesh, state.field, problem.gamma)
            try:
                new, rep = _advance(state, sdt, kind, problem, break_threshold)
            except (StepRejected, CFLViolation) as exc:
                if depth >= max_halvings:
                    raise
                msg = f"step at t={state.t:.6g} (dt={sdt:.3g}, {kind}) rejected: {exc}; halving"
                log.info(msg)
                traj.deviations.append(msg)
                queue[:0] = [(0.5 * sdt, depth + 1), (0.5 * sdt, depth + 1)]
                continue
            taken.append(sdt)
            t_new = t_end if (m == n_plan - 1 and not queue) else initial.t + math.fsum(taken)
            if problem.adapt:
                mesh, U = mr.adapt(new.mesh, new.field, problem.mr_threshold, problem.scale,
                                   problem.mesh_cache, problem.min_tree)
                new = SolverState(mesh, U, t_new, new.step_index)
            new.t = t_new
            traj.dts.append(sdt)
            traj.kinds.append(kind)
            traj.rates.append(rate)
            traj.newton.append(rep)
            traj.times.append(t_new)
            traj.pressure_trace.append((t_new,) + bottom_pressure(new.mesh, new.field, problem.gamma))
            if record:
                traj.meshes.append(new.mesh)
                traj.fields.append(new.field)
            state = new
        if progress is not None:
            progress(m, state)
    if not record:
        traj.meshes = [traj.meshes[0], state.mesh]
        traj.fields = [traj.fields[0], state.field]
    return traj
