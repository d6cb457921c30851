"""Temporal and spatial parts of the adjoint error representation."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import euler
from . import multiresolution as mr
from .euler import GAMMA
from .forward import ChannelBoundary, face_fluxes


@dataclass
class FunctionalSpec:
    """Weights of a target functional.

    ``boundary`` maps a mesh to ``psi_Gamma`` per boundary face (rows in
    the order of ``np.nonzero(mesh.boundary)``); ``interior`` maps a mesh to
    ``psi`` per cell, or is ``None`` for a purely boundary functional.
    """

    boundary: Callable
    interior: Callable | None = None
    label: str = ""

    def boundary_weight(self, mesh):
        return self.boundary(mesh)

    def interior_weight(self, mesh):
        return None if self.interior is None else self.interior(mesh)

    @classmethod
    def zero(cls):
        return cls(lambda mesh: np.zeros((int(mesh.boundary.sum()), 4)), None, "zero")


@dataclass
class ErrorBreakdown:
    eta_k: float
    eta_h: float
    localized: np.ndarray
    adhoc: np.ndarray
    theta: np.ndarray
    times: np.ndarray = field(default_factory=lambda: np.zeros(0))
    dts: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def n_steps(self):
        return len(self.localized)


def _theta(kind):
    return 0.0 if kind == "explicit" else 1.0


def _transferred(trajectory, m, target):
    k = max(m, 0)
    return mr.adapt_field(trajectory.meshes[k], trajectory.fields[k], target)


def time_differences(trajectory):
    """Per step ``m``: ``(1-theta)(U^{m-1}-U^{m-2}) + theta (U^m-U^{m-1})`` on mesh ``m``.

    Earlier fields are carried to the current mesh by conservative
    transfer; ``U^{-1} = U^0``.
    """
    out = []
    for m in range(1, trajectory.n_steps + 1):
        mesh = trajectory.meshes[m]
        th = _theta(trajectory.kinds[m - 1])
        prev = _transferred(trajectory, m - 1, mesh)
        if th == 1.0:
            d = trajectory.fields[m] - prev
        else:
            d = prev - _transferred(trajectory, m - 2, mesh) if m >= 2 else np.zeros_like(prev)
            if th != 0.0:
                d = (1 - th) * d + th * (trajectory.fields[m] - prev)
        out.append(d)
    return out


def _dual_weight(dual, functional, m):
    mesh = dual.meshes[m]
    q = -dual.H_mean[m - 1]
    if functional is not None:
        psi = functional.interior_weight(mesh) if hasattr(functional, "interior_weight") else None
        if psi is not None:
            q = q + psi
    return q


def eta_k_localized(trajectory, dual, functional=None, deltas=None):
    """``0.5 * sum_i |(delta_i, psi - H_i)| |V_i|`` for every step."""
    deltas = time_differences(trajectory) if deltas is None else deltas
    out = np.empty(len(deltas))
    for m, d in enumerate(deltas, 1):
        q = _dual_weight(dual, functional, m)
        vol = trajectory.meshes[m].volumes
        out[m - 1] = 0.5 * float(np.sum(vol * np.abs(np.einsum("ij,ij->i", d, q))))
    return out


def adhoc_indicator(trajectory):
    """``sum_i |U_i^m - U_i^{m-1}|_1 |V_i|`` per step, on the mesh of step ``m``."""
    if len(trajectory.fields) < 2:
        raise ValueError("need at least two snapshots")
    out = np.empty(trajectory.n_steps)
    for m in range(1, trajectory.n_steps + 1):
        mesh = trajectory.meshes[m]
        d = trajectory.fields[m] - _transferred(trajectory, m - 1, mesh)
        out[m - 1] = float(np.sum(np.abs(d) * mesh.volumes[:, None]))
    return out


def _face_residual_term(mesh, U, t, boundary, Wbar, gamma):
    """``sum_faces |G| (F - f_n(U_side)) . (Wbar_side . (x_f - x_side))`` over both sides."""
    F = face_fluxes(mesh, U, t, boundary, gamma)
    o = mesh.owner
    dx_o = mesh.midpoint - mesh.centers[o]
    phi_o = np.einsum("fk,fkj->fj", dx_o, Wbar[o])
    r_o = F - euler.normal_flux(U[o], mesh.normal, gamma)
    total = np.sum(mesh.area * np.einsum("fj,fj->f", r_o, phi_o))
    it = mesh.interior
    nb = mesh.neighbor[it]
    dx_n = mesh.midpoint[it] - mesh.centers[nb]
    phi_n = np.einsum("fk,fkj->fj", dx_n, Wbar[nb])
    # the neighbour sees the flux with the opposite normal
    r_n = -F[it] - euler.normal_flux(U[nb], -mesh.normal[it], gamma)
    total += np.sum(mesh.area[it] * np.einsum("fj,fj->f", r_n, phi_n))
    return float(total)


def eta_split(trajectory, dual, boundary: ChannelBoundary, functional=None,
              gamma=GAMMA, deltas=None):
    """Signed ``(eta_k, eta_h)``.

    ``eta_k = sum_m dt_m/2 (delta^m, psi - H^m)``; ``eta_h`` sums the flux
    residuals ``F - f_n(U)`` over cell faces weighted by the deviation of
    the time-averaged dual from its cell mean, ``Wbar . (x_f - x_i)``.
    """
    deltas = time_differences(trajectory) if deltas is None else deltas
    terms_k = []
    terms_h = []
    for m, d in enumerate(deltas, 1):
        dt = trajectory.dts[m - 1]
        mesh = trajectory.meshes[m]
        q = _dual_weight(dual, functional, m)
        terms_k.append(0.5 * dt * float(np.sum(mesh.volumes * np.einsum("ij,ij->i", d, q))))
        if _theta(trajectory.kinds[m - 1]) == 1.0:
            U, t = trajectory.fields[m], trajectory.times[m]
        else:
            U, t = _transferred(trajectory, m - 1, mesh), trajectory.times[m - 1]
        terms_h.append(dt * _face_residual_term(mesh, U, t, boundary, dual.W_mean[m - 1], gamma))
    return math.fsum(terms_k), math.fsum(terms_h)


def compute_breakdown(trajectory, dual, boundary, functional=None, gamma=GAMMA):
    deltas = time_differences(trajectory)
    loc = eta_k_localized(trajectory, dual, functional, deltas)
    ek, eh = eta_split(trajectory, dual, boundary, functional, gamma, deltas)
    theta = np.array([_theta(k) for k in trajectory.kinds])
    return ErrorBreakdown(ek, eh, loc, adhoc_indicator(trajectory), theta,
                          np.asarray(trajectory.times[1:]), np.asarray(trajectory.dts))


def write_report(breakdown: ErrorBreakdown, path):
    """CSV table ``m,t,dt,eta_k_local,ind`` and a trailing summary comment."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["m", "t", "dt", "eta_k_local", "ind"])
        for m in range(breakdown.n_steps):
            w.writerow([m + 1, repr(float(breakdown.times[m])), repr(float(breakdown.dts[m])),
                        repr(float(breakdown.localized[m])), repr(float(breakdown.adhoc[m]))])
        fh.write(f"# eta_k={breakdown.eta_k!r} eta_h={breakdown.eta_h!r}\n")


def read_report(path):
    rows, summary = [], {}
    with open(path) as fh:
        for line in fh:
            if line.startswith("#"):
                for item in line[1:].split():
                    k, v = item.split("=")
                    summary[k] = float(v)
    with open(path) as fh:
        reader = csv.DictReader(line for line in fh if not line.startswith("#"))
        for r in reader:
            rows.append(r)
    t = np.array([float(r["t"]) for r in rows])
    dt = np.array([float(r["dt"]) for r in rows])
    loc = np.array([float(r["eta_k_local"]) for r in rows])
    ind = np.array([float(r["ind"]) for r in rows])
    return ErrorBreakdown(summary.get("eta_k", math.nan), summary.get("eta_h", math.nan),
                          loc, ind, np.ones_like(loc), t, dt)
