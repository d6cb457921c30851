"""Pointwise physics of the 2D Euler equations for a perfect gas.

Every function accepts either a single state (shape ``(4,)``) or a stack of
states (shape ``(N, 4)``) together with matching unit normals ``(2,)`` /
``(N, 2)``.  Conserved states are ordered ``(rho, rho*u, rho*v, rho*E)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

GAMMA = 1.4


class InvalidStateError(ValueError):
    """Raised for vacuum or negative-pressure states."""


def _stack(U):
    U = np.asarray(U, dtype=float)
    return U[None, :] if U.ndim == 1 else U, U.ndim == 1


def _normals(n, count):
    n = np.asarray(n, dtype=float)
    if n.ndim == 1:
        n = np.broadcast_to(n, (count, 2))
    return n


def pressure(U, gamma=GAMMA):
    U = np.asarray(U, dtype=float)
    rho = U[..., 0]
    kinetic = 0.5 * (U[..., 1] ** 2 + U[..., 2] ** 2) / rho
    return (gamma - 1.0) * (U[..., 3] - kinetic)


def sound_speed(U, gamma=GAMMA):
    U = np.asarray(U, dtype=float)
    return np.sqrt(gamma * pressure(U, gamma) / U[..., 0])


def check_states(U, gamma=GAMMA):
    U = np.asarray(U, dtype=float)
    if not np.all(np.isfinite(U)):
        raise InvalidStateError("non-finite conserved state")
    if np.any(U[..., 0] <= 0.0):
        raise InvalidStateError("non-positive density")
    if np.any(pressure(U, gamma) <= 0.0):
        raise InvalidStateError("non-positive pressure")


def conserved_to_primitive(U, gamma=GAMMA):
    """Return ``(rho, u, v, p)``."""
    U = np.asarray(U, dtype=float)
    rho = U[..., 0]
    W = np.empty_like(U)
    W[..., 0] = rho
    W[..., 1] = U[..., 1] / rho
    W[..., 2] = U[..., 2] / rho
    W[..., 3] = pressure(U, gamma)
    return W


def primitive_to_conserved(W, gamma=GAMMA):
    W = np.asarray(W, dtype=float)
    rho, u, v, p = W[..., 0], W[..., 1], W[..., 2], W[..., 3]
    U = np.empty_like(W)
    U[..., 0] = rho
    U[..., 1] = rho * u
    U[..., 2] = rho * v
    U[..., 3] = p / (gamma - 1.0) + 0.5 * rho * (u * u + v * v)
    return U


def flux(U, gamma=GAMMA, check=True):
    """Physical flux with shape ``(..., 4, 2)``; column k is f_k."""
    U = np.asarray(U, dtype=float)
    if check:
        check_states(U, gamma)
    rho = U[..., 0]
    u = U[..., 1] / rho
    v = U[..., 2] / rho
    p = pressure(U, gamma)
    F = np.empty(U.shape + (2,))
    F[..., 0, 0] = U[..., 1]
    F[..., 1, 0] = U[..., 1] * u + p
    F[..., 2, 0] = U[..., 2] * u
    F[..., 3, 0] = u * (U[..., 3] + p)
    F[..., 0, 1] = U[..., 2]
    F[..., 1, 1] = U[..., 1] * v
    F[..., 2, 1] = U[..., 2] * v + p
    F[..., 3, 1] = v * (U[..., 3] + p)
    return F


def normal_flux(U, n, gamma=GAMMA):
    U = np.asarray(U, dtype=float)
    n = np.asarray(n, dtype=float)
    rho = U[..., 0]
    vn = (U[..., 1] * n[..., 0] + U[..., 2] * n[..., 1]) / rho
    p = pressure(U, gamma)
    F = np.empty_like(U)
    F[..., 0] = rho * vn
    F[..., 1] = U[..., 1] * vn + p * n[..., 0]
    F[..., 2] = U[..., 2] * vn + p * n[..., 1]
    F[..., 3] = vn * (U[..., 3] + p)
    return F


def directional_jacobian(U, n, gamma=GAMMA):
    """Jacobian of ``f(U).n`` with respect to U, shape ``(..., 4, 4)``.

    ``n`` need not be a unit vector, so ``n=(1, 0)`` and ``n=(0, 1)`` give the
    Cartesian Jacobians ``Df_1`` and ``Df_2``.
    """
    U = np.asarray(U, dtype=float)
    n = np.broadcast_to(np.asarray(n, dtype=float), U.shape[:-1] + (2,))
    g1 = gamma - 1.0
    rho = U[..., 0]
    u = U[..., 1] / rho
    v = U[..., 2] / rho
    nx, ny = n[..., 0], n[..., 1]
    vn = u * nx + v * ny
    q2 = u * u + v * v
    p = pressure(U, gamma)
    H = (U[..., 3] + p) / rho
    phi = 0.5 * g1 * q2
    A = np.empty(U.shape + (4,))
    A[..., 0, 0] = 0.0
    A[..., 0, 1] = nx
    A[..., 0, 2] = ny
    A[..., 0, 3] = 0.0
    A[..., 1, 0] = phi * nx - u * vn
    A[..., 1, 1] = vn - (gamma - 2.0) * u * nx
    A[..., 1, 2] = u * ny - g1 * v * nx
    A[..., 1, 3] = g1 * nx
    A[..., 2, 0] = phi * ny - v * vn
    A[..., 2, 1] = v * nx - g1 * u * ny
    A[..., 2, 2] = vn - (gamma - 2.0) * v * ny
    A[..., 2, 3] = g1 * ny
    A[..., 3, 0] = vn * (phi - H)
    A[..., 3, 1] = H * nx - g1 * u * vn
    A[..., 3, 2] = H * ny - g1 * v * vn
    A[..., 3, 3] = gamma * vn
    return A


def _eigensystem(rho, u, v, H, c, nx, ny, gamma):
    """Analytic right/left eigenvectors in the order (vn-c, vn, vn, vn+c)."""
    g1 = gamma - 1.0
    vn = u * nx + v * ny
    vt = -u * ny + v * nx
    q2 = u * u + v * v
    shape = np.shape(rho) + (4, 4)
    R = np.empty(shape)
    R[..., 0, 0] = 1.0
    R[..., 1, 0] = u - c * nx
    R[..., 2, 0] = v - c * ny
    R[..., 3, 0] = H - c * vn
    R[..., 0, 1] = 1.0
    R[..., 1, 1] = u
    R[..., 2, 1] = v
    R[..., 3, 1] = 0.5 * q2
    R[..., 0, 2] = 0.0
    R[..., 1, 2] = -ny
    R[..., 2, 2] = nx
    R[..., 3, 2] = vt
    R[..., 0, 3] = 1.0
    R[..., 1, 3] = u + c * nx
    R[..., 2, 3] = v + c * ny
    R[..., 3, 3] = H + c * vn

    b1 = g1 / (c * c)
    b2 = 0.5 * b1 * q2
    L = np.empty(shape)
    L[..., 0, 0] = 0.5 * (b2 + vn / c)
    L[..., 0, 1] = -0.5 * (b1 * u + nx / c)
    L[..., 0, 2] = -0.5 * (b1 * v + ny / c)
    L[..., 0, 3] = 0.5 * b1
    L[..., 1, 0] = 1.0 - b2
    L[..., 1, 1] = b1 * u
    L[..., 1, 2] = b1 * v
    L[..., 1, 3] = -b1
    L[..., 2, 0] = -vt
    L[..., 2, 1] = -ny
    L[..., 2, 2] = nx
    L[..., 2, 3] = 0.0
    L[..., 3, 0] = 0.5 * (b2 - vn / c)
    L[..., 3, 1] = 0.5 * (nx / c - b1 * u)
    L[..., 3, 2] = 0.5 * (ny / c - b1 * v)
    L[..., 3, 3] = 0.5 * b1
    lam = np.stack([vn - c, vn, vn, vn + c], axis=-1)
    return R, L, lam


@dataclass
class CharDecomp:
    """Characteristic decomposition of the normal-flux Jacobian."""

    R: np.ndarray
    L: np.ndarray
    eigenvalues: np.ndarray
    P_plus: np.ndarray
    P_minus: np.ndarray
    P_zero: np.ndarray

    @property
    def jacobian(self):
        return self.R @ (self.eigenvalues[..., :, None] * self.L)


def _project(R, L, mask):
    return R @ (mask[..., :, None] * L)


def char_decomp(U, n, gamma=GAMMA) -> CharDecomp:
    """Eigen-split of ``f_n'(U)`` with projections ``R diag(chi) L``.

    ``chi+(lam) = 1`` for ``lam > 0`` only, so zero eigenvalues land in
    ``P_zero``.
    """
    U = np.asarray(U, dtype=float)
    check_states(U, gamma)
    n = np.broadcast_to(np.asarray(n, dtype=float), U.shape[:-1] + (2,))
    rho = U[..., 0]
    u = U[..., 1] / rho
    v = U[..., 2] / rho
    p = pressure(U, gamma)
    c = np.sqrt(gamma * p / rho)
    H = (U[..., 3] + p) / rho
    R, L, lam = _eigensystem(rho, u, v, H, c, n[..., 0], n[..., 1], gamma)
    pos = (lam > 0.0).astype(float)
    neg = (lam < 0.0).astype(float)
    zero = 1.0 - pos - neg
    return CharDecomp(R, L, lam, _project(R, L, pos), _project(R, L, neg),
                      _project(R, L, zero))


def roe_average(UL, UR, gamma=GAMMA):
    """Roe-averaged ``(u, v, H, c)``."""
    rl = UL[..., 0]
    rr = UR[..., 0]
    sl = np.sqrt(rl)
    sr = np.sqrt(rr)
    w = 1.0 / (sl + sr)
    u = (UL[..., 1] / sl + UR[..., 1] / sr) * w
    v = (UL[..., 2] / sl + UR[..., 2] / sr) * w
    HL = (UL[..., 3] + pressure(UL, gamma)) / rl
    HR = (UR[..., 3] + pressure(UR, gamma)) / rr
    H = (sl * HL + sr * HR) * w
    c2 = (gamma - 1.0) * (H - 0.5 * (u * u + v * v))
    c = np.sqrt(np.maximum(c2, 1e-300))
    return u, v, H, c, sl * sr


ENTROPY_FIX = 0.05


def roe_flux(UL, UR, n, gamma=GAMMA, entropy_fix=ENTROPY_FIX,
             return_fix_mask=False, return_dissipation=False):
    """Roe numerical flux with a Harten fix on the acoustic waves.

    The fix width is ``entropy_fix * (|v.n| + c)`` at the Roe state.  With
    ``return_fix_mask`` the boolean mask of faces where the fix was active is
    returned as well; ``return_dissipation`` adds the matrix ``|A_roe|``.
    """
    UL = np.asarray(UL, dtype=float)
    UR = np.asarray(UR, dtype=float)
    single = UL.ndim == 1
    UL2 = np.atleast_2d(UL)
    UR2 = np.atleast_2d(UR)
    n2 = _normals(n, UL2.shape[0])
    u, v, H, c, rho_hat = roe_average(UL2, UR2, gamma)
    R, L, lam = _eigensystem(rho_hat, u, v, H, c, n2[:, 0], n2[:, 1], gamma)
    alam = np.abs(lam)
    delta = entropy_fix * (np.abs(lam[:, 1]) + c)
    fixed = np.zeros(lam.shape, dtype=bool)
    for k in (0, 3):
        small = alam[:, k] < delta
        fixed[:, k] = small
        d = delta[small]
        alam[small, k] = (lam[small, k] ** 2 + d * d) / (2.0 * d)
    dU = UR2 - UL2
    amp = np.einsum("nij,nj->ni", L, dU) * alam
    diss = np.einsum("nij,nj->ni", R, amp)
    F = 0.5 * (normal_flux(UL2, n2, gamma) + normal_flux(UR2, n2, gamma)) - 0.5 * diss
    out = [F[0] if single else F]
    if return_fix_mask:
        m = fixed.any(axis=1)
        out.append(m[0] if single else m)
    if return_dissipation:
        absA = R @ (alam[:, :, None] * L)
        out.append(absA[0] if single else absA)
    return out[0] if len(out) == 1 else tuple(out)


def lax_friedrichs_flux(WL, WR, flux_fn, n, alpha):
    """Rusanov-type flux ``0.5*(f(WL)+f(WR)).n - 0.5*alpha*(WR-WL)``.

    ``flux_fn`` maps a stack of states ``(N, m)`` to physical fluxes
    ``(N, m, 2)``; ``alpha`` must bound the spectral radius of the normal
    Jacobian on both sides.
    """
    WL = np.asarray(WL, dtype=float)
    WR = np.asarray(WR, dtype=float)
    n = np.asarray(n, dtype=float)
    fL = flux_fn(WL)
    fR = flux_fn(WR)
    fn = 0.5 * np.einsum("...mk,...k->...m", fL + fR, n)
    return fn - 0.5 * np.asarray(alpha)[..., None] * (WR - WL)


# boundary tags shared with the mesh
INTERIOR, INFLOW, OUTFLOW, WALL = 0, 1, 2, 3


def mirror_state(U, n):
    """Reflect the normal momentum: the slip-wall ghost state."""
    U = np.asarray(U, dtype=float)
    n = np.asarray(n, dtype=float)
    mn = U[..., 1] * n[..., 0] + U[..., 2] * n[..., 1]
    G = U.copy()
    G[..., 1] -= 2.0 * mn * n[..., 0]
    G[..., 2] -= 2.0 * mn * n[..., 1]
    return G


def boundary_flux(U_in, n, bc, g_state=None, gamma=GAMMA, return_parts=False):
    """Characteristic boundary flux ``P+ f_n(U_in) + P- g``.

    ``bc`` is a tag (or array of tags).  For walls ``g`` is the normal flux of
    the mirror state; for inflow/outflow ``g`` is the normal flux of the
    prescribed exterior state ``g_state``.
    """
    U_in = np.asarray(U_in, dtype=float)
    single = U_in.ndim == 1
    U2 = np.atleast_2d(U_in)
    n2 = _normals(n, U2.shape[0])
    bc = np.broadcast_to(np.asarray(bc), (U2.shape[0],))
    ext = np.empty_like(U2)
    wall = bc == WALL
    ext[wall] = mirror_state(U2[wall], n2[wall])
    if np.any(~wall):
        if g_state is None:
            raise ValueError("inflow/outflow faces need a prescribed state")
        gs = np.broadcast_to(np.asarray(g_state, dtype=float), U2.shape)
        ext[~wall] = gs[~wall]
    cd = char_decomp(U2, n2, gamma)
    fin = normal_flux(U2, n2, gamma)
    g = normal_flux(ext, n2, gamma)
    F = (np.einsum("nij,nj->ni", cd.P_plus, fin)
         + np.einsum("nij,nj->ni", cd.P_minus, g))
    if return_parts:
        return (F[0] if single else F), cd, ext
    return F[0] if single else F
