"""Frictionless contact at fixed pressures: primal-dual active set.

The stiffness on free dofs is factored once per mesh.  The contact forces
``r = |sigma| lambda`` only enter through the normal-jump operator ``J``, so
the face problem is posed on the small dense Schur complement
``S = J K^{-1} J^T``: with ``g0 = J K^{-1} R`` the jumps are ``g0 - S r``.
On the STICK set the jump is pinned to zero, on the OPEN set the multiplier
is pinned to zero, so complementarity holds by construction.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import nnls

from .mech_fe import ElasticParams, MechanicsError, P2Space

log = logging.getLogger(__name__)

STICK = 1
OPEN = 0


class ContactError(MechanicsError):
    """Active-set iteration failed to settle."""


@dataclass
class ActiveSet:
    """Face status: True where the face is in contact (STICK)."""

    stick: np.ndarray

    @classmethod
    def all_open(cls, n):
        return cls(np.zeros(n, dtype=bool))

    @classmethod
    def all_stick(cls, n):
        return cls(np.ones(n, dtype=bool))

    def copy(self):
        return ActiveSet(self.stick.copy())


@dataclass
class ContactResult:
    u: np.ndarray
    lam: np.ndarray
    jump: np.ndarray
    active: ActiveSet
    iterations: int
    used_fallback: bool = False


def _factor(A: sp.spmatrix):
    try:
        lu = spla.splu(A.tocsc(), permc_spec="MMD_AT_PLUS_A")
    except RuntimeError as exc:
        raise MechanicsError(f"singular elasticity matrix: {exc}") from exc
    if not np.all(np.isfinite(lu.U.diagonal())) or np.min(np.abs(lu.U.diagonal())) == 0:
        raise MechanicsError("singular elasticity matrix")
    return lu


def _solve_columns(lu, B: np.ndarray, chunk: int = 64) -> np.ndarray:
    out = np.empty_like(B)
    for s in range(0, B.shape[1], chunk):
        out[:, s : s + chunk] = lu.solve(np.ascontiguousarray(B[:, s : s + chunk]))
    return out


class ContactMechanics:
    """Elasticity with Biot loading and face-wise contact multipliers.

    Solves ``K u + J^T W lambda = F + b C^T p_m - J^T W p_f`` together with
    ``lambda >= 0``, ``J u <= 0``, ``lambda (J u) = 0``.
    """

    def __init__(self, space: P2Space, params: ElasticParams, body_force=None, max_iter: int = 50):
        self.space = space
        self.params = params
        self.max_iter = max_iter
        mesh = space.mesh
        space.check_korn()
        K = space.stiffness(params).tocsr()
        fr = space.free
        self.K = K
        self.K_ff = K[fr][:, fr]
        self.K_fd = K[fr][:, space.dirichlet_mask]
        self.lu = _factor(self.K_ff)
        self.C = space.divergence_matrix()
        self.J = space.jump_normal().tocsr()
        self.J_tau = space.jump_tangential().tocsr()
        self.W = mesh.face_lengths
        self.J_f = self.J[:, fr]
        self.J_d = self.J[:, space.dirichlet_mask]
        self.body = np.zeros(space.n_dofs) if body_force is None else space.body_force(body_force)
        nf = mesh.n_faces
        if nf:
            Z = _solve_columns(self.lu, self.J_f.T.toarray())
            S = self.J_f @ Z
            self.S = 0.5 * (S + S.T)
        else:
            self.S = np.zeros((0, 0))
        # Switching weight c = E / h_sigma compares multipliers and jumps in Pa.
        self.c = params.E / np.maximum(self.W, 1e-300)

    # ------------------------------------------------------------------
    def load(self, p_m, p_f, t: float = 0.0) -> np.ndarray:
        sp_ = self.space
        R = self.body + sp_.traction_load(t)
        if p_m is not None and self.params.b != 0.0:
            R = R + self.params.b * (self.C.T @ np.asarray(p_m, dtype=float))
        if p_f is not None and len(self.W):
            R = R - self.J.T @ (self.W * np.asarray(p_f, dtype=float))
        return R

    def solve(self, p_m=None, p_f=None, t: float = 0.0, warm_start: ActiveSet | None = None) -> ContactResult:
        sp_ = self.space
        fr, dm = sp_.free, sp_.dirichlet_mask
        g = sp_.dirichlet_values(t)
        R = self.load(p_m, p_f, t)
        rhs = R[fr] - self.K_fd @ g[dm]
        u0 = self.lu.solve(rhs)
        nf = len(self.W)
        g0 = self.J_f @ u0 + self.J_d @ g[dm]
        r = np.zeros(nf)
        used_fallback = False
        it = 0
        if nf:
            stick = (g0 > 0) if warm_start is None else warm_start.stick.copy()
            seen = set()
            for it in range(1, self.max_iter + 1):
                r = self._forces_for(stick, g0)
                jump = g0 - self.S @ r
                new = (r / self.W + self.c * jump) > 0
                if np.array_equal(new, stick):
                    break
                key = new.tobytes()
                if key in seen:
                    it = self.max_iter + 1
                    break
                seen.add(key)
                stick = new
            if it > self.max_iter or np.any(r < 0):
                log.warning("active set did not settle; using the convex QP fallback")
                r = self._nnls_forces(g0)
                stick = r > 0
                used_fallback = True
        else:
            stick = np.zeros(0, dtype=bool)
        u = g.copy()
        u[fr] = self.lu.solve(rhs - self.J_f.T @ r) if nf else u0
        jump = self.J @ u
        # STICK pins the jump: report the enforced value, not its roundoff
        jump[stick] = 0.0
        lam = r / self.W if nf else r
        return ContactResult(u, lam, jump, ActiveSet(stick), it, used_fallback)

    def _forces_for(self, stick, g0):
        r = np.zeros(len(g0))
        idx = np.flatnonzero(stick)
        if len(idx):
            r[idx] = sla.solve(self.S[np.ix_(idx, idx)], g0[idx], assume_a="pos")
        return r

    def _nnls_forces(self, g0):
        """``min 1/2 r^T S r - g0^T r`` over ``r >= 0`` as a least-squares problem."""
        L = sla.cholesky(self.S, lower=True)
        rhs = sla.solve_triangular(L, g0, lower=True)
        r, _ = nnls(L.T, rhs, maxiter=50 * len(g0))
        return r

    def cell_divergence(self, u: np.ndarray) -> np.ndarray:
        return (self.C @ u) / self.space.mesh.areas


@dataclass
class LocalConditions:
    multiplier_ok: np.ndarray
    nonpenetration_ok: np.ndarray
    complementarity_ok: np.ndarray
    max_negative_multiplier: float
    max_penetration: float
    max_product: float

    @property
    def ok(self) -> bool:
        return bool(self.multiplier_ok.all() and self.nonpenetration_ok.all() and self.complementarity_ok.all())


def check_local_conditions(jump, lam, jump_tol: float = 0.0, product_tol: float = 0.0) -> LocalConditions:
    """Face-wise check of ``lambda >= 0``, ``[u]_n <= tol`` and ``|lambda [u]_n| <= tol``."""
    jump = np.asarray(jump, dtype=float)
    lam = np.asarray(lam, dtype=float)
    prod = np.abs(lam * jump)
    return LocalConditions(
        lam >= 0.0,
        jump <= jump_tol,
        prod <= product_tol,
        float(max(0.0, -lam.min())) if lam.size else 0.0,
        float(max(0.0, jump.max())) if jump.size else 0.0,
        float(prod.max()) if prod.size else 0.0,
    )


def complementarity_tolerances(jump, params: ElasticParams, diameter: float):
    """Tolerances used for accepted steps: geometric and scaled product bounds."""
    jmax = float(np.max(np.abs(jump))) if np.size(jump) else 0.0
    return 1e-12 * diameter, 1e-10 * params.E * jmax


def solve_initial_mechanics(mech: ContactMechanics, p0_m, p0_f, d0, t: float = 0.0):
    """Contact solve at the initial pressures; returns the result and ``d_f = d0 - [u]_n``."""
    res = mech.solve(p0_m, p0_f, t)
    return res, np.asarray(d0) - res.jump


def infsup_estimate(space: P2Space) -> float:
    """Smallest generalized singular value of the multiplier-jump pairing.

    Displacements carry the energy norm ``||eps(v)||``; multipliers carry the
    weighted norm ``sum |sigma| h_sigma mu^2``.  Dense: small meshes only.
    """
    mesh = space.mesh
    if mesh.n_faces == 0:
        raise ValueError("no fracture faces: the multiplier space is empty")
    G = space.strain_gram().tocsr()
    fr = space.free
    lu = _factor(G[fr][:, fr])
    W = mesh.face_lengths
    B = (space.jump_normal()[:, fr].T @ sp.diags(W)).toarray()
    M = B.T @ _solve_columns(lu, B)
    M = 0.5 * (M + M.T)
    H = np.diag(W * W)
    ev = sla.eigh(M, H, eigvals_only=True)
    return float(np.sqrt(max(ev[0], 0.0)))
