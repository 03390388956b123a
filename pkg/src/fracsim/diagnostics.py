"""Error norms, rate fits, energy-estimate reports and analytic references."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from .meshkit import MixedDimMesh

# three-point Gauss rule on [0, 1]
GAUSS3_S = 0.5 + 0.5 * np.array([-math.sqrt(3 / 5), 0.0, math.sqrt(3 / 5)])
GAUSS3_W = np.array([5 / 18, 8 / 18, 5 / 18])


@dataclass
class ConvergenceRecord:
    quantity: str
    h_or_dt: list = field(default_factory=list)
    errors: list = field(default_factory=list)
    slope: float | None = None


# ----------------------------------------------------------------------------
# Rates
# ----------------------------------------------------------------------------


def rate_fit(h, errors, min_points: int = 3):
    """Least-squares slope of ``log(error)`` against ``log(h)`` plus pairwise rates."""
    h = np.asarray(h, dtype=float)
    e = np.asarray(errors, dtype=float)
    if len(h) != len(e):
        raise ValueError("h and errors differ in length")
    if len(h) < min_points:
        raise ValueError(f"need at least {min_points} points for a rate fit")
    if np.any(e <= 0):
        raise ValueError("zero error entry: solution coincides with the reference")
    x, y = np.log(h), np.log(e)
    slope = float(np.polyfit(x, y, 1)[0])
    pairwise = np.diff(y) / np.diff(x)
    return slope, pairwise


# ----------------------------------------------------------------------------
# Nested-mesh helpers
# ----------------------------------------------------------------------------


def ancestor_map(chain, kind: str) -> np.ndarray:
    """Index on ``chain[0]`` of every cell (``kind='cell'``) or face of ``chain[-1]``."""
    attr = "parent_triangle" if kind == "cell" else "parent_face"
    n = chain[-1].n_cells if kind == "cell" else chain[-1].n_faces
    idx = np.arange(n)
    for m in reversed(chain[1:]):
        parent = getattr(m, attr)
        if parent is None:
            raise ValueError("meshes are not nested")
        idx = np.asarray(parent)[idx]
    return idx


def cell_l2_error(coarse_vals, fine_vals, fine_mesh: MixedDimMesh, anc: np.ndarray) -> float:
    d = np.asarray(coarse_vals)[anc] - np.asarray(fine_vals)
    return float(np.sqrt(fine_mesh.areas @ d**2))


def face_l2_error(coarse_vals, fine_vals, fine_mesh: MixedDimMesh, anc: np.ndarray) -> float:
    d = np.asarray(coarse_vals)[anc] - np.asarray(fine_vals)
    return float(np.sqrt(fine_mesh.face_lengths @ d**2))


def _p2_basis(s):
    s = np.asarray(s)
    return np.stack([(1 - s) * (1 - 2 * s), 4 * s * (1 - s), s * (2 * s - 1)], axis=-1)


def gauss_points(mesh: MixedDimMesh) -> np.ndarray:
    """Physical 3-point Gauss nodes ``(nf, 3, 2)`` on every fracture face."""
    a = mesh.nodes[mesh.edges[mesh.fracture_faces, 0]]
    b = mesh.nodes[mesh.edges[mesh.fracture_faces, 1]]
    return a[:, None] + GAUSS3_S[None, :, None] * (b - a)[:, None]


def evaluate_face_p2(mesh: MixedDimMesh, nodal: np.ndarray, faces: np.ndarray, points: np.ndarray):
    """Evaluate face-wise quadratics given at (first node, midpoint, second node).

    ``nodal`` is ``(nf, 3)`` or ``(nf, 3, k)``; ``faces`` gives the face of every
    point in ``points`` (``(..., 2)``).
    """
    e = mesh.edges[mesh.fracture_faces[faces]]
    a, b = mesh.nodes[e[..., 0]], mesh.nodes[e[..., 1]]
    ab = b - a
    s = np.einsum("...k,...k->...", points - a, ab) / np.einsum("...k,...k->...", ab, ab)
    B = _p2_basis(s)
    vals = np.asarray(nodal)[faces]
    if vals.ndim == B.ndim:
        return np.einsum("...i,...i->...", B, vals)
    return np.einsum("...i,...ik->...k", B, vals)


def project_p2_fracturewise(mesh: MixedDimMesh, values: np.ndarray) -> np.ndarray:
    """L2 projection of face-wise constants onto continuous P2 along each fracture.

    Returns nodal values ``(nf, 3)`` at (first node, midpoint, second node).
    """
    values = np.asarray(values, dtype=float)
    nf = mesh.n_faces
    out = np.zeros((nf, 3))
    Mloc = np.array([[4.0, 2.0, -1.0], [2.0, 16.0, 2.0], [-1.0, 2.0, 4.0]]) / 30.0
    bloc = np.array([1 / 6, 2 / 3, 1 / 6])
    fedges = mesh.edges[mesh.fracture_faces]
    for fid in np.unique(mesh.fracture_ids):
        faces = np.flatnonzero(mesh.fracture_ids == fid)
        verts = np.unique(fedges[faces])
        vidx = {int(v): k for k, v in enumerate(verts)}
        nv = len(verts)
        n = nv + len(faces)
        M = np.zeros((n, n))
        rhs = np.zeros(n)
        dofs = []
        for j, f in enumerate(faces):
            d = [vidx[int(fedges[f, 0])], nv + j, vidx[int(fedges[f, 1])]]
            L = mesh.face_lengths[f]
            M[np.ix_(d, d)] += L * Mloc
            rhs[d] += L * values[f] * bloc
            dofs.append(d)
        sol = np.linalg.solve(M, rhs)
        for j, f in enumerate(faces):
            out[f] = sol[dofs[j]]
    return out


def fracture_line_error(coarse_mesh, coarse_nodal, fine_mesh, fine_nodal, face_anc) -> float:
    """L2(Gamma) distance of two face-wise quadratic fields on nested meshes.

    ``*_nodal`` are ``(nf, 3)`` values at (first node, midpoint, second node);
    integration uses three Gauss points per fine face.
    """
    xg = gauss_points(fine_mesh)
    nf = fine_mesh.n_faces
    fine_faces = np.repeat(np.arange(nf)[:, None], 3, axis=1)
    qf = evaluate_face_p2(fine_mesh, fine_nodal, fine_faces, xg)
    coarse_faces = np.repeat(np.asarray(face_anc)[:, None], 3, axis=1)
    qc = evaluate_face_p2(coarse_mesh, coarse_nodal, coarse_faces, xg)
    w = fine_mesh.face_lengths[:, None] * GAUSS3_W[None, :]
    return float(np.sqrt(np.sum(w * (qc - qf) ** 2)))


def jump_nodal_components(mesh: MixedDimMesh, jump_vectors: np.ndarray):
    """Normal and tangential nodal jumps from ``(nf, 3, 2)`` jump vectors."""
    jn = np.einsum("fqk,fk->fq", jump_vectors, mesh.normals)
    jt = np.einsum("fqk,fk->fq", jump_vectors, mesh.face_tangents)
    return jn, jt


# ----------------------------------------------------------------------------
# Energy estimate report
# ----------------------------------------------------------------------------

ENERGY_KEYS = (
    "grad_pm_L2L2",
    "df32_grad_pf_L2L2",
    "pressure_jumps_L2L2",
    "pm_over_sqrtM_LinfL2",
    "u_energy_Linf",
    "df_LinfL4",
    "lambda_dual_L2",
)


def energy_report(times, diagnostics, inv_M: float) -> dict:
    """Seven norms bounded by the energy estimate, piecewise constant in time.

    ``diagnostics[k]`` holds squared space norms of the state at ``times[k]``;
    time integrals use the step ending at each time level.
    """
    t = np.asarray(times, dtype=float)
    if len(diagnostics) == 0:
        return dict.fromkeys(ENERGY_KEYS, 0.0)
    dt = np.diff(t)
    D = diagnostics
    later = D[1:]

    def l2(attr):
        return float(np.sqrt(sum(d * getattr(s, attr) for d, s in zip(dt, later))))

    return {
        "grad_pm_L2L2": l2("grad_pm2"),
        "df32_grad_pf_L2L2": l2("grad_pf2"),
        "pressure_jumps_L2L2": l2("jump_p2"),
        "pm_over_sqrtM_LinfL2": float(math.sqrt(inv_M) * max(math.sqrt(s.pm_l2_2) for s in D)),
        "u_energy_Linf": float(max(s.u_energy for s in D)),
        "df_LinfL4": float(max(s.df_l4 for s in D)),
        "lambda_dual_L2": l2("lam_dual2"),
    }


def refinement_ratios(reports) -> list:
    """``max(r, 1/r)`` of every energy quantity between consecutive reports."""
    out = []
    for a, b in zip(reports[:-1], reports[1:]):
        row = {}
        for k in ENERGY_KEYS:
            if a[k] == 0 and b[k] == 0:
                row[k] = 1.0
            elif a[k] == 0 or b[k] == 0:
                row[k] = math.inf
            else:
                r = b[k] / a[k]
                row[k] = max(r, 1 / r)
        out.append(row)
    return out


# ----------------------------------------------------------------------------
# Coercivity
# ----------------------------------------------------------------------------


def poincare_constant(disc, d0) -> float:
    """Sup of ``||Pi v|| / |v|`` with ``|v|^2`` the squared-sum version of the flow norm.

    Computed as the largest generalized eigenvalue of the reconstruction mass
    against the quadratic form of the norm, on non-Dirichlet unknowns.
    """
    A = (disc.matrix_operator(np.eye(2)) + disc.fracture_operator(np.asarray(d0) ** 3)
         + disc.coupling_operator(1.0)).tocsr()
    Mm = (disc.cell_mass() + disc.face_mass()).tocsr()
    free = disc.layout.free
    A = A[free][:, free].tocsc()
    Mm = Mm[free][:, free].tocsc()
    lu = spla.splu(A)
    op = spla.LinearOperator(A.shape, matvec=lambda x: lu.solve(Mm @ x), dtype=float)
    v0 = np.ones(A.shape[0])
    val = spla.eigs(op, k=1, which="LM", v0=v0, return_eigenvectors=False)
    return float(np.sqrt(abs(val[0].real)))


def poincare_ratio_sampled(disc, d0, rng, n_samples: int = 20) -> float:
    """Max over random smooth-ish vectors of ``(||Pi^m v|| + ||Pi^f v||) / norm(v)``."""
    mesh = disc.mesh
    best = 0.0
    for _ in range(n_samples):
        kx, ky = rng.uniform(0.5, 3.0, size=2)
        ph = rng.uniform(0, 2 * np.pi)
        f = lambda x, y: np.sin(kx * x + ph) * np.cos(ky * y)  # noqa: E731
        v = disc.interpolate(f)
        v[disc.layout.dirichlet] = 0.0
        num = np.sqrt(disc.area @ v[disc.layout.cells] ** 2)
        if mesh.n_faces:
            num += np.sqrt(mesh.face_lengths @ v[disc.layout.faces] ** 2)
        den = disc.norm(v, d0)
        if den > 0:
            best = max(best, num / den)
    return best


# ----------------------------------------------------------------------------
# Terzaghi consolidation
# ----------------------------------------------------------------------------


@dataclass
class TerzaghiParams:
    E: float
    nu: float
    b: float
    M: float
    permeability: float
    viscosity: float
    load: float
    height: float

    @property
    def constrained_modulus(self) -> float:
        lam = self.E * self.nu / ((1 + self.nu) * (1 - 2 * self.nu))
        mu = self.E / (2 * (1 + self.nu))
        return lam + 2 * mu

    @property
    def initial_pressure(self) -> float:
        Kc = self.constrained_modulus
        return self.b * self.M * self.load / (Kc + self.b**2 * self.M)

    @property
    def consolidation_coefficient(self) -> float:
        inv_M = 0.0 if math.isinf(self.M) else 1.0 / self.M
        return (self.permeability / self.viscosity) / (inv_M + self.b**2 / self.constrained_modulus)


def terzaghi_reference(params: TerzaghiParams, depth, t, n_terms: int = 200) -> np.ndarray:
    """Pressure at depth below the drained top and time ``t`` (series solution)."""
    z = np.asarray(depth, dtype=float)
    H = params.height
    c = params.consolidation_coefficient
    p0 = params.initial_pressure
    out = np.zeros(np.broadcast(z, t).shape)
    for k in range(n_terms):
        n = 2 * k + 1
        out = out + 4 * p0 / (n * np.pi) * np.sin(n * np.pi * z / (2 * H)) * np.exp(
            -(n**2) * np.pi**2 * c * np.asarray(t, dtype=float) / (4 * H**2)
        )
    return out
