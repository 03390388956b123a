"""Quadratic Lagrange elasticity on the domain cut along the fracture network.

Vertex degrees of freedom are duplicated per *sector*: the triangles around
a vertex are grouped by crossing non-fracture edges only, so a vertex on a
fracture interior gets two copies, an intersection gets one per sector and
an immersed tip stays single.  Edge midpoints on fracture faces get one copy
per side.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .meshkit import QUAD_BARY, QUAD_WEIGHTS, MixedDimMesh, triangle_quadrature


class MechanicsError(RuntimeError):
    """Raised when the elasticity problem is ill posed (e.g. a floating block)."""


@dataclass
class ElasticParams:
    E: float
    nu: float
    b: float = 0.0

    def __post_init__(self):
        if not self.E > 0:
            raise ValueError("Young modulus must be positive")
        if not -1.0 < self.nu < 0.5:
            raise ValueError("Poisson ratio must lie in (-1, 1/2)")
        if not 0.0 <= self.b <= 1.0:
            raise ValueError("Biot coefficient must lie in [0, 1]")

    @property
    def mu(self) -> float:
        return self.E / (2.0 * (1.0 + self.nu))

    @property
    def lam(self) -> float:
        return self.E * self.nu / ((1.0 + self.nu) * (1.0 - 2.0 * self.nu))

    def stress(self, strain: np.ndarray) -> np.ndarray:
        """Plane-strain stress for a (..., 2, 2) strain."""
        tr = np.trace(strain, axis1=-2, axis2=-1)
        return 2.0 * self.mu * strain + self.lam * tr[..., None, None] * np.eye(2)


@dataclass
class MechBC:
    """Boundary condition on one boundary tag.

    ``kind`` is ``"displacement"`` (components may be ``None`` for a free
    component), ``"traction"`` or ``"free"``.  ``ramp_time`` scales the value
    linearly from 0 at t = 0 to full at ``ramp_time`` and holds it after.
    """

    kind: str = "free"
    value: tuple = (0.0, 0.0)
    ramp_time: float | None = None

    @classmethod
    def clamped(cls):
        return cls("displacement", (0.0, 0.0))

    def factor(self, t: float) -> float:
        if self.ramp_time is None or self.ramp_time <= 0:
            return 1.0
        return min(max(t, 0.0) / self.ramp_time, 1.0)


def shape_values(bary: np.ndarray) -> np.ndarray:
    """P2 basis at barycentric points, shape ``(..., 6)``."""
    L = bary
    out = np.empty(L.shape[:-1] + (6,))
    for i in range(3):
        out[..., i] = L[..., i] * (2 * L[..., i] - 1)
        out[..., 3 + i] = 4 * L[..., (i + 1) % 3] * L[..., (i + 2) % 3]
    return out


def shape_gradients(bary: np.ndarray, grad_L: np.ndarray) -> np.ndarray:
    """Physical gradients ``(nt, nq, 6, 2)`` from barycentric gradients ``(nt, 3, 2)``."""
    nq = bary.shape[0]
    nt = grad_L.shape[0]
    out = np.empty((nt, nq, 6, 2))
    for i in range(3):
        j, k = (i + 1) % 3, (i + 2) % 3
        out[:, :, i] = (4 * bary[:, i] - 1)[None, :, None] * grad_L[:, None, i]
        out[:, :, 3 + i] = 4 * (
            bary[None, :, j, None] * grad_L[:, None, k] + bary[None, :, k, None] * grad_L[:, None, j]
        )
    return out


def barycentric_gradients(mesh: MixedDimMesh) -> np.ndarray:
    p = mesh.nodes[mesh.triangles]
    twoA = 2.0 * mesh.areas
    g = np.empty((mesh.n_cells, 3, 2))
    for i in range(3):
        a, b = p[:, (i + 1) % 3], p[:, (i + 2) % 3]
        g[:, i, 0] = (a[:, 1] - b[:, 1]) / twoA
        g[:, i, 1] = (b[:, 0] - a[:, 0]) / twoA
    return g


@dataclass(eq=False)
class P2Space:
    """Vector P2 space on the cut domain with boundary data per tag."""

    mesh: MixedDimMesh
    bcs: dict = field(default_factory=dict)

    def __post_init__(self):
        self._number_nodes()
        self._grad_L = barycentric_gradients(self.mesh)
        self._dN = shape_gradients(QUAD_BARY, self._grad_L)  # (nt, 6, 6, 2)
        self._build_dirichlet()

    # ------------------------------------------------------------------
    def _number_nodes(self):
        mesh = self.mesh
        nt, tris = mesh.n_cells, mesh.triangles
        frac = mesh.is_fracture_edge
        et = mesh.edge_tris
        inner = np.flatnonzero((et[:, 1] >= 0) & ~frac)
        rows, cols = [], []
        for e in inner:
            t1, t2 = et[e]
            for v in mesh.edges[e]:
                i1 = int(np.flatnonzero(tris[t1] == v)[0])
                i2 = int(np.flatnonzero(tris[t2] == v)[0])
                rows.append(3 * t1 + i1)
                cols.append(3 * t2 + i2)
        g = sp.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(3 * nt, 3 * nt))
        ncomp, labels = connected_components(g, directed=False)
        # renumber sectors by (vertex, first occurrence) for a stable order
        vert_of = tris.ravel()
        first_seen = np.full(ncomp, -1)
        for idx, lab in enumerate(labels):
            if first_seen[lab] < 0:
                first_seen[lab] = idx
        order = np.lexsort((first_seen, vert_of[first_seen]))
        relabel = np.empty(ncomp, dtype=np.int64)
        relabel[order] = np.arange(ncomp)
        vnode = relabel[labels].reshape(nt, 3)
        self.vertex_of_node = vert_of[first_seen][order]
        n_v = ncomp

        ne = mesh.n_edges
        nmid = np.where(frac, 2, 1)
        mfirst = n_v + np.concatenate([[0], np.cumsum(nmid)[:-1]])
        mnode = mfirst[mesh.tri_edges].copy()
        for k, e in enumerate(mesh.fracture_faces):
            t = mesh.minus_tri[k]
            j = int(np.flatnonzero(mesh.tri_edges[t] == e)[0])
            mnode[t, j] += 1
        self.n_vertex_nodes = n_v
        self.elem_nodes = np.column_stack([vnode, mnode])
        self.n_nodes = int(n_v + nmid.sum())
        xy = np.empty((self.n_nodes, 2))
        xy[:n_v] = mesh.nodes[self.vertex_of_node]
        xy[n_v:] = np.repeat(mesh.edge_midpoints, nmid, axis=0)
        self.node_xy = xy
        self.elem_dofs = np.stack([2 * self.elem_nodes, 2 * self.elem_nodes + 1], axis=-1).reshape(nt, 12)

    @property
    def n_dofs(self) -> int:
        return 2 * self.n_nodes

    def edge_nodes(self, tri: int, local_edge: int):
        """Nodes (start vertex, end vertex, midpoint) of a local edge."""
        en = self.elem_nodes[tri]
        j = local_edge
        return en[(j + 1) % 3], en[(j + 2) % 3], en[3 + j]

    def _edge_local(self, tri, edge):
        return int(np.flatnonzero(self.mesh.tri_edges[tri] == edge)[0])

    def _build_dirichlet(self):
        mesh = self.mesh
        unknown = set(self.bcs) - set(np.unique(mesh.boundary_tags[mesh.boundary_edges]))
        if unknown:
            raise ValueError(f"mechanics boundary tags not in mesh: {sorted(unknown)}")
        fixed = {}
        for tag in sorted(self.bcs):
            bc = self.bcs[tag]
            if bc.kind != "displacement":
                continue
            for e in mesh.edges_with_tag(tag):
                t = mesh.edge_tris[e, 0]
                for node in self.edge_nodes(t, self._edge_local(t, e)):
                    for c in range(2):
                        if bc.value[c] is not None:
                            fixed[2 * int(node) + c] = (tag, c)
        dofs = np.array(sorted(fixed), dtype=np.int64)
        self._dir_dofs = dofs
        self._dir_src = [fixed[d] for d in dofs]
        mask = np.zeros(self.n_dofs, dtype=bool)
        mask[dofs] = True
        self.dirichlet_mask = mask
        self.free = np.flatnonzero(~mask)

    def dirichlet_values(self, t: float = 0.0) -> np.ndarray:
        """Full-length vector with prescribed displacements at constrained dofs."""
        g = np.zeros(self.n_dofs)
        for d, (tag, c) in zip(self._dir_dofs, self._dir_src):
            bc = self.bcs[tag]
            g[d] = bc.factor(t) * float(bc.value[c])
        return g

    # ------------------------------------------------------------------
    # Assembly
    # ------------------------------------------------------------------
    def _scatter(self, Ke: np.ndarray) -> sp.csr_matrix:
        d = self.elem_dofs
        rows = np.repeat(d, 12, axis=1).ravel()
        cols = np.tile(d, (1, 12)).ravel()
        return sp.csr_matrix((Ke.ravel(), (rows, cols)), shape=(self.n_dofs, self.n_dofs))

    def strain_operator(self) -> np.ndarray:
        """Voigt strain matrices ``(nt, nq, 3, 12)`` (xx, yy, 2xy)."""
        dN = self._dN
        nt, nq = dN.shape[:2]
        B = np.zeros((nt, nq, 3, 12))
        B[..., 0, 0::2] = dN[..., 0]
        B[..., 1, 1::2] = dN[..., 1]
        B[..., 2, 0::2] = dN[..., 1]
        B[..., 2, 1::2] = dN[..., 0]
        return B

    def stiffness(self, params: ElasticParams) -> sp.csr_matrix:
        """``int sigma(u) : eps(v)`` with plane-strain Hooke law."""
        lam, mu = params.lam, params.mu
        D = np.array([[lam + 2 * mu, lam, 0.0], [lam, lam + 2 * mu, 0.0], [0.0, 0.0, mu]])
        return self._stiffness_D(D)

    def strain_gram(self) -> sp.csr_matrix:
        """``int eps(u) : eps(v)``, the Gram matrix of the energy norm."""
        D = np.diag([1.0, 1.0, 0.5])
        return self._stiffness_D(D)

    def _stiffness_D(self, D):
        B = self.strain_operator()
        w = self.mesh.areas[:, None] * QUAD_WEIGHTS[None, :]
        Ke = np.einsum("tq,tqai,ab,tqbj->tij", w, B, D, B)
        return self._scatter(Ke)

    def divergence_matrix(self) -> sp.csr_matrix:
        """Rows per cell: ``int_K div(phi)`` for every basis function."""
        dN = self._dN
        w = self.mesh.areas[:, None] * QUAD_WEIGHTS[None, :]
        div = np.empty(dN.shape[:2] + (12,))
        div[..., 0::2] = dN[..., 0]
        div[..., 1::2] = dN[..., 1]
        vals = np.einsum("tq,tqi->ti", w, div)
        nt = self.mesh.n_cells
        rows = np.repeat(np.arange(nt), 12)
        return sp.csr_matrix((vals.ravel(), (rows, self.elem_dofs.ravel())), shape=(nt, self.n_dofs))

    def cell_divergence(self, u: np.ndarray) -> np.ndarray:
        """Cell average of div u (exact: div of a P2 field is affine)."""
        return (self.divergence_matrix() @ u) / self.mesh.areas

    def body_force(self, f) -> np.ndarray:
        """Load ``int f . v``; ``f`` is a constant 2-vector or ``f(x, y) -> (fx, fy)``."""
        xq, wq = triangle_quadrature(self.mesh)
        if callable(f):
            fx, fy = f(xq[..., 0], xq[..., 1])
        else:
            fx = np.full(wq.shape, float(f[0]))
            fy = np.full(wq.shape, float(f[1]))
        N = shape_values(QUAD_BARY)  # (nq, 6)
        le = np.zeros((self.mesh.n_cells, 12))
        le[:, 0::2] = np.einsum("tq,qi->ti", wq * fx, N)
        le[:, 1::2] = np.einsum("tq,qi->ti", wq * fy, N)
        out = np.zeros(self.n_dofs)
        np.add.at(out, self.elem_dofs.ravel(), le.ravel())
        return out

    def traction_load(self, t: float = 0.0) -> np.ndarray:
        """Load from constant tractions on boundary tags (Simpson weights, exact)."""
        mesh = self.mesh
        out = np.zeros(self.n_dofs)
        for tag in sorted(self.bcs):
            bc = self.bcs[tag]
            if bc.kind != "traction":
                continue
            val = bc.factor(t) * np.asarray(bc.value, dtype=float)
            for e in mesh.edges_with_tag(tag):
                tri = mesh.edge_tris[e, 0]
                a, b, m = self.edge_nodes(tri, self._edge_local(tri, e))
                L = mesh.edge_lengths[e]
                for node, w in ((a, 1 / 6), (b, 1 / 6), (m, 2 / 3)):
                    out[2 * node : 2 * node + 2] += w * L * val
        return out

    # ------------------------------------------------------------------
    # Fracture traces
    # ------------------------------------------------------------------
    def face_trace_nodes(self):
        """Nodes ``(nf, 2 sides, 3)`` on each fracture face.

        Order along the face is (first edge node, midpoint, second edge node)
        on the + side (column 0) and - side (column 1).
        """
        mesh = self.mesh
        out = np.empty((mesh.n_faces, 2, 3), dtype=np.int64)
        for k, e in enumerate(mesh.fracture_faces):
            n0, n1 = mesh.edges[e]
            for s, tri in enumerate((mesh.plus_tri[k], mesh.minus_tri[k])):
                en = self.elem_nodes[tri]
                j = self._edge_local(tri, e)
                va = en[(j + 1) % 3]
                verts = self.vertex_of_node
                if verts[va] == n0:
                    out[k, s] = (va, en[3 + j], en[(j + 2) % 3])
                else:
                    out[k, s] = (en[(j + 2) % 3], en[3 + j], va)
        return out

    def _jump_matrix(self, direction: np.ndarray) -> sp.csr_matrix:
        nodes = self.face_trace_nodes()
        nf = self.mesh.n_faces
        weights = np.array([1 / 6, 2 / 3, 1 / 6])
        rows, cols, vals = [], [], []
        for s, sign in ((0, 1.0), (1, -1.0)):
            for q in range(3):
                for c in range(2):
                    rows.append(np.arange(nf))
                    cols.append(2 * nodes[:, s, q] + c)
                    vals.append(sign * weights[q] * direction[:, c])
        return sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(nf, self.n_dofs)
        )

    def jump_normal(self) -> sp.csr_matrix:
        """Face average of ``(u+ - u-) . n+`` (negative when the fracture opens)."""
        return self._jump_matrix(self.mesh.normals)

    def jump_tangential(self) -> sp.csr_matrix:
        return self._jump_matrix(self.mesh.face_tangents)

    def face_jump_nodal(self, u: np.ndarray) -> np.ndarray:
        """Nodal jump vectors ``(nf, 3, 2)`` at (first node, midpoint, second node)."""
        nodes = self.face_trace_nodes()
        U = u.reshape(-1, 2)
        return U[nodes[:, 0]] - U[nodes[:, 1]]

    def fracture_load(self, values: np.ndarray) -> np.ndarray:
        """``int_Gamma q [v]_n`` for a face-wise constant ``q``."""
        return self.jump_normal().T @ (np.asarray(values) * self.mesh.face_lengths)

    # ------------------------------------------------------------------
    # Field evaluation
    # ------------------------------------------------------------------
    def values_at_quadrature(self, u: np.ndarray) -> np.ndarray:
        ue = u[self.elem_dofs].reshape(-1, 6, 2)
        return np.einsum("qi,tic->tqc", shape_values(QUAD_BARY), ue)

    def strain_at_quadrature(self, u: np.ndarray) -> np.ndarray:
        """Strain tensors ``(nt, nq, 2, 2)``."""
        ue = u[self.elem_dofs].reshape(-1, 6, 2)
        G = np.einsum("tqik,tic->tqck", self._dN, ue)
        return 0.5 * (G + np.swapaxes(G, -1, -2))

    def energy_norm(self, u: np.ndarray) -> float:
        """``||eps(u)||_{L2}``."""
        eps = self.strain_at_quadrature(u)
        w = self.mesh.areas[:, None] * QUAD_WEIGHTS[None, :]
        return float(np.sqrt(np.sum(w * np.sum(eps**2, axis=(-1, -2)))))

    def interpolate(self, fn) -> np.ndarray:
        """Nodal interpolant of ``fn(x, y) -> (ux, uy)``."""
        ux, uy = fn(self.node_xy[:, 0], self.node_xy[:, 1])
        return np.column_stack([np.broadcast_to(ux, self.n_nodes), np.broadcast_to(uy, self.n_nodes)]).ravel()

    def nodal_vertex_displacement(self, u: np.ndarray) -> np.ndarray:
        """One displacement per mesh vertex (average over its copies), for output."""
        U = u.reshape(-1, 2)[: self.n_vertex_nodes]
        out = np.zeros((self.mesh.n_nodes, 2))
        cnt = np.zeros(self.mesh.n_nodes)
        np.add.at(out, self.vertex_of_node, U)
        np.add.at(cnt, self.vertex_of_node, 1.0)
        return out / np.maximum(cnt, 1.0)[:, None]

    def components(self) -> np.ndarray:
        """Label of the connected piece of the cut domain for each triangle."""
        mesh = self.mesh
        et = mesh.edge_tris
        inner = np.flatnonzero((et[:, 1] >= 0) & ~mesh.is_fracture_edge)
        g = sp.coo_matrix((np.ones(len(inner)), (et[inner, 0], et[inner, 1])), shape=(mesh.n_cells,) * 2)
        return connected_components(g, directed=False)[1]

    def check_korn(self) -> None:
        """Every piece of the cut domain needs both components constrained."""
        labels = self.components()
        constrained = self.dirichlet_mask[self.elem_dofs].reshape(-1, 6, 2).any(axis=1)
        for lab in np.unique(labels):
            sel = labels == lab
            if not constrained[sel].any(axis=0).all():
                raise MechanicsError(f"cut-domain piece {lab} is not held by Dirichlet data (Korn fails)")


def stress_of_identity_strain(params: ElasticParams) -> float:
    """Normal stress produced by the identity strain (plane strain)."""
    return float(params.stress(np.eye(2))[0, 0])
