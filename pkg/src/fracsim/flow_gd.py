"""Hybrid finite volume gradient discretization of the mixed-dimensional Darcy flow.

Unknowns (in this order in every flow vector):

* one pressure per cell,
* one pressure per matrix face slot (an ordinary edge has one slot, a
  fracture edge has two, one per side),
* one pressure per fracture face,
* one pressure per retained fracture node (intersections and fracture
  nodes with a Dirichlet condition).

Fracture nodes shared by exactly two fracture faces are condensed out by
flux continuity, and tip nodes carry no flux, so neither is stored.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .meshkit import INTERSECTION, MixedDimMesh, triangle_quadrature


@dataclass
class FlowDofLayout:
    n_cells: int
    n_slots: int
    n_faces: int
    n_nodes: int
    cell_slots: np.ndarray  # (nt, 3) slot of each local edge
    face_slots: np.ndarray  # (nf, 2) slot on the + and - side of each fracture face
    slot_edge: np.ndarray  # (ns,) edge carrying each slot
    kept_nodes: np.ndarray  # mesh node ids of stored fracture nodes
    dirichlet: np.ndarray  # (n,) bool mask of fixed unknowns

    @property
    def size(self) -> int:
        return self.n_cells + self.n_slots + self.n_faces + self.n_nodes

    @property
    def cells(self) -> slice:
        return slice(0, self.n_cells)

    @property
    def slots(self) -> slice:
        return slice(self.n_cells, self.n_cells + self.n_slots)

    @property
    def faces(self) -> slice:
        s = self.n_cells + self.n_slots
        return slice(s, s + self.n_faces)

    @property
    def nodes(self) -> slice:
        s = self.n_cells + self.n_slots + self.n_faces
        return slice(s, s + self.n_nodes)

    @property
    def free(self) -> np.ndarray:
        return np.flatnonzero(~self.dirichlet)

    @property
    def fixed(self) -> np.ndarray:
        return np.flatnonzero(self.dirichlet)

    def matrix_part(self, v: np.ndarray) -> np.ndarray:
        return v[: self.n_cells + self.n_slots]

    def fracture_part(self, v: np.ndarray) -> np.ndarray:
        return v[self.faces.start :]


def _as_field(value, points: np.ndarray) -> np.ndarray:
    if callable(value):
        return np.asarray(value(points[:, 0], points[:, 1]), dtype=float) * np.ones(len(points))
    return np.full(len(points), float(value))


class FlowDiscretization:
    """HFV operators for one mesh and one set of flow boundary conditions.

    Parameters
    ----------
    mesh : MixedDimMesh
    dirichlet : dict
        Boundary tag -> pressure value (number or ``f(x, y)``).  Boundary
        edges whose tag is absent are no-flux.
    stabilization : float
        HFV stabilization parameter (``sqrt(2)`` is the usual choice in 2D).
    """

    def __init__(self, mesh: MixedDimMesh, dirichlet=None, stabilization: float = np.sqrt(2.0)):
        self.mesh = mesh
        self.dirichlet_bc = dict(dirichlet or {})
        self.alpha = float(stabilization)
        self._build_layout()
        self._build_geometry()
        self._build_fracture_graph()

    # ------------------------------------------------------------------
    # Layout
    # ------------------------------------------------------------------
    def _build_layout(self):
        mesh = self.mesh
        ne = mesh.n_edges
        is_frac = mesh.is_fracture_edge
        nslots_edge = np.where(is_frac, 2, 1)
        first = np.concatenate([[0], np.cumsum(nslots_edge)[:-1]])
        ns = int(nslots_edge.sum())
        slot_edge = np.repeat(np.arange(ne), nslots_edge)

        cell_slots = first[mesh.tri_edges].copy()
        face_slots = np.column_stack([first[mesh.fracture_faces], first[mesh.fracture_faces] + 1])
        # The - triangle of a fracture face uses the second slot.
        for k, e in enumerate(mesh.fracture_faces):
            t = mesh.minus_tri[k]
            j = int(np.flatnonzero(mesh.tri_edges[t] == e)[0])
            cell_slots[t, j] = first[e] + 1

        kept = []
        on_boundary = set(mesh.boundary_nodes.tolist())
        self._node_bc = {}
        for node, kind in sorted(mesh.node_kind.items()):
            tag = self._dirichlet_tag_of_node(node) if node in on_boundary else None
            if tag is not None:
                kept.append(node)
                self._node_bc[node] = tag
            elif kind == INTERSECTION:
                kept.append(node)
        kept = np.asarray(kept, dtype=np.int64)

        nt, nf = mesh.n_cells, mesh.n_faces
        n = nt + ns + nf + len(kept)
        dirichlet = np.zeros(n, dtype=bool)
        for e in mesh.boundary_edges:
            if mesh.boundary_tags[e] in self.dirichlet_bc:
                dirichlet[nt + first[e]] = True
        for k, node in enumerate(kept):
            if int(node) in self._node_bc:
                dirichlet[nt + ns + nf + k] = True
        self.layout = FlowDofLayout(nt, ns, nf, len(kept), cell_slots, face_slots, slot_edge, kept, dirichlet)

    def _dirichlet_tag_of_node(self, node):
        mesh = self.mesh
        for e in mesh.boundary_edges:
            if node in mesh.edges[e] and mesh.boundary_tags[e] in self.dirichlet_bc:
                return mesh.boundary_tags[e]
        return None

    def _build_geometry(self):
        mesh = self.mesh
        pts = mesh.nodes[mesh.triangles]  # (nt, 3, 2)
        self.area = mesh.areas
        self.xK = pts.mean(axis=1)
        # edge j joins local vertices j+1, j+2
        a = pts[:, [1, 2, 0]]
        b = pts[:, [2, 0, 1]]
        d = b - a
        self.len = np.hypot(d[..., 0], d[..., 1])  # (nt, 3)
        self.xs = 0.5 * (a + b)
        n = np.stack([d[..., 1], -d[..., 0]], axis=-1) / self.len[..., None]  # outward for CCW
        self.nK = n
        self.dK = np.einsum("tjk,tjk->tj", self.xs - self.xK[:, None], n)
        if np.any(self.area <= 0) or np.any(self.dK <= 0):
            raise ValueError("degenerate triangle in flow discretization")
        self._cone_operators()

    def _cone_operators(self):
        """Stabilized cone gradients as linear maps of (v_K, v_s0, v_s1, v_s2)."""
        nt = self.mesh.n_cells
        # consistent gradient: G0 (nt, 2, 4)
        G0 = np.zeros((nt, 2, 4))
        G0[:, :, 1:] = np.transpose(self.len[..., None] * self.nK, (0, 2, 1)) / self.area[:, None, None]
        self.G0 = G0
        # R_s = v_s - v_K - G0 v . (x_s - x_K)
        Gc = np.zeros((nt, 3, 2, 4))
        for j in range(3):
            r = -np.einsum("tk,tkl->tl", self.xs[:, j] - self.xK, G0)
            r[:, 0] -= 1.0
            r[:, 1 + j] += 1.0
            Gc[:, j] = G0 + (self.alpha / self.dK[:, j])[:, None, None] * self.nK[:, j, :, None] * r[:, None, :]
        self.Gcone = Gc
        self.cone_area = 0.5 * self.len * self.dK  # (nt, 3)

    def _build_fracture_graph(self):
        """Node/face incidence used by the 1D fracture scheme."""
        mesh = self.mesh
        lay = self.layout
        fedges = mesh.edges[mesh.fracture_faces]
        kept_index = {int(n): k for k, n in enumerate(lay.kept_nodes)}
        incident: dict[int, list] = {}
        for k, (a, b) in enumerate(fedges):
            incident.setdefault(int(a), []).append((k, 0))
            incident.setdefault(int(b), []).append((k, 1))
        pairs, stored = [], []
        for node, lst in sorted(incident.items()):
            if node in kept_index:
                stored.extend((k, end, kept_index[node]) for k, end in lst)
            elif len(lst) == 2:
                pairs.append((lst[0][0], lst[0][1], lst[1][0], lst[1][1], node))
        self._pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 5)
        self._stored = np.asarray(stored, dtype=np.int64).reshape(-1, 3)
        # orientation of each endpoint relative to the face tangent
        tau = mesh.face_tangents
        d = mesh.nodes[fedges[:, 1]] - mesh.nodes[fedges[:, 0]]
        self._end_sign = np.sign(np.einsum("ij,ij->i", d, tau))  # +1 if node b is along tau

    # ------------------------------------------------------------------
    # Interpolation
    # ------------------------------------------------------------------
    def interpolate(self, p_matrix, p_fracture=None) -> np.ndarray:
        """Point values at cell centroids, edge midpoints, face midpoints and nodes."""
        mesh, lay = self.mesh, self.layout
        p_fracture = p_matrix if p_fracture is None else p_fracture
        v = np.empty(lay.size)
        v[lay.cells] = _as_field(p_matrix, mesh.centroids)
        v[lay.slots] = _as_field(p_matrix, mesh.edge_midpoints[lay.slot_edge])
        v[lay.faces] = _as_field(p_fracture, mesh.face_midpoints)
        v[lay.nodes] = _as_field(p_fracture, mesh.nodes[lay.kept_nodes])
        return v

    def dirichlet_values(self, t: float = 0.0) -> np.ndarray:
        """Full-length vector holding boundary pressures at fixed unknowns."""
        mesh, lay = self.mesh, self.layout
        g = np.zeros(lay.size)
        for tag, value in self.dirichlet_bc.items():
            edges = mesh.edges_with_tag(tag)
            if len(edges) == 0:
                continue
            slots = np.flatnonzero(np.isin(lay.slot_edge, edges))
            g[lay.n_cells + slots] = _as_field(value, mesh.edge_midpoints[lay.slot_edge[slots]])
        for k, node in enumerate(lay.kept_nodes):
            tag = self._node_bc.get(int(node))
            if tag is not None:
                g[lay.nodes.start + k] = _as_field(self.dirichlet_bc[tag], mesh.nodes[[node]])[0]
        return g

    def apply_dirichlet(self, v: np.ndarray, t: float = 0.0) -> np.ndarray:
        v = v.copy()
        fixed = self.layout.dirichlet
        v[fixed] = self.dirichlet_values(t)[fixed]
        return v

    # ------------------------------------------------------------------
    # Discrete gradients and jumps
    # ------------------------------------------------------------------
    def _local(self, v: np.ndarray) -> np.ndarray:
        lay = self.layout
        return np.column_stack([v[lay.cells], v[lay.n_cells + lay.cell_slots]])

    def cell_gradients(self, v: np.ndarray) -> np.ndarray:
        """Consistent cell gradient ``(1/|K|) sum |s| (v_s - v_K) n_Ks``."""
        return np.einsum("tkl,tl->tk", self.G0, self._local(v))

    def cone_gradients(self, v: np.ndarray) -> np.ndarray:
        """Stabilized piecewise-constant gradient on the cones, shape ``(nt, 3, 2)``."""
        return np.einsum("tjkl,tl->tjk", self.Gcone, self._local(v))

    def stabilization_residuals(self, v: np.ndarray) -> np.ndarray:
        loc = self._local(v)
        g = self.cell_gradients(v)
        return loc[:, 1:] - loc[:, :1] - np.einsum("tjk,tk->tj", self.xs - self.xK[:, None], g)

    def fracture_node_values(self, v: np.ndarray, conductivity=None) -> np.ndarray:
        """Endpoint values ``(nf, 2)`` of every fracture face.

        Condensed nodes take the flux-continuity average weighted by the half
        transmissibilities; tips take the face value.
        """
        lay = self.layout
        vf = v[lay.faces]
        t = self._half_trans(conductivity)
        ends = np.column_stack([vf, vf])
        if len(self._pairs):
            f1, e1, f2, e2 = self._pairs[:, 0], self._pairs[:, 1], self._pairs[:, 2], self._pairs[:, 3]
            val = (t[f1] * vf[f1] + t[f2] * vf[f2]) / (t[f1] + t[f2])
            ends[f1, e1] = val
            ends[f2, e2] = val
        if len(self._stored):
            f, e, k = self._stored.T
            ends[f, e] = v[lay.nodes][k]
        return ends

    def grad_fracture(self, v: np.ndarray, conductivity=None) -> np.ndarray:
        """Tangential gradient on each half of every fracture face, shape ``(nf, 2)``.

        Column 0 is the half touching the first edge node, column 1 the half
        touching the second; gradients are taken along the face tangent.
        """
        vf = v[self.layout.faces]
        ends = self.fracture_node_values(v, conductivity)
        half = 0.5 * self.mesh.face_lengths
        s = self._end_sign
        g0 = -s * (ends[:, 0] - vf) / half
        g1 = s * (ends[:, 1] - vf) / half
        return np.column_stack([g0, g1])

    def jump(self, v: np.ndarray, side: str) -> np.ndarray:
        """Matrix-fracture jump ``v_s(side) - v_f`` on every fracture face."""
        lay = self.layout
        col = {"+": 0, "-": 1}[side]
        return v[lay.n_cells + lay.face_slots[:, col]] - v[lay.faces]

    def norm(self, v: np.ndarray, d0: np.ndarray) -> float:
        """Discrete flow norm: matrix gradient + weighted fracture gradient + jumps."""
        mesh = self.mesh
        gm = self.cone_gradients(v)
        nm = np.sqrt(np.sum(self.cone_area[..., None] * gm**2))
        gf = self.grad_fracture(v, conductivity=d0**3)
        nf = np.sqrt(np.sum(0.5 * mesh.face_lengths[:, None] * d0[:, None] ** 3 * gf**2))
        nj = sum(np.sqrt(np.sum(mesh.face_lengths * self.jump(v, a) ** 2)) for a in "+-")
        return float(nm + nf + nj)

    def cell_values(self, v):
        return v[self.layout.cells]

    def face_values(self, v):
        return v[self.layout.faces]

    # ------------------------------------------------------------------
    # Assembly
    # ------------------------------------------------------------------
    def local_matrices(self, mobility) -> np.ndarray:
        """Cell matrices ``(nt, 4, 4)`` of ``sum |D| G^T Lambda G`` over cones."""
        lam = np.broadcast_to(np.asarray(mobility, dtype=float), (self.mesh.n_cells, 2, 2))
        return np.einsum("tj,tjka,tkl,tjlb->tab", self.cone_area, self.Gcone, lam, self.Gcone)

    def matrix_operator(self, mobility) -> sp.csr_matrix:
        lay = self.layout
        A = self.local_matrices(mobility)
        dofs = np.column_stack([np.arange(lay.n_cells), lay.n_cells + lay.cell_slots])
        rows = np.repeat(dofs, 4, axis=1).ravel()
        cols = np.tile(dofs, (1, 4)).ravel()
        return sp.csr_matrix((A.ravel(), (rows, cols)), shape=(lay.size, lay.size))

    def _half_trans(self, conductivity) -> np.ndarray:
        nf = self.mesh.n_faces
        c = np.ones(nf) if conductivity is None else np.broadcast_to(np.asarray(conductivity, float), (nf,))
        return 2.0 * c / self.mesh.face_lengths

    def fracture_operator(self, conductivity) -> sp.csr_matrix:
        """1D HFV form along the fracture network with face-wise conductivity."""
        lay = self.layout
        t = self._half_trans(conductivity)
        f0 = lay.faces.start
        if len(self._pairs):
            f1, f2 = self._pairs[:, 0], self._pairs[:, 2]
            w = t[f1] * t[f2] / (t[f1] + t[f2])
            i, j = f0 + f1, f0 + f2
            rows = np.concatenate([i, i, j, j])
            cols = np.concatenate([i, j, i, j])
            vals = np.concatenate([w, -w, -w, w])
        else:
            rows, cols, vals = np.zeros(0, int), np.zeros(0, int), np.zeros(0)
        if len(self._stored):
            f, _, k = self._stored.T
            w = t[f]
            i, j = f0 + f, lay.nodes.start + k
            rows = np.concatenate([rows, i, i, j, j])
            cols = np.concatenate([cols, i, j, i, j])
            vals = np.concatenate([vals, w, -w, -w, w])
        return sp.csr_matrix((vals, (rows, cols)), shape=(lay.size, lay.size))

    def coupling_operator(self, transmissibility) -> sp.csr_matrix:
        """Matrix-fracture exchange ``sum_a Lambda_f |s| [p]_a [phi]_a``."""
        lay = self.layout
        nf = self.mesh.n_faces
        w = np.broadcast_to(np.asarray(transmissibility, float), (nf,)) * self.mesh.face_lengths
        f = lay.faces.start + np.arange(nf)
        rows, cols, vals = [], [], []
        for col in (0, 1):
            s = lay.n_cells + lay.face_slots[:, col]
            rows += [s, s, f, f]
            cols += [s, f, s, f]
            vals += [w, -w, -w, w]
        return sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(lay.size, lay.size),
        )

    def cell_mass(self) -> sp.csr_matrix:
        lay = self.layout
        d = np.zeros(lay.size)
        d[lay.cells] = self.area
        return sp.diags(d).tocsr()

    def face_mass(self) -> sp.csr_matrix:
        lay = self.layout
        d = np.zeros(lay.size)
        d[lay.faces] = self.mesh.face_lengths
        return sp.diags(d).tocsr()

    def assemble(self, mobility, conductivity, transmissibility) -> sp.csr_matrix:
        """Stiffness of the steady mixed-dimensional Darcy form."""
        return (
            self.matrix_operator(mobility)
            + self.fracture_operator(conductivity)
            + self.coupling_operator(transmissibility)
        ).tocsr()

    def source_vector(self, h_matrix=0.0, h_fracture=0.0) -> np.ndarray:
        """Load ``int h_m Pi^m phi + int h_f Pi^f phi`` (six-point rule in cells)."""
        mesh, lay = self.mesh, self.layout
        b = np.zeros(lay.size)
        if callable(h_matrix):
            xq, wq = triangle_quadrature(mesh)
            b[lay.cells] = np.sum(wq * h_matrix(xq[..., 0], xq[..., 1]), axis=1)
        else:
            b[lay.cells] = float(h_matrix) * self.area
        b[lay.faces] = _as_field(h_fracture, mesh.face_midpoints) * mesh.face_lengths
        return b

    def fluxes(self, v: np.ndarray, mobility) -> np.ndarray:
        """Outward flux ``F_Ks`` from each cell through each local edge, ``(nt, 3)``."""
        A = self.local_matrices(mobility)
        return -np.einsum("tab,tb->ta", A, self._local(v))[:, 1:]

    def solve(self, A: sp.spmatrix, b: np.ndarray, fixed_values: np.ndarray) -> np.ndarray:
        """Solve ``A v = b`` on free unknowns with fixed values imposed."""
        lay = self.layout
        free, fixed = lay.free, lay.fixed
        A = A.tocsr()
        rhs = b[free] - A[free][:, fixed] @ fixed_values[fixed]
        v = fixed_values.copy()
        v[free] = spla.spsolve(A[free][:, free].tocsc(), rhs)
        return v


def solve_steady_flow(disc: FlowDiscretization, mobility, conductivity, transmissibility,
                      h_matrix=0.0, h_fracture=0.0) -> np.ndarray:
    A = disc.assemble(mobility, conductivity, transmissibility)
    b = disc.source_vector(h_matrix, h_fracture)
    return disc.solve(A, b, disc.dirichlet_values())


def interpolate_initial(disc: FlowDiscretization, p0_m, p0_f, phi0):
    """Initial flow vector (point interpolation) and cell porosities."""
    v = disc.interpolate(p0_m, p0_f)
    v = disc.apply_dirichlet(v)
    phi = _as_field(phi0, disc.mesh.centroids)
    return v, phi


def export_triplets(A: sp.spmatrix, path) -> None:
    """Write a sparse matrix as ``row col value`` lines."""
    C = A.tocoo()
    np.savetxt(path, np.column_stack([C.row, C.col, C.data]), fmt=["%d", "%d", "%.17g"])
