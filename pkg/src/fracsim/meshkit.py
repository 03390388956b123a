"""Mixed-dimensional triangular meshes with a conforming fracture network.

A :class:`MixedDimMesh` is a conforming triangulation of a polygonal domain
whose edge set contains the fracture network.  Every fracture edge is an
interior edge with a ``+`` and a ``-`` side; ``normal`` holds the unit
normal n+ which points from the ``+`` triangle into the ``-`` triangle.

Edges are numbered canonically: the sorted list of unique ``(min, max)``
node pairs.  The JSON ``boundary_tags`` keys refer to that numbering.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class MeshError(ValueError):
    """Raised on malformed or non-conforming mesh input."""


# Fracture node classes.
INTERIOR = "interior"
CORNER = "corner"
TIP = "tip"
BOUNDARY_TIP = "boundary-tip"
INTERSECTION = "intersection"


@dataclass(eq=False)
class MixedDimMesh:
    nodes: np.ndarray
    triangles: np.ndarray
    edges: np.ndarray
    tri_edges: np.ndarray
    edge_tris: np.ndarray
    fracture_faces: np.ndarray
    fracture_ids: np.ndarray
    normals: np.ndarray
    plus_tri: np.ndarray
    minus_tri: np.ndarray
    boundary_tags: np.ndarray
    node_kind: dict = field(default_factory=dict)
    parent_triangle: np.ndarray | None = None
    parent_face: np.ndarray | None = None

    # Geometry -----------------------------------------------------------
    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_cells(self) -> int:
        return len(self.triangles)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def n_faces(self) -> int:
        return len(self.fracture_faces)

    @property
    def areas(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @property
    def centroids(self) -> np.ndarray:
        return self.nodes[self.triangles].mean(axis=1)

    @property
    def edge_midpoints(self) -> np.ndarray:
        return self.nodes[self.edges].mean(axis=1)

    @property
    def edge_lengths(self) -> np.ndarray:
        d = self.nodes[self.edges[:, 1]] - self.nodes[self.edges[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])

    @property
    def face_lengths(self) -> np.ndarray:
        return self.edge_lengths[self.fracture_faces]

    @property
    def face_midpoints(self) -> np.ndarray:
        return self.edge_midpoints[self.fracture_faces]

    @property
    def face_tangents(self) -> np.ndarray:
        """Unit tangent ``tau`` obtained by rotating n+ by -90 degrees."""
        n = self.normals
        return np.column_stack([n[:, 1], -n[:, 0]])

    @property
    def diameter(self) -> float:
        lo, hi = self.nodes.min(axis=0), self.nodes.max(axis=0)
        return float(np.hypot(*(hi - lo)))

    @property
    def h(self) -> float:
        """Maximum edge length."""
        return float(self.edge_lengths.max())

    @property
    def is_fracture_edge(self) -> np.ndarray:
        mask = np.zeros(self.n_edges, dtype=bool)
        mask[self.fracture_faces] = True
        return mask

    @property
    def boundary_edges(self) -> np.ndarray:
        return np.flatnonzero(self.edge_tris[:, 1] < 0)

    @property
    def boundary_nodes(self) -> np.ndarray:
        return np.unique(self.edges[self.boundary_edges])

    def edges_with_tag(self, tag: str) -> np.ndarray:
        return np.flatnonzero(self.boundary_tags == tag)

    def fracture_lengths(self) -> dict[int, float]:
        lengths = {}
        for i in np.unique(self.fracture_ids):
            lengths[int(i)] = float(self.face_lengths[self.fracture_ids == i].sum())
        return lengths

    def fracture_node_degree(self) -> dict[int, int]:
        nodes, counts = np.unique(self.edges[self.fracture_faces], return_counts=True)
        return dict(zip(nodes.tolist(), counts.tolist()))

    def face_side_tris(self) -> np.ndarray:
        """``(nf, 2)`` array of the (+, -) triangles of each fracture face."""
        return np.column_stack([self.plus_tri, self.minus_tri])


def _canonical_edges(triangles: np.ndarray):
    local = np.array([[1, 2], [2, 0], [0, 1]])  # edge j is opposite vertex j
    pairs = np.sort(triangles[:, local].reshape(-1, 2), axis=1)
    edges, inverse = np.unique(pairs, axis=0, return_inverse=True)
    tri_edges = inverse.reshape(-1, 3)
    return edges, tri_edges


def _edge_triangles(tri_edges: np.ndarray, n_edges: int) -> np.ndarray:
    flat = tri_edges.ravel()
    counts = np.bincount(flat, minlength=n_edges)
    if counts.max(initial=0) > 2:
        bad = np.flatnonzero(counts > 2)[:5]
        raise MeshError(f"edges shared by more than two triangles: {bad.tolist()}")
    order = np.argsort(flat, kind="stable")
    tri_of = order // 3
    edge_tris = -np.ones((n_edges, 2), dtype=np.int64)
    start = np.concatenate([[0], np.cumsum(counts)[:-1]])
    edge_tris[:, 0] = tri_of[start]
    two = counts == 2
    edge_tris[two, 1] = tri_of[start[two] + 1]
    return edge_tris


def _bbox_tags(nodes, edges, boundary_edges, tol=1e-9) -> np.ndarray:
    tags = np.full(len(edges), "", dtype=object)
    lo, hi = nodes.min(axis=0), nodes.max(axis=0)
    scale = tol * max(1.0, float(np.max(hi - lo)))
    for e in boundary_edges:
        p = nodes[edges[e]]
        if np.all(np.abs(p[:, 0] - lo[0]) < scale):
            tags[e] = "left"
        elif np.all(np.abs(p[:, 0] - hi[0]) < scale):
            tags[e] = "right"
        elif np.all(np.abs(p[:, 1] - lo[1]) < scale):
            tags[e] = "bottom"
        elif np.all(np.abs(p[:, 1] - hi[1]) < scale):
            tags[e] = "top"
    return tags


def _orient_normals(nodes, edges, faces):
    """Per-face unit normal with a deterministic orientation.

    The normal is chosen with positive y component (positive x for vertical
    faces), which keeps the orientation continuous along straight or kinked
    fractures and stable under refinement.
    """
    d = nodes[edges[faces, 1]] - nodes[edges[faces, 0]]
    n = np.column_stack([-d[:, 1], d[:, 0]])
    n /= np.hypot(n[:, 0], n[:, 1])[:, None]
    flip = (n[:, 1] < -1e-12) | ((np.abs(n[:, 1]) <= 1e-12) & (n[:, 0] < 0))
    n[flip] *= -1.0
    return n


def build_mesh(
    nodes,
    triangles,
    fracture_edges=(),
    fracture_ids=(),
    boundary_tags=None,
    normals=None,
) -> MixedDimMesh:
    """Assemble connectivity, side bookkeeping and node classes.

    ``fracture_edges`` is a sequence of node pairs, ``boundary_tags`` a
    mapping from canonical edge index to tag (bounding-box tags are derived
    when omitted).  ``normals`` optionally prescribes n+ per fracture edge
    (used by refinement to keep orientation).
    """
    nodes = np.asarray(nodes, dtype=float).reshape(-1, 2)
    triangles = np.asarray(triangles, dtype=np.int64).reshape(-1, 3).copy()
    if len(triangles) == 0:
        raise MeshError("mesh has no triangles")
    if triangles.min() < 0 or triangles.max() >= len(nodes):
        raise MeshError("triangle references a node index out of range")
    if np.any(np.diff(np.sort(triangles, axis=1), axis=1) == 0):
        raise MeshError("triangle with repeated vertices")
    if len(np.unique(np.sort(triangles, axis=1), axis=0)) != len(triangles):
        raise MeshError("duplicate triangle")
    used = np.zeros(len(nodes), dtype=bool)
    used[triangles.ravel()] = True
    if not used.all():
        raise MeshError(f"dangling node(s): {np.flatnonzero(~used)[:5].tolist()}")

    p = nodes[triangles]
    d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
    area2 = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    scale = np.max(np.ptp(nodes, axis=0)) ** 2
    if np.any(np.abs(area2) <= 1e-14 * scale):
        raise MeshError("degenerate (zero-area) triangle")
    cw = area2 < 0
    triangles[cw] = triangles[cw][:, [0, 2, 1]]

    edges, tri_edges = _canonical_edges(triangles)
    edge_tris = _edge_triangles(tri_edges, len(edges))
    boundary = np.flatnonzero(edge_tris[:, 1] < 0)

    # Fracture faces.
    fe = np.asarray(fracture_edges, dtype=np.int64).reshape(-1, 2)
    fids = np.asarray(fracture_ids, dtype=np.int64).reshape(-1)
    if len(fids) != len(fe):
        raise MeshError("one fracture id is required per fracture edge")
    if len(fe):
        keys = np.sort(fe, axis=1)
        lookup = {(int(a), int(b)): i for i, (a, b) in enumerate(edges)}
        faces = []
        for a, b in keys:
            e = lookup.get((int(a), int(b)))
            if e is None:
                raise MeshError(f"fracture edge ({a}, {b}) is not an edge of the triangulation")
            faces.append(e)
        faces = np.asarray(faces, dtype=np.int64)
        if len(np.unique(faces)) != len(faces):
            raise MeshError("fracture edge listed twice")
        if np.any(edge_tris[faces, 1] < 0):
            raise MeshError("fracture edge lies on the domain boundary")
        order = np.argsort(faces, kind="stable")
        faces, fids = faces[order], fids[order]
    else:
        faces = np.zeros(0, dtype=np.int64)
        fids = np.zeros(0, dtype=np.int64)

    if normals is None:
        n = _orient_normals(nodes, edges, faces)
    else:
        n = np.asarray(normals, dtype=float).reshape(-1, 2)[order] if len(fe) else np.zeros((0, 2))
    # The + triangle lies opposite to n+.
    mid = nodes[edges[faces]].mean(axis=1)
    cen = nodes[triangles].mean(axis=1)
    t0, t1 = edge_tris[faces, 0], edge_tris[faces, 1]
    s0 = np.einsum("ij,ij->i", cen[t0] - mid, n)
    plus = np.where(s0 < 0, t0, t1)
    minus = np.where(s0 < 0, t1, t0)

    # Boundary tags.
    if boundary_tags is None:
        tags = _bbox_tags(nodes, edges, boundary)
    else:
        tags = np.full(len(edges), "", dtype=object)
        for k, tag in dict(boundary_tags).items():
            e = int(k)
            if e < 0 or e >= len(edges):
                raise MeshError(f"boundary tag refers to unknown edge {e}")
            if edge_tris[e, 1] >= 0:
                raise MeshError(f"boundary tag on interior edge {e} (non-conforming mesh?)")
            tags[e] = str(tag)
        untagged = [int(e) for e in boundary if tags[e] == ""]
        if untagged:
            raise MeshError(f"untagged boundary edges {untagged[:5]} (non-conforming mesh?)")

    mesh = MixedDimMesh(
        nodes=nodes,
        triangles=triangles,
        edges=edges,
        tri_edges=tri_edges,
        edge_tris=edge_tris,
        fracture_faces=faces,
        fracture_ids=fids,
        normals=n,
        plus_tri=plus,
        minus_tri=minus,
        boundary_tags=tags,
    )
    mesh.node_kind = classify_fracture_nodes(mesh)
    return mesh


def classify_fracture_nodes(mesh: MixedDimMesh) -> dict[int, str]:
    """Label every fracture node.

    Two fracture edges meeting at a node make it eliminable (``interior``,
    or ``corner`` when the edges are not collinear); three or more make an
    ``intersection``; a single edge makes a ``tip`` (``boundary-tip`` on
    the domain boundary).
    """
    kinds: dict[int, str] = {}
    if mesh.n_faces == 0:
        return kinds
    on_boundary = set(mesh.boundary_nodes.tolist())
    fedges = mesh.edges[mesh.fracture_faces]
    incident: dict[int, list[int]] = {}
    for k, (a, b) in enumerate(fedges):
        incident.setdefault(int(a), []).append(k)
        incident.setdefault(int(b), []).append(k)
    for node, faces in sorted(incident.items()):
        if len(faces) == 1:
            kinds[node] = BOUNDARY_TIP if node in on_boundary else TIP
        elif len(faces) == 2:
            other = [int(fedges[f][0] if fedges[f][1] == node else fedges[f][1]) for f in faces]
            u = mesh.nodes[other[0]] - mesh.nodes[node]
            v = mesh.nodes[other[1]] - mesh.nodes[node]
            cross = u[0] * v[1] - u[1] * v[0]
            straight = abs(cross) <= 1e-9 * np.hypot(*u) * np.hypot(*v)
            kinds[node] = INTERIOR if straight else CORNER
        else:
            kinds[node] = INTERSECTION
    return kinds


def load_mesh(path) -> MixedDimMesh:
    """Read a mesh in the JSON exchange format."""
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise MeshError(f"cannot read mesh file {path}: {exc}") from exc
    return mesh_from_dict(data)


def mesh_from_dict(data: dict) -> MixedDimMesh:
    try:
        nodes = data["nodes"]
        triangles = data["triangles"]
    except KeyError as exc:
        raise MeshError(f"mesh file lacks {exc}") from exc
    fr = data.get("fracture_edges", [])
    fe = [f["nodes"] for f in fr]
    fids = [f.get("fracture", 0) for f in fr]
    return build_mesh(nodes, triangles, fe, fids, data.get("boundary_tags"))


def mesh_to_dict(mesh: MixedDimMesh) -> dict:
    return {
        "nodes": mesh.nodes.tolist(),
        "triangles": mesh.triangles.tolist(),
        "fracture_edges": [
            {"nodes": mesh.edges[e].tolist(), "fracture": int(i)}
            for e, i in zip(mesh.fracture_faces, mesh.fracture_ids)
        ],
        "boundary_tags": {
            str(int(e)): str(mesh.boundary_tags[e]) for e in mesh.boundary_edges
        },
    }


def save_mesh(mesh: MixedDimMesh, path) -> None:
    Path(path).write_text(json.dumps(mesh_to_dict(mesh)))


def refine_uniform(mesh: MixedDimMesh) -> MixedDimMesh:
    """Split every triangle into four congruent children.

    Fracture ids, boundary tags and the orientation of n+ are inherited.
    The refined mesh records ``parent_triangle`` and ``parent_face``.
    """
    nn = mesh.n_nodes
    nodes = np.vstack([mesh.nodes, mesh.edge_midpoints])
    t = mesh.triangles
    m = nn + mesh.tri_edges  # midpoint opposite vertex j
    children = np.stack(
        [
            np.column_stack([t[:, 0], m[:, 2], m[:, 1]]),
            np.column_stack([m[:, 2], t[:, 1], m[:, 0]]),
            np.column_stack([m[:, 1], m[:, 0], t[:, 2]]),
            np.column_stack([m[:, 0], m[:, 1], m[:, 2]]),
        ],
        axis=1,
    ).reshape(-1, 3)
    parent_tri = np.repeat(np.arange(mesh.n_cells), 4)

    fe = mesh.edges[mesh.fracture_faces]
    fmid = nn + mesh.fracture_faces
    frac_edges = np.vstack(
        [np.column_stack([fe[:, 0], fmid]), np.column_stack([fmid, fe[:, 1]])]
    )
    frac_ids = np.concatenate([mesh.fracture_ids, mesh.fracture_ids])
    frac_normals = np.vstack([mesh.normals, mesh.normals])
    parent_face_of_edge = np.concatenate([np.arange(mesh.n_faces)] * 2)

    edges_new, _ = _canonical_edges(children)
    lookup = {(int(a), int(b)): i for i, (a, b) in enumerate(edges_new)}
    tags = {}
    for e in mesh.boundary_edges:
        a, b = mesh.edges[e]
        mid = nn + e
        for pair in ((a, mid), (mid, b)):
            key = tuple(sorted((int(pair[0]), int(pair[1]))))
            tags[lookup[key]] = mesh.boundary_tags[e]

    fine = build_mesh(nodes, children, frac_edges, frac_ids, tags, normals=frac_normals)
    fine.parent_triangle = parent_tri
    # Map the sorted fine faces back to the coarse face they subdivide.
    keys = np.sort(frac_edges, axis=1)
    face_of_key = {
        (int(a), int(b)): int(p) for (a, b), p in zip(keys, parent_face_of_edge)
    }
    fine.parent_face = np.array(
        [face_of_key[tuple(int(v) for v in fine.edges[e])] for e in fine.fracture_faces],
        dtype=np.int64,
    )
    # The children inherit the parent's fracture node classes on old nodes.
    return fine


def rectangle_mesh(
    nx: int,
    ny: int,
    lx: float = 1.0,
    ly: float = 1.0,
    fractures=(),
    origin=(0.0, 0.0),
) -> MixedDimMesh:
    """Structured triangulation of a rectangle.

    ``fractures`` is a sequence of polylines given as lists of grid
    vertices ``(i, j)``.  Consecutive vertices must be neighbours along a
    grid line or a cell diagonal; diagonals follow the split direction
    (lower-left to upper-right).  The polyline index is the fracture id.
    """
    xs = origin[0] + np.linspace(0.0, lx, nx + 1)
    ys = origin[1] + np.linspace(0.0, ly, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return j * (nx + 1) + i

    tris = []
    for j in range(ny):
        for i in range(nx):
            a, b, c, d = vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)
            tris.append((a, b, c))
            tris.append((a, c, d))
    fe, fids = [], []
    for k, poly in enumerate(fractures):
        for (i0, j0), (i1, j1) in zip(poly[:-1], poly[1:]):
            di, dj = i1 - i0, j1 - j0
            if max(abs(di), abs(dj)) != 1 or (abs(di) == 1 and abs(dj) == 1 and di != dj):
                raise MeshError(f"fracture step ({i0},{j0})->({i1},{j1}) is not a grid edge")
            fe.append((vid(i0, j0), vid(i1, j1)))
            fids.append(k)
    return build_mesh(nodes, np.array(tris), fe, fids)


# ----------------------------------------------------------------------------
# Contact-state aperture
# ----------------------------------------------------------------------------


@dataclass
class ApertureLaw:
    """Aperture at contact state, ``d0 = delta0 * sqrt(atan(a D) / atan(a l))``.

    ``lengths`` maps fracture id to the characteristic length and ``tips``
    maps fracture id to the coordinates of its immersed tips.
    """

    delta0: float
    a: float
    lengths: dict
    tips: dict

    @classmethod
    def from_mesh(cls, mesh: MixedDimMesh, delta0: float = 1e-4, a: float = 25.0):
        """Derive characteristic lengths and tip sets from the geometry.

        The length is half the fracture length for an immersed fracture, the
        full length if one end lies on the boundary, and the distance from
        the corner to the nearest tip when the fracture has a corner.
        """
        lengths, tips = {}, {}
        total = mesh.fracture_lengths()
        kinds = mesh.node_kind
        fedges = mesh.edges[mesh.fracture_faces]
        for i in sorted(total):
            nodes_i = np.unique(fedges[mesh.fracture_ids == i])
            tip_nodes = [n for n in nodes_i if kinds.get(int(n)) == TIP]
            # A node of degree one within this fracture also ends it.
            deg = dict(zip(*np.unique(fedges[mesh.fracture_ids == i], return_counts=True)))
            tip_nodes = sorted(
                set(tip_nodes)
                | {int(n) for n, c in deg.items() if c == 1 and kinds.get(int(n)) != BOUNDARY_TIP}
            )
            has_boundary_tip = any(kinds.get(int(n)) == BOUNDARY_TIP for n in nodes_i)
            corners = [n for n in nodes_i if kinds.get(int(n)) == CORNER]
            tip_xy = mesh.nodes[tip_nodes] if tip_nodes else np.zeros((0, 2))
            if corners and len(tip_xy):
                dist = np.hypot(*(tip_xy[:, None, :] - mesh.nodes[corners][None]).T)
                lengths[i] = float(dist.min())
            elif has_boundary_tip:
                lengths[i] = total[i]
            else:
                lengths[i] = 0.5 * total[i]
            tips[i] = tip_xy
        return cls(delta0=delta0, a=a, lengths=lengths, tips=tips)

    def evaluate(self, fracture_id: int, points) -> np.ndarray:
        ell = self.lengths[fracture_id]
        if ell <= 0:
            raise ValueError(f"characteristic length of fracture {fracture_id} must be positive")
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        tips = self.tips.get(fracture_id, np.zeros((0, 2)))
        if len(tips) == 0:
            dist = np.full(len(pts), np.inf)
        else:
            dist = np.min(np.hypot(*(pts[:, None, :] - tips[None]).transpose(2, 0, 1)), axis=1)
        return aperture_profile(dist, self.delta0, self.a, ell)


def aperture_profile(distance, delta0: float, a: float, ell: float) -> np.ndarray:
    """``delta0 * sqrt(atan(a * distance) / atan(a * ell))``."""
    if ell <= 0:
        raise ValueError("characteristic length must be positive")
    return delta0 * np.sqrt(np.arctan(a * np.asarray(distance, dtype=float)) / np.arctan(a * ell))


def eval_d0(law: ApertureLaw, mesh: MixedDimMesh) -> np.ndarray:
    """Face-wise contact aperture sampled at fracture-face midpoints."""
    d0 = np.empty(mesh.n_faces)
    mids = mesh.face_midpoints
    for i in np.unique(mesh.fracture_ids):
        sel = mesh.fracture_ids == i
        d0[sel] = law.evaluate(int(i), mids[sel])
    return d0


# ----------------------------------------------------------------------------
# Quadrature
# ----------------------------------------------------------------------------

# Six-point symmetric rule, exact for polynomials of degree 4 (barycentric
# coordinates, weights normalized to sum to one).
_QA, _QB = 0.445948490915965, 0.091576213509771
_WA, _WB = 0.223381589678011, 0.109951743655322
QUAD_BARY = np.array(
    [
        [1 - 2 * _QA, _QA, _QA],
        [_QA, 1 - 2 * _QA, _QA],
        [_QA, _QA, 1 - 2 * _QA],
        [1 - 2 * _QB, _QB, _QB],
        [_QB, 1 - 2 * _QB, _QB],
        [_QB, _QB, 1 - 2 * _QB],
    ]
)
QUAD_WEIGHTS = np.array([_WA, _WA, _WA, _WB, _WB, _WB])


def triangle_quadrature(mesh: MixedDimMesh):
    """Physical quadrature points ``(nt, 6, 2)`` and weights ``(nt, 6)``."""
    pts = mesh.nodes[mesh.triangles]
    xq = np.einsum("qi,tik->tqk", QUAD_BARY, pts)
    wq = mesh.areas[:, None] * QUAD_WEIGHTS[None, :]
    return xq, wq
