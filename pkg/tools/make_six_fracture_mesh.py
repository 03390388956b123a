"""Generate the shipped six-fracture mesh (2 m x 1 m, 2855 triangles).

Conforming Delaunay construction: fracture polylines are sampled at the
lattice spacing and lattice points inside the exclusion band around the
fractures are dropped, so every fracture sub-segment has an empty
diametral disk and therefore is a Delaunay edge.  The triangle count of a
Delaunay triangulation of a convex point set is ``2n - b - 2``; interior
points far from the fractures are dropped to hit the target count.

Usage: python tools/make_six_fracture_mesh.py [out.json]
"""

import sys
from pathlib import Path

import numpy as np
from scipy.spatial import Delaunay

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))
from fracsim.meshkit import TIP, build_mesh, save_mesh  # noqa: E402

LX, LY = 2.0, 1.0
TARGET = 2855

# Fracture 1 has a corner, fracture 5 reaches the left boundary.
FRACTURES = {
    1: [(0.25, 0.35), (0.55, 0.55), (0.85, 0.35)],
    2: [(1.00, 0.75), (1.45, 0.85)],
    3: [(1.10, 0.20), (1.50, 0.50)],
    4: [(1.62, 0.28), (1.80, 0.74)],
    5: [(0.00, 0.75), (0.40, 0.85)],
    6: [(0.58, 0.10), (0.95, 0.20)],
}


def sample_polyline(poly, h):
    pts = [np.asarray(poly[0], float)]
    for a, b in zip(poly[:-1], poly[1:]):
        a, b = np.asarray(a, float), np.asarray(b, float)
        n = max(1, int(round(np.hypot(*(b - a)) / h)))
        for k in range(1, n + 1):
            pts.append(a + (b - a) * k / n)
    return np.array(pts)


def seg_distance(p, a, b):
    ab = b - a
    t = np.clip(((p - a) @ ab) / (ab @ ab), 0.0, 1.0)
    q = a + t[:, None] * ab
    return np.hypot(*(p - q).T)


def lattice(ny):
    dy = LY / ny
    nx = int(round(LX / (2 * dy / np.sqrt(3))))
    dx = LX / nx
    pts = []
    for j in range(ny + 1):
        y = j * dy
        if j % 2 == 0 or j in (0, ny):
            xs = np.arange(nx + 1) * dx
        else:
            xs = np.concatenate([[0.0], (np.arange(nx) + 0.5) * dx, [LX]])
        pts.extend((x, y) for x in xs)
    return np.array(pts), dx


def generate(ny=28, target=TARGET, fractures=None):
    pts, h = lattice(ny)
    fractures = FRACTURES if fractures is None else fractures
    frac_pts = {i: sample_polyline(p, h) for i, p in fractures.items()}
    keep = np.ones(len(pts), dtype=bool)
    for fp in frac_pts.values():
        for a, b in zip(fp[:-1], fp[1:]):
            keep &= seg_distance(pts, a, b) > 0.6 * np.hypot(*(b - a))
    pts = pts[keep]

    # Drop interior points far from the fractures until 2n - b - 2 hits the target.
    all_frac = np.vstack(list(frac_pts.values()))
    on_bnd = lambda p: (  # noqa: E731
        (np.abs(p[:, 0]) < 1e-12) | (np.abs(p[:, 0] - LX) < 1e-12)
        | (np.abs(p[:, 1]) < 1e-12) | (np.abs(p[:, 1] - LY) < 1e-12)
    )
    frac_unique = np.unique(np.round(all_frac, 12), axis=0)
    points = np.vstack([pts, frac_unique])
    points = np.unique(np.round(points, 12), axis=0)
    n, b = len(points), int(on_bnd(points).sum())
    excess = 2 * n - b - 2 - target
    if excess < 0:
        raise SystemExit(f"lattice gives {2 * n - b - 2} triangles; adjust ny")
    if excess % 2:
        # One extra boundary point adds a single triangle.
        top = np.sort(points[np.abs(points[:, 1] - LY) < 1e-12][:, 0])
        k = len(top) // 2
        points = np.vstack([points, [0.5 * (top[k] + top[k + 1]), LY]])
        excess += 1
    dist = np.min(np.hypot(*(points[:, None] - all_frac[None]).transpose(2, 0, 1)), axis=1)
    far = np.flatnonzero((dist > 4 * h) & ~on_bnd(points))
    drop = []
    for k in far[np.argsort(-dist[far], kind="stable")]:
        if len(drop) == excess // 2:
            break
        if all(np.hypot(*(points[k] - points[d])) > 4 * h for d in drop):
            drop.append(k)
    if len(drop) < excess // 2:
        raise SystemExit("not enough well-separated interior points to drop")
    points = np.delete(points, drop, axis=0)

    tri = Delaunay(points)
    simplices = tri.simplices
    lookup = {tuple(np.round(p, 12)): k for k, p in enumerate(points)}
    fe, fid = [], []
    for i, fp in frac_pts.items():
        ids = [lookup[tuple(np.round(p, 12))] for p in fp]
        fe.extend(zip(ids[:-1], ids[1:]))
        fid.extend([i] * (len(ids) - 1))
    mesh = build_mesh(points, simplices, fe, fid)
    return mesh


def main():
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else (
        Path(__file__).resolve().parents[1] / "src/fracsim/data/six_fractures.json"
    )
    for ny in (29, 28, 30):
        try:
            mesh = generate(ny)
            break
        except SystemExit as exc:
            print(f"ny={ny}: {exc}")
    else:
        raise SystemExit("no lattice size reached the target")
    kinds = mesh.node_kind
    print(
        f"triangles={mesh.n_cells} nodes={mesh.n_nodes} faces={mesh.n_faces} "
        f"h={mesh.h:.4f} kinds={sorted(set(kinds.values()))} "
        f"tips={sum(k == TIP for k in kinds.values())}"
    )
    q = mesh.areas / mesh.edge_lengths[mesh.tri_edges].max(axis=1) ** 2
    print(f"min quality ratio area/h^2 = {q.min():.3f}")
    save_mesh(mesh, out)


if __name__ == "__main__":
    main()
