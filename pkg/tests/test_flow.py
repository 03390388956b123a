import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fracsim.config import SimConfig
from fracsim.diagnostics import poincare_constant, poincare_ratio_sampled
from fracsim.flow_gd import FlowDiscretization, interpolate_initial, solve_steady_flow
from fracsim.meshkit import build_mesh, rectangle_mesh


@pytest.fixture(scope="module")
def fractured():
    m = rectangle_mesh(6, 6, fractures=[[(1, 3), (2, 3), (3, 3), (4, 3)], [(2, 3), (2, 4), (2, 5)]])
    return FlowDiscretization(m, {"left": 1.0, "right": 0.0})


def test_layout_partition(fractured):
    lay = fractured.layout
    m = fractured.mesh
    assert lay.n_slots == m.n_edges + m.n_faces
    assert lay.n_nodes == 1  # the intersection; no fracture touches a Dirichlet side
    assert lay.size == lay.n_cells + lay.n_slots + lay.n_faces + lay.n_nodes
    assert len(lay.free) + len(lay.fixed) == lay.size


@settings(max_examples=25, deadline=None)
@given(st.floats(-10, 10), st.floats(-10, 10), st.floats(-10, 10))
def test_affine_exactness(ax, ay, beta):
    disc = FlowDiscretization(rectangle_mesh(3, 3, fractures=[[(1, 1), (2, 1)]]))
    v = disc.interpolate(lambda x, y: ax * x + ay * y + beta)
    scale = 1 + abs(ax) + abs(ay) + abs(beta)
    assert np.allclose(disc.cell_gradients(v), [ax, ay], atol=1e-12 * scale)
    assert np.allclose(disc.cone_gradients(v), [ax, ay], atol=1e-11 * scale)
    assert np.allclose(disc.stabilization_residuals(v), 0.0, atol=1e-12 * scale)


def test_constant_has_zero_gradient(fractured):
    v = fractured.interpolate(3.0)
    assert np.allclose(fractured.cone_gradients(v), 0.0)
    assert np.allclose(fractured.grad_fracture(v), 0.0)


def test_reference_triangle_gradient():
    m = build_mesh([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]])
    disc = FlowDiscretization(m)
    v = np.zeros(disc.layout.size)
    v[disc.layout.n_cells + disc.layout.cell_slots[0, 0]] = 1.0
    # edge 0 joins (1, 0) and (0, 1)
    expected = np.sqrt(2.0) / 0.5 * np.array([1.0, 1.0]) / np.sqrt(2.0)
    assert np.allclose(disc.cell_gradients(v)[0], expected)


def test_three_face_fracture_gradient():
    m = rectangle_mesh(3, 3, fractures=[[(0, 1), (1, 1), (2, 1), (3, 1)]])
    disc = FlowDiscretization(m, {"left": 1.0, "right": 0.0})
    lay = disc.layout
    A = disc.fracture_operator(1.0).tocsr()
    g = disc.dirichlet_values()
    F = np.arange(lay.faces.start, lay.faces.stop)
    N = np.arange(lay.nodes.start, lay.nodes.stop)
    v = g.copy()
    v[F] = np.linalg.solve(A[F][:, F].toarray(), -A[F][:, N] @ g[N])
    grad = disc.grad_fracture(v)
    # derivative of 1 - x along the face tangent
    expected = -m.face_tangents[:, 0]
    assert np.allclose(grad, expected[:, None])
    assert np.allclose(np.abs(grad), 1.0)


def test_linear_profile_along_fracture():
    m = rectangle_mesh(6, 6, fractures=[[(1, 3), (2, 3), (3, 3), (4, 3), (5, 3)]])
    disc = FlowDiscretization(m)
    v = disc.interpolate(0.0, lambda x, y: 2.0 * x)
    g = disc.grad_fracture(v)
    # halves touching a tip carry the face value (no flux); the others are exact
    inner = np.abs(g) > 0
    assert inner.sum() == 2 * m.n_faces - 2
    assert np.allclose(np.abs(g[inner]), 2.0)


def test_jump_examples(fractured):
    lay = fractured.layout
    v = np.zeros(lay.size)
    v[lay.n_cells + lay.face_slots[:, 0]] = 2e5
    v[lay.faces] = 1e5
    assert np.allclose(fractured.jump(v, "+"), 1e5)
    w = np.zeros(lay.size)
    w[lay.n_cells + lay.face_slots[:, 0]] = 7.0
    w[lay.n_cells + lay.face_slots[:, 1]] = -7.0
    assert np.allclose(fractured.jump(w, "+"), -fractured.jump(w, "-"))
    same = fractured.interpolate(4.0)
    assert np.allclose(fractured.jump(same, "+"), 0.0)


def test_norm_homogeneity_and_zero(fractured):
    rng = np.random.default_rng(0)
    d0 = np.full(fractured.mesh.n_faces, 1e-2)
    v = rng.normal(size=fractured.layout.size)
    assert fractured.norm(np.zeros_like(v), d0) == 0.0
    assert np.isclose(fractured.norm(-3 * v, d0), 3 * fractured.norm(v, d0))


def test_norm_against_dense_forms(fractured):
    rng = np.random.default_rng(1)
    m = fractured.mesh
    d0 = rng.uniform(0.5, 1.5, m.n_faces)
    v = rng.normal(size=fractured.layout.size)
    Am = fractured.matrix_operator(np.eye(2)).toarray()
    Af = fractured.fracture_operator(d0**3).toarray()
    nm = np.sqrt(v @ Am @ v)
    nf = np.sqrt(v @ Af @ v)
    nj = sum(np.sqrt(np.sum(m.face_lengths * fractured.jump(v, a) ** 2)) for a in "+-")
    assert np.isclose(fractured.norm(v, d0), nm + nf + nj, rtol=1e-12)
    Ac = fractured.coupling_operator(1.0).toarray()
    jumps2 = sum(np.sum(m.face_lengths * fractured.jump(v, a) ** 2) for a in "+-")
    assert np.isclose(v @ Ac @ v, jumps2)


def test_operators_symmetric_and_row_sums(fractured):
    for A in (
        fractured.matrix_operator(np.eye(2)),
        fractured.fracture_operator(0.3),
        fractured.coupling_operator(2.0),
    ):
        A = A.toarray()
        assert np.allclose(A, A.T)
        assert np.allclose(A.sum(axis=1), 0.0, atol=1e-10 * np.abs(A).max())
    w = np.linalg.eigvalsh(fractured.matrix_operator(np.eye(2)).toarray())
    assert w.min() > -1e-10 * w.max()


def test_default_parameter_arithmetic():
    cfg = SimConfig()
    assert np.isclose(cfg.Lambda_f, 1e-4 / 6e-3, rtol=1e-12)
    assert np.isclose(cfg.Lambda_f, 1.667e-2, rtol=1e-3)
    c = cfg.conductivity(1e-4)
    assert np.isclose(c, 8.333e-11, rtol=1e-4)
    assert np.isclose(c * 1e3, 8.333e-8, rtol=1e-4)


def test_steady_flow_conservation(fractured):
    m = fractured.mesh
    K = np.array([[2.0, 0.3], [0.3, 1.0]])
    v = solve_steady_flow(fractured, K, 0.05, 3.0, h_matrix=1.0, h_fracture=0.5)
    F = fractured.fluxes(v, K)
    # cell balance
    assert np.allclose(F.sum(axis=1), m.areas, atol=1e-10)
    # flux continuity on interior matrix edges
    et = m.edge_tris
    inner = np.flatnonzero((et[:, 1] >= 0) & ~m.is_fracture_edge)
    flux_of = np.zeros((m.n_edges, 2))
    for t in range(m.n_cells):
        for j in range(3):
            e = m.tri_edges[t, j]
            flux_of[e, int(et[e, 0] != t)] = F[t, j]
    assert np.allclose(flux_of[inner].sum(axis=1), 0.0, atol=1e-10)
    # global balance: sources = outflow through Dirichlet sides
    out = 0.0
    for e in m.boundary_edges:
        if m.boundary_tags[e] in ("left", "right"):
            out += flux_of[e, 0]
    total = m.areas.sum() + 0.5 * m.face_lengths.sum()
    assert np.isclose(out, total, rtol=1e-9)


def test_initial_interpolation(fractured):
    v, phi = interpolate_initial(fractured, 1e5, 1e5, 0.4)
    free = fractured.layout.free
    assert np.all(v[free] == 1e5)
    assert np.all(phi == 0.4)
    w = fractured.interpolate(lambda x, y: 2 * x - y)
    m = fractured.mesh
    assert np.allclose(w[fractured.layout.cells], 2 * m.centroids[:, 0] - m.centroids[:, 1])


def test_poincare_constant():
    disc = FlowDiscretization(rectangle_mesh(6, 6, fractures=[[(1, 3), (2, 3), (3, 3)]]),
                              {"left": 0.0, "right": 0.0})
    d0 = np.full(disc.mesh.n_faces, 0.5)
    C = poincare_constant(disc, d0)
    assert 0 < C < 10
    sampled = poincare_ratio_sampled(disc, d0, np.random.default_rng(3), 10)
    assert sampled <= np.sqrt(2.0) * C * (1 + 1e-9)
