import numpy as np
import pytest
import scipy.sparse.linalg as spla

from fracsim.contact import ContactMechanics
from fracsim.mech_fe import ElasticParams, MechanicsError, MechBC, P2Space, stress_of_identity_strain
from fracsim.meshkit import rectangle_mesh
from fracsim.study import manufactured_elasticity_study

ALL_TAGS = ("left", "right", "top", "bottom")


def clamped_space(mesh):
    return P2Space(mesh, {t: MechBC.clamped() for t in ALL_TAGS})


@pytest.fixture(scope="module")
def through():
    """Unit square split by a horizontal fracture (no shared tip nodes)."""
    return rectangle_mesh(4, 4, fractures=[[(i, 2) for i in range(5)]])


@pytest.fixture(scope="module")
def cut():
    """Unit square with one horizontal immersed fracture."""
    return rectangle_mesh(8, 8, fractures=[[(2, 4), (3, 4), (4, 4), (5, 4), (6, 4)]])


def test_identity_strain_stress():
    s = stress_of_identity_strain(ElasticParams(4e9, 0.2))
    assert np.isclose(s, 4e9 / 1.2 * (1 + 0.4 / 0.6), rtol=1e-12)
    assert np.isclose(s, 5.5556e9, rtol=1e-4)


def test_invalid_params():
    for args in ((-1.0, 0.2), (1.0, 0.5), (1.0, 0.2, 1.5)):
        with pytest.raises(ValueError):
            ElasticParams(*args)


def test_dof_counts(cut):
    sp_ = P2Space(cut)
    m = cut
    # vertices on the fracture interior are doubled, tips are single
    assert sp_.n_vertex_nodes == m.n_nodes + (m.n_faces - 1)
    assert sp_.n_nodes == sp_.n_vertex_nodes + m.n_edges + m.n_faces


def test_rigid_motion_zero_energy(cut):
    sp_ = P2Space(cut)
    K = sp_.stiffness(ElasticParams(1.0, 0.3))
    u = sp_.interpolate(lambda x, y: (0.3 - 0.7 * y, -0.2 + 0.7 * x))
    assert sp_.energy_norm(u) < 1e-12
    assert np.abs(K @ u).max() < 1e-12


def test_quadratic_patch():
    mesh = rectangle_mesh(3, 3)
    p = ElasticParams(1.0, 0.25)
    lam, mu = p.lam, p.mu
    sp_ = clamped_space(mesh)
    exact = sp_.interpolate(lambda x, y: (x**2, x * y))
    K = sp_.stiffness(p).tocsr()
    F = sp_.body_force(np.array([-(3 * lam + 5 * mu), 0.0]))
    fr, dm = sp_.free, sp_.dirichlet_mask
    u = exact.copy()
    u[fr] = spla.spsolve(K[fr][:, fr].tocsc(), F[fr] - K[fr][:, dm] @ exact[dm])
    assert np.allclose(u, exact, atol=1e-12)


def test_manufactured_rates():
    energy, l2 = manufactured_elasticity_study(None, 3, min_points=3)
    assert energy.slope > 1.9
    assert l2.slope > 2.8


def test_biot_term():
    mesh = rectangle_mesh(4, 4)
    sp_ = P2Space(mesh)
    C = sp_.divergence_matrix()
    v = sp_.interpolate(lambda x, y: (x, 0.0 * x))
    assert np.isclose(0.8 * (C @ v).sum(), 0.8)
    assert np.allclose(0.0 * (C @ v), 0.0)
    # zero boundary trace: constant pressure does no work
    sp_c = clamped_space(mesh)
    rng = np.random.default_rng(0)
    w = np.zeros(sp_c.n_dofs)
    w[sp_c.free] = rng.normal(size=len(sp_c.free))
    assert abs((C @ w).sum()) < 1e-12


def test_jump_examples(through):
    sp_ = P2Space(through)
    nodes = sp_.face_trace_nodes()
    J = sp_.jump_normal()
    U = np.zeros((sp_.n_nodes, 2))
    assert np.allclose(J @ U.ravel(), 0.0)
    delta = 1e-3
    U[nodes[:, 0].ravel()] = (0.0, delta)
    assert np.allclose(J @ U.ravel(), delta * through.normals[:, 1])
    assert np.allclose(np.abs(J @ U.ravel()), delta)
    # continuous field: no jump
    u = sp_.interpolate(lambda x, y: (x * y, x - y**2))
    assert np.allclose(J @ u, 0.0)


def test_jump_is_simpson_average(through):
    sp_ = P2Space(through)
    nodes = sp_.face_trace_nodes()
    J = sp_.jump_normal()
    for f in range(through.n_faces):
        # s^2 along face f on the + side, in the normal direction; exact mean is 1/3
        U = np.zeros((sp_.n_nodes, 2))
        for q, s in enumerate((0.0, 0.5, 1.0)):
            U[nodes[f, 0, q]] = (s**2) * through.normals[f]
        assert np.isclose((J @ U.ravel())[f], 1.0 / 3.0)


def test_fracture_load(through):
    sp_ = P2Space(through)
    nf = through.n_faces
    assert np.allclose(sp_.fracture_load(np.zeros(nf)), 0.0)
    nodes = sp_.face_trace_nodes()
    delta, pf = 2e-3, 3e5
    U = np.zeros((sp_.n_nodes, 2))
    U[nodes[:, 0].ravel()] = delta * through.normals[0]
    load = sp_.fracture_load(np.full(nf, pf))
    assert np.isclose(load @ U.ravel(), pf * delta * through.face_lengths.sum())


def test_pressurized_crack_opens(cut):
    sp_ = clamped_space(cut)
    mech = ContactMechanics(sp_, ElasticParams(1e9, 0.25))
    R = mech.load(None, np.full(cut.n_faces, 1e6))
    u = np.zeros(sp_.n_dofs)
    u[sp_.free] = mech.lu.solve(R[sp_.free])
    jump = mech.J @ u
    assert np.all(jump < 0)


def test_stiffness_symmetric_positive(cut):
    sp_ = clamped_space(cut)
    K = sp_.stiffness(ElasticParams(1.0, 0.2)).toarray()
    assert np.allclose(K, K.T, atol=1e-12)
    fr = sp_.free
    assert np.linalg.eigvalsh(K[np.ix_(fr, fr)]).min() > 0


def test_floating_piece_rejected():
    mesh = rectangle_mesh(4, 4, fractures=[[(0, 2), (1, 2), (2, 2), (3, 2), (4, 2)]])
    sp_ = P2Space(mesh, {"bottom": MechBC.clamped()})
    with pytest.raises(MechanicsError):
        sp_.check_korn()


def test_unknown_tag_rejected():
    with pytest.raises(ValueError):
        P2Space(rectangle_mesh(2, 2), {"nowhere": MechBC.clamped()})


def test_traction_load_total_force():
    mesh = rectangle_mesh(3, 5, lx=2.0)
    sp_ = P2Space(mesh, {"top": MechBC("traction", (1.0, -2.0), ramp_time=10.0)})
    f = sp_.traction_load(5.0).reshape(-1, 2).sum(axis=0)
    assert np.allclose(f, 0.5 * 2.0 * np.array([1.0, -2.0]))
