import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fracsim import data_path
from fracsim.config import load_config
from fracsim.contact import (
    ActiveSet,
    ContactMechanics,
    check_local_conditions,
    complementarity_tolerances,
    infsup_estimate,
    solve_initial_mechanics,
)
from fracsim.coupling import Simulation
from fracsim.mech_fe import ElasticParams, MechBC, P2Space
from fracsim.meshkit import load_mesh, rectangle_mesh, refine_uniform

PARAMS = ElasticParams(4e9, 0.2, 0.8)
FRAC = [[(2, 4), (3, 4), (4, 4), (5, 4), (6, 4)]]


def loaded(top, mesh=None, params=PARAMS):
    mesh = mesh or rectangle_mesh(8, 8, fractures=FRAC)
    bcs = {"bottom": MechBC.clamped(), "top": MechBC("displacement", top)}
    return ContactMechanics(P2Space(mesh, bcs), params)


def assert_signorini(res, mech):
    jtol, ptol = complementarity_tolerances(res.jump, mech.params, mech.space.mesh.diameter)
    assert check_local_conditions(res.jump, res.lam, jtol, ptol).ok


def test_tension_opens_everything():
    mech = loaded((0.0, 1e-4))
    res = mech.solve()
    assert not res.active.stick.any()
    assert np.all(res.lam == 0.0)
    assert np.all(res.jump < 0)
    assert_signorini(res, mech)


def test_compression_sticks_everything():
    mech = loaded((0.0, -1e-4))
    res = mech.solve()
    assert res.active.stick.all()
    assert np.all(res.lam > 0)
    assert np.all(res.jump == 0.0)
    d0 = np.full(len(res.jump), 1e-4)
    assert np.array_equal(d0 - res.jump, d0)
    assert_signorini(res, mech)


@pytest.mark.parametrize("top", [(0.0, -1e-4), (0.0, 1e-4), (2e-4, -1e-5), (-3e-4, 0.0)])
def test_single_face_enumeration(top):
    mesh = rectangle_mesh(4, 4, fractures=[[(1, 2), (2, 2)]])
    mech = loaded(top, mesh)
    res = mech.solve()
    # oracle: try both statuses on the one-face reduced model, keep the admissible one
    sp_ = mech.space
    g = sp_.dirichlet_values()
    fr, dm = sp_.free, sp_.dirichlet_mask
    u0 = mech.lu.solve(mech.load(None, None)[fr] - mech.K_fd @ g[dm])
    jump_open = (mech.J_f @ u0 + mech.J_d @ g[dm])[0]
    force_stick = jump_open / mech.S[0, 0]
    admissible = []
    if jump_open <= 0:
        admissible.append(("open", 0.0))
    if force_stick >= 0:
        admissible.append(("stick", force_stick / mech.W[0]))
    assert len(admissible) == 1
    status, lam = admissible[0]
    assert res.active.stick[0] == (status == "stick")
    assert np.isclose(res.lam[0], lam, rtol=1e-10, atol=0.0)


def test_local_condition_examples():
    assert check_local_conditions([-1e-4], [0.0]).ok
    assert check_local_conditions([0.0], [5e6]).ok
    rep = check_local_conditions([-1e-4], [5e6], 1e-12, 1e-10 * 4e9 * 1e-4)
    assert not rep.ok
    assert not rep.complementarity_ok[0]
    assert not check_local_conditions([1e-6], [0.0]).ok
    assert not check_local_conditions([0.0], [-1.0]).ok


@settings(max_examples=15, deadline=None)
@given(st.floats(-3e-4, 3e-4), st.floats(-3e-4, 3e-4), st.integers(0, 2**5 - 1))
def test_warm_start_independence(ux, uy, bits):
    mech = _shared()
    mech.space.bcs["top"] = MechBC("displacement", (ux, uy))
    nf = len(mech.W)
    warm = ActiveSet(np.array([(bits >> (k % 5)) & 1 for k in range(nf)], dtype=bool))
    a = mech.solve()
    b = mech.solve(warm_start=warm)
    assert np.array_equal(a.active.stick, b.active.stick)
    assert np.allclose(a.lam, b.lam, rtol=1e-8, atol=1e-6)
    assert np.allclose(a.u, b.u, rtol=1e-8, atol=1e-14)
    assert_signorini(a, mech)


_CACHE = {}


def _shared():
    if "m" not in _CACHE:
        _CACHE["m"] = loaded((0.0, 0.0))
    return _CACHE["m"]


def test_biot_identity_b_one():
    """With b = 1 a uniform pressure in matrix and fracture only loads the boundary."""
    mesh = rectangle_mesh(6, 6, fractures=[[(1, 3), (2, 3), (3, 3), (4, 3)]])
    sp_ = P2Space(mesh, {t: MechBC.clamped() for t in ("left", "right", "top", "bottom")})
    mech = ContactMechanics(sp_, ElasticParams(1e9, 0.25, 1.0))
    R = mech.load(np.full(mesh.n_cells, 7.0), np.full(mesh.n_faces, 7.0))
    assert np.abs(R[sp_.free]).max() < 1e-12


def test_uniform_pressure_b_zero_opens():
    mesh = rectangle_mesh(8, 8, fractures=FRAC)
    sp_ = P2Space(mesh, {t: MechBC.clamped() for t in ("left", "right", "top", "bottom")})
    mech = ContactMechanics(sp_, ElasticParams(4e9, 0.2, 0.0))
    res = mech.solve(np.full(mesh.n_cells, 1e5), np.full(mesh.n_faces, 1e5))
    assert np.all(res.jump < 0)
    assert np.all(res.lam == 0)


def test_zero_data_initial_state():
    mech = loaded((0.0, 0.0))
    nf = len(mech.W)
    d0 = np.full(nf, 1e-4)
    res, d_f = solve_initial_mechanics(mech, np.zeros(mech.space.mesh.n_cells), np.zeros(nf), d0)
    assert np.all(res.u == 0) and np.all(res.lam == 0)
    assert np.array_equal(d_f, d0)


@pytest.fixture(scope="module")
def six_initial():
    cfg = load_config(data_path("six_fractures_config.json"))
    sim = Simulation(cfg, load_mesh(data_path("six_fractures.json")))
    return sim, sim.initial_state()


def test_six_initial_state_mostly_open(six_initial):
    sim, st0 = six_initial
    ids = sim.mesh.fracture_ids
    open_fracs = [i for i in np.unique(ids) if np.any(st0.jump[ids == i] < 0)]
    assert len(open_fracs) > len(np.unique(ids)) / 2
    assert np.sum(st0.jump < 0) > 0.5 * len(st0.jump)
    assert not np.allclose(st0.d_f, sim.d0, rtol=1e-6, atol=0.0)
    rep, aperture_ok = sim.check_contact(st0)
    assert rep.ok and aperture_ok


def test_infsup():
    mesh = rectangle_mesh(4, 4, fractures=[[(1, 2), (2, 2), (3, 2)]])
    bcs = {"bottom": MechBC.clamped()}
    coarse = infsup_estimate(P2Space(mesh, bcs))
    fine = infsup_estimate(P2Space(refine_uniform(mesh), bcs))
    assert coarse > 0
    assert fine / coarse >= 0.8


def test_infsup_without_faces():
    with pytest.raises(ValueError):
        infsup_estimate(P2Space(rectangle_mesh(2, 2), {"bottom": MechBC.clamped()}))
