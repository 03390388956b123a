import copy

import numpy as np
import pytest

from fracsim.config import ConfigError, SimConfig, config_from_dict, ramp_displacement
from fracsim.coupling import AndersonMixer, Simulation, SolverFailure, TimeGrid, closure_update
from fracsim.mech_fe import MechBC
from fracsim.meshkit import rectangle_mesh

FRAC = [[(2, 4), (3, 4), (4, 4), (5, 4), (6, 4)], [(4, 1), (4, 2), (4, 3)]]


def small_config(**kw):
    base = dict(
        flow_bc={"left": 1e5},
        mech_bc={
            "bottom": MechBC.clamped(),
            "top": MechBC("displacement", (0.005, -0.0005), ramp_time=500.0),
        },
        final_time_s=2000.0,
        num_steps=4,
        d0_override=None,
    )
    base.update(kw)
    return SimConfig(**base)


@pytest.fixture(scope="module")
def mesh():
    return rectangle_mesh(8, 8, lx=2.0, fractures=FRAC)


def test_closure_example():
    phi, d_f = closure_update(1e-3, 0.0, 1e6, 0.0, 0.0, 1e-4, -2e-4, 0.8, 1e-10)
    assert np.isclose(phi, 9e-4, rtol=1e-12)
    assert np.isclose(d_f, 3e-4, rtol=1e-12)


def test_infinite_biot_modulus():
    assert SimConfig(biot_M_pa=None).inv_M == 0.0
    assert SimConfig(biot_M_pa=float("inf")).inv_M == 0.0
    phi, _ = closure_update(0.0, 0.0, 1e9, 0.0, 0.4, [], [], 0.8, 0.0)
    assert phi == 0.4


def test_ramp():
    assert np.array_equal(ramp_displacement(0.0, 2000.0), [0.0, 0.0])
    assert np.allclose(ramp_displacement(500.0, 2000.0), [0.005, -0.0005])
    assert np.allclose(ramp_displacement(250.0, 2000.0), [0.0025, -0.00025])
    assert np.allclose(ramp_displacement(1500.0, 2000.0), [0.005, -0.0005])
    bc = MechBC("displacement", (0.005, -0.0005), ramp_time=500.0)
    assert bc.factor(250.0) == 0.5 and bc.factor(900.0) == 1.0


def test_config_validation():
    with pytest.raises(ConfigError):
        SimConfig(permeability_m2=[[1.0, 0.5], [0.0, 1.0]])
    with pytest.raises(ConfigError):
        SimConfig(permeability_m2=[[-1.0, 0.0], [0.0, 1.0]])
    with pytest.raises(ConfigError):
        SimConfig(phi0=1.2)
    with pytest.raises(ConfigError):
        config_from_dict({"bogus_key": 1})
    with pytest.raises(ConfigError):
        config_from_dict({"bc": {"mechanics": {"top": {"type": "glued"}}}})


def test_time_grid():
    g = TimeGrid.uniform(2000.0, 20)
    assert len(g) == 20 and np.allclose(g.steps, 100.0)
    with pytest.raises(ValueError):
        TimeGrid([0.0, 2.0, 1.0])


def test_anderson_solves_linear_map():
    rng = np.random.default_rng(0)
    Q = np.linalg.qr(rng.normal(size=(8, 8)))[0]
    A = Q @ np.diag(np.linspace(0.0, 0.95, 8)) @ Q.T
    c = rng.normal(size=8)
    exact = np.linalg.solve(np.eye(8) - A, c)
    x, y = np.zeros(8), np.zeros(8)
    mixer = AndersonMixer(5)
    for _ in range(25):
        x = mixer.update(x, A @ x + c)
        y = A @ y + c
    # plain Picard is still far off (0.95^25 ~ 0.28) while the mixed iterate has converged
    assert np.allclose(x, exact, atol=1e-8)
    assert not np.allclose(y, exact, atol=1e-2)


def test_constant_trajectory(mesh):
    cfg = small_config(mech_bc={"bottom": MechBC.clamped(), "top": MechBC.clamped()})
    traj = Simulation(cfg, mesh).run()
    s = np.asarray(traj.series)
    assert np.allclose(s[:, 1], cfg.phi0, rtol=1e-10, atol=0.0)
    assert np.allclose(s[:, 3:], 1e5, rtol=1e-10, atol=0.0)
    assert np.allclose(s[:, 2], s[0, 2], rtol=1e-10, atol=0.0)


def test_decoupled_case_single_update():
    # b = 0 and compressed (sticking) fractures: the mechanics does not see the pressures
    cfg = small_config(
        biot_b=0.0,
        mech_bc={"bottom": MechBC.clamped(), "top": MechBC("displacement", (0.0, -1e-3), ramp_time=500.0)},
        source_matrix=1e-6,
    )
    sim = Simulation(cfg, rectangle_mesh(8, 8, lx=2.0, fractures=FRAC[:1]))
    st0 = sim.initial_state()
    st1 = sim.coupled_step(st0, 500.0, 500.0)
    assert st1.active.stick.all()
    # one flow update, then the confirming evaluation with zero increment
    assert st1.iterations == 2


def test_acceleration_does_not_change_limit(mesh):
    cfg = small_config()
    cfg.solver.fp_atol_pa = 1e-3
    sim = Simulation(cfg, mesh)
    st0 = sim.initial_state()
    a = sim.coupled_step(st0, 500.0, 500.0, accelerate=True)
    b = sim.coupled_step(st0, 500.0, 500.0, accelerate=False)
    assert np.max(np.abs(a.p - b.p)) <= 1.0
    assert a.iterations <= b.iterations


def test_mass_balance(mesh):
    cfg = small_config(source_matrix=1e-7, source_fracture=1e-6)
    sim = Simulation(cfg, mesh)
    sim.keep_states = True
    traj = sim.run()
    lay = sim.disc.layout
    for prev, st in zip(traj.states[:-1], traj.states[1:]):
        dt = st.t - prev.t
        acc_m = sim.disc.area * (st.phi - prev.phi) / dt
        acc_f = mesh.face_lengths * (st.d_f - prev.d_f) / dt
        A = sim.disc.assemble(cfg.mobility, cfg.conductivity(st.d_f), cfg.Lambda_f)
        Ap = A @ st.p
        free = lay.free
        storage = np.zeros(lay.size)
        storage[lay.cells] = acc_m
        storage[lay.faces] = acc_f
        residual = (storage + Ap - sim.sources)[free]
        # size of the individual terms that cancel in each row
        scale = (abs(A) @ np.abs(st.p)).max() + np.abs(storage).max()
        assert np.abs(residual).max() <= 1e-9 * scale
        # global: accumulation + boundary outflow - sources = 0
        outflow = -Ap[lay.fixed].sum()
        total = acc_m.sum() + acc_f.sum() + outflow - sim.sources.sum()
        assert abs(total) <= 1e-9 * scale


def test_contact_invariants_along_run(mesh):
    traj = Simulation(small_config(), mesh).run()
    for rep, aperture_ok in traj.contact_checks:
        assert rep.ok and aperture_ok


def test_step_rejection_halves(mesh, monkeypatch):
    sim = Simulation(small_config(), mesh)
    st0 = sim.initial_state()
    calls = []
    orig = Simulation.coupled_step

    def flaky(self, prev, t, dt, accelerate=True):
        calls.append(dt)
        if len(calls) == 1:
            raise SolverFailure("forced")
        return orig(self, prev, t, dt, accelerate)

    monkeypatch.setattr(Simulation, "coupled_step", flaky)
    st = sim.advance(st0, 500.0, 500.0)
    assert calls == [500.0, 250.0, 250.0]
    assert st.t == 500.0


def test_failure_report(mesh):
    cfg = small_config()
    cfg = copy.deepcopy(cfg)
    cfg.solver.fp_max_iter = 1
    sim = Simulation(cfg, mesh)
    with pytest.raises(SolverFailure) as info:
        sim.advance(sim.initial_state(), 500.0, 500.0)
    assert "t" in info.value.report
