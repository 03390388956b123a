"""Convergence ladders in space (uniform refinement) and time (step halving)."""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from .config import SimConfig
from .coupling import Simulation
from .diagnostics import (
    ConvergenceRecord,
    ancestor_map,
    cell_l2_error,
    energy_report,
    face_l2_error,
    fracture_line_error,
    jump_nodal_components,
    project_p2_fracturewise,
    rate_fit,
)
from .flow_gd import FlowDiscretization, solve_steady_flow
from .meshkit import MixedDimMesh, rectangle_mesh, refine_uniform, triangle_quadrature

log = logging.getLogger(__name__)

SPACE_FRACTURE_QUANTITIES = ("jump_n", "jump_t", "lambda")
SPACE_FIELD_QUANTITIES = ("phi", "d_f", "p_m", "p_f")
TIME_QUANTITIES = ("mean_phi", "mean_df", "mean_pm", "mean_pf")


@dataclass
class LevelResult:
    mesh: MixedDimMesh
    h: float
    snapshot: dict  # nodal jumps / multiplier projection at the snapshot time
    final: dict  # cell / face fields at the final time
    energy: dict
    series: np.ndarray
    contact_ok: bool
    aperture_ok: bool
    fp_iterations: list = field(default_factory=list)


def run_level(config: SimConfig, mesh: MixedDimMesh, snapshot_time: float) -> LevelResult:
    sim = Simulation(config, mesh)
    traj = sim.run(snapshot_times=[snapshot_time, config.final_time_s])
    snap = traj.snapshots[float(snapshot_time)]
    jn, jt = jump_nodal_components(mesh, sim.space.face_jump_nodal(snap.u))
    snapshot = {
        "jump_n": jn,
        "jump_t": jt,
        "lambda": project_p2_fracturewise(mesh, snap.lam),
        "lambda_p0": snap.lam.copy(),
    }
    fin = traj.final
    final = {"phi": fin.phi, "d_f": fin.d_f, "p_m": fin.p[sim.cells], "p_f": fin.p[sim.faces]}
    return LevelResult(
        mesh=mesh,
        h=mesh.h,
        snapshot=snapshot,
        final=final,
        energy=energy_report(traj.times, traj.diagnostics, config.inv_M),
        series=np.asarray(traj.series),
        contact_ok=all(c[0].ok for c in traj.contact_checks),
        aperture_ok=all(c[1] for c in traj.contact_checks),
        fp_iterations=list(traj.fp_iterations),
    )


def space_study(config: SimConfig, mesh: MixedDimMesh, levels: int, snapshot_time: float | None = None,
                min_points: int = 3, keep=None):
    """Uniform refinement ladder; the finest level is the reference.

    Fracture quantities are compared at ``snapshot_time`` (default T/4),
    matrix and fracture fields at the final time.
    """
    if levels < 2:
        raise ValueError("a space study needs at least two levels (one solution and a reference)")
    snapshot_time = 0.25 * config.final_time_s if snapshot_time is None else snapshot_time
    chain = [mesh]
    for _ in range(levels - 1):
        chain.append(refine_uniform(chain[-1]))
    results = []
    for m in chain:
        log.info("space level with %d cells", m.n_cells)
        results.append(run_level(config, m, snapshot_time))
        if keep is not None:
            keep(results[-1])
    ref = results[-1]
    records = []
    for q in SPACE_FRACTURE_QUANTITIES + SPACE_FIELD_QUANTITIES:
        rec = ConvergenceRecord(q)
        for k, res in enumerate(results[:-1]):
            sub = chain[k:]
            if q in SPACE_FRACTURE_QUANTITIES:
                anc = ancestor_map(sub, "face")
                err = fracture_line_error(res.mesh, res.snapshot[q], ref.mesh, ref.snapshot[q], anc)
            elif q in ("phi", "p_m"):
                err = cell_l2_error(res.final[q], ref.final[q], ref.mesh, ancestor_map(sub, "cell"))
            else:
                err = face_l2_error(res.final[q], ref.final[q], ref.mesh, ancestor_map(sub, "face"))
            rec.h_or_dt.append(res.h)
            rec.errors.append(err)
        if len(rec.errors) >= min_points and all(e > 0 for e in rec.errors):
            rec.slope = rate_fit(rec.h_or_dt, rec.errors, min_points)[0]
        records.append(rec)
    return records, results


def series_l2_error(coarse: np.ndarray, ref: np.ndarray, column: int) -> float:
    """L2(0,T) distance of two piecewise-constant-in-time series (value on (t_{k-1}, t_k])."""
    tc, tr = coarse[:, 0], ref[:, 0]
    idx = np.searchsorted(tc, tr[1:] - 1e-9 * tr[-1], side="left")
    qc = coarse[idx, column]
    qr = ref[1:, column]
    return float(np.sqrt(np.sum(np.diff(tr) * (qc - qr) ** 2)))


def time_study(config: SimConfig, mesh: MixedDimMesh, levels: int, min_points: int = 3, keep=None):
    """Step-halving ladder on a fixed mesh; the finest level is the reference."""
    if levels < 2:
        raise ValueError("a time study needs at least two levels (one solution and a reference)")
    runs = []
    for k in range(levels):
        cfg = copy.deepcopy(config)
        cfg.num_steps = config.num_steps * 2**k
        log.info("time level with %d steps", cfg.num_steps)
        traj = Simulation(cfg, mesh).run()
        runs.append((cfg.dt, np.asarray(traj.series)))
        if keep is not None:
            keep(cfg, traj)
    ref = runs[-1][1]
    records = []
    for col, q in enumerate(TIME_QUANTITIES, start=1):
        rec = ConvergenceRecord(q)
        for dt, series in runs[:-1]:
            rec.h_or_dt.append(dt)
            rec.errors.append(series_l2_error(series, ref, col))
        if len(rec.errors) >= min_points and all(e > 0 for e in rec.errors):
            rec.slope = rate_fit(rec.h_or_dt, rec.errors, min_points)[0]
        records.append(rec)
    return records, runs


def manufactured_flow_study(mesh: MixedDimMesh | None, levels: int, min_points: int = 3):
    """Poisson problem ``p = sin(pi x) sin(pi y)`` with unit permeability, no fractures.

    Homogeneous Dirichlet data on every boundary tag; errors are discrete L2
    norms of cell values against the exact solution at centroids.
    """
    mesh = rectangle_mesh(4, 4) if mesh is None else mesh
    pi = np.pi

    def exact(x, y):
        return np.sin(pi * x) * np.sin(pi * y)

    def source(x, y):
        return 2 * pi**2 * exact(x, y)

    rec = ConvergenceRecord("p_m")
    m = mesh
    for _ in range(levels):
        tags = {t: 0.0 for t in np.unique(m.boundary_tags[m.boundary_edges])}
        disc = FlowDiscretization(m, tags)
        v = solve_steady_flow(disc, np.eye(2), 1.0, 1.0, h_matrix=source)
        err = np.sqrt(m.areas @ (v[disc.layout.cells] - exact(*m.centroids.T)) ** 2)
        rec.h_or_dt.append(m.h)
        rec.errors.append(float(err))
        m = refine_uniform(m)
    if len(rec.errors) >= min_points:
        rec.slope = rate_fit(rec.h_or_dt, rec.errors, min_points)[0]
    return [rec]


def manufactured_elasticity_study(mesh: MixedDimMesh | None, levels: int, min_points: int = 3,
                                  params=None):
    """Plane-strain problem with ``u = (s, s)``, ``s = sin(pi x) sin(pi y)``, clamped boundary.

    Returns energy-norm (``||eps(u - u_h)||``) and L2 records.
    """
    from .mech_fe import ElasticParams, MechBC, P2Space

    mesh = rectangle_mesh(4, 4) if mesh is None else mesh
    params = ElasticParams(1.0, 0.3) if params is None else params
    lam, mu, pi = params.lam, params.mu, np.pi

    def s(x, y):
        return np.sin(pi * x) * np.sin(pi * y)

    def force(x, y):
        f = pi**2 * ((lam + 3 * mu) * s(x, y) - (lam + mu) * np.cos(pi * x) * np.cos(pi * y))
        return f, f

    def grad_s(x, y):
        return pi * np.cos(pi * x) * np.sin(pi * y), pi * np.sin(pi * x) * np.cos(pi * y)

    energy, l2 = ConvergenceRecord("energy"), ConvergenceRecord("l2")
    m = mesh
    for _ in range(levels):
        tags = np.unique(m.boundary_tags[m.boundary_edges])
        space = P2Space(m, {t: MechBC.clamped() for t in tags})
        K = space.stiffness(params).tocsr()
        F = space.body_force(force)
        u = np.zeros(space.n_dofs)
        fr = space.free
        u[fr] = spla.spsolve(K[fr][:, fr].tocsc(), F[fr])
        xq, wq = triangle_quadrature(m)
        x, y = xq[..., 0], xq[..., 1]
        uh = space.values_at_quadrature(u)
        l2_err = np.sum(wq[..., None] * (uh - s(x, y)[..., None]) ** 2)
        sx, sy = grad_s(x, y)
        eps = np.empty(x.shape + (2, 2))
        eps[..., 0, 0], eps[..., 1, 1] = sx, sy
        eps[..., 0, 1] = eps[..., 1, 0] = 0.5 * (sx + sy)
        en_err = np.sum(wq * np.sum((space.strain_at_quadrature(u) - eps) ** 2, axis=(-1, -2)))
        for rec, val in ((energy, en_err), (l2, l2_err)):
            rec.h_or_dt.append(m.h)
            rec.errors.append(float(np.sqrt(val)))
        m = refine_uniform(m)
    for rec in (energy, l2):
        if len(rec.errors) >= min_points:
            rec.slope = rate_fit(rec.h_or_dt, rec.errors, min_points)[0]
    return [energy, l2]


TERZAGHI_SAMPLES = (0.05, 0.1, 0.2, 0.4, 0.8)  # dimensionless times c t / H^2


def terzaghi_grid(t_char: float, samples=TERZAGHI_SAMPLES, first: float = 1e-5, per_sample: int = 40):
    """Time grid that refines geometrically after the load jump and hits every sample time."""
    marks = [0.0] + [s * t_char for s in samples]
    times = [0.0]
    for a, b in zip(marks[:-1], marks[1:]):
        start = max(a, first * t_char)
        if a == 0.0:
            times.extend(np.geomspace(start, b, per_sample))
        else:
            times.extend(np.linspace(a, b, per_sample + 1)[1:])
    return np.unique(np.asarray(times))


def terzaghi_study(nx: int = 4, ny: int = 64, params=None, per_sample: int = 100):
    """Coupled consolidation of a drained-top column under a step load.

    Returns ``(samples, relative_errors, reference_params)`` where errors are
    relative L2 distances of cell pressures to the series solution.
    """
    from .coupling import Simulation, TimeGrid
    from .diagnostics import TerzaghiParams, terzaghi_reference
    from .mech_fe import MechBC

    tp = params or TerzaghiParams(E=1e8, nu=0.25, b=1.0, M=1e9, permeability=1e-12, viscosity=1e-3,
                                  load=1e4, height=1.0)
    H = tp.height
    mesh = rectangle_mesh(nx, ny, lx=H / 16, ly=H)
    cfg = SimConfig(
        E_pa=tp.E, nu=tp.nu, biot_b=tp.b, biot_M_pa=tp.M, viscosity_pa_s=tp.viscosity,
        permeability_m2=[[tp.permeability, 0.0], [0.0, tp.permeability]],
        p0_matrix_pa=0.0, p0_fracture_pa=0.0, flow_bc={"top": 0.0},
        mech_bc={
            "bottom": MechBC("displacement", (0.0, 0.0)),
            "left": MechBC("displacement", (0.0, None)),
            "right": MechBC("displacement", (0.0, None)),
            "top": MechBC("traction", (0.0, -tp.load), ramp_time=1e-300),
        },
        final_time_s=1.0, num_steps=1,
    )
    t_char = H**2 / tp.consolidation_coefficient
    grid = TimeGrid(terzaghi_grid(t_char, per_sample=per_sample))
    want = [s * t_char for s in TERZAGHI_SAMPLES]
    sim = Simulation(cfg, mesh)
    traj = sim.run(grid, snapshot_times=want)
    depth = H - mesh.centroids[:, 1]
    errors = []
    for t in want:
        st = traj.snapshots[float(t)]
        ph = st.p[sim.cells]
        pr = terzaghi_reference(tp, depth, t)
        errors.append(float(np.sqrt(mesh.areas @ (ph - pr) ** 2 / (mesh.areas @ pr**2))))
    return list(TERZAGHI_SAMPLES), errors, tp
