"""Implicit Euler time stepping of the coupled flow / contact-mechanics scheme.

Every time step runs a fixed point on the cell and fracture-face pressures:
contact mechanics at the current pressures, closure update of porosity and
aperture, then a linear flow solve with the aperture frozen.  The iteration
is accelerated by Anderson mixing and, optionally, stabilized by a
fixed-stress term that vanishes at convergence.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .config import SimConfig, ramp_displacement
from .contact import ActiveSet, ContactMechanics, ContactResult, complementarity_tolerances, check_local_conditions
from .flow_gd import FlowDiscretization
from .mech_fe import ElasticParams, P2Space
from .meshkit import ApertureLaw, MixedDimMesh, eval_d0

log = logging.getLogger(__name__)


class SolverFailure(RuntimeError):
    """Time step could not be completed; ``report`` holds the diagnostics."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report or {}


@dataclass
class TimeGrid:
    times: np.ndarray

    @classmethod
    def uniform(cls, final_time: float, num_steps: int):
        return cls(np.linspace(0.0, final_time, num_steps + 1))

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if self.times[0] != 0.0 or np.any(np.diff(self.times) <= 0):
            raise ValueError("time grid must start at 0 and increase strictly")

    @property
    def steps(self) -> np.ndarray:
        return np.diff(self.times)

    def __len__(self):
        return len(self.times) - 1


@dataclass
class StepState:
    t: float
    p: np.ndarray  # full flow vector
    u: np.ndarray
    lam: np.ndarray
    jump: np.ndarray
    phi: np.ndarray
    d_f: np.ndarray
    active: ActiveSet
    iterations: int = 0

    def copy(self):
        return StepState(self.t, self.p.copy(), self.u.copy(), self.lam.copy(), self.jump.copy(),
                         self.phi.copy(), self.d_f.copy(), self.active.copy(), self.iterations)


def closure_update(div_u, div_u0, p_m, p_m0, phi0, d0, jump, b: float, inv_M: float):
    """Porosity and aperture from the linear state laws.

    ``phi = phi0 + b (div u - div u0) + (p_m - p_m0) / M`` cell-wise and
    ``d_f = d0 - [u]_n`` face-wise.
    """
    phi = phi0 + b * (np.asarray(div_u) - div_u0) + inv_M * (np.asarray(p_m) - p_m0)
    d_f = np.asarray(d0) - np.asarray(jump)
    return phi, d_f


class FlowStepper:
    """Backward-Euler flow solves with fracture conductivity as the only varying coefficient.

    Cell and matrix-face unknowns are condensed onto the fracture unknowns;
    their block depends only on the time step and is factored once.
    """

    def __init__(self, disc: FlowDiscretization, mobility, transmissibility, inv_M: float):
        self.disc = disc
        lay = disc.layout
        self.base = (disc.matrix_operator(mobility) + disc.coupling_operator(transmissibility)).tocsr()
        self.inv_M = inv_M
        free = lay.free
        is_matrix = free < lay.faces.start
        self.I = free[is_matrix]
        self.F = free[~is_matrix]
        self.D = lay.fixed
        self._cache = {}

    def _blocks(self, dt: float, beta: float):
        key = (float(dt), float(beta))
        if key not in self._cache:
            lay, disc = self.disc.layout, self.disc
            diag = np.zeros(lay.size)
            diag[lay.cells] = disc.area * (self.inv_M + beta) / dt
            A = (self.base + sp.diags(diag)).tocsr()
            A_I = A[self.I]
            A_II = A_I[:, self.I].tocsc()
            lu = spla.splu(A_II, permc_spec="MMD_AT_PLUS_A")
            A_IF = A_I[:, self.F].toarray()
            X = lu.solve(A_IF) if A_IF.size else np.zeros_like(A_IF)
            A_F = A[self.F]
            schur = A_F[:, self.F].toarray() - A_F[:, self.I] @ X
            if len(self._cache) > 4:
                self._cache.clear()
            self._cache[key] = (A, lu, X, schur)
        return self._cache[key]

    def solve(self, rhs: np.ndarray, conductivity, fixed_values: np.ndarray, dt: float, beta: float = 0.0,
              rtol: float = 1e-10, guess: np.ndarray | None = None, max_refine: int = 3):
        """Solve the step system; returns the flow vector and the relative residual.

        The solve works on corrections to ``guess`` (zero by default) with a few
        steps of iterative refinement; the residual is measured against the
        size of the terms that cancel in each row (worst row), since matrix and fracture
        coefficients differ by many orders of magnitude.
        """
        A, lu, X, schur = self._blocks(dt, beta)
        Af = self.disc.fracture_operator(conductivity).tocsr()
        I, F = self.I, self.F
        full = (A + Af).tocsr()
        free = np.concatenate([I, F])
        rows = full[free]
        A_FI = A[F][:, I]
        S = schur + Af[F][:, F].toarray()
        v = fixed_values.copy()
        if guess is not None:
            v[free] = guess[free]
        nI = len(I)
        rel = np.inf
        for _ in range(max_refine + 1):
            r = rhs[free] - rows @ v
            size = abs(rows) @ np.abs(v) + np.abs(rhs[free])
            rel = float(np.max(np.abs(r) / np.maximum(size, 1e-300))) if len(r) else 0.0
            if rel <= rtol:
                break
            y = lu.solve(r[:nI])
            if len(F):
                xF = sla.solve(S, r[nI:] - A_FI @ y, assume_a="pos")
                v[F] += xF
                v[I] += y - X @ xF
            else:
                v[I] += y
        return v, rel


class AndersonMixer:
    """Type-II Anderson acceleration with a bounded history."""

    def __init__(self, depth: int):
        self.depth = depth
        self.dx, self.df = [], []
        self._prev = None

    def update(self, x: np.ndarray, gx: np.ndarray) -> np.ndarray:
        f = gx - x
        if self.depth == 0:
            return gx
        if self._prev is not None:
            x0, g0, f0 = self._prev
            self.dx.append(gx - g0)
            self.df.append(f - f0)
            if len(self.df) > self.depth:
                self.dx.pop(0)
                self.df.pop(0)
        self._prev = (x, gx, f)
        if not self.df:
            return gx
        dF = np.column_stack(self.df)
        dG = np.column_stack(self.dx)
        gamma, *_ = np.linalg.lstsq(dF, f, rcond=None)
        return gx - dG @ gamma


@dataclass
class StepDiagnostics:
    """Squared space norms of one accepted state, combined in time by the energy report."""

    grad_pm2: float
    grad_pf2: float
    jump_p2: float
    pm_l2_2: float
    u_energy: float
    df_l4: float
    lam_dual2: float


@dataclass
class Trajectory:
    times: list = field(default_factory=list)
    series: list = field(default_factory=list)  # (t, mean_phi, mean_df, mean_pm, mean_pf)
    diagnostics: list = field(default_factory=list)
    snapshots: dict = field(default_factory=dict)
    states: list = field(default_factory=list)
    fp_iterations: list = field(default_factory=list)
    contact_checks: list = field(default_factory=list)
    final: StepState | None = None


class Simulation:
    """Mixed-dimensional poromechanics on one mesh with one configuration."""

    def __init__(self, config: SimConfig, mesh: MixedDimMesh):
        self.config = config
        self.mesh = mesh
        cfg = config
        self.disc = FlowDiscretization(mesh, cfg.flow_bc, cfg.solver.hfv_stabilization)
        self.space = P2Space(mesh, cfg.mech_bc)
        self.params = ElasticParams(cfg.E_pa, cfg.nu, cfg.biot_b)
        body = None if not any(cfg.body_force_n_m3) else cfg.body_force_n_m3
        self.mech = ContactMechanics(self.space, self.params, body, cfg.solver.active_set_max_iter)
        self.flow = FlowStepper(self.disc, cfg.mobility, cfg.Lambda_f, cfg.inv_M)
        if mesh.n_faces:
            if cfg.d0_override is not None:
                self.d0 = np.full(mesh.n_faces, float(cfg.d0_override))
            else:
                law = ApertureLaw.from_mesh(mesh, cfg.delta0_m, cfg.aperture_a_per_m)
                self.d0 = eval_d0(law, mesh)
        else:
            self.d0 = np.zeros(0)
        lay = self.disc.layout
        self.cells, self.faces = lay.cells, lay.faces
        self.sources = self.disc.source_vector(cfg.source_matrix, cfg.source_fracture)
        lp, mu = self.params.lam, self.params.mu
        self.beta_fs = cfg.biot_b**2 / (lp + mu) if cfg.solver.fixed_stress else 0.0
        self.keep_states = False

    # ------------------------------------------------------------------
    def _unpack(self, p):
        return p[self.cells], p[self.faces]

    def initial_state(self) -> StepState:
        cfg = self.config
        p = self.disc.interpolate(cfg.p0_matrix_pa, cfg.p0_fracture_pa)
        p = self.disc.apply_dirichlet(p)
        pm, pf = self._unpack(p)
        res = self.mech.solve(pm, pf, 0.0)
        self.p0 = p.copy()
        self.u0 = res.u.copy()
        self.div_u0 = self.mech.cell_divergence(res.u)
        self.phi_init = np.full(self.mesh.n_cells, cfg.phi0)
        phi, d_f = closure_update(self.div_u0, self.div_u0, pm, pm, self.phi_init, self.d0, res.jump,
                                  cfg.biot_b, cfg.inv_M)
        return StepState(0.0, p, res.u, res.lam, res.jump, phi, d_f, res.active)

    def _flow_rhs(self, prev: StepState, phi_frozen_part, d_f, dt, beta, pm_iter):
        lay = self.disc.layout
        rhs = self.sources.copy()
        area = self.disc.area
        rhs[lay.cells] -= area * (phi_frozen_part - prev.phi) / dt
        rhs[lay.cells] += area * beta * pm_iter / dt
        rhs[lay.faces] -= self.mesh.face_lengths * (d_f - prev.d_f) / dt
        return rhs

    def _flow_given_mech(self, prev: StepState, res: ContactResult, t, dt, beta, pm_iter):
        cfg = self.config
        div_u = self.mech.cell_divergence(res.u)
        pm0 = self.p0[self.cells]
        # porosity without the implicit pressure term
        phi_part = self.phi_init + cfg.biot_b * (div_u - self.div_u0) - cfg.inv_M * pm0
        d_f = self.d0 - res.jump
        if np.any(d_f <= 0):
            raise SolverFailure("non-positive aperture", {"t": t, "min_df": float(d_f.min())})
        rhs = self._flow_rhs(prev, phi_part, d_f, dt, beta, pm_iter)
        fixed = self.disc.dirichlet_values(t)
        p, rel = self.flow.solve(rhs, cfg.conductivity(d_f), fixed, dt, beta, cfg.solver.flow_rtol, guess=prev.p)
        return p, rel, div_u, d_f

    def coupled_step(self, prev: StepState, t: float, dt: float, accelerate: bool = True) -> StepState:
        cfg, s = self.config, self.config.solver
        pm, pf = self._unpack(prev.p)
        x = np.concatenate([pm, pf])
        nt = self.mesh.n_cells
        mixer = AndersonMixer(s.anderson_depth if accelerate else 0)
        active = prev.active
        beta = self.beta_fs
        history = []
        for it in range(1, s.fp_max_iter + 1):
            res = self.mech.solve(x[:nt], x[nt:], t, warm_start=active)
            active = res.active
            p_new, rel, div_u, d_f = self._flow_given_mech(prev, res, t, dt, beta, x[:nt])
            gx = np.concatenate(self._unpack(p_new))
            delta = np.max(np.abs(gx - x)) if len(x) else 0.0
            history.append(delta)
            scale = np.max(np.abs(gx)) if len(gx) else 1.0
            if delta <= s.fp_atol_pa or delta <= s.fp_rtol * scale:
                break
            x = mixer.update(x, gx)
        else:
            raise SolverFailure(
                f"fixed point did not converge at t={t:g}",
                {"t": t, "iterations": s.fp_max_iter, "last_increments": history[-5:]},
            )
        if beta != 0.0:
            # last flow solve without the stabilization so the flow balance closes exactly
            p_new, rel, div_u, d_f = self._flow_given_mech(prev, res, t, dt, 0.0, x[:nt])
        phi, d_f = closure_update(div_u, self.div_u0, p_new[self.cells], self.p0[self.cells],
                                  self.phi_init, self.d0, res.jump, cfg.biot_b, cfg.inv_M)
        return StepState(t, p_new, res.u, res.lam, res.jump, phi, d_f, active, it)

    def advance(self, prev: StepState, t: float, dt: float) -> StepState:
        """One accepted step; on failure retry once with two half steps."""
        try:
            return self.coupled_step(prev, t, dt)
        except SolverFailure as exc:
            log.warning("step to t=%g rejected (%s); halving the time step", t, exc)
            try:
                mid = self.coupled_step(prev, t - 0.5 * dt, 0.5 * dt)
                return self.coupled_step(mid, t, 0.5 * dt)
            except SolverFailure as exc2:
                exc2.report.setdefault("t", t)
                raise

    # ------------------------------------------------------------------
    def means(self, st: StepState):
        mesh = self.mesh
        A, L = mesh.areas, mesh.face_lengths
        pm, pf = self._unpack(st.p)
        area = A.sum()
        if len(L):
            mdf = float(L @ st.d_f / L.sum())
            mpf = float(L @ pf / L.sum())
        else:
            mdf = mpf = 0.0
        return (st.t, float(A @ st.phi / area), mdf, float(A @ pm / area), mpf)

    def diagnostics(self, st: StepState) -> StepDiagnostics:
        disc, mesh = self.disc, self.mesh
        gm = disc.cone_gradients(st.p)
        grad_pm2 = float(np.sum(disc.cone_area * np.sum(gm**2, -1)))
        L = mesh.face_lengths
        if len(L):
            gf = disc.grad_fracture(st.p, conductivity=st.d_f**3)
            grad_pf2 = float(np.sum(0.5 * L[:, None] * st.d_f[:, None] ** 3 * gf**2))
            jump2 = float(sum(np.sum(L * disc.jump(st.p, a) ** 2) for a in "+-"))
            df4 = float(np.sum(L * st.d_f**4) ** 0.25)
            lam2 = float(np.sum(L * L * st.lam**2))
        else:
            grad_pf2 = jump2 = df4 = lam2 = 0.0
        pm = st.p[self.cells]
        return StepDiagnostics(grad_pm2, grad_pf2, jump2, float(mesh.areas @ pm**2),
                               self.space.energy_norm(st.u), df4, lam2)

    def check_contact(self, st: StepState):
        jtol, ptol = complementarity_tolerances(st.jump, self.params, self.mesh.diameter)
        rep = check_local_conditions(st.jump, st.lam, jtol, ptol)
        return rep, bool(np.all(st.d_f >= self.d0))

    def run(self, grid: TimeGrid | None = None, snapshot_times=(), callback=None) -> Trajectory:
        cfg = self.config
        grid = grid or TimeGrid.uniform(cfg.final_time_s, cfg.num_steps)
        traj = Trajectory()
        st = self.initial_state()
        snap = sorted(float(t) for t in snapshot_times)

        def record(state):
            traj.times.append(state.t)
            traj.series.append(self.means(state))
            traj.diagnostics.append(self.diagnostics(state))
            traj.fp_iterations.append(state.iterations)
            traj.contact_checks.append(self.check_contact(state))
            if self.keep_states:
                traj.states.append(state.copy())
            for ts in snap:
                if math.isclose(state.t, ts, rel_tol=1e-9, abs_tol=1e-9):
                    traj.snapshots[ts] = state.copy()
            if callback is not None:
                callback(state)

        record(st)
        for k, dt in enumerate(grid.steps):
            st = self.advance(st, float(grid.times[k + 1]), float(dt))
            record(st)
        traj.final = st
        return traj


def flow_step(sim: Simulation, prev: StepState, contact: ContactResult, t: float, dt: float):
    """Single backward-Euler flow solve with aperture and displacement frozen."""
    p, rel, _, _ = sim._flow_given_mech(prev, contact, t, dt, 0.0, prev.p[sim.cells])
    return p, rel


def top_boundary_displacement(t: float, config: SimConfig, peak=(0.005, -0.0005)) -> np.ndarray:
    """Prescribed top displacement: linear ramp to ``peak`` over the first quarter of the run."""
    return ramp_displacement(t, config.final_time_s, peak)


def run_simulation(config: SimConfig, mesh: MixedDimMesh, snapshot_times=()) -> Trajectory:
    return Simulation(config, mesh).run(snapshot_times=snapshot_times)
