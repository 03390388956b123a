"""Simulation configuration (JSON, SI units in key names) and validation."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .mech_fe import ElasticParams, MechBC


class ConfigError(ValueError):
    pass


@dataclass
class SolverSettings:
    fp_atol_pa: float = 1.0
    fp_rtol: float = 1e-8
    fp_max_iter: int = 100
    anderson_depth: int = 5
    fixed_stress: bool = True
    active_set_max_iter: int = 50
    flow_rtol: float = 1e-10
    hfv_stabilization: float = math.sqrt(2.0)


@dataclass
class SimConfig:
    E_pa: float = 4e9
    nu: float = 0.2
    biot_b: float = 0.8
    biot_M_pa: float = 1e10
    viscosity_pa_s: float = 1e-3
    permeability_m2: list = field(default_factory=lambda: [[1e-15, 0.0], [0.0, 0.5e-15]])
    delta0_m: float = 1e-4
    aperture_a_per_m: float = 25.0
    transmissibility: float | None = None  # defaults to delta0 / (6 eta)
    phi0: float = 0.4
    p0_matrix_pa: float = 1e5
    p0_fracture_pa: float = 1e5
    source_matrix: float = 0.0
    source_fracture: float = 0.0
    body_force_n_m3: tuple = (0.0, 0.0)
    flow_bc: dict = field(default_factory=dict)  # tag -> pressure (Pa); absent tags are no-flux
    mech_bc: dict = field(default_factory=dict)  # tag -> MechBC
    final_time_s: float = 2000.0
    num_steps: int = 20
    output_times_s: list = field(default_factory=list)
    solver: SolverSettings = field(default_factory=SolverSettings)
    d0_override: float | None = None  # uniform contact aperture instead of the tip law
    problem: str = "poromechanics"  # or "manufactured_flow" for the flow verification study

    def __post_init__(self):
        self.validate()

    # --------------------------------------------------------------
    @property
    def mobility(self) -> np.ndarray:
        return np.asarray(self.permeability_m2, dtype=float) / self.viscosity_pa_s

    @property
    def inv_M(self) -> float:
        M = self.biot_M_pa
        return 0.0 if M is None or math.isinf(M) else 1.0 / M

    @property
    def Lambda_f(self) -> float:
        if self.transmissibility is not None:
            return float(self.transmissibility)
        return self.delta0_m / (6.0 * self.viscosity_pa_s)

    @property
    def elastic(self) -> ElasticParams:
        return ElasticParams(self.E_pa, self.nu, self.biot_b)

    @property
    def dt(self) -> float:
        return self.final_time_s / self.num_steps if self.num_steps else 0.0

    def conductivity(self, d_f) -> np.ndarray:
        """Poiseuille tangential conductivity ``d_f^3 / (12 eta)``."""
        return np.asarray(d_f) ** 3 / (12.0 * self.viscosity_pa_s)

    def validate(self):
        try:
            ElasticParams(self.E_pa, self.nu, self.biot_b)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.biot_M_pa is not None and not self.biot_M_pa > 0:
            raise ConfigError("Biot modulus must be positive (use null for infinity)")
        if not self.viscosity_pa_s > 0:
            raise ConfigError("viscosity must be positive")
        K = np.asarray(self.permeability_m2, dtype=float)
        if K.shape != (2, 2) or not np.allclose(K, K.T, rtol=1e-12, atol=0.0):
            raise ConfigError("permeability must be a symmetric 2x2 tensor")
        if np.linalg.eigvalsh(K).min() <= 0:
            raise ConfigError("permeability must be positive definite")
        if not self.delta0_m > 0 or not self.aperture_a_per_m > 0:
            raise ConfigError("aperture law parameters must be positive")
        if not self.Lambda_f > 0:
            raise ConfigError("normal transmissibility must be positive")
        if self.problem not in ("poromechanics", "manufactured_flow"):
            raise ConfigError(f"unknown problem {self.problem!r}")
        if not 0 < self.phi0 < 1:
            raise ConfigError("initial porosity must lie in (0, 1)")
        if self.num_steps < 0 or (self.num_steps > 0 and not self.final_time_s > 0):
            raise ConfigError("time grid needs num_steps >= 0 and final_time_s > 0")
        if self.solver.anderson_depth < 0 or self.solver.fp_max_iter < 1:
            raise ConfigError("invalid fixed-point settings")


def _mech_bc(spec) -> MechBC:
    if isinstance(spec, str):
        spec = {"type": spec}
    kind = spec.get("type")
    if kind == "clamped":
        return MechBC.clamped()
    if kind == "free":
        return MechBC("free")
    if kind in ("displacement", "traction"):
        val = spec.get("value_m" if kind == "displacement" else "value_pa", spec.get("value"))
        if val is None or len(val) != 2:
            raise ConfigError(f"{kind} condition needs a 2-component value")
        return MechBC(kind, tuple(None if v is None else float(v) for v in val), spec.get("ramp_time_s"))
    raise ConfigError(f"unknown mechanics condition {spec!r}")


def _flow_bc(spec):
    if isinstance(spec, (int, float)):
        return float(spec)
    if isinstance(spec, dict):
        if spec.get("type") == "dirichlet":
            return float(spec["value_pa"])
        if spec.get("type") == "no_flux":
            return None
    raise ConfigError(f"unknown flow condition {spec!r}")


def config_from_dict(data: dict) -> SimConfig:
    data = dict(data)
    try:
        solver = SolverSettings(**data.pop("solver", {}))
        bc = data.pop("bc", {})
        flow = {t: v for t, s in bc.get("flow", {}).items() if (v := _flow_bc(s)) is not None}
        mech = {t: _mech_bc(s) for t, s in bc.get("mechanics", {}).items()}
        time = data.pop("time", {})
        if "final_time_s" in time:
            data["final_time_s"] = time["final_time_s"]
        if "num_steps" in time:
            data["num_steps"] = time["num_steps"]
        data["output_times_s"] = data.pop("output_times_s", time.get("output_times_s", []))
        if "body_force_n_m3" in data:
            data["body_force_n_m3"] = tuple(data["body_force_n_m3"])
        data.pop("description", None)
        return SimConfig(solver=solver, flow_bc=flow, mech_bc=mech, **data)
    except ConfigError:
        raise
    except (TypeError, KeyError, ValueError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc


def load_config(path) -> SimConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read configuration {path}: {exc}") from exc
    return config_from_dict(data)


def ramp_displacement(t: float, final_time: float, peak=(0.005, -0.0005)) -> np.ndarray:
    """Top-boundary displacement: linear ramp up to ``final_time / 4``, then held."""
    s = min(max(t, 0.0) / (0.25 * final_time), 1.0)
    return s * np.asarray(peak, dtype=float)
