"""Command line front end: ``fracsim run`` and ``fracsim study``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, load_config
from .coupling import Simulation, SolverFailure
from .diagnostics import energy_report
from .io import write_json, write_records_csv, write_series_csv, write_state_vtk
from .mech_fe import MechanicsError
from .meshkit import MeshError, load_mesh
from .study import manufactured_flow_study, space_study, time_study

EXIT_CONFIG, EXIT_MESH, EXIT_SOLVER = 2, 3, 4

log = logging.getLogger("fracsim")


def _limit_threads():
    n = os.environ.get("FRACSIM_THREADS")
    if not n:
        return None
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover - optional
        return None
    return threadpool_limits(int(n))


def _time_label(t: float) -> str:
    return f"{t:g}".replace("+", "")


def _load(args):
    cfg = load_config(args.config)
    mesh = None
    if args.mesh:
        try:
            mesh = load_mesh(args.mesh)
        except (OSError, ValueError, KeyError) as exc:
            raise MeshError(str(exc)) from exc
    return cfg, mesh


def cmd_run(args) -> int:
    cfg, mesh = _load(args)
    if mesh is None:
        raise MeshError("run needs --mesh")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sim = Simulation(cfg, mesh)
    wanted = sorted(set(float(t) for t in cfg.output_times_s))

    def on_state(state):
        for t in wanted:
            if np.isclose(state.t, t, rtol=1e-9, atol=1e-9):
                write_state_vtk(str(out / f"fields_{_time_label(t)}"), sim, state)

    traj = sim.run(snapshot_times=(), callback=on_state)
    write_series_csv(out / "series.csv", traj.series)
    report = energy_report(traj.times, traj.diagnostics, cfg.inv_M)
    write_json(out / "energy.json", report)
    log.info("wrote %d time levels to %s", len(traj.series), out)
    return 0


def cmd_study(args) -> int:
    cfg, mesh = _load(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if cfg.problem == "manufactured_flow":
        if args.mode != "space":
            raise ConfigError("the manufactured flow problem only supports --mode space")
        records = manufactured_flow_study(mesh, args.levels)
    else:
        if mesh is None:
            raise MeshError("study needs --mesh")
        if args.mode == "space":
            records, results = space_study(cfg, mesh, args.levels, min_points=args.min_points)
            write_json(out / "energy_levels.json", [r.energy for r in results])
        else:
            records, _ = time_study(cfg, mesh, args.levels, min_points=args.min_points)
    write_records_csv(out / f"convergence_{args.mode}.csv", records)
    for rec in records:
        slope = "n/a" if rec.slope is None else f"{rec.slope:.3f}"
        print(f"{rec.quantity:10s} slope={slope} errors={['%.3e' % e for e in rec.errors]}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fracsim", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run one simulation")
    r.add_argument("--config", required=True)
    r.add_argument("--mesh", required=True)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_run)
    s = sub.add_parser("study", help="convergence study in space or time")
    s.add_argument("--config", required=True)
    s.add_argument("--mesh")
    s.add_argument("--mode", choices=("space", "time"), required=True)
    s.add_argument("--levels", type=int, required=True)
    s.add_argument("--min-points", type=int, default=3, help="points required for a slope fit")
    s.add_argument("--out", default=".")
    s.set_defaults(func=cmd_study)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    limiter = _limit_threads()
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MeshError as exc:
        print(f"mesh error: {exc}", file=sys.stderr)
        return EXIT_MESH
    except SolverFailure as exc:
        print(f"solver failure: {exc}; report: {exc.report}", file=sys.stderr)
        return EXIT_SOLVER
    except (MechanicsError, np.linalg.LinAlgError, RuntimeError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    finally:
        if limiter is not None:
            limiter.restore_original_limits()


if __name__ == "__main__":
    sys.exit(main())
