"""Command line entry point: ``mildflow simulate | diagnose | rescale | verify``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .diagnostics import DiagnosticsConfig, diagnose
from .fields import VectorField
from .io import (
    load_trajectory,
    read_json,
    save_trajectory,
    write_json,
    write_norm_series,
    write_snapshot,
)
from .rescaler import RescaleParams, residual_check, zoom
from .scenario import Scenario, ScenarioError, build_initial, load_scenario
from .solver import MarchError, SolverError, march, solver_constants
from .verify import run_checks

log = logging.getLogger("mildflow")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_SOLVER = 2

TRAJECTORY = "trajectory.npz"
MANIFEST = "manifest.json"
REPORT = "report.json"
NORMS = "norms.csv"


def _write_outputs(out: Path, traj, diag_cfg: DiagnosticsConfig) -> dict:
    report = diagnose(traj, diag_cfg)
    write_norm_series(report.csv_rows(), out / NORMS)
    write_json(report.as_dict(), out / REPORT)
    save_trajectory(traj, out / TRAJECTORY)
    return report.as_dict()


def _snapshot_name(role: str, t: float) -> str:
    return f"{role}_t{t:.6g}.mfld"


def run(scenario: Scenario, out_dir) -> int:
    """Solve the scenario and write CSV, report, trajectory, snapshots and manifest.

    Returns 0 on success and 2 when marching failed or stopped early; the
    manifest then carries ``blowup: true`` and the failing window's record.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    u0, d0 = build_initial(scenario)
    consts = solver_constants(u0, d0, scenario.solver.C_star, scenario.solver.T_max)
    manifest = {
        "version": __version__,
        "scenario": scenario.raw,
        "config_hash": scenario.config_hash,
        "seed": scenario.seed,
        "grid": {
            "dimension": scenario.grid.dimension,
            "modes_per_axis": scenario.grid.modes_per_axis,
            "period_length": scenario.grid.period,
        },
        "constants": consts.as_dict(),
        "regularity_index": 0,
        "time_T": scenario.time_T,
    }
    failure = None
    try:
        traj = march(u0, d0, scenario.time_T, scenario.solver)
    except MarchError as exc:
        log.error("%s", exc)
        failure = {
            "message": str(exc),
            "window": exc.window,
            "t_start": exc.t_start,
            "picard": exc.record.as_dict() if exc.record else None,
        }
        traj = exc.partial
    except SolverError as exc:
        log.error("%s", exc)
        failure = {"message": str(exc), "picard": exc.record.as_dict() if exc.record else None}
        traj = None

    blowup = failure is not None or (traj is not None and traj.blowup)
    manifest["blowup"] = blowup
    manifest["failure"] = failure
    if traj is not None:
        manifest["reached_time"] = traj.t1
        manifest["windows"] = [r.as_dict() for r in traj.records]
        _write_outputs(out, traj, scenario.diagnostics)
        snaps = []
        for t in scenario.snapshot_times:
            if t > traj.t1:
                continue
            uh, dh = traj.interpolate(t)
            write_snapshot(VectorField(traj.grid, uh, "velocity"), out / _snapshot_name("u", t))
            write_snapshot(VectorField(traj.grid, dh, "director"), out / _snapshot_name("d", t))
            snaps.append(t)
        manifest["snapshots"] = snaps
    status = EXIT_SOLVER if blowup else EXIT_OK
    manifest["exit_status"] = status
    write_json(manifest, out / MANIFEST)
    return status


def _cmd_simulate(args) -> int:
    scen = load_scenario(args.scenario)
    out = args.out or scen.output_dir or Path("runs") / scen.name
    status = run(scen, out)
    print(f"{'ok' if status == EXIT_OK else 'stopped early'}: outputs in {out}")
    return status


def _diag_config(run_dir: Path, args) -> DiagnosticsConfig:
    base = {}
    manifest = run_dir / MANIFEST
    if manifest.exists():
        base = read_json(manifest).get("scenario", {}).get("diagnostics", {}) or {}
    kw = {
        "sigma": base.get("sigma_vorticity", 1.0),
        "a": base.get("a", 4.0),
        "b": base.get("b", 6.0),
        "t_blow": base.get("t_blow_time"),
    }
    for key, val in (("sigma", args.sigma), ("a", args.a), ("b", args.b), ("t_blow", args.t_blow)):
        if val is not None:
            kw[key] = val
    cfg = DiagnosticsConfig(**{k: (float(v) if v is not None else None) for k, v in kw.items()})
    cfg.window()
    return cfg


def _cmd_diagnose(args) -> int:
    run_dir = Path(args.run_dir)
    traj = load_trajectory(run_dir / TRAJECTORY)
    report = diagnose(traj, _diag_config(run_dir, args))
    write_norm_series(report.csv_rows(), run_dir / NORMS)
    write_json(report.as_dict(), run_dir / REPORT)
    print(f"diagnostics written to {run_dir / REPORT}")
    return EXIT_OK


def _cmd_rescale(args) -> int:
    run_dir = Path(args.run_dir)
    traj = load_trajectory(run_dir / TRAJECTORY)
    xk = [float(x) for x in args.xk] if args.xk else [0.0] * traj.grid.dimension
    p = RescaleParams(args.m, tuple(np.mod(xk, traj.grid.period)), args.tk)
    zoomed = zoom(traj, p)
    out = Path(args.out) if args.out else run_dir / f"zoom_M{args.m:g}"
    out.mkdir(parents=True, exist_ok=True)
    save_trajectory(zoomed, out / TRAJECTORY)
    doc = {"M": p.M, "x_k": list(p.x_k), "t_k": p.t_k, "period_length": zoomed.grid.period}
    if traj.nt >= 2:
        doc["source_residual"] = residual_check(traj)
        doc["zoom_residual"] = residual_check(zoomed)
    write_json(doc, out / "rescale.json")
    print(f"zoomed trajectory written to {out}")
    return EXIT_OK


def _cmd_verify(args) -> int:
    checks = run_checks(quick=args.quick)
    for c in checks:
        print(c.line())
    failed = sum(not c.passed for c in checks)
    print(f"{len(checks) - failed}/{len(checks)} checks passed")
    return EXIT_OK if failed == 0 else EXIT_SOLVER


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mildflow", description="Mild-solution solver for nematic liquid-crystal flow")
    ap.add_argument("--version", action="version", version=f"mildflow {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="solve a scenario and write outputs")
    s.add_argument("scenario")
    s.add_argument("--out")
    s.set_defaults(func=_cmd_simulate)

    d = sub.add_parser("diagnose", help="recompute diagnostics for a stored run")
    d.add_argument("run_dir")
    d.add_argument("--sigma", type=float)
    d.add_argument("--a", type=float)
    d.add_argument("--b", type=float)
    d.add_argument("--t-blow", dest="t_blow", type=float)
    d.set_defaults(func=_cmd_diagnose)

    r = sub.add_parser("rescale", help="zoom a stored trajectory")
    r.add_argument("run_dir")
    r.add_argument("--m", type=float, required=True)
    r.add_argument("--xk", type=float, nargs="+")
    r.add_argument("--tk", type=float, default=0.0)
    r.add_argument("--out")
    r.set_defaults(func=_cmd_rescale)

    v = sub.add_parser("verify", help="run the built-in invariant checks")
    v.add_argument("--quick", action="store_true")
    v.set_defaults(func=_cmd_verify)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (FileNotFoundError, ScenarioError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
