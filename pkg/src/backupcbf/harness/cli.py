"""Command line: ``run``, ``compare``, ``raster`` and ``verify-pair`` on a scenario config file.

Exit codes: 0 success, 2 configuration error, 3 run failure (including a
safety violation when ``require_safe`` is set), 4 numerical error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from ..errors import BackupCBFError, ConfigurationError
from ..synthesis import verify_validity
from ..systems import vehicle as veh
from .config import CONTROLLERS, ScenarioConfig, load_config
from .io import write_raster, write_report, write_trajectory_csv
from .raster import GridSpec, rasterize_sets
from .simulate import build_bundle, compare_controllers, exit_code_for, run_scenario

EXIT_OK, EXIT_CONFIG, EXIT_RUN, EXIT_NUMERICAL = 0, 2, 3, 4


def _out_dir(cfg: ScenarioConfig, args) -> Path:
    return Path(args.out if args.out else cfg.out_dir)


def _stem(cfg: ScenarioConfig, path: str) -> str:
    return Path(path).stem or cfg.system


def cmd_run(cfg: ScenarioConfig, args) -> int:
    out = _out_dir(cfg, args)
    stem = _stem(cfg, args.config)
    tlog = run_scenario(cfg)
    csv_path = write_trajectory_csv(tlog, out / (cfg.csv_name or f"{stem}_{cfg.controller}.csv"))
    lines = {**{f"meta.{k}": v for k, v in tlog.meta.items()}, **tlog.summary}
    if tlog.message:
        lines["message"] = tlog.message
    rep = write_report(lines, out / (cfg.report_name or f"{stem}_{cfg.controller}.txt"))
    for k, v in tlog.summary.items():
        print(f"{k}: {v}")
    print(f"csv: {csv_path}")
    print(f"report: {rep}")
    return exit_code_for(tlog, cfg)


def cmd_compare(cfg: ScenarioConfig, args) -> int:
    names = [c.strip() for c in args.controllers.split(",") if c.strip()]
    bad = [c for c in names if c not in CONTROLLERS]
    if not names or bad:
        raise ConfigurationError(f"unknown controllers {bad}; choose from {CONTROLLERS}")
    out = _out_dir(cfg, args)
    stem = _stem(cfg, args.config)
    rep = compare_controllers(cfg, names, safety_tol=cfg.safety_tol)
    for key, tlog in rep.logs.items():
        write_trajectory_csv(tlog, out / f"{stem}_{key.replace('#', '_')}.csv")
    lines = rep.as_lines()
    path = write_report(lines, out / (cfg.report_name or f"{stem}_compare.txt"))
    print("\n".join(lines))
    print(f"report: {path}")
    codes = [exit_code_for(tlog, cfg) for tlog in rep.logs.values()]
    if EXIT_NUMERICAL in codes:
        return EXIT_NUMERICAL
    return EXIT_RUN if EXIT_RUN in codes else EXIT_OK


def _parse_grid(text: str) -> tuple:
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError as exc:
        raise ConfigurationError(f"--grid expects WxH, got {text!r}") from exc
    if w < 1 or h < 1:
        raise ConfigurationError("--grid sizes must be positive")
    return w, h


def _pair_and_constraint(cfg: ScenarioConfig):
    """Backup pair, constraint and default raster extents for the configured system."""
    b = build_bundle(cfg)
    r = cfg.raster
    if cfg.system == "scalar":
        return b.pair_at(None), b.cf, (r.get("x_min", -1.5), r.get("x_max", 1.5)), None, (0,), None
    if cfg.system == "pendulum":
        xr = (r.get("x_min", -np.pi / 2), r.get("x_max", np.pi / 2))
        yr = (r.get("y_min", -1.5), r.get("y_max", 1.5))
        return b.pair_at(None), b.cf, xr, yr, (0, 1), None
    # vehicle: slice over (beta, omega) at fixed speed and steering angle
    p = b.params
    pair = veh.vehicle_backup_pair(p, r.get("delta", 0.0))
    xr = (r.get("x_min", -0.06), r.get("x_max", 0.06))
    yr = (r.get("y_min", -0.12), r.get("y_max", 0.12))
    base = np.array([r.get("speed", cfg.initial_state[0] if cfg.initial_state else 25.0), 0.0, 0.0])
    return pair, b.cf, xr, yr, (1, 2), base


def cmd_raster(cfg: ScenarioConfig, args) -> int:
    w, h = _parse_grid(args.grid)
    horizons = [float(v) for v in args.horizon.split(",")]
    pair, cf, xr, yr, dims, base = _pair_and_constraint(cfg)
    if yr is None and h != 1:
        raise ConfigurationError("the scalar system takes a grid of Wx1")
    grid = GridSpec(x_range=xr, nx=w, y_range=yr, ny=h, dims=dims, base=base)
    d_theta = cfg.raster.get("d_theta", min(0.1, min(T for T in horizons if T > 0) if any(horizons) else 0.1))
    res = rasterize_sets(cf, pair, grid, horizons, d_theta=d_theta)
    out = _out_dir(cfg, args)
    stem = _stem(cfg, args.config)
    for T in res.meta["horizons"]:
        path = write_raster(res, T, out / f"{stem}_raster_T{T:g}.bin")
        counts = {name: res.count(T, bit) for name, bit in (("S", 1), ("Sns", 2), ("SI", 4), ("Sb", 8))}
        print(f"T={T:g}: " + " ".join(f"{k}={v}" for k, v in counts.items()) + f" file={path}")
    return EXIT_OK


def cmd_verify(cfg: ScenarioConfig, args) -> int:
    if cfg.system == "vehicle":
        p = build_bundle(cfg).params
        delta = cfg.raster.get("delta", 0.0)
        pair, cf = veh.vehicle_backup_pair(p, delta), veh.vehicle_constraint(p)
    else:
        b = build_bundle(cfg)
        pair, cf = b.pair_at(None), b.cf
    rep = verify_validity(pair, cf, seed=cfg.seed)
    lines = [f"system: {cfg.system}", f"c: {pair.c:.9g}", *rep.as_lines(), f"passed: {'yes' if rep.passed else 'no'}"]
    path = write_report(lines, _out_dir(cfg, args) / (cfg.report_name or f"{_stem(cfg, args.config)}_verify.txt"))
    print("\n".join(lines))
    print(f"report: {path}")
    return EXIT_OK if rep.passed else EXIT_RUN


COMMANDS = {"run": cmd_run, "compare": cmd_compare, "raster": cmd_raster, "verify-pair": cmd_verify}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="backupcbf", description="Backup CBF safety filter scenarios.")
    ap.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("config", help="scenario config file (INI)")
    common.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    common.add_argument("--out", default=None, help="output directory")
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="simulate one scenario")
    pc = sub.add_parser("compare", parents=[common], help="run several controllers from the same start")
    pc.add_argument("--controllers", required=True, help="comma-separated controller ids")
    pr = sub.add_parser("raster", parents=[common], help="label set membership on a state grid")
    pr.add_argument("--grid", required=True, help="grid size WxH")
    pr.add_argument("--horizon", required=True, help="horizon T, or a comma-separated list")
    sub.add_parser("verify-pair", parents=[common], help="sampled validity check of the backup pair")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed)
        return COMMANDS[args.command](cfg, args)
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ArithmeticError as exc:
        print(f"numerical error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except BackupCBFError as exc:
        print(f"run failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUN


if __name__ == "__main__":
    sys.exit(main())
