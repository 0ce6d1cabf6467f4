"""``fragvol`` command line.

Subcommands ``run``, ``converge``, ``validate`` and ``sweep-r`` all read one
JSON config (see :mod:`fragvol.config`).  Exit codes:

0  success
2  bad configuration, unstable or degenerate time step, ladder too short
3  runtime invariant violated or non-finite state
4  kernel mass condition violated (``validate``)
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from fractions import Fraction
from pathlib import Path

import numpy as np

from .config import RunConfig
from .diagnostics import convergence_ladder, worker_count
from .errors import (
    ConfigError,
    DegenerateModel,
    FragvolError,
    InvariantViolation,
    KernelError,
    MeshError,
    NegativeInitialData,
)
from .kernels import check_continuous_mass_condition, check_discrete_mass_condition
from .output import TrajectoryCSV, dumps, fmt
from .solver import UnstableTimeStep, run

log = logging.getLogger("fragvol")

EXIT_OK, EXIT_CONFIG, EXIT_INVARIANT, EXIT_CONDITION = 0, 2, 3, 4


def exit_code_for(exc: BaseException) -> int:
    """Map a fragvol error onto the documented exit code."""
    if isinstance(exc, (ConfigError, UnstableTimeStep, DegenerateModel, MeshError, KernelError,
                        NegativeInitialData)):
        return EXIT_CONFIG
    # invariant violations, non-finite states and any other runtime failure
    return EXIT_INVARIANT


def _report_error(exc: FragvolError) -> None:
    if isinstance(exc, ConfigError):
        print("configuration error:", file=sys.stderr)
        for p in exc.problems:
            print(f"  - {p}", file=sys.stderr)
    elif isinstance(exc, InvariantViolation):
        print(f"invariant violated ({exc.invariant or 'unknown'}): {exc}", file=sys.stderr)
    else:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)


def _out_dir(cfg: RunConfig, override) -> Path:
    out = Path(override or cfg.outputs.dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _summary(cfg, report, mesh) -> dict:
    data = report.to_dict()
    # wall-clock time would break byte-identical reruns; keep only counters
    data["timings"] = {"steps": report.steps, "cells": mesh.cell_count}
    return {"name": cfg.name, "mesh": {"N": mesh.N, "R": mesh.R, "cells": mesh.cell_count, "h": mesh.h},
            **data}


# ---------------------------------------------------------------------------
# commands

def cmd_run(cfg: RunConfig, out=None, unsafe_dt=None) -> int:
    out = _out_dir(cfg, out)
    model, mesh = cfg.build_model(), cfg.build_mesh()
    c0, d0 = cfg.initial_data()
    options = cfg.run_options(unsafe_dt)
    t0 = time.perf_counter()
    with open(out / "trajectory.csv", "w", newline="") as fh:
        sink = TrajectoryCSV(fh, options)
        state, report = run(model, mesh, c0, d0, cfg.time.T, options, sink=sink)
        if report.steps == 0:
            sink(state)
    (out / "summary.json").write_text(dumps(_summary(cfg, report, mesh)))
    log.info("run finished: %d steps in %.3fs", report.steps, time.perf_counter() - t0)
    print(f"steps={report.steps} dt={fmt(report.dt)} initial_mass={fmt(report.initial_mass)} "
          f"final_mass={fmt(report.final_mass)} max_relative_drift={report.max_mass_drift:.3e}")
    if report.first_negative is not None:
        print(f"first negative entry: {report.first_negative}")
    return EXIT_OK


def cmd_converge(cfg: RunConfig, levels=None, out=None) -> int:
    levels = cfg.converge.levels if levels is None else levels
    if levels < 3:
        raise ConfigError([f"a convergence ladder needs at least 3 levels, got {levels}"])
    out = _out_dir(cfg, out)
    model = cfg.build_model()
    base_cfg = replace(cfg, mesh=replace(cfg.mesh, cells=cfg.converge.base_cells, h=None))
    base = base_cfg.build_mesh()
    c0, d0 = cfg.initial_data()
    result = convergence_ladder(model, c0, d0, cfg.time.T, base, levels, cfg.converge.refine_factor,
                                cfg.run_options())
    with open(out / "ladder.csv", "w", newline="") as fh:
        result.write_csv(fh)
    summary = {
        "name": cfg.name,
        "T": cfg.time.T,
        "levels": levels,
        "refine_factor": result.refine_factor,
        "ladder": [{"h": e.h, "dt": e.dt, "cells": e.cells, "steps": e.steps, "error": e.error,
                    "pair_slope": e.pair_slope} for e in result.entries],
        "slopes": result.slopes,
        "finest_slope": result.finest_slope,
        "mean_slope": result.mean_slope,
    }
    (out / "ladder.json").write_text(dumps(summary))
    for e in result.entries:
        slope = "undefined" if e.pair_slope is None else f"{e.pair_slope:.4f}"
        print(f"h={e.h:.6g} dt={e.dt:.6g} error={e.error:.6e} slope={slope}")
    if result.finest_slope is None:
        print("finest-pair slope: undefined (zero error)")
    else:
        print(f"finest-pair slope: {result.finest_slope:.4f}")
    print("mean slope: " + ("undefined" if result.mean_slope is None else f"{result.mean_slope:.4f}"))
    return EXIT_OK


def cmd_validate(cfg: RunConfig, samples=None, out=None) -> int:
    samples = cfg.validate.samples if samples is None else samples
    model = cfg.build_model()
    rng = np.random.default_rng(cfg.validate.seed)
    ys = np.sort(rng.uniform(model.N, model.R, samples))
    tol = cfg.validate.tol
    cont = [check_continuous_mass_condition(model, float(y), quad_tol=min(tol, 1e-12)) for y in ys]
    disc = {i: check_discrete_mass_condition(model, i) for i in range(2, model.N + 1)}
    worst = max(cont) if cont else 0.0
    worst_y = float(ys[int(np.argmax(cont))]) if cont else None
    ok = worst <= tol and all(abs(r) <= tol for r in disc.values())
    print(f"continuous condition: max residual {worst:.3e} over {samples} samples (y={worst_y})")
    for i, r in disc.items():
        print(f"discrete condition i={i}: residual {r}")
    print("conditions satisfied" if ok else "conditions VIOLATED")
    result = {
        "name": cfg.name, "tolerance": tol, "samples": samples, "seed": cfg.validate.seed,
        "continuous_max_residual": worst, "continuous_worst_y": worst_y,
        "discrete_residuals": {str(i): _fraction_text(r) for i, r in disc.items()},
        "satisfied": ok,
    }
    (_out_dir(cfg, out) / "validate.json").write_text(dumps(result))
    return EXIT_OK if ok else EXIT_CONDITION


def _fraction_text(r):
    r = Fraction(r)
    return str(r) if r.denominator != 1 else int(r)


def cmd_sweep_r(cfg: RunConfig, R_values=None, out=None, unsafe_dt=None) -> int:
    R_values = list(cfg.sweep.R_values if R_values is None else R_values)
    if not R_values:
        raise ConfigError(["sweep-r needs at least one R value"])
    problems = [f"R={R!r} must exceed N={cfg.model.N}" for R in R_values if not R > cfg.model.N]
    if problems:
        raise ConfigError(problems)
    out = _out_dir(cfg, out)
    c0, d0 = cfg.initial_data()
    options = cfg.run_options(unsafe_dt)

    def one(R):
        mesh = cfg.build_mesh(R)
        state, report = run(cfg.build_model(R), mesh, c0, d0, cfg.time.T, options)
        return R, mesh, report

    with ThreadPoolExecutor(max_workers=min(worker_count(), len(R_values))) as pool:
        results = list(pool.map(one, R_values))

    header = ["R", "cells", "h", "initial_mass", "final_continuous_mass", "final_discrete_mass",
              "final_mass", "max_relative_drift"]
    runs = []
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for R, mesh, rep in results:
            row = [R, mesh.cell_count, mesh.h, rep.initial_mass, rep.continuous_mass_series[-1],
                   rep.discrete_mass_series[-1], rep.final_mass, rep.max_mass_drift]
            w.writerow([v if isinstance(v, int) else fmt(v) for v in row])
            runs.append(dict(zip(header, row)) | {"summary": _summary(cfg, rep, mesh)})
            print(f"R={R:g} cells={mesh.cell_count} final continuous={rep.continuous_mass_series[-1]:.10g} "
                  f"discrete={rep.discrete_mass_series[-1]:.10g} drift={rep.max_mass_drift:.2e}")
    (out / "sweep.json").write_text(dumps({"name": cfg.name, "runs": runs}))
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point

def _parse_R_values(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad R list {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fragvol", description="Finite-volume solver for mixed "
                                 "discrete/continuous fragmentation models.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="JSON configuration file")
    common.add_argument("--out", help="output directory (default: outputs.dir of the config)")
    p = sub.add_parser("run", parents=[common], help="single run: trajectory.csv + summary.json")
    p.add_argument("--unsafe-dt", type=float, metavar="FACTOR",
                   help="bypass the governor: dt = FACTOR x the continuous nonnegativity bound")
    p = sub.add_parser("converge", parents=[common], help="halving ladder against a fine reference")
    p.add_argument("--levels", type=int)
    p = sub.add_parser("validate", parents=[common], help="check the kernel mass conditions")
    p.add_argument("--samples", type=int)
    p = sub.add_parser("sweep-r", parents=[common], help="repeat a run for several truncation points R")
    p.add_argument("--R-values", type=_parse_R_values, metavar="R1,R2,...")
    p.add_argument("--unsafe-dt", type=float, metavar="FACTOR")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = RunConfig.load(args.config)
        if cfg.mode != args.command:
            log.info("config mode %r overridden by command %r", cfg.mode, args.command)
        if args.command == "run":
            return cmd_run(cfg, args.out, args.unsafe_dt)
        if args.command == "converge":
            return cmd_converge(cfg, args.levels, args.out)
        if args.command == "validate":
            if args.samples is not None and args.samples < 1:
                raise ConfigError(["--samples must be positive"])
            return cmd_validate(cfg, args.samples, args.out)
        return cmd_sweep_r(cfg, args.R_values, args.out, args.unsafe_dt)
    except FragvolError as exc:
        _report_error(exc)
        return exit_code_for(exc)


if __name__ == "__main__":
    sys.exit(main())
