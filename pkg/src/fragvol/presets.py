"""The power-law benchmark matrix as ready-to-run configurations.

Twenty models: ``alpha in {0.5, 0.1, -0.5, -1, -2}`` crossed with
``nu in {0, -0.5, -1, -1.5}``, ``N = 5``, ``R = 15``, unit initial data.

The horizon ``T`` of each preset is the first time at which the continuous
mass of a coarse run falls below 1% of its initial value, rounded up to two
significant figures (see :func:`near_equilibrium_time`).  The values are
frozen in :data:`HORIZONS` so configurations do not shift when the solver
changes; ``python -m fragvol.presets --check`` recomputes them.
"""
from __future__ import annotations

import argparse
import json
import math
from pathlib import Path

import numpy as np

from .kernels import PowerLawModel
from .mesh import build_uniform_mesh
from .solver import RunOptions, run, step_one

ALPHAS = (0.5, 0.1, -0.5, -1.0, -2.0)
NUS = (0.0, -0.5, -1.0, -1.5)
N, R = 5, 15.0
CELLS = 160

HORIZONS = {
    (0.5, 0.0): 3.2, (0.5, -0.5): 2.9, (0.5, -1.0): 2.4, (0.5, -1.5): 2.0,
    (0.1, 0.0): 7.2, (0.1, -0.5): 6.4, (0.1, -1.0): 5.4, (0.1, -1.5): 4.5,
    (-0.5, 0.0): 28.0, (-0.5, -0.5): 25.0, (-0.5, -1.0): 22.0, (-0.5, -1.5): 19.0,
    (-1.0, 0.0): 89.0, (-1.0, -0.5): 80.0, (-1.0, -1.0): 71.0, (-1.0, -1.5): 61.0,
    (-2.0, 0.0): 1100.0, (-2.0, -0.5): 960.0, (-2.0, -1.0): 880.0, (-2.0, -1.5): 800.0,
}


def pairs():
    return [(a, n) for a in ALPHAS for n in NUS]


def preset_name(alpha: float, nu: float) -> str:
    return f"powerlaw_a{alpha:g}_nu{nu:g}"


def _round_up_2sig(t: float) -> float:
    e = math.floor(math.log10(t)) - 1
    return float(round(math.ceil(t / 10**e - 1e-9) * 10**e, 10))


def near_equilibrium_time(alpha: float, nu: float, cells: int = 40, fraction: float = 0.01) -> float:
    model = PowerLawModel(alpha, nu, N, R)
    mesh = build_uniform_mesh(N, R, cells)
    T = 2.0
    while True:
        _, rep = run(model, mesh, step_one(), np.ones(N), T, RunOptions(decimation=1))
        cm = np.array(rep.continuous_mass_series)
        hit = np.flatnonzero(cm < fraction * cm[0])
        if hit.size:
            return _round_up_2sig(rep.times[hit[0]])
        T *= 2


def preset_config(alpha: float, nu: float, cells: int = CELLS) -> dict:
    return {
        "name": preset_name(alpha, nu),
        "mode": "run",
        "model": {"N": N, "R": R, "kernel": {"type": "powerlaw", "alpha": alpha, "nu": nu}},
        "initial": {"c0": "step_one", "d0": 1.0},
        "mesh": {"cells": cells},
        "time": {"T": HORIZONS[(alpha, nu)], "theta_max": 0.9, "safety": 0.9},
        "outputs": {"dir": f"out/{preset_name(alpha, nu)}"},
        "converge": {"levels": 4, "base_cells": 10, "refine_factor": 8},
    }


def write_presets(directory) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for alpha, nu in pairs():
        path = directory / f"{preset_name(alpha, nu)}.json"
        path.write_text(json.dumps(preset_config(alpha, nu), indent=2) + "\n")
        paths.append(path)
    return paths


def main(argv=None):
    ap = argparse.ArgumentParser(description="Write the power-law benchmark configurations.")
    ap.add_argument("directory", nargs="?", default="configs/paper")
    ap.add_argument("--check", action="store_true", help="recompute the horizons and compare")
    args = ap.parse_args(argv)
    if args.check:
        bad = 0
        for alpha, nu in pairs():
            t = near_equilibrium_time(alpha, nu)
            flag = "" if t == HORIZONS[(alpha, nu)] else "  MISMATCH"
            bad += bool(flag)
            print(f"{preset_name(alpha, nu)}: T={t:g}{flag}")
        return 1 if bad else 0
    for p in write_presets(args.directory):
        print(p)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
