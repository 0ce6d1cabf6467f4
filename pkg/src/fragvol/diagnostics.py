"""Mass functionals, space-time L1 errors and convergence ladders.

Trajectories are piecewise constant in space and time: row ``n`` of
``Trajectory.u_C`` is the cell vector on ``[t_n, t_{n+1})``.  Fine
trajectories are transferred to coarser grids by *conservative* restriction,
i.e. averaging with weight ``x dx`` so the continuous mass of the field is
unchanged.
"""
from __future__ import annotations

import csv
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import DivisionByZeroDenominator, GridMismatch, NonpositiveError
from .kernels import KernelModel, build_coefficients
from .mesh import Mesh
from .solver import Discretization, RunOptions, State, run, stability_governor

logger = logging.getLogger(__name__)


def continuous_mass(state: State, mesh: Mesh) -> float:
    return float(np.dot(mesh.midpoints * mesh.widths, state.u_C))


def discrete_mass(state: State) -> float:
    return float(np.dot(np.arange(1, len(state.u_D) + 1), state.u_D))


def total_mass(state: State, mesh: Mesh) -> float:
    """``sum_i x_i dx_i u_C^i + sum_i i u_D^i``."""
    return continuous_mass(state, mesh) + discrete_mass(state)


# ---------------------------------------------------------------------------
# restriction

def _nesting(fine: Mesh, coarse: Mesh) -> np.ndarray:
    """Index of the first fine cell inside every coarse cell."""
    tol = 1e-12 * max(abs(fine.R), 1.0)
    if abs(fine.N - coarse.N) > tol or abs(fine.R - coarse.R) > tol:
        raise GridMismatch(f"{fine!r} and {coarse!r} cover different intervals")
    pos = np.searchsorted(fine.edges, coarse.edges - tol)
    pos = np.clip(pos, 0, fine.cell_count)
    if np.any(np.abs(fine.edges[pos] - coarse.edges) > tol):
        raise GridMismatch("coarse mesh edges are not edges of the fine mesh")
    return pos[:-1]


def restrict_field(values, fine: Mesh, coarse: Mesh, weight: str = "mass") -> np.ndarray:
    """Average a fine piecewise-constant field onto the cells of ``coarse``.

    ``weight="mass"`` averages with ``x dx`` (preserves continuous mass and
    constants); ``weight="width"`` uses plain ``dx``.  ``values`` may carry
    leading axes (e.g. time).
    """
    starts = _nesting(fine, coarse)
    if weight == "mass":
        w = fine.midpoints * fine.widths
    elif weight == "width":
        w = np.asarray(fine.widths)
    else:
        raise ValueError(f"unknown weight {weight!r}")
    values = np.asarray(values, float)
    num = np.add.reduceat(values * w, starts, axis=-1)
    return num / np.add.reduceat(w, starts)


@dataclass(eq=False)
class Trajectory:
    """Piecewise-constant space-time field on ``mesh x [0, T)``."""

    mesh: Mesh
    T: float
    u_C: np.ndarray
    u_D: np.ndarray

    @property
    def steps(self) -> int:
        return self.u_C.shape[0]

    @property
    def dt(self) -> float:
        return self.T / self.steps

    def restrict(self, mesh: Mesh, steps: int) -> "Trajectory":
        """Conservative restriction onto a coarser nested space-time grid."""
        if steps < 1 or self.steps % steps:
            raise GridMismatch(f"{self.steps} time steps cannot be grouped into {steps}")
        r = self.steps // steps
        C = restrict_field(self.u_C, self.mesh, mesh)
        C = C.reshape(steps, r, -1).mean(axis=1)
        D = self.u_D.reshape(steps, r, -1).mean(axis=1)
        return Trajectory(mesh, self.T, C, D)


class TrajectoryRecorder:
    """Run sink that keeps states ``0..M-1``, optionally restricted on the fly.

    With a target grid the fine states are averaged into the target's
    space-time cells as they arrive, so fine reference runs never hold their
    full history in memory.
    """

    def __init__(self, target_mesh: Mesh | None = None, target_steps: int | None = None):
        self.target_mesh = target_mesh
        self.target_steps = target_steps
        self.trajectory: Trajectory | None = None

    def begin(self, mesh, grid):
        self._mesh, self._M = mesh, grid.steps
        tmesh = self.target_mesh or mesh
        tsteps = self.target_steps or grid.steps
        if grid.steps % tsteps:
            raise GridMismatch(f"{grid.steps} steps do not refine {tsteps}")
        self._starts = _nesting(mesh, tmesh) if tmesh is not mesh else None
        self._ratio = grid.steps // tsteps
        self._w = mesh.midpoints * mesh.widths
        self._wsum = None if self._starts is None else np.add.reduceat(self._w, self._starts)
        self._C = np.zeros((tsteps, tmesh.cell_count))
        self._D = None
        self._tmesh, self._T = tmesh, grid.final_time

    def __call__(self, state: State):
        n = state.step_index
        if n >= self._M:
            return
        if self._D is None:
            self._D = np.zeros((self._C.shape[0], len(state.u_D)))
        row = n // self._ratio
        if self._starts is None:
            self._C[row] += state.u_C
        else:
            self._C[row] += np.add.reduceat(state.u_C * self._w, self._starts) / self._wsum
        self._D[row] += state.u_D

    def end(self, state):
        D = self._D if self._D is not None else np.zeros((self._C.shape[0], len(state.u_D)))
        self.trajectory = Trajectory(self._tmesh, self._T, self._C / self._ratio, D / self._ratio)


# ---------------------------------------------------------------------------
# error metric

def l1_norm(traj: Trajectory) -> float:
    """``int_0^T sum_i i |u_D| dt + int_0^T int_N^R |u_C| x dx dt``."""
    w = traj.mesh.midpoints * traj.mesh.widths
    species = np.arange(1, traj.u_D.shape[1] + 1)
    return traj.dt * (float(np.sum(np.abs(traj.u_C) @ w)) + float(np.sum(np.abs(traj.u_D) @ species)))


def l1_distance(a: Trajectory, b: Trajectory) -> float:
    if a.u_C.shape != b.u_C.shape or a.u_D.shape != b.u_D.shape or a.mesh != b.mesh:
        raise GridMismatch("trajectories live on different grids")
    return l1_norm(Trajectory(a.mesh, a.T, a.u_C - b.u_C, a.u_D - b.u_D))


def relative_L1_error(approx: Trajectory, reference: Trajectory) -> float:
    """``||u_h - u|| / ||u||`` with the reference restricted onto ``approx``'s grid."""
    if abs(approx.T - reference.T) > 1e-12 * max(approx.T, 1.0):
        raise GridMismatch(f"final times differ: {approx.T} vs {reference.T}")
    if reference.mesh != approx.mesh or reference.steps != approx.steps:
        reference = reference.restrict(approx.mesh, approx.steps)
    denom = l1_norm(reference)
    if denom == 0:
        raise DivisionByZeroDenominator("reference solution has zero norm")
    return l1_distance(approx, reference) / denom


def observed_order(ladder) -> tuple[list[float], float]:
    """Per-pair slopes ``ln(e1/e2) / ln(h1/h2)`` and their mean."""
    ladder = [(float(h), float(e)) for h, e in ladder]
    if len(ladder) < 2:
        raise NonpositiveError("need at least two ladder entries")
    for h, e in ladder:
        if not (e > 0 and h > 0):
            raise NonpositiveError(f"errors and mesh sizes must be positive, got h={h}, error={e}")
    slopes = [math.log(e1 / e2) / math.log(h1 / h2)
              for (h1, e1), (h2, e2) in zip(ladder, ladder[1:])]
    return slopes, sum(slopes) / len(slopes)


# ---------------------------------------------------------------------------
# reference solution and ladders

def reference_oracle(
    model: KernelModel,
    c0,
    d0,
    T: float,
    refine_factor: int,
    target_mesh: Mesh,
    target_steps: int,
    options: RunOptions | None = None,
) -> Trajectory:
    """Fine-grid run of the same scheme, restricted onto ``target``.

    Space and time are both refined by ``refine_factor``.
    """
    if refine_factor < 4:
        raise ValueError("refine_factor must be at least 4")
    base = options or RunOptions()
    opts = _copy_options(base, steps=target_steps * refine_factor, dt_max=base.dt_max or T)
    fine = target_mesh.refine(refine_factor)
    rec = TrajectoryRecorder(target_mesh, target_steps)
    run(model, fine, c0, d0, T, opts, sink=rec)
    return rec.trajectory


def _copy_options(options, **changes):
    base = options or RunOptions()
    return RunOptions(**{**base.__dict__, **changes})


@dataclass
class LadderEntry:
    h: float
    dt: float
    cells: int
    steps: int
    error: float
    pair_slope: float | None = None


@dataclass
class LadderResult:
    entries: list[LadderEntry]
    refine_factor: int
    T: float
    slopes: list[float | None] = field(default_factory=list)

    @property
    def finest_slope(self) -> float | None:
        return self.slopes[-1] if self.slopes else None

    @property
    def mean_slope(self) -> float | None:
        good = [s for s in self.slopes if s is not None]
        return sum(good) / len(good) if good and len(good) == len(self.slopes) else None

    def rows(self):
        return [(e.h, e.dt, e.error, e.pair_slope) for e in self.entries]

    def write_csv(self, fh) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["h", "dt", "error", "pair_slope"])
        for h, dt, err, slope in self.rows():
            w.writerow([format(h, ".17g"), format(dt, ".17g"), format(err, ".17g"),
                        "" if slope is None else format(slope, ".17g")])


def worker_count(default: int | None = None) -> int:
    env = os.environ.get("FRAGVOL_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            logger.warning("ignoring FRAGVOL_THREADS=%r", env)
    return default or max(1, os.cpu_count() or 1)


def base_step_count(model, meshes_and_factors, T, options: RunOptions) -> int:
    """Smallest ``M0`` such that ``dt = T/(M0 * f)`` passes the governor on every mesh."""
    M0 = 1
    for mesh, factor in meshes_and_factors:
        coeffs = build_coefficients(model, mesh, options.coefficient_method)
        rep = stability_governor(coeffs, mesh, options.theta_max, options.safety,
                                 options.dt_max or T)
        M0 = max(M0, math.ceil(T / (rep.dt_chosen * factor) - 1e-9))
    return M0


def convergence_ladder(
    model: KernelModel,
    c0,
    d0,
    T: float,
    base_mesh: Mesh,
    levels: int = 4,
    refine_factor: int = 8,
    options: RunOptions | None = None,
    workers: int | None = None,
) -> LadderResult:
    """Halving ladder ``h, h/2, ...`` with ``dt`` halved alongside ``h``.

    Each level is compared with a reference run ``refine_factor`` times finer
    (in space and time) than the finest level.
    """
    if levels < 2:
        raise ValueError("a ladder needs at least two levels")
    options = options or RunOptions()
    # an explicit cap keeps kernels with no finite stability bound (e.g. all zero) usable
    options = _copy_options(options, dt_max=options.dt_max or T)
    meshes = [base_mesh.refine(2**l) for l in range(levels)]
    ref_factor = 2 ** (levels - 1) * refine_factor
    checks = [(m, 2**l) for l, m in enumerate(meshes)] + [(meshes[-1].refine(refine_factor), ref_factor)]
    M0 = base_step_count(model, checks, T, options)
    steps = [M0 * 2**l for l in range(levels)]

    def level(l):
        rec = TrajectoryRecorder()
        run(model, meshes[l], c0, d0, T, _copy_options(options, steps=steps[l]), sink=rec)
        return rec.trajectory

    def reference():
        return reference_oracle(model, c0, d0, T, refine_factor, meshes[-1], steps[-1], options)

    n_workers = workers or worker_count()
    with ThreadPoolExecutor(max_workers=n_workers) as pool:
        ref_future = pool.submit(reference)
        futures = [pool.submit(level, l) for l in range(levels)]
        trajs = [f.result() for f in futures]
        ref = ref_future.result()

    entries = []
    for l, traj in enumerate(trajs):
        err = relative_L1_error(traj, ref)
        entries.append(LadderEntry(meshes[l].h, T / steps[l], meshes[l].cell_count, steps[l], err))
    slopes = []
    for prev, cur in zip(entries, entries[1:]):
        try:
            s = observed_order([(prev.h, prev.error), (cur.h, cur.error)])[0][0]
        except NonpositiveError:
            s = None
        cur.pair_slope = s
        slopes.append(s)
    return LadderResult(entries, refine_factor, float(T), slopes)


def reference_self_consistency(model, c0, d0, T, target_mesh, target_steps, coarse_error,
                               factors=(4, 8), options=None) -> dict:
    """Compare references built with two refine factors.

    The finer one is accepted when the two differ (relative L1) by less than
    5% of ``coarse_error``.
    """
    lo, hi = (reference_oracle(model, c0, d0, T, f, target_mesh, target_steps, options) for f in factors)
    diff = relative_L1_error(lo, hi)
    return {"difference": diff, "threshold": 0.05 * coarse_error, "accepted": diff < 0.05 * coarse_error}


def scheme_for(model: KernelModel, mesh: Mesh, method: str = "auto") -> Discretization:
    return Discretization(build_coefficients(model, mesh, method), mesh)
