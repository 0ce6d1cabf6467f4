"""Explicit finite-volume update for the coupled continuous/discrete system.

The continuous regime is advanced in conservative flux form,

    u_C' = u_C + dt/(x_i dx_i) (F_{i+1/2} - F_{i-1/2}) - dt/x_i S_i,

with zero flux through both ends of ``(N, R)``, and the discrete regime by an
explicit Euler step of its linear ODE system.  Every coefficient is fixed for
a given mesh, so :class:`Discretization` precomputes the prefix sums once and
each flux evaluation is a single ``O(I_h^2)`` product.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .errors import (
    DegenerateModel,
    InvariantViolation,
    NegativeInitialData,
    NonFiniteState,
    SolverError,
)
from .kernels import AveragedCoefficients, KernelModel, build_coefficients
from .mesh import Mesh, TimeGrid, build_time_grid

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class State:
    step_index: int
    time: float
    u_C: np.ndarray
    u_D: np.ndarray

    def min_entry(self) -> float:
        return float(min(self.u_C.min(initial=np.inf), self.u_D.min(initial=np.inf)))

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.u_C)) and np.all(np.isfinite(self.u_D)))


class UnstableTimeStep(SolverError):
    """Requested ``dt`` exceeds a governor bound and the bypass was not set."""


# ---------------------------------------------------------------------------
# initial data

class StepProfile:
    """``value`` on ``(lower, upper)``, zero elsewhere; cell averages are exact."""

    def __init__(self, value: float = 1.0, lower: float = -np.inf, upper: float = np.inf):
        self.value = float(value)
        self.lower = float(lower)
        self.upper = float(upper)

    def __call__(self, x):
        x = np.asarray(x, float)
        return np.where((x > self.lower) & (x < self.upper), self.value, 0.0)

    def cell_averages(self, edges) -> np.ndarray:
        edges = np.asarray(edges, float)
        lo = np.clip(edges[:-1], self.lower, self.upper)
        hi = np.clip(edges[1:], self.lower, self.upper)
        return self.value * (hi - lo) / np.diff(edges)


def step_one(upper: float = 15.0) -> StepProfile:
    """Unit initial density below ``upper``: the power-law benchmark datum."""
    return StepProfile(1.0, upper=upper)


def project_initial(c0, d0, mesh: Mesh, quad_tol: float = 1e-10) -> State:
    """Average ``c0`` over every cell; ``d0`` is copied.

    ``c0`` may be a number, an object with ``cell_averages(edges)`` or a
    callable (integrated cell by cell with adaptive quadrature).
    """
    if hasattr(c0, "cell_averages"):
        u = np.asarray(c0.cell_averages(mesh.edges), dtype=float)
    elif callable(c0):
        u = np.empty(mesh.cell_count)
        for i, (lo, hi) in enumerate(zip(mesh.edges[:-1], mesh.edges[1:])):
            val, _ = integrate.quad(lambda x: float(c0(x)), lo, hi, epsabs=quad_tol * (hi - lo),
                                    epsrel=1e-12, limit=200)
            u[i] = val / (hi - lo)
    else:
        u = np.full(mesh.cell_count, float(c0))
    d = np.array(d0, dtype=float).ravel()
    if not np.all(np.isfinite(u)) or not np.all(np.isfinite(d)):
        raise NegativeInitialData("initial data must be finite")
    if np.any(u < 0) or np.any(d < 0):
        raise NegativeInitialData("initial densities and concentrations must be nonnegative")
    return State(0, 0.0, u, d)


# ---------------------------------------------------------------------------
# operators

class Discretization:
    """Precomputed scheme operators for one coefficient set on one mesh."""

    def __init__(self, coeffs: AveragedCoefficients, mesh: Mesh):
        if coeffs.cell_count != mesh.cell_count:
            raise SolverError("coefficients and mesh disagree on the cell count")
        self.coeffs = coeffs
        self.mesh = mesh
        x, dx = mesh.midpoints, mesh.widths
        n = mesh.cell_count
        self.x, self.dx = x, dx
        self.xdx = x * dx
        # prefix[i, j] = sum_{k<i} x_k dx_k B_{k,j}, ascending k
        prefix = np.zeros((n + 1, n))
        np.cumsum(self.xdx[:, None] * coeffs.B, axis=0, out=prefix[1:])
        self.prefix = prefix
        # interior faces i = 1..n-1 only see cells j >= i
        self.flux_matrix = np.triu(prefix[1:n], k=1)
        species = np.arange(1, coeffs.N + 1, dtype=float)
        self.species = species
        self.sink_rate = coeffs.A * (species @ coeffs.B_tilde)
        self.discrete_matrix = coeffs.b_disc * coeffs.a_disc[None, :]
        self.coupling_matrix = coeffs.B_tilde * (coeffs.A * dx)[None, :]

    def fluxes(self, u_C: np.ndarray) -> np.ndarray:
        F = np.zeros(self.mesh.cell_count + 1)
        F[1:-1] = self.flux_matrix @ (self.coeffs.A * u_C * self.dx)
        return F

    def sinks(self, u_C: np.ndarray) -> np.ndarray:
        return self.sink_rate * u_C

    def advance(self, state: State, dt: float, F: np.ndarray | None = None) -> State:
        u, d = state.u_C, state.u_D
        if F is None:
            F = self.fluxes(u)
        S = self.sinks(u)
        u_new = u + dt / self.xdx * (F[1:] - F[:-1]) - dt / self.x * S
        d_new = (1.0 - dt * self.coeffs.a_disc) * d + dt * (self.discrete_matrix @ d) \
            + dt * (self.coupling_matrix @ u)
        new = State(state.step_index + 1, state.time + dt, u_new, d_new)
        if not new.is_finite():
            raise NonFiniteState(f"non-finite value produced at step {new.step_index}")
        return new

    def nonnegativity_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-cell continuous and per-species discrete ``dt`` bounds (``inf`` where unconstrained)."""
        loss = self.coeffs.A * np.diagonal(self.prefix[:-1]) + self.sink_rate
        with np.errstate(divide="ignore"):
            cont = np.where(loss > 0, self.x / np.where(loss > 0, loss, 1.0), np.inf)
            a = self.coeffs.a_disc
            disc = np.where(a > 0, 1.0 / np.where(a > 0, a, 1.0), np.inf)
        return cont, disc


def compute_fluxes(state: State, coeffs: AveragedCoefficients, mesh: Mesh) -> np.ndarray:
    """Face fluxes ``F_{-1/2} .. F_{I_h-1/2}`` (length ``I_h + 1``, zero at both ends)."""
    return Discretization(coeffs, mesh).fluxes(state.u_C)


def compute_sinks(state: State, coeffs: AveragedCoefficients, mesh: Mesh) -> np.ndarray:
    return Discretization(coeffs, mesh).sinks(state.u_C)


def step(state: State, coeffs: AveragedCoefficients, mesh: Mesh, dt: float) -> State:
    return Discretization(coeffs, mesh).advance(state, dt)


# reference implementations used as test oracles ------------------------------

def fluxes_direct(u_C, coeffs: AveragedCoefficients, mesh: Mesh) -> np.ndarray:
    """Face fluxes from the literal double sum, ``O(I_h^3)``."""
    x, dx, A, B = mesh.midpoints, mesh.widths, coeffs.A, coeffs.B
    n = mesh.cell_count
    F = np.zeros(n + 1)
    for i in range(1, n):
        total = 0.0
        for j in range(i, n):
            for k in range(i):
                total += x[k] * A[j] * B[k, j] * u_C[j] * dx[k] * dx[j]
        F[i] = total
    return F


def step_expanded(state: State, coeffs: AveragedCoefficients, mesh: Mesh, dt: float) -> State:
    """One step written as gain/loss per cell instead of flux differences."""
    x, dx, A, B, Bt = mesh.midpoints, mesh.widths, coeffs.A, coeffs.B, coeffs.B_tilde
    n, N = mesh.cell_count, coeffs.N
    u, d = state.u_C, state.u_D
    u_new = np.empty(n)
    for i in range(n):
        loss = sum(x[k] * B[k, i] * dx[k] for k in range(i)) + sum((j + 1) * Bt[j, i] for j in range(N))
        gain = sum(A[j] * B[i, j] * u[j] * dx[j] for j in range(i + 1, n))
        u_new[i] = (1.0 - dt / x[i] * A[i] * loss) * u[i] + dt * gain
    d_new = np.empty(N)
    for i in range(N):
        frag = sum(coeffs.a_disc[j] * coeffs.b_disc[i, j] * d[j] for j in range(i + 1, N))
        feed = sum(A[j] * Bt[i, j] * u[j] * dx[j] for j in range(n))
        d_new[i] = (1.0 - dt * coeffs.a_disc[i]) * d[i] + dt * frag + dt * feed
    return State(state.step_index + 1, state.time + dt, u_new, d_new)


def telescoping_residual(F: np.ndarray) -> float:
    """``sum_i F_{i+1/2} - sum_i F_{i-1/2}``, each side summed exactly."""
    return math.fsum(F[1:]) - math.fsum(F[:-1])


# ---------------------------------------------------------------------------
# time-step control

@dataclass(frozen=True)
class StabilityReport:
    dt_nonneg_continuous: float
    dt_nonneg_discrete: float
    dt_K: float
    dt_chosen: float
    theta: float
    binding_constraint: str
    theta_max: float = 0.9
    safety: float = 0.9

    @property
    def dt_limit(self) -> float:
        """Largest dt satisfying every bound (before the safety factor)."""
        return min(self.dt_nonneg_continuous, self.dt_nonneg_discrete, self.dt_K)

    def admits(self, dt: float) -> bool:
        return dt <= self.dt_limit

    def to_dict(self) -> dict:
        return {
            "dt_nonneg_continuous": self.dt_nonneg_continuous,
            "dt_nonneg_discrete": self.dt_nonneg_discrete,
            "dt_K": self.dt_K,
            "dt_chosen": self.dt_chosen,
            "theta": self.theta,
            "binding_constraint": self.binding_constraint,
            "theta_max": self.theta_max,
            "safety": self.safety,
        }


def stability_governor(
    coeffs: AveragedCoefficients,
    mesh: Mesh,
    theta_max: float = 0.9,
    safety: float = 0.9,
    dt_max: float | None = None,
) -> StabilityReport:
    """Largest admissible time step for nonnegativity and the contraction bound.

    ``dt_chosen = safety * min(bounds)``, capped by ``dt_max`` when given.
    Raises :class:`DegenerateModel` if nothing constrains ``dt`` and no
    ``dt_max`` was supplied.
    """
    if not 0 < theta_max < 1:
        raise SolverError(f"theta_max must lie in (0, 1), got {theta_max}")
    if not 0 < safety <= 1:
        raise SolverError(f"safety must lie in (0, 1], got {safety}")
    cont, disc = Discretization(coeffs, mesh).nonnegativity_bounds()
    dt_c = float(cont.min(initial=np.inf))
    dt_d = float(disc.min(initial=np.inf))
    dt_k = theta_max / coeffs.K_R if coeffs.K_R > 0 else np.inf
    bounds = {"continuous": dt_c, "discrete": dt_d, "contraction": dt_k}
    binding = min(bounds, key=bounds.get)
    dt = safety * bounds[binding]
    if dt_max is not None and dt_max < dt:
        dt, binding = float(dt_max), "user"
    if not math.isfinite(dt):
        raise DegenerateModel("no bound constrains dt (all rates vanish) and no dt_max was given")
    theta = coeffs.K_R * dt
    return StabilityReport(dt_c, dt_d, dt_k, dt, theta, binding, theta_max, safety)


# ---------------------------------------------------------------------------
# driver

@dataclass
class RunOptions:
    dt_max: float | None = None
    steps: int | None = None
    theta_max: float = 0.9
    safety: float = 0.9
    unsafe_dt: float | None = None
    check_invariants: bool = True
    step_mass_rtol: float = 1e-12
    run_mass_rtol: float = 1e-10
    decimation: int | None = None
    max_frames: int = 1000
    quad_tol: float = 1e-10
    coefficient_method: str = "auto"


@dataclass
class RunReport:
    steps: int
    dt: float
    final_time: float
    decimation: int
    stability: StabilityReport | None
    initial_mass: float
    final_mass: float = 0.0
    max_mass_drift: float = 0.0
    max_step_drift: float = 0.0
    max_boundary_flux: float = 0.0
    max_telescoping_residual: float = 0.0
    times: list = field(default_factory=list)
    mass_series: list = field(default_factory=list)
    continuous_mass_series: list = field(default_factory=list)
    discrete_mass_series: list = field(default_factory=list)
    min_entry_series: list = field(default_factory=list)
    first_negative: dict | None = None
    error: float | None = None
    ladder: list | None = None
    timings: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "steps": self.steps,
            "dt": self.dt,
            "final_time": self.final_time,
            "decimation": self.decimation,
            "initial_mass": self.initial_mass,
            "final_mass": self.final_mass,
            "max_relative_mass_drift": self.max_mass_drift,
            "mass_series": [[t, m] for t, m in zip(self.times, self.mass_series)],
            "continuous_mass_series": [[t, m] for t, m in zip(self.times, self.continuous_mass_series)],
            "discrete_mass_series": [[t, m] for t, m in zip(self.times, self.discrete_mass_series)],
            "min_value_series": [[t, m] for t, m in zip(self.times, self.min_entry_series)],
            "first_negative": self.first_negative,
            "stability_report": None if self.stability is None else self.stability.to_dict(),
            "error": self.error,
            "ladder": self.ladder,
            "warnings": list(self.warnings),
            "timings": dict(self.timings),
        }


def frame_stride(steps: int, options: RunOptions) -> int:
    """Record every ``stride``-th state so at most ``max_frames`` frames are kept."""
    return options.decimation or max(1, math.ceil((steps + 1) / options.max_frames))


def _call(sink, name, *args):
    fn = getattr(sink, name, None)
    if fn is not None:
        fn(*args)


def choose_time_grid(disc: Discretization, T: float, options: RunOptions) -> tuple[TimeGrid, StabilityReport]:
    """Pick ``dt = T/M`` from the governor, an explicit step count, or the bypass."""
    if options.unsafe_dt is not None:
        report = _unguarded_report(disc, options)
        factor = float(options.unsafe_dt)
        base = report.dt_nonneg_continuous
        if not math.isfinite(base):
            base = report.dt_limit
        if not math.isfinite(base):
            raise DegenerateModel("no finite bound to scale for the unsafe time step")
        grid = build_time_grid(T, factor * base)
        return grid, report
    report = stability_governor(disc.coeffs, disc.mesh, options.theta_max, options.safety, options.dt_max)
    if options.steps is not None:
        grid = TimeGrid(T / int(options.steps), int(options.steps), float(T))
        if not report.admits(grid.dt):
            raise UnstableTimeStep(
                f"dt={grid.dt!r} exceeds the stability limit {report.dt_limit!r} "
                f"({report.binding_constraint} bound)"
            )
        return grid, report
    return build_time_grid(T, report.dt_chosen), report


def _unguarded_report(disc, options):
    cont, dscr = disc.nonnegativity_bounds()
    K = disc.coeffs.K_R
    dt_k = options.theta_max / K if K > 0 else np.inf
    dt_c, dt_d = float(cont.min(initial=np.inf)), float(dscr.min(initial=np.inf))
    return StabilityReport(dt_c, dt_d, dt_k, math.nan, math.nan, "bypassed",
                           options.theta_max, options.safety)


def run(
    model: KernelModel,
    mesh: Mesh,
    c0,
    d0,
    T: float,
    options: RunOptions | None = None,
    sink=None,
    coeffs: AveragedCoefficients | None = None,
) -> tuple[State, RunReport]:
    """Advance from ``t = 0`` to ``t = T`` and check the invariants every step.

    ``sink`` receives every state ``n = 0..M`` (``sink(state)``), and may
    define ``begin(mesh, time_grid)`` and ``end(state)`` hooks.
    """
    options = options or RunOptions()
    t_start = time.perf_counter()
    if coeffs is None:
        coeffs = build_coefficients(model, mesh, options.coefficient_method)
    disc = Discretization(coeffs, mesh)
    state = project_initial(c0, d0, mesh, options.quad_tol)
    if len(state.u_D) != coeffs.N:
        raise SolverError(f"d0 has {len(state.u_D)} entries, expected N={coeffs.N}")
    species = disc.species
    m_c = float(disc.xdx @ state.u_C)
    m_d = float(species @ state.u_D)
    m0 = m_c + m_d
    if T == 0:
        report = RunReport(0, 0.0, 0.0, 1, None, m0, m0)
        report.times, report.mass_series = [0.0], [m0]
        report.continuous_mass_series, report.discrete_mass_series = [m_c], [m_d]
        report.min_entry_series = [state.min_entry()]
        return state, report

    grid, stab = choose_time_grid(disc, T, options)
    M, dt = grid.steps, grid.dt
    every = frame_stride(M, options)
    report = RunReport(M, dt, float(T), every, stab, m0, warnings=list(grid.warnings) + list(mesh.diagnostics))
    if options.unsafe_dt is not None:
        report.warnings.append(f"governor bypassed: dt={dt!r}")
    unsafe = options.unsafe_dt is not None
    check = options.check_invariants
    scale = m0 if m0 > 0 else 1.0
    bound_i = m0 * (1 + options.run_mass_rtol)

    def record(st, mc, md):
        report.times.append(st.time)
        report.mass_series.append(mc + md)
        report.continuous_mass_series.append(mc)
        report.discrete_mass_series.append(md)
        report.min_entry_series.append(st.min_entry())

    flagged = set()

    def violate(msg, step, invariant):
        # with the governor bypassed the run continues; each failure is noted once
        if not unsafe:
            raise InvariantViolation(msg, step, invariant)
        if invariant not in flagged:
            flagged.add(invariant)
            report.warnings.append(msg)

    _call(sink, "begin", mesh, grid)
    record(state, m_c, m_d)
    m_prev = m0
    for n in range(M):
        if sink is not None:
            sink(state)
        F = disc.fluxes(state.u_C)
        if check:
            edge = max(abs(F[0]), abs(F[-1]))
            tele = abs(telescoping_residual(F))
            report.max_boundary_flux = max(report.max_boundary_flux, edge)
            report.max_telescoping_residual = max(report.max_telescoping_residual, tele)
            if edge != 0.0 or tele != 0.0:
                raise InvariantViolation(f"boundary flux / telescoping failed at step {n}", n, "zero boundary flux")
        state = disc.advance(state, dt, F)
        # keep the time grid exact: t_n = n dt
        state = State(state.step_index, (n + 1) * dt, state.u_C, state.u_D)
        m_c = float(disc.xdx @ state.u_C)
        m_d = float(species @ state.u_D)
        mass = m_c + m_d
        step_drift = abs(mass - m_prev) / scale
        drift = abs(mass - m0) / scale
        report.max_step_drift = max(report.max_step_drift, step_drift)
        report.max_mass_drift = max(report.max_mass_drift, drift)
        m_prev = mass
        lo = state.min_entry()
        if lo < 0 and report.first_negative is None:
            report.first_negative = _first_negative(state)
        if check:
            if step_drift > options.step_mass_rtol or drift > options.run_mass_rtol:
                violate(f"mass conservation violated at step {n + 1}: relative drift {drift:.3e}",
                        n + 1, "mass conservation")
            if lo < 0 and not unsafe:
                violate(f"nonnegativity violated at step {n + 1}: {report.first_negative}",
                        n + 1, "nonnegativity")
            if lo >= 0 and np.any(species * state.u_D > bound_i):
                violate(f"discrete concentration exceeds total mass at step {n + 1}",
                        n + 1, "discrete boundedness")
        if (n + 1) % every == 0 or n + 1 == M:
            record(state, m_c, m_d)
    if sink is not None:
        sink(state)
    _call(sink, "end", state)
    report.final_mass = report.mass_series[-1]
    report.timings = {"wall_seconds": time.perf_counter() - t_start, "steps": M, "cells": mesh.cell_count}
    return state, report


def _first_negative(state: State) -> dict:
    if state.u_C.size and state.u_C.min() < 0:
        i = int(np.argmin(state.u_C))
        return {"step": state.step_index, "time": state.time, "regime": "C", "index": i, "value": float(state.u_C[i])}
    i = int(np.argmin(state.u_D))
    return {"step": state.step_index, "time": state.time, "regime": "D", "index": i + 1, "value": float(state.u_D[i])}

