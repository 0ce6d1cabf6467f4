"""End-to-end acceptance checks over the 20 power-law presets.

Each test records one PASS/FAIL line; the lines are repeated in the
"acceptance criteria" section at the end of the pytest run.
"""
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import PRESET_PAIRS
from fragvol.config import RunConfig
from fragvol.diagnostics import convergence_ladder
from fragvol.kernels import (
    PowerLawModel,
    average_coupling,
    average_daughter,
    average_rate,
    build_coefficients,
    check_continuous_mass_condition,
    check_discrete_mass_condition,
)
from fragvol.mesh import build_graded_mesh, build_uniform_mesh
from fragvol.presets import preset_name
from fragvol.solver import (
    Discretization,
    RunOptions,
    State,
    compute_fluxes,
    fluxes_direct,
    run,
    stability_governor,
    step,
    step_expanded,
    telescoping_residual,
)

CONFIG_DIR = Path(__file__).resolve().parents[1] / "configs" / "paper"


def load(alpha, nu):
    cfg = RunConfig.load(CONFIG_DIR / f"{preset_name(alpha, nu)}.json")
    c0, d0 = cfg.initial_data()
    return cfg, cfg.build_model(), cfg.build_mesh(), c0, d0


class FluxAudit:
    """Recomputes the face fluxes of every state a run produces."""

    def __init__(self, model, mesh):
        self.disc = Discretization(build_coefficients(model, mesh), mesh)
        self.worst_boundary = 0.0
        self.worst_telescoping = 0.0
        self.states = 0

    def __call__(self, state):
        F = self.disc.fluxes(state.u_C)
        self.worst_boundary = max(self.worst_boundary, abs(F[0]), abs(F[-1]))
        self.worst_telescoping = max(self.worst_telescoping, abs(telescoping_residual(F)))
        self.states += 1


@pytest.fixture(scope="module")
def preset_runs():
    out = {}
    for alpha, nu in PRESET_PAIRS:
        cfg, model, mesh, c0, d0 = load(alpha, nu)
        audit = FluxAudit(model, mesh)
        t0 = time.perf_counter()
        state, rep = run(model, mesh, c0, d0, cfg.time.T, RunOptions(decimation=1), sink=audit)
        out[(alpha, nu)] = (rep, time.perf_counter() - t0, audit)
    return out


def test_criterion_1_mass_conservation(preset_runs, acceptance):
    worst, slowest, bad = 0.0, 0.0, []
    for key, (rep, secs, _) in preset_runs.items():
        m = np.array(rep.mass_series)
        assert len(m) == rep.steps + 1
        drift = float(np.max(np.abs(m - rep.initial_mass)) / rep.initial_mass)
        worst, slowest = max(worst, drift), max(slowest, secs)
        if drift > 1e-10 or secs > 5.0:
            bad.append(key)
    ok = acceptance(1, "mass conservation", not bad,
                    f"max relative drift {worst:.2e} (limit 1e-10), slowest run {slowest:.2f}s (limit 5s)")
    assert ok, bad


def test_criterion_2_nonnegativity(preset_runs, acceptance):
    worst_min = min(min(rep.min_entry_series) for rep, _, _ in preset_runs.values())
    governed_ok = worst_min >= 0 and all(rep.first_negative is None for rep, _, _ in preset_runs.values())
    negative = []
    for alpha, nu in PRESET_PAIRS:
        cfg, model, mesh, c0, d0 = load(alpha, nu)
        _, rep = run(model, mesh, c0, d0, cfg.time.T, RunOptions(unsafe_dt=10.0))
        if rep.first_negative is not None:
            negative.append(preset_name(alpha, nu))
    ok = acceptance(2, "nonnegativity", governed_ok and len(negative) >= 1,
                    f"governed min entry {worst_min:.3e} (>= 0); 10x bypass went negative on "
                    f"{len(negative)}/20 presets")
    assert ok


def test_criterion_3_convergence_order(acceptance):
    t0 = time.perf_counter()
    finest, out_of_band = [], []
    for alpha, nu in PRESET_PAIRS:
        cfg, model, _, c0, d0 = load(alpha, nu)
        base = build_uniform_mesh(cfg.model.N, cfg.model.R, cfg.converge.base_cells)
        res = convergence_ladder(model, c0, d0, cfg.time.T, base, levels=4, refine_factor=8)
        s = res.finest_slope
        finest.append(s)
        print(f"  {preset_name(alpha, nu)}: slopes {[round(v, 4) for v in res.slopes]}")
        if not 0.8 <= s <= 1.2:
            out_of_band.append((alpha, nu, s))
    mean = float(np.mean(finest))
    elapsed = time.perf_counter() - t0
    ok = acceptance(3, "convergence order", not out_of_band and 0.9 <= mean <= 1.15 and elapsed <= 600,
                    f"finest-pair slopes in [{min(finest):.4f}, {max(finest):.4f}] (band [0.8, 1.2]), "
                    f"mean {mean:.4f} (band [0.9, 1.15]), {elapsed:.0f}s")
    assert ok, out_of_band


def test_criterion_4_kernel_compatibility(acceptance):
    rng = np.random.default_rng(7)
    worst, discrete = 0.0, []
    for alpha, nu in PRESET_PAIRS:
        model = PowerLawModel(alpha, nu)
        ys = rng.uniform(model.N, model.R, 100)
        worst = max(worst, max(check_continuous_mass_condition(model, float(y)) for y in ys))
        discrete += [check_discrete_mass_condition(model, i) for i in range(2, model.N + 1)]
    ok = acceptance(4, "kernel compatibility", worst <= 1e-10 and all(r == 0 for r in discrete),
                    f"continuous residual max {worst:.2e} (limit 1e-10); "
                    f"{sum(r == 0 for r in discrete)}/{len(discrete)} discrete residuals exactly 0")
    assert ok


def test_criterion_5_oracle_equivalence(acceptance):
    rng = np.random.default_rng(11)
    flux_err = update_err = 0.0
    for case in range(50):
        cells = int(rng.integers(2, 41))
        ratio = float(rng.uniform(0.985, 1.015))
        w = ratio ** np.arange(cells)
        mesh = build_graded_mesh(5, 15, 10 * w.max() / w.sum() * 1.001, ratio, cells=cells)
        alpha, nu = PRESET_PAIRS[case % 20]
        coeffs = build_coefficients(PowerLawModel(alpha, nu), mesh)
        state = State(0, 0.0, rng.uniform(0, 2, cells), rng.uniform(0, 1, 5))
        fast, slow = compute_fluxes(state, coeffs, mesh), fluxes_direct(state.u_C, coeffs, mesh)
        flux_err = max(flux_err, np.max(np.abs(fast - slow)) / max(np.abs(slow).max(), 1e-300))
        dt = stability_governor(coeffs, mesh).dt_chosen
        a, b = step(state, coeffs, mesh, dt), step_expanded(state, coeffs, mesh, dt)
        va, vb = np.concatenate([a.u_C, a.u_D]), np.concatenate([b.u_C, b.u_D])
        update_err = max(update_err, np.max(np.abs(va - vb)) / np.abs(vb).max())
    ok = acceptance(5, "oracle equivalence", flux_err <= 1e-12 and update_err <= 1e-12,
                    f"flux rel. diff {flux_err:.2e}, update rel. diff {update_err:.2e} (limit 1e-12, 50 states)")
    assert ok


def test_criterion_6_quadrature(acceptance):
    mesh = build_uniform_mesh(5, 15, 40)
    worst = 0.0
    for alpha, nu in PRESET_PAIRS:
        model = PowerLawModel(alpha, nu)
        for fn in (average_rate, average_daughter, average_coupling):
            exact, quad = fn(model, mesh, "exact"), fn(model, mesh, "quadrature")
            nz = exact != 0
            assert np.array_equal(nz, quad != 0)
            worst = max(worst, float(np.max(np.abs(exact[nz] - quad[nz]) / np.abs(exact[nz]))))
    ok = acceptance(6, "quadrature correctness", worst <= 1e-10,
                    f"max relative difference closed form vs 5-point Gauss {worst:.2e} (limit 1e-10)")
    assert ok


def test_criterion_7_boundary_flux(preset_runs, acceptance):
    boundary = max(a.worst_boundary for _, _, a in preset_runs.values())
    tele = max(a.worst_telescoping for _, _, a in preset_runs.values())
    reported = max(max(r.max_boundary_flux, r.max_telescoping_residual) for r, _, _ in preset_runs.values())
    states = sum(a.states for _, _, a in preset_runs.values())
    ok = acceptance(7, "boundary flux", boundary == 0.0 and tele == 0.0 and reported == 0.0,
                    f"|F_0|, |F_I| max {boundary:g}, telescoping residual max {tele:g} over {states} states")
    assert ok
