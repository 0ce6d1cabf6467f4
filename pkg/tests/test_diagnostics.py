import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fragvol.diagnostics import (
    Trajectory,
    TrajectoryRecorder,
    convergence_ladder,
    l1_distance,
    l1_norm,
    observed_order,
    reference_oracle,
    reference_self_consistency,
    relative_L1_error,
    restrict_field,
    total_mass,
)
from fragvol.errors import DivisionByZeroDenominator, GridMismatch, NonpositiveError
from fragvol.kernels import PowerLawModel, expression_model
from fragvol.mesh import Mesh, build_graded_mesh, build_uniform_mesh
from fragvol.solver import RunOptions, State, project_initial, run, step_one


def test_total_mass_examples(mesh10):
    assert total_mass(State(0, 0.0, np.zeros(10), np.zeros(5)), mesh10) == 0.0
    s = project_initial(step_one(), np.ones(5), build_uniform_mesh(5, 15, 37))
    assert total_mass(s, build_uniform_mesh(5, 15, 37)) == pytest.approx(115.0, rel=1e-15)
    one = build_uniform_mesh(5, 6, 1)
    assert total_mass(State(0, 0.0, np.array([2.0]), np.zeros(5)), one) == 11.0


def _traj(mesh, steps, seed, N=5):
    rng = np.random.default_rng(seed)
    return Trajectory(mesh, 2.0, rng.uniform(0, 1, (steps, mesh.cell_count)), rng.uniform(0, 1, (steps, N)))


def test_relative_error_examples(mesh10):
    ref = _traj(mesh10, 6, 0)
    assert relative_L1_error(ref, ref) == 0.0
    scaled = Trajectory(mesh10, 2.0, 1.1 * ref.u_C, 1.1 * ref.u_D)
    assert relative_L1_error(scaled, ref) == pytest.approx(0.1, abs=1e-12)
    zero = Trajectory(mesh10, 2.0, np.zeros_like(ref.u_C), np.zeros_like(ref.u_D))
    with pytest.raises(DivisionByZeroDenominator):
        relative_L1_error(ref, zero)


def test_relative_error_restricts_finer_reference(mesh10):
    coarse = _traj(mesh10, 3, 1)
    # the same field written on a 4x finer space-time grid
    fine_mesh = mesh10.refine(4)
    C = np.repeat(np.repeat(coarse.u_C, 4, axis=1), 2, axis=0)
    D = np.repeat(coarse.u_D, 2, axis=0)
    fine = Trajectory(fine_mesh, 2.0, C, D)
    assert relative_L1_error(coarse, fine) == pytest.approx(0.0, abs=1e-15)


def test_grid_mismatch():
    a = _traj(build_uniform_mesh(5, 15, 10), 4, 0)
    with pytest.raises(GridMismatch):
        relative_L1_error(a, _traj(build_uniform_mesh(5, 15, 15), 4, 0))
    with pytest.raises(GridMismatch):
        relative_L1_error(a, _traj(build_uniform_mesh(5, 15, 20), 6, 0))
    with pytest.raises(GridMismatch):
        relative_L1_error(a, _traj(build_uniform_mesh(5, 16, 20), 8, 0))


def test_observed_order_examples():
    slopes, mean = observed_order([(0.2, 0.08), (0.1, 0.04)])
    assert slopes == [pytest.approx(1.0, rel=1e-15)] and mean == pytest.approx(1.0)
    assert observed_order([(0.2, 0.08), (0.1, 0.02)])[0][0] == pytest.approx(2.0, rel=1e-15)
    with pytest.raises(NonpositiveError):
        observed_order([(0.2, 0.08), (0.1, 0.0)])
    with pytest.raises(NonpositiveError):
        observed_order([(0.2, 0.08)])


@given(st.lists(st.tuples(st.floats(1e-3, 1.0), st.floats(1e-8, 1.0)), min_size=2, max_size=6,
                unique_by=lambda t: t[0]),
       st.floats(1e-3, 1e3))
def test_observed_order_scale_invariant(ladder, c):
    ladder = sorted(ladder, reverse=True)
    s1, _ = observed_order(ladder)
    s2, _ = observed_order([(h, c * e) for h, e in ladder])
    np.testing.assert_allclose(s1, s2, rtol=1e-9, atol=1e-9)


def test_width_weighted_restriction_example():
    fine = build_graded_mesh(5, 15, 0.25, 1.01, k=4, cells=60)
    coarse_edges = fine.edges[::4]
    coarse = Mesh(coarse_edges, float(np.diff(coarse_edges).max()) * 1.001, k=4)
    vals = np.random.default_rng(0).uniform(0, 3, fine.cell_count)
    out = restrict_field(vals, fine, coarse, weight="width")
    start = 0
    for c, n in enumerate(np.diff(np.searchsorted(fine.edges, coarse.edges))):
        w = fine.widths[start:start + n]
        assert out[c] == pytest.approx(np.sum(w * vals[start:start + n]) / w.sum(), rel=1e-14)
        start += n
    for weight in ("width", "mass"):
        np.testing.assert_allclose(restrict_field(np.full(fine.cell_count, 2.5), fine, coarse, weight), 2.5,
                                   rtol=2e-15)


@given(arrays(float, 80, elements=st.floats(0, 100)), st.sampled_from([2, 4, 8]))
def test_mass_weighted_restriction_preserves_mass(vals, factor):
    coarse = build_uniform_mesh(5, 15, 80 // factor)
    fine = coarse.refine(factor)
    out = restrict_field(vals, fine, coarse)
    m_f = np.dot(fine.midpoints * fine.widths, vals)
    m_c = np.dot(coarse.midpoints * coarse.widths, out)
    assert abs(m_c - m_f) <= 1e-12 * max(m_f, 1e-300)


@given(st.integers(0, 2**31), st.floats(-5, 5))
def test_norm_homogeneity_and_triangle(seed, lam):
    mesh = build_uniform_mesh(5, 15, 7)
    rng = np.random.default_rng(seed)
    a, b, c = (Trajectory(mesh, 1.5, rng.normal(size=(3, 7)), rng.normal(size=(3, 5))) for _ in range(3))
    scaled = Trajectory(mesh, 1.5, lam * a.u_C, lam * a.u_D)
    assert l1_norm(scaled) == pytest.approx(abs(lam) * l1_norm(a), rel=1e-12, abs=1e-300)
    assert l1_distance(a, c) <= (l1_distance(a, b) + l1_distance(b, c)) * (1 + 1e-12)


def test_recorder_matches_restricted_full_history(powerlaw):
    coarse = build_uniform_mesh(5, 15, 10)
    fine = coarse.refine(4)
    full, onthefly = TrajectoryRecorder(), TrajectoryRecorder(coarse, 5)
    opts = RunOptions(steps=40)
    run(powerlaw, fine, step_one(), np.ones(5), 0.4, opts, sink=full)
    run(powerlaw, fine, step_one(), np.ones(5), 0.4, opts, sink=onthefly)
    r = full.trajectory.restrict(coarse, 5)
    np.testing.assert_allclose(onthefly.trajectory.u_C, r.u_C, rtol=1e-13)
    np.testing.assert_allclose(onthefly.trajectory.u_D, r.u_D, rtol=1e-13)
    with pytest.raises(GridMismatch):
        full.trajectory.restrict(coarse, 7)


def test_reference_for_inert_model_is_initial_data(mesh10):
    m = expression_model(5, 15, "0", "0", "0", [0.0] * 5, "0")
    ref = reference_oracle(m, step_one(), np.arange(5.0), 3.0, 4, mesh10, 3)
    np.testing.assert_array_equal(ref.u_C, np.ones((3, 10)))
    np.testing.assert_array_equal(ref.u_D, np.tile(np.arange(5.0), (3, 1)))


def test_reference_factor_too_small(mesh10, powerlaw):
    with pytest.raises(ValueError):
        reference_oracle(powerlaw, step_one(), np.ones(5), 1.0, 2, mesh10, 10)


def test_inert_ladder_reports_undefined_slopes(mesh10):
    m = expression_model(5, 15, "0", "0", "0", [0.0] * 5, "0")
    res = convergence_ladder(m, step_one(), np.ones(5), 1.0, mesh10, levels=3, workers=2)
    assert [e.error for e in res.entries] == [0.0, 0.0, 0.0]
    assert res.slopes == [None, None] and res.mean_slope is None and res.finest_slope is None


def test_ladder_first_order_and_reference_self_consistency(powerlaw, mesh10, tmp_path):
    T = 3.2
    res = convergence_ladder(powerlaw, step_one(), np.ones(5), T, mesh10, levels=4)
    assert [e.cells for e in res.entries] == [10, 20, 40, 80]
    assert all(b.steps == 2 * a.steps for a, b in zip(res.entries, res.entries[1:]))
    assert 0.8 <= res.finest_slope <= 1.2
    errs = [e.error for e in res.entries]
    assert all(b < a for a, b in zip(errs, errs[1:]))

    path = tmp_path / "ladder.csv"
    with open(path, "w", newline="") as fh:
        res.write_csv(fh)
    lines = path.read_text().splitlines()
    assert lines[0] == "h,dt,error,pair_slope" and len(lines) == 5 and lines[1].endswith(",")

    finest = res.entries[-1]
    check = reference_self_consistency(powerlaw, step_one(), np.ones(5), T, mesh10.refine(8), finest.steps,
                                       coarse_error=res.entries[0].error)
    assert check["accepted"], check
