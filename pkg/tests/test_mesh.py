import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fragvol.errors import BandViolation, MeshError, NonpositiveHorizon, NonpositiveWidth
from fragvol.mesh import Mesh, build_graded_mesh, build_time_grid, build_uniform_mesh


def test_uniform_ten_cells():
    m = build_uniform_mesh(5, 15, 10)
    np.testing.assert_array_equal(m.edges, np.arange(5.0, 16.0))
    np.testing.assert_array_equal(m.midpoints, np.arange(5.5, 15.0))
    np.testing.assert_array_equal(m.widths, np.ones(10))
    assert m.cell_count == 10 and m.k == 2.0
    assert m.h == pytest.approx(1.0 * (1 + 1e-9), rel=0, abs=1e-15)


def test_uniform_single_cell():
    m = build_uniform_mesh(1, 2, 1)
    assert m.edges.tolist() == [1.0, 2.0]
    assert m.midpoints.tolist() == [1.5]


def test_uniform_twenty_cells_halves_ten():
    fine = build_uniform_mesh(5, 15, 20)
    np.testing.assert_array_equal(fine.widths, np.full(20, 0.5))
    coarse = build_uniform_mesh(5, 15, 10)
    np.testing.assert_array_equal(fine.edges[::2], coarse.edges)
    assert fine.h == pytest.approx(coarse.h / 2)


def test_uniform_rejects_empty_interval():
    with pytest.raises(NonpositiveWidth):
        build_uniform_mesh(5, 5, 3)
    with pytest.raises(NonpositiveWidth):
        build_uniform_mesh(5, 4, 3)
    with pytest.raises(MeshError):
        build_uniform_mesh(5, 15, 0)


def test_coarse_mesh_only_emits_diagnostic():
    assert build_uniform_mesh(5, 15, 10).diagnostics
    assert not build_uniform_mesh(5, 15, 20).diagnostics


def test_geometric_grading_inside_band():
    m = build_graded_mesh(5, 15, 1.0, 1.05, k=2)
    assert np.all((m.widths > 0.5) & (m.widths < 1.0))
    assert m.edges[0] == 5 and m.edges[-1] == 15
    assert np.all(np.diff(m.widths) > 0)


def test_constant_profile_matches_uniform():
    u = build_uniform_mesh(5, 15, 10)
    g = build_graded_mesh(5, 15, u.h, 1.0, cells=10)
    np.testing.assert_array_equal(g.edges, u.edges)
    g2 = build_graded_mesh(5, 15, u.h, lambda s: np.ones_like(s), cells=10)
    np.testing.assert_array_equal(g2.edges, u.edges)


def test_profile_with_double_width_violates_band():
    with pytest.raises(BandViolation):
        build_graded_mesh(5, 15, 1.0, [1.0] * 9 + [2.0])


def test_nonmonotone_profile_rejected():
    with pytest.raises(MeshError):
        build_graded_mesh(5, 15, 2.0, [1.0, 1.2, 1.0, 1.1])


def test_direct_mesh_band_and_monotonicity():
    with pytest.raises(NonpositiveWidth):
        Mesh([5.0, 6.0, 6.0, 7.0], 1.5)
    with pytest.raises(BandViolation):
        Mesh([5.0, 5.1, 7.0], 2.0)


@pytest.mark.parametrize(
    "T, dt_max, M, dt",
    [(1.0, 0.3, 4, 0.25), (1.0, 0.25, 4, 0.25)],
)
def test_time_grid_ceiling(T, dt_max, M, dt):
    g = build_time_grid(T, dt_max)
    assert g.steps == M and g.dt == dt
    assert g.times()[-1] == T


def test_time_grid_band_check():
    g = build_time_grid(2.0, 0.3, h=0.1, band=(1, 5))
    assert g.steps == 7
    assert g.dt == pytest.approx(0.2857142857142857, rel=1e-15)
    assert 0.1 <= g.dt <= 0.5 and g.in_band and not g.warnings


def test_time_grid_band_warning_not_error():
    g = build_time_grid(1.0, 0.01, h=1.0, band=(0.5, 2))
    assert g.warnings and g.in_band is False


def test_time_grid_rejects_nonpositive_horizon():
    with pytest.raises(NonpositiveHorizon):
        build_time_grid(0.0, 0.1)
    with pytest.raises(NonpositiveHorizon):
        build_time_grid(-1.0, 0.1)


def test_locate_left_closed_cells():
    m = build_uniform_mesh(5, 15, 10)
    assert m.locate(5.0) == -1
    assert m.locate(5.0000001) == 0
    assert m.locate(6.0) == 1
    assert m.locate(14.999) == 9
    assert m.locate(15.0) == -1
    assert m.reconstruct(np.arange(10.0), 6.5) == 1.0


def test_json_round_trip_bit_exact():
    m = build_graded_mesh(5, 15, 0.5, 1.013)
    back = Mesh.from_json(m.to_json())
    assert back == m
    assert back.edges.tobytes() == m.edges.tobytes()


def test_refine_nests_edges():
    m = build_graded_mesh(5, 15, 1.0, 1.05)
    f = m.refine(4)
    assert f.cell_count == 4 * m.cell_count
    np.testing.assert_array_equal(f.edges[::4], m.edges)


def _graded(N, span, ratio, n):
    w = ratio ** np.arange(n)
    h = span * w.max() / w.sum() * 1.001
    return build_graded_mesh(N, N + span, h, ratio, k=max(2.0, 1.01 * w.max() / w.min()), cells=n)


meshes = st.builds(_graded, st.integers(1, 20), st.floats(0.5, 100.0), st.floats(0.8, 1.25),
                   st.integers(1, 60))


@given(meshes)
def test_midpoint_and_partition_properties(m):
    ulp = np.spacing(np.abs(m.midpoints))
    assert np.all(np.abs(m.midpoints - 0.5 * (m.edges[:-1] + m.edges[1:])) <= 2 * ulp)
    m.validate()
    # every edge and every midpoint lands in exactly one cell
    idx = m.locate(m.midpoints)
    np.testing.assert_array_equal(idx, np.arange(m.cell_count))
    interior = m.locate(m.edges[1:-1])
    np.testing.assert_array_equal(interior, np.arange(1, m.cell_count))
    assert abs(math.fsum(m.widths) - (m.R - m.N)) <= 8 * np.spacing(m.R - m.N)


@given(st.floats(0.01, 1e4), st.floats(1e-4, 1e3))
def test_time_grid_properties(T, dt_max):
    g = build_time_grid(T, dt_max)
    assert g.dt <= dt_max
    assert g.dt == T / g.steps
    assert g.steps == 1 or T / (g.steps - 1) > dt_max
