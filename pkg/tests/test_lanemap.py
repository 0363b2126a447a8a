import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from twinpred.errors import ConfigError
from twinpred.geo import CalibrationOffset
from twinpred.lanemap import LaneMap, LanePolyline, load_lanemap, nearest_centre, resample_polyline, save_lanemap


def brute(points, lanemap):
    pts = np.asarray(points).reshape(-1, 2)
    d = np.hypot(pts[:, None, 0] - lanemap.centre_points[None, :, 0], pts[:, None, 1] - lanemap.centre_points[None, :, 1])
    return d.min(axis=1), d.argmin(axis=1)


def test_straight_resample_spacing():
    pts, heads, ids = resample_polyline(LanePolyline(4, np.array([[0.0, 0.0], [10.0, 0.0]])), 1.0)
    assert len(pts) == 11
    np.testing.assert_allclose(pts[:, 0], np.arange(11.0))
    assert np.all(heads == 0.0)
    assert np.all(ids == 4)


def test_end_point_kept_when_length_not_multiple():
    pts, _, _ = resample_polyline(LanePolyline(0, np.array([[0.0, 0.0], [0.0, 2.5]])), 1.0)
    np.testing.assert_allclose(pts[:, 1], [0.0, 1.0, 2.0, 2.5])


def test_quarter_arc_point_count():
    ang = np.linspace(0.0, math.pi / 2, 200)
    arc = LanePolyline(0, np.column_stack([10 * np.cos(ang), 10 * np.sin(ang)]))
    pts, heads, _ = resample_polyline(arc, 1.0)
    assert len(pts) == int(arc.length) + 2  # 15.7 m of arc
    assert np.all(np.abs(np.hypot(pts[:, 0], pts[:, 1]) - 10.0) < 1e-3)
    assert heads[0] == pytest.approx(math.pi / 2, abs=0.01)
    assert heads[-1] == pytest.approx(math.pi, abs=0.01)


def test_heading_range():
    pts, heads, _ = resample_polyline(LanePolyline(0, np.array([[0.0, 0.0], [-5.0, 0.0]])), 1.0)
    assert np.all(heads == math.pi)


@pytest.mark.parametrize(
    "verts",
    [np.array([[0.0, 0.0]]), np.array([[0.0, 0.0], [0.0, 0.0]]), np.array([[0.0, 0.0], [np.nan, 1.0]])],
)
def test_degenerate_polyline_rejected(verts):
    with pytest.raises(ConfigError, match="lane 9"):
        LanePolyline(9, verts)


def test_empty_or_duplicate_map_rejected():
    with pytest.raises(ConfigError):
        LaneMap([])
    line = LanePolyline(0, np.array([[0.0, 0.0], [1.0, 0.0]]))
    with pytest.raises(ConfigError):
        LaneMap([line, line])


def test_grid_matches_brute_force(intersection_map, rng):
    pts = rng.uniform(-130, 130, size=(20000, 2))
    d, i = intersection_map.query(pts)
    bd, bi = brute(pts, intersection_map)
    np.testing.assert_array_equal(i, bi)
    np.testing.assert_array_equal(d, bd)


@settings(max_examples=100, deadline=None)
@given(st.floats(-500, 500), st.floats(-500, 500))
def test_query_any_point_matches_brute(x, y):
    lm = _SMALL_MAP
    d, i = lm.query(np.array([[x, y]]))
    bd, bi = brute([[x, y]], lm)
    assert i[0] == bi[0] and d[0] == bd[0]


_SMALL_MAP = LaneMap([
    LanePolyline(0, np.array([[0.0, 0.0], [30.0, 0.0]])),
    LanePolyline(1, np.array([[0.0, 4.0], [30.0, 4.0]])),
])


def test_ties_go_to_lowest_index():
    d, i = _SMALL_MAP.query(np.array([[0.0, 2.0]]))
    assert d[0] == 2.0
    assert _SMALL_MAP.lane_ids[i[0]] == 0 and i[0] == 0


def test_query_shapes(cross_map):
    d, i = cross_map.query(np.zeros((3, 4, 2)))
    assert d.shape == i.shape == (3, 4)


def test_nearest_centre(cross_map):
    d, lane, heading = nearest_centre((0.3, 20.0), cross_map)
    assert lane == 1
    assert d == pytest.approx(0.3)
    assert heading == pytest.approx(math.pi / 2)


def test_translated(cross_map):
    moved = cross_map.translated((100.0, -5.0))
    np.testing.assert_allclose(moved.centre_points, cross_map.centre_points + [100.0, -5.0])


def test_save_load_applies_calibration(tmp_path, cross_polylines):
    path = tmp_path / "map.json"
    save_lanemap(cross_polylines, path)
    lm = load_lanemap(path, CalibrationOffset(31.0, 20.0))
    ref = LaneMap(cross_polylines)
    np.testing.assert_allclose(lm.centre_points, ref.centre_points + [31.0, 20.0])
    assert lm.lane_count == 3


def test_load_errors(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_lanemap(tmp_path / "nope.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    with pytest.raises(ConfigError):
        load_lanemap(bad)
    empty = tmp_path / "empty.json"
    empty.write_text("[]")
    with pytest.raises(ConfigError, match="empty"):
        load_lanemap(empty)
