import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from twinpred.errors import ContractError
from twinpred.geo import CalibrationOffset, GeoReference, apply_calibration, enu_to_wgs84, wgs84_to_enu

REF = GeoReference()
# sphere whose degree length matches the flat-earth constant
RADIUS = REF.meters_per_degree * 180.0 / math.pi


def haversine(lat1, lon1, lat2, lon2, radius=RADIUS):
    p1, p2 = math.radians(lat1), math.radians(lat2)
    dp, dl = p2 - p1, math.radians(lon2 - lon1)
    a = math.sin(dp / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl / 2) ** 2
    return 2 * radius * math.asin(math.sqrt(a))


def test_reference_maps_to_origin():
    assert wgs84_to_enu(REF.lat0, REF.lon0, REF) == (0.0, 0.0)


def test_north_degree_is_meters_per_degree():
    east, north = wgs84_to_enu(REF.lat0 + 0.001, REF.lon0, REF)
    assert east == 0.0
    assert north == pytest.approx(111.32, rel=1e-9)


@pytest.mark.parametrize("dlat,dlon", [(0.001, 0.0), (0.0, 0.002), (-0.003, 0.004), (0.005, -0.001)])
def test_distance_agrees_with_haversine(dlat, dlon):
    lat, lon = REF.lat0 + dlat, REF.lon0 + dlon
    east, north = wgs84_to_enu(lat, lon, REF)
    flat = math.hypot(east, north)
    assert flat == pytest.approx(haversine(REF.lat0, REF.lon0, lat, lon), rel=2e-4)


@settings(max_examples=200, deadline=None)
@given(st.floats(-2000, 2000), st.floats(-2000, 2000))
def test_round_trip(east, north):
    lat, lon = enu_to_wgs84(east, north, REF)
    e2, n2 = wgs84_to_enu(lat, lon, REF)
    assert e2 == pytest.approx(east, abs=1e-6)
    assert n2 == pytest.approx(north, abs=1e-6)


def test_arrays_supported():
    lat = REF.lat0 + np.array([0.0, 0.001])
    lon = REF.lon0 + np.array([0.0, 0.001])
    east, north = wgs84_to_enu(lat, lon, REF)
    assert east.shape == (2,)
    np.testing.assert_allclose(north, [0.0, 111.32])


@pytest.mark.parametrize("lat,lon", [(91.0, 0.0), (0.0, -181.0), (float("nan"), 0.0)])
def test_out_of_range_rejected(lat, lon):
    with pytest.raises(ContractError):
        wgs84_to_enu(lat, lon, REF)


def test_bad_reference_rejected():
    with pytest.raises(ContractError):
        GeoReference(lat0=100.0)
    with pytest.raises(ContractError):
        GeoReference(meters_per_degree=0.0)


def test_calibration_shift_and_inverse():
    off = CalibrationOffset(31.0, 20.0)
    assert apply_calibration((1.0, 2.0), off) == (32.0, 22.0)
    pts = np.array([[0.0, 0.0], [5.0, -5.0]])
    back = apply_calibration(apply_calibration(pts, off), -off)
    np.testing.assert_array_equal(back, pts)
    with pytest.raises(ContractError):
        CalibrationOffset(float("inf"), 0.0)
