"""Flat-earth WGS84 <-> local ENU conversion around a fixed reference point."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError

METERS_PER_DEGREE = 111_320.0


@dataclass(frozen=True)
class GeoReference:
    lat0: float = 48.2416
    lon0: float = 11.6392
    meters_per_degree: float = METERS_PER_DEGREE

    def __post_init__(self):
        _check_latlon(self.lat0, self.lon0)
        if not self.meters_per_degree > 0:
            raise ContractError(f"meters_per_degree must be positive, got {self.meters_per_degree}")


@dataclass(frozen=True)
class CalibrationOffset:
    east: float = 0.0
    north: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.east) and math.isfinite(self.north)):
            raise ContractError("calibration offset must be finite")

    def __neg__(self) -> CalibrationOffset:
        return CalibrationOffset(-self.east, -self.north)


def _check_latlon(lat, lon):
    lat_a = np.asarray(lat, dtype=float)
    lon_a = np.asarray(lon, dtype=float)
    if not (np.all(np.isfinite(lat_a)) and np.all(np.isfinite(lon_a))):
        raise ContractError("latitude/longitude must be finite")
    if np.any(np.abs(lat_a) > 90.0) or np.any(np.abs(lon_a) > 180.0):
        raise ContractError(f"coordinates out of WGS84 range: lat={lat}, lon={lon}")


def wgs84_to_enu(lat, lon, ref: GeoReference):
    """Project geodetic degrees onto the flat ENU plane of ``ref``.

    Works on scalars or arrays. A single ``cos(lat0)`` factor scales the
    east axis, so the error grows with distance from the reference; it stays
    below 1 m within a few hundred metres.
    """
    _check_latlon(lat, lon)
    east = (np.asarray(lon, dtype=float) - ref.lon0) * math.cos(math.radians(ref.lat0)) * ref.meters_per_degree
    north = (np.asarray(lat, dtype=float) - ref.lat0) * ref.meters_per_degree
    if np.ndim(east) == 0:
        return float(east), float(north)
    return east, north


def enu_to_wgs84(east, north, ref: GeoReference):
    """Inverse of :func:`wgs84_to_enu`."""
    lon = np.asarray(east, dtype=float) / (math.cos(math.radians(ref.lat0)) * ref.meters_per_degree) + ref.lon0
    lat = np.asarray(north, dtype=float) / ref.meters_per_degree + ref.lat0
    if np.ndim(lat) == 0:
        return float(lat), float(lon)
    return lat, lon


def apply_calibration(pt, off: CalibrationOffset):
    """Shift an ENU point (or an ``(..., 2)`` array of points) by ``off``."""
    arr = np.asarray(pt, dtype=float)
    out = arr + np.array([off.east, off.north])
    if arr.ndim == 1:
        return float(out[0]), float(out[1])
    return out
