"""Lane-centre polylines resampled into a point set with a uniform grid index.

Lane-map file format (JSON)::

    [{"lane_id": 0, "vertices": [[e0, n0], [e1, n1], ...]}, ...]

Vertices are ENU metres before calibration; :func:`load_lanemap` adds the
calibration offset.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError
from .geo import CalibrationOffset

DEFAULT_SPACING = 1.0
DEFAULT_CELL_SIZE = 5.0
MAX_CANDIDATES = 2048
DEFAULT_MARGIN = 60.0


@dataclass(frozen=True)
class LanePolyline:
    lane_id: int
    vertices: np.ndarray  # (V, 2)

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or len(v) < 2:
            raise ConfigError(f"lane {self.lane_id}: polyline needs at least 2 vertices")
        if not np.all(np.isfinite(v)):
            raise ConfigError(f"lane {self.lane_id}: non-finite vertex")
        if np.any(np.all(np.diff(v, axis=0) == 0.0, axis=1)):
            raise ConfigError(f"lane {self.lane_id}: consecutive vertices must be distinct")
        object.__setattr__(self, "vertices", v)

    @property
    def length(self) -> float:
        return float(np.hypot(*np.diff(self.vertices, axis=0).T).sum())


def _wrap_heading(theta):
    """Map angles into (-pi, pi]."""
    theta = np.arctan2(np.sin(theta), np.cos(theta))
    return np.where(theta <= -math.pi, math.pi, theta)


def resample_polyline(poly: LanePolyline, spacing: float = DEFAULT_SPACING):
    """Sample ``poly`` at arc-length multiples of ``spacing`` plus its end point.

    Returns ``(points, headings, lane_ids)``; each heading is the direction of
    the segment containing the sample (the following segment at a vertex,
    the last segment at the end point).
    """
    if not spacing > 0:
        raise ValueError("spacing must be positive")
    v = poly.vertices
    seg = np.diff(v, axis=0)
    seg_len = np.hypot(seg[:, 0], seg[:, 1])
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    total = cum[-1]

    n_inner = int(math.floor(total / spacing))
    s = np.arange(n_inner + 1) * spacing
    s = s[s < total - 1e-9 * max(total, 1.0)]
    s = np.append(s, total)

    idx = np.searchsorted(cum, s, side="right") - 1
    idx = np.clip(idx, 0, len(seg) - 1)
    frac = (s - cum[idx]) / seg_len[idx]
    points = v[idx] + frac[:, None] * seg[idx]
    points[-1] = v[-1]
    headings = _wrap_heading(np.arctan2(seg[idx, 1], seg[idx, 0]))
    return points, headings, np.full(len(s), poly.lane_id, dtype=int)


class LaneMap:
    """Immutable resampled lane map with exact nearest-centre queries.

    Centre points are stored in (lane_id, arc-length) order; that global order
    is the tie-break for equidistant points. Queries inside the padded grid
    only scan each cell's precomputed candidate list, others scan everything.
    """

    def __init__(
        self,
        polylines: Sequence[LanePolyline],
        spacing: float = DEFAULT_SPACING,
        cell_size: float = DEFAULT_CELL_SIZE,
        margin: float = DEFAULT_MARGIN,
    ):
        if not polylines:
            raise ConfigError("lane map is empty")
        ids = [p.lane_id for p in polylines]
        if len(set(ids)) != len(ids):
            raise ConfigError("duplicate lane_id in lane map")
        self.polylines = tuple(sorted(polylines, key=lambda p: p.lane_id))
        self.spacing = float(spacing)
        self.cell_size = float(cell_size)

        pts, heads, lanes, local = [], [], [], []
        for poly in self.polylines:
            p, h, l = resample_polyline(poly, spacing)
            pts.append(p)
            heads.append(h)
            lanes.append(l)
            local.append(np.arange(len(p)))
        self.centre_points = np.concatenate(pts)
        self.headings = np.concatenate(heads)
        self.lane_ids = np.concatenate(lanes)
        self.point_index = np.concatenate(local)
        for arr in (self.centre_points, self.headings, self.lane_ids, self.point_index):
            arr.flags.writeable = False
        self._build_grid(margin)

    @property
    def lane_count(self) -> int:
        return len(self.polylines)

    def __len__(self):
        return len(self.centre_points)

    def translated(self, offset) -> LaneMap:
        off = np.asarray(offset, dtype=float)
        return LaneMap(
            [LanePolyline(p.lane_id, p.vertices + off) for p in self.polylines],
            self.spacing,
            self.cell_size,
            self._margin,
        )

    # -- grid -------------------------------------------------------------

    def _build_grid(self, margin):
        g = self.cell_size
        self._margin = margin
        lo = self.centre_points.min(axis=0) - margin
        hi = self.centre_points.max(axis=0) + margin
        self._origin = np.floor(lo / g) * g
        self._shape = tuple(int(n) for n in np.ceil((hi - self._origin) / g).astype(int) + 1)
        nx, ny = self._shape
        P = self.centre_points
        M = len(P)

        cand_lists = []
        tol = 1e-6
        for ix in range(nx):
            x0 = self._origin[0] + ix * g - tol
            x1 = x0 + g + 2 * tol
            dx_min = np.maximum(np.maximum(x0 - P[:, 0], P[:, 0] - x1), 0.0)
            dx_max = np.maximum(np.abs(P[:, 0] - x0), np.abs(P[:, 0] - x1))
            for iy in range(ny):
                y0 = self._origin[1] + iy * g - tol
                y1 = y0 + g + 2 * tol
                dy_min = np.maximum(np.maximum(y0 - P[:, 1], P[:, 1] - y1), 0.0)
                dy_max = np.maximum(np.abs(P[:, 1] - y0), np.abs(P[:, 1] - y1))
                d_min = np.hypot(dx_min, dy_min)
                upper = np.hypot(dx_max, dy_max).min()
                idx = np.flatnonzero(d_min <= upper + tol)
                cand_lists.append(idx if len(idx) <= MAX_CANDIDATES else None)

        # cells with very long lists (dense maps, far margins) fall back to the full scan
        self._scan_all = np.array([c is None for c in cand_lists])
        width = max([len(c) for c in cand_lists if c is not None] or [1])
        cand = np.full((nx * ny, width), M, dtype=np.int64)  # M is the sentinel slot
        for i, c in enumerate(cand_lists):
            if not self._scan_all[i]:
                cand[i, : len(c)] = c
        self._cand = cand
        self._padded_points = np.vstack([P, [np.inf, np.inf]])

    def _cells(self, q):
        rel = (q - self._origin) / self.cell_size
        cell = np.floor(rel).astype(np.int64)
        inside = np.all((cell >= 0) & (cell < np.array(self._shape)), axis=-1)
        flat = np.where(inside, cell[:, 0] * self._shape[1] + cell[:, 1], 0)
        inside &= ~self._scan_all[flat]
        return cell, inside

    def query(self, points, chunk: int = 4096):
        """Nearest centre point for each row of ``points`` (shape ``(..., 2)``).

        Returns ``(distance, index)`` arrays; ``index`` addresses
        ``centre_points``/``headings``/``lane_ids``.
        """
        q = np.asarray(points, dtype=float)
        shape = q.shape[:-1]
        q = q.reshape(-1, 2)
        dist = np.empty(len(q))
        index = np.empty(len(q), dtype=np.int64)
        cell, inside = self._cells(q)

        ins = np.flatnonzero(inside)
        chunk = max(1, min(chunk, (1 << 22) // self._cand.shape[1]))  # bound the scratch arrays
        for start in range(0, len(ins), chunk):
            sel = ins[start : start + chunk]
            flat = cell[sel, 0] * self._shape[1] + cell[sel, 1]
            cand = self._cand[flat]
            cp = self._padded_points[cand]
            d = np.hypot(cp[..., 0] - q[sel, None, 0], cp[..., 1] - q[sel, None, 1])
            j = np.argmin(d, axis=1)
            index[sel] = cand[np.arange(len(sel)), j]
            dist[sel] = d[np.arange(len(sel)), j]

        out = np.flatnonzero(~inside)
        P = self.centre_points
        step = max(1, (1 << 22) // max(len(P), 1))
        for start in range(0, len(out), step):
            sel = out[start : start + step]
            d = np.hypot(P[None, :, 0] - q[sel, None, 0], P[None, :, 1] - q[sel, None, 1])
            j = np.argmin(d, axis=1)
            index[sel] = j
            dist[sel] = d[np.arange(len(sel)), j]
        return dist.reshape(shape), index.reshape(shape)


def nearest_centre(pt, lanemap: LaneMap):
    """Distance, lane id and heading of the closest centre point to ``pt``."""
    d, i = lanemap.query(np.asarray(pt, dtype=float).reshape(1, 2))
    i = int(i[0])
    return float(d[0]), int(lanemap.lane_ids[i]), float(lanemap.headings[i])


def parse_lanemap(obj) -> list[LanePolyline]:
    if isinstance(obj, dict):
        obj = obj.get("lanes")
    if not isinstance(obj, list) or not obj:
        raise ConfigError("lane map is empty")
    polylines = []
    for entry in obj:
        try:
            lane_id = int(entry["lane_id"])
            vertices = np.asarray(entry["vertices"], dtype=float)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed lane entry: {exc}") from None
        polylines.append(LanePolyline(lane_id, vertices.reshape(-1, 2) if vertices.size else vertices))
    return polylines


def load_lanemap(
    path: str | Path,
    calibration: CalibrationOffset = CalibrationOffset(),
    spacing: float = DEFAULT_SPACING,
    cell_size: float = DEFAULT_CELL_SIZE,
) -> LaneMap:
    try:
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"lane map not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"lane map {path} is not valid JSON: {exc.msg}") from None
    off = np.array([calibration.east, calibration.north])
    polylines = [LanePolyline(p.lane_id, p.vertices + off) for p in parse_lanemap(obj)]
    return LaneMap(polylines, spacing, cell_size)


def save_lanemap(polylines: Sequence[LanePolyline], path: str | Path) -> None:
    data = [{"lane_id": p.lane_id, "vertices": p.vertices.tolist()} for p in polylines]
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh)
        fh.write("\n")
