"""Line-delimited detection records and per-object track assembly.

One JSON object per line::

    {"t": 12.067, "id": "7", "class": "CAR", "east": 10.0, "north": 5.0}
    {"t": 12.067, "id": "8", "class": "PEDESTRIAN", "lat": 48.2417, "lon": 11.6391}

``t`` is seconds, ``id`` is an opaque string and ``class`` must belong to the
configured class vocabulary. A record carries either ``east``/``north``
metres or ``lat``/``lon`` degrees, never both.
"""

from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import ParseError, SchemaError, VocabularyError
from .geo import GeoReference, wgs84_to_enu

GEODETIC = "geodetic"
ENU = "enu"

# The source publishes "13 classes" without naming them; this is the default list.
DEFAULT_CLASSES = (
    "CAR",
    "TRUCK",
    "TRAILER",
    "VAN",
    "BUS",
    "MOTORCYCLE",
    "BICYCLE",
    "PEDESTRIAN",
    "EMERGENCY_VEHICLE",
    "SCOOTER",
    "ANIMAL",
    "OTHER",
    "UNKNOWN",
)


@dataclass(frozen=True)
class DetectionRecord:
    timestamp: float
    object_id: str
    class_label: str
    east: float
    north: float
    position_kind: str = ENU


@dataclass
class TrackSeries:
    object_id: str
    class_label: str
    t: np.ndarray  # (T,)
    xy: np.ndarray  # (T, 2)

    def __len__(self):
        return len(self.t)


@dataclass
class AssemblyStats:
    records: int = 0
    duplicates: int = 0
    retained_points: int = 0
    dropped_points: int = 0
    dropped_segments: int = 0
    segments: int = 0
    split_objects: list = field(default_factory=list)


def _number(obj, key, line_no):
    try:
        value = obj[key]
    except KeyError:
        raise SchemaError(f"missing field {key!r}", line_no) from None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaError(f"field {key!r} must be a number, got {value!r}", line_no)
    value = float(value)
    if not math.isfinite(value):
        raise SchemaError(f"field {key!r} must be finite", line_no)
    return value


def parse_detection_line(
    text: str,
    ref: GeoReference,
    vocabulary: Sequence[str] = DEFAULT_CLASSES,
    position_kind: str | None = None,
    line_no: int | None = None,
) -> DetectionRecord:
    """Parse and validate one record line.

    ``position_kind`` forces the expected encoding; ``None`` accepts whichever
    single encoding the line carries. Geodetic positions are converted to ENU.
    """
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed record: {exc.msg}", line_no) from None
    if not isinstance(obj, dict):
        raise ParseError("record must be a JSON object", line_no)

    timestamp = _number(obj, "t", line_no)
    if "id" not in obj:
        raise SchemaError("missing field 'id'", line_no)
    object_id = str(obj["id"])
    if "class" not in obj:
        raise SchemaError("missing field 'class'", line_no)
    class_label = obj["class"]
    if class_label not in vocabulary:
        raise VocabularyError(f"unknown class {class_label!r}", line_no)

    has_enu = "east" in obj or "north" in obj
    has_geo = "lat" in obj or "lon" in obj
    if has_enu and has_geo:
        raise SchemaError("record carries both ENU and geodetic positions", line_no)
    kind = ENU if has_enu else GEODETIC if has_geo else None
    if kind is None:
        raise SchemaError("missing position (east/north or lat/lon)", line_no)
    if position_kind is not None and kind != position_kind:
        raise SchemaError(f"expected {position_kind} position, found {kind}", line_no)

    if kind == ENU:
        east, north = _number(obj, "east", line_no), _number(obj, "north", line_no)
    else:
        lat, lon = _number(obj, "lat", line_no), _number(obj, "lon", line_no)
        if abs(lat) > 90 or abs(lon) > 180:
            raise SchemaError(f"coordinates out of range: lat={lat}, lon={lon}", line_no)
        east, north = wgs84_to_enu(lat, lon, ref)
    return DetectionRecord(timestamp, object_id, class_label, east, north, kind)


def read_detections(
    path: str | Path,
    ref: GeoReference,
    vocabulary: Sequence[str] = DEFAULT_CLASSES,
    position_kind: str | None = None,
) -> Iterator[DetectionRecord]:
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if line.strip():
                yield parse_detection_line(line, ref, vocabulary, position_kind, line_no)


def _base_id(object_id: str) -> str:
    return object_id.split("#", 1)[0]


def assemble_tracks(
    records: Iterable[DetectionRecord],
    gap_threshold: float = 1.0,
    stats: AssemblyStats | None = None,
) -> list[TrackSeries]:
    """Group records by object, sort by time, dedupe and split at gaps.

    Exact duplicate timestamps keep the first record seen. A time gap larger
    than ``gap_threshold`` seconds starts a new segment named ``<id>#<k>``;
    unsplit objects keep their id. Segments with fewer than two points are
    dropped.
    """
    stats = stats if stats is not None else AssemblyStats()
    by_object: dict[str, list[DetectionRecord]] = defaultdict(list)
    for rec in records:
        by_object[rec.object_id].append(rec)
        stats.records += 1

    tracks = []
    for object_id in sorted(by_object):
        recs = sorted(by_object[object_id], key=lambda r: r.timestamp)  # stable: first seen wins
        unique = [recs[0]]
        for rec in recs[1:]:
            if rec.timestamp == unique[-1].timestamp:
                stats.duplicates += 1
            else:
                unique.append(rec)

        segments = [[unique[0]]]
        for prev, rec in zip(unique, unique[1:]):
            if rec.timestamp - prev.timestamp > gap_threshold:
                segments.append([])
            segments[-1].append(rec)
        if len(segments) > 1:
            stats.split_objects.append(object_id)

        for k, seg in enumerate(segments):
            if len(seg) < 2:
                stats.dropped_points += len(seg)
                stats.dropped_segments += 1
                continue
            name = object_id if len(segments) == 1 else f"{object_id}#{k}"
            tracks.append(
                TrackSeries(
                    object_id=name,
                    class_label=seg[0].class_label,
                    t=np.array([r.timestamp for r in seg]),
                    xy=np.array([[r.east, r.north] for r in seg]),
                )
            )
            stats.retained_points += len(seg)
            stats.segments += 1
    return tracks
