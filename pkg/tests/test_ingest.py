import json

import numpy as np
import pytest

from twinpred.errors import ParseError, SchemaError, VocabularyError
from twinpred.geo import GeoReference, enu_to_wgs84
from twinpred.ingest import (
    DEFAULT_CLASSES,
    ENU,
    GEODETIC,
    AssemblyStats,
    DetectionRecord,
    assemble_tracks,
    parse_detection_line,
    read_detections,
)

REF = GeoReference()


def line(**kw):
    rec = {"t": 0.0, "id": "7", "class": "CAR", "east": 1.0, "north": 2.0}
    rec.update(kw)
    return json.dumps({k: v for k, v in rec.items() if v is not None})


def test_vocabulary_has_13_distinct_names():
    assert len(DEFAULT_CLASSES) == 13 == len(set(DEFAULT_CLASSES))


def test_parse_enu():
    rec = parse_detection_line(line(), REF)
    assert rec == DetectionRecord(0.0, "7", "CAR", 1.0, 2.0, ENU)


def test_parse_geodetic_converts():
    lat, lon = enu_to_wgs84(12.5, -40.0, REF)
    rec = parse_detection_line(json.dumps({"t": 1.5, "id": 3, "class": "BUS", "lat": lat, "lon": lon}), REF)
    assert rec.position_kind == GEODETIC
    assert rec.object_id == "3"
    assert rec.east == pytest.approx(12.5, abs=1e-6)
    assert rec.north == pytest.approx(-40.0, abs=1e-6)


@pytest.mark.parametrize(
    "text,exc",
    [
        ("{not json", ParseError),
        ("[1, 2]", ParseError),
        (line(t=None), SchemaError),
        (line(id=None), SchemaError),
        (line(**{"class": None}), SchemaError),
        (line(**{"class": "SPACESHIP"}), VocabularyError),
        (line(east=None, north=None), SchemaError),
        (line(lat=48.0, lon=11.0), SchemaError),
        (line(east="x"), SchemaError),
    ],
)
def test_parse_errors(text, exc):
    with pytest.raises(exc) as info:
        parse_detection_line(text, REF, line_no=12)
    assert "line 12" in str(info.value)


def test_out_of_range_geodetic():
    with pytest.raises(SchemaError):
        parse_detection_line(json.dumps({"t": 0, "id": 1, "class": "CAR", "lat": 95.0, "lon": 0.0}), REF)


def test_forced_position_kind():
    with pytest.raises(SchemaError):
        parse_detection_line(line(), REF, position_kind=GEODETIC)


def test_error_exit_codes_are_distinct():
    codes = {ParseError.exit_code, SchemaError.exit_code, VocabularyError.exit_code}
    assert len(codes) == 3


def rec(t, oid="a", x=None):
    return DetectionRecord(t, oid, "CAR", t if x is None else x, 0.0)


def test_assemble_sorts_and_dedupes():
    stats = AssemblyStats()
    recs = [rec(0.2), rec(0.0), rec(0.1, x=5.0), rec(0.1, x=9.0)]
    (track,) = assemble_tracks(recs, stats=stats)
    np.testing.assert_array_equal(track.t, [0.0, 0.1, 0.2])
    assert track.xy[1, 0] == 5.0  # first seen wins
    assert stats.duplicates == 1


def test_assemble_splits_at_gaps_and_drops_singletons():
    stats = AssemblyStats()
    recs = [rec(t) for t in (0.0, 0.1, 0.2, 2.0, 5.0, 5.1)] + [rec(0.0, "b"), rec(0.5, "b")]
    tracks = assemble_tracks(recs, gap_threshold=1.0, stats=stats)
    names = [t.object_id for t in tracks]
    assert names == ["a#0", "a#2", "b"]
    assert stats.dropped_segments == 1
    assert stats.split_objects == ["a"]
    assert stats.retained_points == 7


def test_read_detections(tmp_path):
    path = tmp_path / "d.jsonl"
    path.write_text(line(t=0.0) + "\n\n" + line(t=0.1) + "\n" + line(**{"class": "X"}) + "\n")
    it = read_detections(path, REF)
    assert next(it).timestamp == 0.0
    assert next(it).timestamp == 0.1
    with pytest.raises(VocabularyError) as info:
        next(it)
    assert info.value.line_no == 4
