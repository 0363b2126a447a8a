"""Sliding windows, anchor-relative normalisation and the 30-wide feature rows."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from ..errors import ConfigError, VocabularyError
from ..ingest import DEFAULT_CLASSES
from ..lanemap import LaneMap
from .kalman import SmoothedTrack

log = logging.getLogger(__name__)

HISTORY = 20
HORIZONS = (10, 20, 30, 40, 50)
N_CLASSES = 13
N_LANES = 11
FEATURE_DIM = 4 + N_CLASSES + N_LANES + 2
MAX_LANE_DIST = 50.0

# column offsets inside a feature row
COL_POS = slice(0, 2)
COL_VEL = slice(2, 4)
COL_CLASS = slice(4, 4 + N_CLASSES)
COL_LANE = slice(4 + N_CLASSES, 4 + N_CLASSES + N_LANES)
COL_DIST = 4 + N_CLASSES + N_LANES
COL_HEADING = COL_DIST + 1


@dataclass
class Sample:
    history: np.ndarray  # (H, 30)
    future: np.ndarray  # (P, 2) anchor-relative
    anchor: np.ndarray  # (2,) absolute ENU
    object_id: str
    class_label: str
    t0: float


@dataclass
class FeatureStats:
    rows: int = 0
    clamped: int = 0


class SampleSet:
    """Array-backed, ordered collection of samples of one horizon."""

    def __init__(self, history, future, anchor, object_id, class_label, t0):
        self.history = np.asarray(history, dtype=float)
        self.future = np.asarray(future, dtype=float)
        self.anchor = np.asarray(anchor, dtype=float)
        self.object_id = list(object_id)
        self.class_label = list(class_label)
        self.t0 = np.asarray(t0, dtype=float)
        n = len(self.object_id)
        if not (len(self.history) == len(self.future) == len(self.anchor) == len(self.t0) == len(self.class_label) == n):
            raise ValueError("sample arrays must share their first dimension")

    @classmethod
    def empty(cls, H: int, P: int, width: int = FEATURE_DIM) -> SampleSet:
        return cls(np.empty((0, H, width)), np.empty((0, P, 2)), np.empty((0, 2)), [], [], np.empty(0))

    @classmethod
    def from_samples(cls, samples: Sequence[Sample], H: int = HISTORY, P: int | None = None) -> SampleSet:
        if not samples:
            return cls.empty(H, P or 0)
        return cls(
            np.stack([s.history for s in samples]),
            np.stack([s.future for s in samples]),
            np.stack([s.anchor for s in samples]),
            [s.object_id for s in samples],
            [s.class_label for s in samples],
            [s.t0 for s in samples],
        )

    @classmethod
    def concat(cls, parts: Sequence[SampleSet]) -> SampleSet:
        return cls(
            np.concatenate([p.history for p in parts]),
            np.concatenate([p.future for p in parts]),
            np.concatenate([p.anchor for p in parts]),
            [i for p in parts for i in p.object_id],
            [c for p in parts for c in p.class_label],
            np.concatenate([p.t0 for p in parts]),
        )

    def subset(self, idx) -> SampleSet:
        idx = np.asarray(idx, dtype=np.int64)
        return SampleSet(
            self.history[idx],
            self.future[idx],
            self.anchor[idx],
            [self.object_id[i] for i in idx],
            [self.class_label[i] for i in idx],
            self.t0[idx],
        )

    @property
    def H(self) -> int:
        return self.history.shape[1]

    @property
    def P(self) -> int:
        return self.future.shape[1]

    def __len__(self):
        return len(self.object_id)

    def __getitem__(self, i) -> Sample:
        return Sample(self.history[i], self.future[i], self.anchor[i], self.object_id[i], self.class_label[i], float(self.t0[i]))

    def __iter__(self) -> Iterator[Sample]:
        return (self[i] for i in range(len(self)))

    def __eq__(self, other):
        if not isinstance(other, SampleSet):
            return NotImplemented
        return (
            np.array_equal(self.history, other.history)
            and np.array_equal(self.future, other.future)
            and np.array_equal(self.anchor, other.anchor)
            and self.object_id == other.object_id
            and self.class_label == other.class_label
            and np.array_equal(self.t0, other.t0)
        )


def _class_index(class_label: str, vocabulary: Sequence[str]) -> int:
    if len(vocabulary) != N_CLASSES:
        raise ConfigError(f"class vocabulary must have exactly {N_CLASSES} names, got {len(vocabulary)}")
    try:
        return list(vocabulary).index(class_label)
    except ValueError:
        raise VocabularyError(f"unknown class {class_label!r}") from None


def lane_features(positions, lanemap: LaneMap, stats: FeatureStats | None = None) -> np.ndarray:
    """Per-position map columns: lane one-hot, clamped ``d/100`` and ``theta/pi``."""
    if lanemap.lane_count > N_LANES or int(lanemap.lane_ids.max()) >= N_LANES:
        raise ConfigError(f"feature rows hold at most {N_LANES} lanes (ids 0..{N_LANES - 1})")
    pos = np.asarray(positions, dtype=float).reshape(-1, 2)
    dist, idx = lanemap.query(pos)
    over = dist > MAX_LANE_DIST
    if stats is not None:
        stats.rows += len(pos)
        stats.clamped += int(over.sum())
    if over.any():
        log.warning("clamped %d lane distances above %.0f m", int(over.sum()), MAX_LANE_DIST)
    out = np.zeros((len(pos), N_LANES + 2))
    out[np.arange(len(pos)), lanemap.lane_ids[idx]] = 1.0
    out[:, N_LANES] = np.minimum(dist, MAX_LANE_DIST) / 100.0
    out[:, N_LANES + 1] = lanemap.headings[idx] / math.pi
    return out


def build_features(
    window_states,
    anchor,
    class_label: str,
    lanemap: LaneMap,
    vocabulary: Sequence[str] = DEFAULT_CLASSES,
    stats: FeatureStats | None = None,
) -> np.ndarray:
    """Feature matrix for one history window of ``[x, y, vx, vy]`` states.

    Row layout: ``[x~, y~, vx, vy, class(13), lane(11), d/100, theta/pi]``.
    Positions are shifted by ``anchor``; velocities are left as they are.
    Map columns come from the absolute position.
    """
    states = np.asarray(window_states, dtype=float)
    ci = _class_index(class_label, vocabulary)
    return _assemble(states, np.asarray(anchor, dtype=float), ci, lane_features(states[:, :2], lanemap, stats))


def _assemble(states, anchor, class_index, lane_cols):
    rows = np.zeros((len(states), FEATURE_DIM))
    rows[:, COL_POS] = states[:, :2] - anchor
    rows[:, COL_VEL] = states[:, 2:4]
    rows[:, 4 + class_index] = 1.0
    rows[:, COL_LANE.start :] = lane_cols
    return rows


def window_count(T: int, H: int, P: int) -> int:
    return max(0, T - H - P + 1)


def extract_windows(
    smoothed: SmoothedTrack,
    H: int,
    P: int,
    lanemap: LaneMap,
    vocabulary: Sequence[str] = DEFAULT_CLASSES,
    stats: FeatureStats | None = None,
) -> SampleSet:
    """All length ``H + P`` windows of a smoothed track, one per start step.

    The anchor is the absolute position at the last history step; futures
    are expressed relative to it.
    """
    T = len(smoothed)
    n = window_count(T, H, P)
    if n == 0:
        return SampleSet.empty(H, P)
    ci = _class_index(smoothed.class_label, vocabulary)
    states = smoothed.states
    # map columns depend only on the absolute position, so compute them once per step
    lane_cols = lane_features(states[: n + H - 1, :2], lanemap, stats)

    starts = np.arange(n)
    hist_idx = starts[:, None] + np.arange(H)[None, :]
    anchors = states[starts + H - 1, :2]
    fut_idx = starts[:, None] + H + np.arange(P)[None, :]

    history = np.zeros((n, H, FEATURE_DIM))
    history[:, :, COL_POS] = states[hist_idx, :2] - anchors[:, None, :]
    history[:, :, COL_VEL] = states[hist_idx, 2:4]
    history[:, :, 4 + ci] = 1.0
    history[:, :, COL_LANE.start :] = lane_cols[hist_idx]
    future = states[fut_idx, :2] - anchors[:, None, :]
    return SampleSet(
        history,
        future,
        anchors,
        [smoothed.object_id] * n,
        [smoothed.class_label] * n,
        smoothed.t[starts + H - 1],
    )


@dataclass
class RangeReport:
    checked: int = 0
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def check_feature_ranges(samples: SampleSet, dt: float = 0.1) -> RangeReport:
    """Plausibility ranges for normalised features, stated direction-free.

    History positions lie within 35 m of the anchor, futures within 15 m per
    second of horizon, velocity components within 15 m/s, ``d/100`` in
    ``[0, 0.5]`` and ``theta/pi`` in ``(-1, 1]``; one-hot blocks hold exactly
    one 1.
    """
    rep = RangeReport(checked=len(samples))
    if not len(samples):
        return rep
    h, f = samples.history, samples.future
    horizon_s = samples.P * dt
    checks = {
        "history radius > 35 m": np.hypot(h[..., 0], h[..., 1]) > 35.0,
        "anchor row not at origin": np.any(h[:, -1, COL_POS] != 0.0, axis=-1),
        f"future radius > {15 * horizon_s:g} m": np.hypot(f[..., 0], f[..., 1]) > 15.0 * horizon_s + 1e-9,
        "|velocity| > 15 m/s": np.any(np.abs(h[..., COL_VEL]) > 15.0, axis=-1),
        "d/100 outside [0, 0.5]": (h[..., COL_DIST] < 0) | (h[..., COL_DIST] > 0.5),
        "theta/pi outside (-1, 1]": (h[..., COL_HEADING] <= -1) | (h[..., COL_HEADING] > 1),
        "class one-hot malformed": h[..., COL_CLASS].sum(axis=-1) != 1.0,
        "lane one-hot malformed": h[..., COL_LANE].sum(axis=-1) != 1.0,
    }
    for name, bad in checks.items():
        count = int(np.count_nonzero(bad))
        if count:
            rep.violations.append((name, count))
    return rep
