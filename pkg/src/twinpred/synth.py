"""Synthetic four-way intersection: lane map plus a 15 Hz detection stream.

Lanes follow right-hand traffic. Every arm contributes a through lane, and
with turns enabled a right-turn and a left-turn lane, each a single polyline
from entry to exit built from straight legs and circular arcs. Agents drive
one lane each at a class-dependent speed: cruising, stopping at the stop
line and pulling away again, or standing still.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .geo import CalibrationOffset, GeoReference, enu_to_wgs84
from .ingest import ENU, GEODETIC
from .lanemap import LanePolyline, save_lanemap

CRUISE = "cruise"
STOP = "stop"
STATIONARY = "stationary"


def _default_mix():
    return {"CAR": 0.7, "TRUCK": 0.05, "BUS": 0.05, "MOTORCYCLE": 0.05, "BICYCLE": 0.1, "PEDESTRIAN": 0.05}


def _default_speeds():
    return {
        "CAR": (7.0, 13.5),
        "TRUCK": (6.0, 11.0),
        "BUS": (6.0, 11.0),
        "MOTORCYCLE": (8.0, 13.5),
        "BICYCLE": (3.0, 6.0),
        "PEDESTRIAN": (1.0, 1.8),
    }


@dataclass(frozen=True)
class ScenarioSpec:
    arm_length: float = 45.0
    arms: int = 4
    turns: bool = True
    lane_count: int = 11
    turn_radius: float = 10.0
    lane_offset: float = 1.75
    agent_count: int = 300
    class_mix: dict = field(default_factory=_default_mix)
    speed_ranges: dict = field(default_factory=_default_speeds)
    turn_fraction: float = 0.45
    max_lateral_accel: float = 3.0  # turning agents slow so that v^2 / turn_radius stays below this
    stop_fraction: float = 0.2
    stationary_fraction: float = 0.05
    noise_sigma: float = 0.1
    frame_rate: float = 15.0
    duration: float = 300.0
    translation: tuple = (0.0, 0.0)
    seed: int = 42

    def __post_init__(self):
        positive = ("arm_length", "turn_radius", "max_lateral_accel", "lane_offset", "agent_count", "frame_rate", "duration")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"scenario {name} must be positive")
        if self.arms not in (2, 4):
            raise ConfigError("scenario arms must be 2 or 4")
        if not 1 <= self.lane_count <= 11:
            raise ConfigError("scenario lane_count must lie in [1, 11]")
        if self.noise_sigma < 0:
            raise ConfigError("noise sigma must be non-negative")
        if abs(sum(self.class_mix.values()) - 1.0) > 1e-9 or min(self.class_mix.values()) < 0:
            raise ConfigError("class mix proportions must be non-negative and sum to 1")
        missing = set(self.class_mix) - set(self.speed_ranges)
        if missing:
            raise ConfigError(f"no speed range for classes {sorted(missing)}")
        for frac in (self.turn_fraction, self.stop_fraction, self.stationary_fraction):
            if not 0 <= frac <= 1:
                raise ConfigError("behaviour fractions must lie in [0, 1]")
        if self.stop_fraction + self.stationary_fraction > 1:
            raise ConfigError("stop and stationary fractions exceed 1")
        if self.turn_radius + self.lane_offset >= self.arm_length:
            raise ConfigError("turn radius does not fit inside the arm length")


def _arc(center, radius, a0, a1, max_step=0.5):
    n = max(2, int(math.ceil(abs(a1 - a0) * radius / max_step)) + 1)
    ang = np.linspace(a0, a1, n)
    return np.column_stack([center[0] + radius * np.cos(ang), center[1] + radius * np.sin(ang)])


def _west_approach_paths(L, w, R):
    """Through, right and left paths for traffic entering from the west."""
    through = np.array([[-L, -w], [L, -w]])
    right = np.vstack([
        [[-L, -w]],
        _arc((-w - R, -w - R), R, math.pi / 2, 0.0),
        [[-w, -L]],
    ])
    left = np.vstack([
        [[-L, -w]],
        _arc((w - R, -w + R), R, -math.pi / 2, 0.0),
        [[w, L]],
    ])
    return through, right, left


def generate_lanemap(spec: ScenarioSpec) -> list[LanePolyline]:
    """Lane polylines in the absolute frame (translation applied)."""
    through, right, left = _west_approach_paths(spec.arm_length, spec.lane_offset, spec.turn_radius)
    rotations = [0, 1, 2, 3] if spec.arms == 4 else [0, 2]
    shapes = [through] * len(rotations)
    turn_rot = []
    if spec.turns and spec.arms == 4:
        shapes = shapes + [right] * 4 + [left] * 4
        turn_rot = rotations * 2
    rots = rotations + turn_rot
    off = np.asarray(spec.translation, dtype=float)
    polylines = []
    for lane_id, (shape, k) in enumerate(zip(shapes, rots)):
        if lane_id >= spec.lane_count:
            break
        c, s = [(1, 0), (0, 1), (-1, 0), (0, -1)][k]
        rot = np.array([[c, -s], [s, c]], dtype=float)
        polylines.append(LanePolyline(lane_id, shape @ rot.T + off))
    return polylines


def write_lanemap_file(polylines, path, calibration: CalibrationOffset = CalibrationOffset()) -> None:
    """Write the map in pre-calibration coordinates, so loading with ``calibration`` restores it."""
    off = np.array([calibration.east, calibration.north])
    save_lanemap([LanePolyline(p.lane_id, p.vertices - off) for p in polylines], path)


@dataclass(frozen=True)
class AgentPlan:
    object_id: str
    class_label: str
    lane_id: int
    behaviour: str
    t_spawn: float
    t_end: float
    speed: float
    s0: float = 0.0
    s_stop: float = 0.0
    decel: float = 2.5
    accel: float = 2.0
    dwell: float = 0.0

    def arc_length(self, t):
        """Distance travelled along the lane at absolute times ``t``."""
        tau = np.asarray(t, dtype=float) - self.t_spawn
        v = self.speed
        if self.behaviour == STATIONARY:
            return np.full_like(tau, self.s0)
        if self.behaviour == CRUISE:
            return self.s0 + v * tau
        t_brake = (self.s_stop - v * v / (2 * self.decel) - self.s0) / v
        t_halt = t_brake + v / self.decel
        t_go = t_halt + self.dwell
        t_full = t_go + v / self.accel
        s_brake = self.s0 + v * t_brake
        s = np.where(tau < t_brake, self.s0 + v * tau, 0.0)
        tb = tau - t_brake
        s = np.where((tau >= t_brake) & (tau < t_halt), s_brake + v * tb - 0.5 * self.decel * tb**2, s)
        s = np.where((tau >= t_halt) & (tau < t_go), self.s_stop, s)
        tg = tau - t_go
        s = np.where((tau >= t_go) & (tau < t_full), self.s_stop + 0.5 * self.accel * tg**2, s)
        s = np.where(tau >= t_full, self.s_stop + 0.5 * v * v / self.accel + v * (tau - t_full), s)
        return s


def _point_at(vertices, s):
    seg = np.diff(vertices, axis=0)
    seg_len = np.hypot(seg[:, 0], seg[:, 1])
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    s = np.clip(s, 0.0, cum[-1])
    idx = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(seg) - 1)
    frac = (s - cum[idx]) / seg_len[idx]
    return vertices[idx] + frac[:, None] * seg[idx]


def _end_time(plan: AgentPlan, length: float, duration: float) -> float:
    """First time a moving agent reaches the lane end, capped at the scenario duration."""
    # arc length is non-decreasing; bisection on the crossing time
    lo, hi = plan.t_spawn, duration
    if plan.arc_length(np.array([hi]))[0] < length:
        return duration
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if plan.arc_length(np.array([mid]))[0] < length:
            lo = mid
        else:
            hi = mid
    return lo


def plan_agents(spec: ScenarioSpec, polylines) -> list[AgentPlan]:
    """Spawn schedule and motion profile of every agent, fully seeded."""
    rng = np.random.default_rng(spec.seed)
    lanes = {p.lane_id: p for p in polylines}
    n_through = min(spec.arms, len(polylines))
    through_ids = [p.lane_id for p in polylines[:n_through]]
    turn_ids = [p.lane_id for p in polylines[n_through:]]
    classes = sorted(spec.class_mix)
    probs = np.array([spec.class_mix[c] for c in classes])
    stop_line = spec.arm_length - spec.turn_radius - spec.lane_offset - 2.0

    plans = []
    for k in range(spec.agent_count):
        cls = classes[int(rng.choice(len(classes), p=probs))]
        lo, hi = spec.speed_ranges[cls]
        speed = float(rng.uniform(lo, hi))
        if turn_ids and rng.random() < spec.turn_fraction:
            lane_id = int(turn_ids[rng.integers(len(turn_ids))])
            speed *= min(1.0, math.sqrt(spec.max_lateral_accel * spec.turn_radius) / hi)
        else:
            lane_id = int(through_ids[rng.integers(len(through_ids))])
        length = lanes[lane_id].length
        u = rng.random()
        behaviour = STATIONARY if u < spec.stationary_fraction else STOP if u < spec.stationary_fraction + spec.stop_fraction else CRUISE
        t_spawn = float(rng.uniform(0.0, spec.duration))
        plan = AgentPlan(str(k + 1), cls, lane_id, behaviour, t_spawn, spec.duration, speed)
        if behaviour == STATIONARY:
            life = float(rng.uniform(10.0, 40.0))
            plan = replace(plan, s0=float(rng.uniform(0.0, stop_line)), speed=0.0,
                           t_end=min(spec.duration, t_spawn + life))
        else:
            if behaviour == STOP:
                plan = replace(plan, s_stop=stop_line, decel=max(2.5, speed * speed / (2 * stop_line) * 1.05),
                               dwell=float(rng.uniform(2.0, 8.0)))
            plan = replace(plan, t_end=_end_time(plan, length, spec.duration))
        plans.append(plan)
    return plans


def frame_indices(plan: AgentPlan, frame_rate: float) -> np.ndarray:
    """Global frame numbers ``k`` with ``t_spawn <= k / rate <= t_end``."""
    first = math.ceil(plan.t_spawn * frame_rate - 1e-9)
    last = math.floor(plan.t_end * frame_rate + 1e-9)
    return np.arange(first, last + 1)


def agent_positions(plan: AgentPlan, polyline: LanePolyline, frame_rate: float, rng=None, sigma: float = 0.0):
    k = frame_indices(plan, frame_rate)
    t = k / frame_rate
    xy = _point_at(polyline.vertices, plan.arc_length(t))
    if sigma > 0 and len(xy):
        xy = xy + rng.normal(0.0, sigma, size=xy.shape)
    return k, t, xy


def generate_tracks(spec: ScenarioSpec, polylines, path=None, position_kind: str = ENU,
                    ref: GeoReference | None = None) -> list[str]:
    """Detection lines for all agents, ordered by frame then agent.

    Written to ``path`` when given. Noise draws come from a per-agent seed
    derived from the scenario seed.
    """
    lanes = {p.lane_id: p for p in polylines}
    plans = plan_agents(spec, polylines)
    if position_kind == GEODETIC and ref is None:
        ref = GeoReference()
    children = np.random.SeedSequence(spec.seed).spawn(len(plans) + 1)[1:]
    rows = []
    for plan, child in zip(plans, children):
        k, t, xy = agent_positions(plan, lanes[plan.lane_id], spec.frame_rate, np.random.default_rng(child), spec.noise_sigma)
        for kk, tt, (x, y) in zip(k, t, xy):
            rows.append((int(kk), int(plan.object_id), float(tt), plan, float(x), float(y)))
    rows.sort(key=lambda r: (r[0], r[1]))
    lines = []
    for _, _, t, plan, x, y in rows:
        rec = {"t": round(t, 6), "id": plan.object_id, "class": plan.class_label}
        if position_kind == GEODETIC:
            lat, lon = enu_to_wgs84(x, y, ref)
            rec["lat"], rec["lon"] = round(lat, 10), round(lon, 10)
        else:
            rec["east"], rec["north"] = round(x, 4), round(y, 4)
        lines.append(json.dumps(rec))
    if path is not None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + ("\n" if lines else ""))
    return lines
