"""10 Hz resampling and the class-specific constant-velocity Kalman filter."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from ..errors import ContractError
from ..ingest import TrackSeries

DT = 0.1
MEAS_SIGMA = 0.5
DEFAULT_SIGMA_V = 2.5
SIGMA_V = {"PEDESTRIAN": 1.5, "CAR": 3.0}
INIT_VEL_SIGMA = 10.0


@dataclass
class SmoothedTrack:
    object_id: str
    class_label: str
    t: np.ndarray  # (T,)
    states: np.ndarray  # (T, 4): x, y, vx, vy

    def __len__(self):
        return len(self.t)


def resample_10hz(track: TrackSeries, dt: float = DT) -> TrackSeries:
    """Linearly interpolate positions onto ``t0 + k * dt`` within the track span."""
    t = np.asarray(track.t, dtype=float)
    span = t[-1] - t[0] if len(t) else 0.0
    if len(t) < 2 or span < dt - 1e-9:
        return TrackSeries(track.object_id, track.class_label, np.empty(0), np.empty((0, 2)))
    n = int(np.floor(span / dt + 1e-9)) + 1
    grid = t[0] + np.arange(n) * dt
    xy = np.column_stack([np.interp(grid, t, track.xy[:, 0]), np.interp(grid, t, track.xy[:, 1])])
    return TrackSeries(track.object_id, track.class_label, grid, xy)


def cv_model(dt: float, sigma_v: float):
    """Transition and process noise for state ``[x, y, vx, vy]``.

    Continuous white-noise acceleration whose intensity makes the velocity
    variance grow by ``sigma_v**2`` per second.
    """
    F = np.eye(4)
    F[0, 2] = F[1, 3] = dt
    q = sigma_v**2
    block = q * np.array([[dt**3 / 3, dt**2 / 2], [dt**2 / 2, dt]])
    Q = np.zeros((4, 4))
    Q[np.ix_([0, 2], [0, 2])] = block
    Q[np.ix_([1, 3], [1, 3])] = block
    return F, Q


def linear_filter(zs, F, Q, H, R, x0, P0):
    """Forward Kalman filter over measurements ``zs``.

    The first measurement updates the prior ``(x0, P0)`` directly; each later
    one follows a predict step. Returns filtered means ``(T, n)``,
    covariances ``(T, n, n)`` and gains ``(T, n, m)``.
    """
    zs = np.asarray(zs, dtype=float)
    n = len(x0)
    xs = np.empty((len(zs), n))
    Ps = np.empty((len(zs), n, n))
    Ks = np.empty((len(zs), n, H.shape[0]))
    x, P = np.array(x0, dtype=float), np.array(P0, dtype=float)
    I = np.eye(n)
    for k, z in enumerate(zs):
        if k:
            x = F @ x
            P = F @ P @ F.T + Q
        S = H @ P @ H.T + R
        K = np.linalg.solve(S, H @ P).T
        x = x + K @ (z - H @ x)
        IKH = I - K @ H
        P = IKH @ P @ IKH.T + K @ R @ K.T  # Joseph form
        xs[k], Ps[k], Ks[k] = x, P, K
    return xs, Ps, Ks


def class_sigma_v(class_label: str, table: Mapping[str, float] | None = None, default: float = DEFAULT_SIGMA_V):
    table = SIGMA_V if table is None else table
    return float(table.get(class_label, default))


def kalman_smooth(
    track: TrackSeries,
    class_label: str | None = None,
    sigma_v_table: Mapping[str, float] | None = None,
    default_sigma_v: float = DEFAULT_SIGMA_V,
    meas_sigma: float = MEAS_SIGMA,
    dt: float = DT,
) -> SmoothedTrack:
    """Causal constant-velocity filter over a uniform ``dt`` track.

    Process noise is set by the class velocity sigma; only positions are
    measured. The filtered state is reported at every step.
    """
    class_label = class_label or track.class_label
    t = np.asarray(track.t, dtype=float)
    if len(t) == 0:
        return SmoothedTrack(track.object_id, class_label, t, np.empty((0, 4)))
    if len(t) > 1 and np.max(np.abs(np.diff(t) - dt)) > 1e-6:
        raise ContractError(f"track {track.object_id} is not uniformly sampled at {dt} s")

    F, Q = cv_model(dt, class_sigma_v(class_label, sigma_v_table, default_sigma_v))
    H = np.zeros((2, 4))
    H[0, 0] = H[1, 1] = 1.0
    R = np.eye(2) * meas_sigma**2
    x0 = np.array([track.xy[0, 0], track.xy[0, 1], 0.0, 0.0])
    P0 = np.diag([meas_sigma**2, meas_sigma**2, INIT_VEL_SIGMA**2, INIT_VEL_SIGMA**2])
    xs, _, _ = linear_filter(track.xy, F, Q, H, R, x0, P0)
    return SmoothedTrack(track.object_id, class_label, t, xs)
