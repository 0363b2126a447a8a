"""Training-free predictors: constant velocity (CV) and Kalman-Singer (KF-CA)."""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.linalg import expm

from .preprocess.kalman import DT, linear_filter

TAU = 1.0
SIGMA_A = 1.0
MEAS_SIGMA = 0.5
VEL_MEAS_SIGMA = 0.5
INIT_VEL_SIGMA = 1.0


def cv_predict(last_state, P: int, dt: float = DT) -> np.ndarray:
    """Propagate the last velocity: ``r_t = v * t * dt`` for ``t = 1..P``."""
    v = np.asarray(last_state, dtype=float)[..., 2:4]
    steps = np.arange(1, P + 1) * dt
    return v[..., None, :] * steps[:, None]


@lru_cache(maxsize=32)
def singer_model(dt: float, tau: float, sigma_a: float):
    """Discrete Singer model for state ``[x, y, vx, vy, ax, ay]``.

    Acceleration is a first-order Gauss-Markov process with correlation
    ``1/tau`` and stationary std ``sigma_a``; ``F`` and ``Q`` are the exact
    discretisation (Van Loan).
    """
    alpha = 1.0 / tau
    A = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.0, 0.0, -alpha]])
    GqG = np.zeros((3, 3))
    GqG[2, 2] = 2.0 * alpha * sigma_a**2
    M = np.zeros((6, 6))
    M[:3, :3] = -A
    M[:3, 3:] = GqG
    M[3:, 3:] = A.T
    E = expm(M * dt)
    F1 = E[3:, 3:].T
    Q1 = F1 @ E[:3, 3:]
    Q1 = 0.5 * (Q1 + Q1.T)

    # interleave the per-axis [p, v, a] blocks into [x, y, vx, vy, ax, ay]
    F = np.zeros((6, 6))
    Q = np.zeros((6, 6))
    for axis in (0, 1):
        idx = [axis, 2 + axis, 4 + axis]
        F[np.ix_(idx, idx)] = F1
        Q[np.ix_(idx, idx)] = Q1
    F.flags.writeable = False
    Q.flags.writeable = False
    return F, Q


def _kfca_gains(H_steps, dt, tau, sigma_a, meas_sigma):
    F, Q = singer_model(dt, tau, sigma_a)
    Hm = np.eye(4, 6)
    R = np.diag([meas_sigma**2] * 2 + [VEL_MEAS_SIGMA**2] * 2)
    P0 = np.diag([meas_sigma**2] * 2 + [INIT_VEL_SIGMA**2] * 2 + [sigma_a**2] * 2)
    # covariances and gains do not depend on the measurements
    _, _, Ks = linear_filter(np.zeros((H_steps, 4)), F, Q, Hm, R, np.zeros(6), P0)
    return F, Hm, Ks


def kf_ca_predict_batch(history_states, P: int, tau: float = TAU, sigma_a: float = SIGMA_A,
                        meas_sigma: float = MEAS_SIGMA, dt: float = DT) -> np.ndarray:
    """KF-CA forecast for a batch of ``(N, H, 4)`` state histories.

    The filter starts from the first state's position and velocity with
    zero acceleration, treats every history state (position and velocity)
    as a measurement and then propagates its mean ``P`` steps. Output is relative to the last history position.
    """
    hs = np.asarray(history_states, dtype=float)
    N, H = hs.shape[:2]
    F, Hm, Ks = _kfca_gains(H, dt, tau, sigma_a, meas_sigma)
    x = np.zeros((N, 6))
    x[:, :4] = hs[:, 0, :4]
    for k in range(H):
        if k:
            x = x @ F.T
        innov = hs[:, k, :4] - x @ Hm.T
        x = x + innov @ Ks[k].T
    anchor = hs[:, -1, :2]
    out = np.empty((N, P, 2))
    for t in range(P):
        x = x @ F.T
        out[:, t] = x[:, :2] - anchor
    return out


def kf_ca_predict(history_states, P: int, tau: float = TAU, sigma_a: float = SIGMA_A,
                  meas_sigma: float = MEAS_SIGMA, dt: float = DT) -> np.ndarray:
    return kf_ca_predict_batch(np.asarray(history_states, dtype=float)[None], P, tau, sigma_a, meas_sigma, dt)[0]


def predict_samples(name: str, history_features, P: int, tau: float = TAU, sigma_a: float = SIGMA_A,
                    meas_sigma: float = MEAS_SIGMA) -> np.ndarray:
    """Run baseline ``"CV"`` or ``"KF-CA"`` on ``(N, H, F)`` feature histories."""
    states = np.asarray(history_features)[..., :4]
    if name == "CV":
        return cv_predict(states[:, -1], P)
    if name == "KF-CA":
        return kf_ca_predict_batch(states, P, tau, sigma_a, meas_sigma)
    raise ValueError(f"unknown baseline {name!r}")
