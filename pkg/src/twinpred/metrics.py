"""Displacement, map-compliance, self-loop, best-of-K and likelihood metrics.

Displacement metrics work on anchor-relative ``(N, P, 2)`` arrays; the
infrastructure-violation metric moves predictions back to absolute ENU with
the per-sample anchors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .lanemap import LaneMap

CORRECTED = "corrected"
NAIVE = "naive"
HEADING_THRESHOLD_DEG = 15.0
MIN_STEP = 0.1
VAR_FLOOR = 1e-4
SLC_DELTA = 1.5


def _pair(preds, targets):
    preds = np.asarray(preds, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if preds.shape != targets.shape or preds.shape[-1] != 2:
        raise ContractError(f"shape mismatch: preds {preds.shape} vs targets {targets.shape}")
    if preds.ndim == 2:
        preds, targets = preds[None], targets[None]
    return preds, targets


def _dist(a, b):
    d = a - b
    return np.hypot(d[..., 0], d[..., 1])


def ade(preds, targets) -> float:
    preds, targets = _pair(preds, targets)
    # per-sample means first, matching min_ade_k's order so K = 1 agrees bit for bit
    return float(_dist(preds, targets).mean(axis=-1).mean())


def fde(preds, targets) -> float:
    preds, targets = _pair(preds, targets)
    return float(_dist(preds[:, -1], targets[:, -1]).mean())


def rmse(preds, targets) -> float:
    preds, targets = _pair(preds, targets)
    return float(np.sqrt(np.mean(np.sum((preds - targets) ** 2, axis=-1))))


def net_heading_change(target) -> float | None:
    """Signed net heading change (rad) along a future that starts at the anchor.

    Only displacement steps longer than ``MIN_STEP`` count; ``None`` when
    fewer than two such steps exist.
    """
    path = np.vstack([np.zeros((1, 2)), np.asarray(target, dtype=float)])
    steps = np.diff(path, axis=0)
    steps = steps[np.hypot(steps[:, 0], steps[:, 1]) > MIN_STEP]
    if len(steps) < 2:
        return None
    heading = np.arctan2(steps[:, 1], steps[:, 0])
    delta = np.diff(heading)
    delta = (delta + math.pi) % (2 * math.pi) - math.pi
    return float(delta.sum())


def nonlinear_mask(targets, threshold_deg: float = HEADING_THRESHOLD_DEG) -> np.ndarray:
    thr = math.radians(threshold_deg)
    out = []
    for tgt in np.asarray(targets, dtype=float):
        change = net_heading_change(tgt)
        out.append(change is not None and abs(change) > thr)
    return np.array(out, dtype=bool)


def nl_ade(preds, targets, threshold_deg: float = HEADING_THRESHOLD_DEG):
    """ADE over samples whose true future turns by more than ``threshold_deg``.

    Returns ``(value, count)``; ``value`` is ``None`` for an empty subset.
    """
    preds, targets = _pair(preds, targets)
    mask = nonlinear_mask(targets, threshold_deg)
    count = int(mask.sum())
    if not count:
        return None, 0
    return ade(preds[mask], targets[mask]), count


def infra_violation(preds, anchors, lanemap: LaneMap, mode: str = CORRECTED) -> float:
    """Mean nearest-lane-centre distance of absolute predictions.

    ``mode="naive"`` instead returns ``mean|x_abs| + mean|y_abs|``, a number
    that tracks the map's distance from the ENU origin and says nothing
    about lane compliance. It is kept to reproduce that mistake.
    """
    preds = np.asarray(preds, dtype=float)
    if preds.ndim == 2:
        preds = preds[None]
    anchors = np.asarray(anchors, dtype=float).reshape(-1, 2)
    if len(anchors) != len(preds):
        raise ContractError("anchors must be row-aligned with predictions")
    pts = preds + anchors[:, None, :]
    if mode == NAIVE:
        return float(np.mean(np.abs(pts[..., 0])) + np.mean(np.abs(pts[..., 1])))
    if mode != CORRECTED:
        raise ContractError(f"unknown IV mode {mode!r}")
    if lanemap is None or len(lanemap) == 0:
        raise ContractError("IV needs a non-empty lane map")
    dist, _ = lanemap.query(pts)
    return float(dist.mean())


def self_loop_count(pred, delta: float = SLC_DELTA, min_gap: int = 1) -> int:
    """Number of step pairs ``t1 < t2`` (``t2 - t1 >= min_gap``) closer than ``delta``."""
    if not delta > 0:
        raise ContractError("delta must be positive")
    pred = np.asarray(pred, dtype=float)
    d = np.hypot(pred[:, None, 0] - pred[None, :, 0], pred[:, None, 1] - pred[None, :, 1])
    iu = np.triu_indices(len(pred), k=max(min_gap, 1))
    return int(np.count_nonzero(d[iu] < delta))


def mean_self_loop_count(preds, delta: float = SLC_DELTA, min_gap: int = 1) -> float:
    preds = np.asarray(preds, dtype=float)
    if not len(preds):
        return 0.0
    return float(np.mean([self_loop_count(p, delta, min_gap) for p in preds]))


def _samples(pred_set):
    s = np.asarray(getattr(pred_set, "samples", pred_set), dtype=float)
    if s.ndim == 3:
        s = s[:, None]
    if s.shape[0] < 1:
        raise ContractError("prediction set needs K >= 1")
    return s


def min_ade_k(pred_set, target) -> float:
    """Per sample, the smallest ADE over the K draws; averaged over samples."""
    s = _samples(pred_set)
    target = np.asarray(target, dtype=float).reshape(s.shape[1:])
    per = _dist(s, target[None]).mean(axis=-1)  # (K, N)
    return float(per.min(axis=0).mean())


def min_fde_k(pred_set, target) -> float:
    s = _samples(pred_set)
    target = np.asarray(target, dtype=float).reshape(s.shape[1:])
    per = _dist(s[:, :, -1], target[None, :, -1])
    return float(per.min(axis=0).mean())


def nll(pred_set, target, var_floor: float = VAR_FLOOR) -> float:
    """Per-step Gaussian negative log-likelihood (nats) of the ground truth.

    Each step gets a diagonal Gaussian with the sample mean and the unbiased
    per-coordinate sample variance (floored at ``var_floor``) of the K draws.
    The result is averaged over steps and then over samples.
    """
    s = _samples(pred_set)
    if s.shape[0] < 2:
        raise ContractError("NLL needs K >= 2 samples")
    target = np.asarray(target, dtype=float).reshape(s.shape[1:])
    mu = s.mean(axis=0)
    var = np.maximum(s.var(axis=0, ddof=1), var_floor)
    logp = -0.5 * np.log(2 * math.pi * var) - (target - mu) ** 2 / (2 * var)
    per_sample = -logp.sum(axis=-1).mean(axis=-1)
    return float(per_sample.mean())


@dataclass
class MetricsReport:
    model: str
    horizon: int
    n_samples: int
    ADE: float
    FDE: float
    RMSE: float
    NL_ADE: float | None
    nl_count: int
    IV: float
    IV_naive: float
    SLC: float
    K: int
    minADE: float
    minFDE: float
    NLL: float | None
    iv_mode: str = CORRECTED

    def to_dict(self) -> dict:
        """Serialised form; keys follow the results-table headers."""
        return {
            "model": self.model,
            "horizon_steps": self.horizon,
            "horizon_s": round(self.horizon * 0.1, 1),
            "n_samples": self.n_samples,
            "ADE": self.ADE,
            "FDE": self.FDE,
            "RMSE": self.RMSE,
            "NL-ADE": self.NL_ADE,
            "NL-ADE_count": self.nl_count,
            "IV": self.IV,
            "IV_naive": self.IV_naive,
            "iv_mode": self.iv_mode,
            "SLC": self.SLC,
            "K": self.K,
            f"minADE@{self.K}": self.minADE,
            f"minFDE@{self.K}": self.minFDE,
            "NLL": self.NLL,
        }

    @classmethod
    def from_dict(cls, d: dict) -> MetricsReport:
        K = d["K"]
        return cls(
            model=d["model"], horizon=d["horizon_steps"], n_samples=d["n_samples"], ADE=d["ADE"], FDE=d["FDE"],
            RMSE=d["RMSE"], NL_ADE=d["NL-ADE"], nl_count=d["NL-ADE_count"], IV=d["IV"], IV_naive=d["IV_naive"],
            SLC=d["SLC"], K=K, minADE=d[f"minADE@{K}"], minFDE=d[f"minFDE@{K}"], NLL=d["NLL"],
            iv_mode=d.get("iv_mode", CORRECTED),
        )


def metrics_report(model: str, preds, samples, lanemap, pred_set=None, iv_mode: str = CORRECTED,
                   slc_delta: float = SLC_DELTA, slc_min_gap: int = 1) -> MetricsReport:
    """Score deterministic ``preds`` (and an optional sample set) on ``samples``."""
    targets = samples.future
    nl_value, nl_count = nl_ade(preds, targets)
    iv_corr = infra_violation(preds, samples.anchor, lanemap, CORRECTED)
    iv_naive = infra_violation(preds, samples.anchor, lanemap, NAIVE)
    s = _samples(preds[None] if pred_set is None else pred_set)
    return MetricsReport(
        model=model,
        horizon=targets.shape[1],
        n_samples=len(targets),
        ADE=ade(preds, targets),
        FDE=fde(preds, targets),
        RMSE=rmse(preds, targets),
        NL_ADE=nl_value,
        nl_count=nl_count,
        IV=iv_naive if iv_mode == NAIVE else iv_corr,
        IV_naive=iv_naive,
        SLC=mean_self_loop_count(preds, slc_delta, slc_min_gap),
        K=s.shape[0],
        minADE=min_ade_k(s, targets),
        minFDE=min_fde_k(s, targets),
        NLL=nll(s, targets) if s.shape[0] >= 2 else None,
        iv_mode=iv_mode,
    )


def evaluate_all(variant: str, samples, lanemap, K: int = 20, params=None, seed: int = 42,
                 iv_mode: str = CORRECTED, baseline_kwargs: dict | None = None,
                 slc_delta: float = SLC_DELTA, slc_min_gap: int = 1, batch_size: int = 1024) -> MetricsReport:
    """Full metric suite for one model variant on one sample set.

    CV and KF-CA are deterministic, so their best-of-K columns equal the
    plain metrics and NLL is absent. Trained variants use dropout-off
    predictions for the plain metrics and ``K`` MC-dropout passes for the
    rest. With ``K == 1`` the single draw is the dropout-off pass.
    """
    from . import baselines
    from .neural.model import mc_dropout_predict, predict

    P = samples.P
    if variant in ("CV", "KF-CA"):
        preds = baselines.predict_samples(variant, samples.history, P, **(baseline_kwargs or {}))
        return metrics_report(variant, preds, samples, lanemap, None, iv_mode, slc_delta, slc_min_gap)
    if params is None:
        raise ContractError(f"variant {variant} needs trained parameters")
    if params.config.horizon != P:
        raise ContractError(f"model horizon {params.config.horizon} does not match data horizon {P}")
    hist = samples.history.astype(params.dtype)
    preds = predict(params, hist, batch_size).astype(float)
    if K == 1:
        pred_set = preds[None]
    else:
        pred_set = mc_dropout_predict(params, hist, K, seed, batch_size=batch_size).samples.astype(float)
    return metrics_report(variant, preds, samples, lanemap, pred_set, iv_mode, slc_delta, slc_min_gap)
