"""Training objectives: MSE, lane-proximity (infra) and batch collision hinge.

Every loss takes ``(N, P, 2)`` anchor-relative predictions. With
``grad=True`` it also returns the gradient with respect to those
predictions, which :mod:`twinpred.neural` chains into the network.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ContractError, ConfigError
from .lanemap import LaneMap

ANCHOR_RELATIVE = "anchor_relative"
ABSOLUTE = "absolute"

LAMBDA_INFRA = 0.1
LAMBDA_COLL = 0.05
DELTA_COLL = 1.5

VARIANTS = ("Baseline", "Map_Loss", "Collision_Loss", "Twin_All")
BASELINE_VARIANTS = ("CV", "KF-CA")


@dataclass(frozen=True)
class LossSpec:
    use_infra: bool = False
    use_coll: bool = False
    lambda_infra: float = LAMBDA_INFRA
    lambda_coll: float = LAMBDA_COLL
    infra_corrected: bool = True
    delta_coll: float = DELTA_COLL
    coll_frame: str = ANCHOR_RELATIVE
    max_pairs: int | None = None

    def __post_init__(self):
        if self.lambda_infra < 0 or self.lambda_coll < 0:
            raise ConfigError("loss weights must be non-negative")
        if not self.delta_coll > 0:
            raise ConfigError("collision radius must be positive")
        if self.coll_frame not in (ANCHOR_RELATIVE, ABSOLUTE):
            raise ConfigError(f"unknown collision frame {self.coll_frame!r}")

    @classmethod
    def for_variant(cls, variant: str, **overrides) -> LossSpec:
        flags = {
            "Baseline": (False, False),
            "Map_Loss": (True, False),
            "Collision_Loss": (False, True),
            "Twin_All": (True, True),
        }
        if variant not in flags:
            raise ConfigError(f"unknown trainable variant {variant!r}; expected one of {VARIANTS}")
        use_infra, use_coll = flags[variant]
        return replace(cls(use_infra=use_infra, use_coll=use_coll), **overrides)

    @property
    def needs_anchors(self) -> bool:
        return self.use_infra or (self.use_coll and self.coll_frame == ABSOLUTE)


def _check_pair(preds, targets):
    preds = np.asarray(preds)
    targets = np.asarray(targets)
    if preds.shape != targets.shape or preds.ndim != 3 or preds.shape[-1] != 2:
        raise ContractError(f"shape mismatch: preds {preds.shape} vs targets {targets.shape}")
    return preds, targets


def mse_loss(preds, targets, grad: bool = False):
    """``mean_{n,t} ||r_hat - r||^2`` (squared metres)."""
    preds, targets = _check_pair(preds, targets)
    N, P, _ = preds.shape
    diff = preds - targets
    value = float(np.sum(diff * diff, dtype=np.float64) / (N * P))
    if not grad:
        return value
    return value, (2.0 / (N * P)) * diff


def infra_loss(preds, anchors, lanemap: LaneMap, corrected: bool = True, grad: bool = False):
    """Mean distance from each predicted position to its nearest lane-centre point.

    ``corrected=True`` adds the per-sample anchor to reach absolute ENU
    first. ``corrected=False`` skips that step and measures anchor-relative
    values against absolute lane points; it exists only to reproduce the
    frame-mismatch failure.
    """
    if lanemap is None or len(lanemap) == 0:
        raise ContractError("infra loss needs a non-empty lane map")
    preds = np.asarray(preds)
    N, P, _ = preds.shape
    if corrected:
        if anchors is None:
            raise ContractError("infra loss needs anchors in corrected mode")
        anchors = np.asarray(anchors)
        if anchors.shape != (N, 2):
            raise ContractError(f"anchors must be shaped ({N}, 2), got {anchors.shape}")
        pts = preds.astype(np.float64) + anchors[:, None, :]
    else:
        pts = preds.astype(np.float64)
    dist, idx = lanemap.query(pts)
    value = float(dist.sum() / (N * P))
    if not grad:
        return value
    diff = pts - lanemap.centre_points[idx]
    safe = np.where(dist > 0, dist, 1.0)
    g = np.where((dist > 0)[..., None], diff / safe[..., None], 0.0) / (N * P)
    return value, g.astype(preds.dtype)


def _pair_sample(N, max_pairs, rng):
    a = rng.integers(0, N, size=max_pairs)
    b = rng.integers(0, N - 1, size=max_pairs)
    b = np.where(b >= a, b + 1, b)
    return a, b


def collision_loss(preds, delta: float = DELTA_COLL, frame: str = ANCHOR_RELATIVE, anchors=None,
                   grad: bool = False, max_pairs: int | None = None, rng=None):
    """Hinge ``max(0, delta - ||p_n,t - p_m,t||)`` averaged over steps and unordered pairs.

    ``frame="absolute"`` adds anchors before comparing positions. With
    ``max_pairs`` set and more pairs than that available, a uniform random
    pair sample gives an unbiased estimate.
    """
    preds = np.asarray(preds)
    N, P, _ = preds.shape
    if frame == ABSOLUTE:
        if anchors is None:
            raise ContractError("absolute-frame collision loss needs anchors")
        pts = preds.astype(np.float64) + np.asarray(anchors, dtype=np.float64)[:, None, :]
    elif frame == ANCHOR_RELATIVE:
        pts = preds.astype(np.float64)
    else:
        raise ContractError(f"unknown frame {frame!r}")
    n_pairs = N * (N - 1) // 2
    if n_pairs == 0:
        return (0.0, np.zeros_like(preds)) if grad else 0.0

    if max_pairs is not None and n_pairs > max_pairs:
        if rng is None:
            raise ContractError("pair subsampling needs an rng")
        a, b = _pair_sample(N, max_pairs, rng)
        diff = pts[a] - pts[b]  # (M, P, 2)
        d = np.hypot(diff[..., 0], diff[..., 1])
        active = d < delta
        value = float(np.where(active, delta - d, 0.0).sum() / (P * max_pairs))
        if not grad:
            return value
        coef = np.where(active & (d > 0), -1.0 / np.where(d > 0, d, 1.0), 0.0) / (P * max_pairs)
        gp = coef[..., None] * diff
        g = np.zeros_like(pts)
        np.add.at(g, a, gp)
        np.add.at(g, b, -gp)
        return value, g.astype(preds.dtype)

    # full N x N matrices, one step at a time
    iu = np.triu_indices(N, 1)
    denom = P * n_pairs
    step_sums = np.empty(P)
    g = np.zeros_like(pts) if grad else None
    for t in range(P):
        dx = pts[:, None, t, 0] - pts[None, :, t, 0]
        dy = pts[:, None, t, 1] - pts[None, :, t, 1]
        d = np.hypot(dx, dy)
        step_sums[t] = np.maximum(delta - d[iu], 0.0).sum()
        if grad:
            active = (d < delta) & (d > 0)
            coef = np.where(active, -1.0 / np.where(d > 0, d, 1.0), 0.0)  # symmetric
            g[:, t, 0] = (coef * dx).sum(axis=1)
            g[:, t, 1] = (coef * dy).sum(axis=1)
    value = float(step_sums.sum() / denom)
    if not grad:
        return value
    return value, (g / denom).astype(preds.dtype)


def combined_loss(preds, targets, anchors, lanemap, spec: LossSpec, grad: bool = False, rng=None):
    """MSE plus the weighted auxiliary terms switched on by ``spec``.

    Returns ``(total, terms)`` or, with ``grad=True``,
    ``(total, terms, dL/dpreds)``; ``terms`` holds the unweighted values.
    """
    if spec.needs_anchors and anchors is None:
        raise ContractError("this loss spec needs anchors")
    out = mse_loss(preds, targets, grad)
    mse, g = out if grad else (out, None)
    terms = {"mse": mse}
    total = mse
    if spec.use_infra:
        out = infra_loss(preds, anchors, lanemap, spec.infra_corrected, grad)
        val, gi = out if grad else (out, None)
        terms["infra"] = val
        total += spec.lambda_infra * val
        if grad:
            g = g + spec.lambda_infra * gi
    if spec.use_coll:
        out = collision_loss(preds, spec.delta_coll, spec.coll_frame, anchors, grad, spec.max_pairs, rng)
        val, gc = out if grad else (out, None)
        terms["coll"] = val
        total += spec.lambda_coll * val
        if grad:
            g = g + spec.lambda_coll * gc
    return (total, terms, g) if grad else (total, terms)
