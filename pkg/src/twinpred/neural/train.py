"""Mini-batch training with Adam, plateau LR decay and early stopping."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractError, DivergenceError
from ..losses import LossSpec, combined_loss, infra_loss, mse_loss
from .model import ModelConfig, ModelParams, backward, forward, init_params, predict
from .optim import AdamState, ReduceOnPlateau, adam_step

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 256
    max_epochs: int = 40
    early_stop_patience: int = 10
    lr_patience: int = 5
    lr_factor: float = 0.5
    seed: int = 42
    variant: str = "Baseline"
    loss: LossSpec = field(default_factory=LossSpec)
    dtype: str = "float32"
    eval_batch_size: int = 1024

    def __post_init__(self):
        if min(self.max_epochs, self.early_stop_patience, self.lr_patience, self.batch_size) <= 0:
            raise ContractError("epochs, patience values and batch size must be positive")


@dataclass
class TrainLog:
    epochs: list = field(default_factory=list)
    best_epoch: int = 0
    best_val_mse: float = math.inf
    stop_epoch: int = 0
    stopped_early: bool = False


def loss_and_gradients(params: ModelParams, batch, loss_spec: LossSpec, lanemap=None, anchors=None,
                       dropout_on: bool = False, rng=None):
    """Composite loss of one batch and its gradient for every parameter.

    ``batch`` is ``(history, targets)``. Returns ``(loss, grads, terms)``
    where ``terms`` holds the unweighted component values.
    """
    history, targets = batch
    if loss_spec.needs_anchors and anchors is None:
        raise ContractError(f"loss spec {loss_spec} needs anchors")
    preds, cache = forward(params, history, dropout_on=dropout_on, rng=rng, keep_cache=True)
    loss, terms, dpreds = combined_loss(preds, np.asarray(targets, dtype=preds.dtype), anchors, lanemap,
                                        loss_spec, grad=True, rng=rng)
    return loss, backward(params, cache, dpreds), terms


def infra_gradient(params: ModelParams, history, anchors, lanemap, corrected: bool) -> ModelParams:
    """Parameter gradient of the infra term alone (dropout off)."""
    preds, cache = forward(params, history, keep_cache=True)
    _, dpreds = infra_loss(preds, anchors, lanemap, corrected, grad=True)
    return backward(params, cache, dpreds)


def validation_mse(params: ModelParams, samples, batch_size: int = 1024) -> float:
    preds = predict(params, samples.history.astype(params.dtype, copy=False), batch_size)
    return mse_loss(preds, samples.future.astype(params.dtype, copy=False))


def train(dataset, model_cfg: ModelConfig, train_cfg: TrainConfig, lanemap=None, on_epoch=None):
    """Fit the encoder-decoder on ``dataset.train``; select on ``dataset.val`` MSE.

    Returns ``(best_params, TrainLog)``. Fully determined by the seed, the
    data and both configs.
    """
    train_set, val_set = dataset.train, dataset.val
    if not len(train_set) or not len(val_set):
        raise ContractError("training needs non-empty train and val splits")
    if train_cfg.loss.needs_anchors and train_cfg.loss.use_infra and lanemap is None:
        raise ContractError("infra loss needs a lane map")
    P = train_set.P
    cfg = model_cfg.with_horizon(P)
    dtype = np.dtype(train_cfg.dtype)

    seeds = np.random.SeedSequence(train_cfg.seed).spawn(2)
    shuffle_rng = np.random.default_rng(seeds[0])
    noise_rng = np.random.default_rng(seeds[1])
    params = init_params(cfg, train_cfg.seed, dtype)
    state = AdamState.zeros(params)
    sched = ReduceOnPlateau(train_cfg.lr, train_cfg.lr_factor, train_cfg.lr_patience)

    X = train_set.history.astype(dtype)
    Y = train_set.future.astype(dtype)
    A = train_set.anchor
    N = len(X)
    bs = train_cfg.batch_size
    spec = train_cfg.loss

    out = TrainLog()
    best = params.copy()
    bad_epochs = 0
    for epoch in range(1, train_cfg.max_epochs + 1):
        lr = sched.lr
        perm = shuffle_rng.permutation(N)
        sums = {"loss": 0.0, "mse": 0.0, "infra": 0.0, "coll": 0.0}
        for start in range(0, N, bs):
            idx = perm[start : start + bs]
            loss, grads, terms = loss_and_gradients(
                params, (X[idx], Y[idx]), spec, lanemap, A[idx], dropout_on=True, rng=noise_rng
            )
            if not math.isfinite(loss) or not all(np.all(np.isfinite(g)) for _, g in grads.items()):
                raise DivergenceError(
                    f"non-finite loss/gradient at epoch {epoch}, batch {start // bs} (loss={loss}, terms={terms})"
                )
            adam_step(params, grads, state, lr)
            w = len(idx)
            sums["loss"] += loss * w
            for k, v in terms.items():
                sums[k] += v * w
        val = validation_mse(params, val_set, train_cfg.eval_batch_size)
        if not math.isfinite(val):
            raise DivergenceError(f"non-finite validation MSE at epoch {epoch}")

        improved = val < out.best_val_mse
        if improved:
            out.best_val_mse, out.best_epoch = val, epoch
            best = params.copy()
            bad_epochs = 0
        else:
            bad_epochs += 1
        sched.step(val)
        row = {
            "epoch": epoch,
            "train_loss": sums["loss"] / N,
            "train_mse": sums["mse"] / N,
            "train_infra": sums["infra"] / N if spec.use_infra else None,
            "train_coll": sums["coll"] / N if spec.use_coll else None,
            "val_mse": val,
            "lr": lr,
        }
        out.epochs.append(row)
        out.stop_epoch = epoch
        log.info("epoch %d: train %.4f val %.4f lr %.2e", epoch, row["train_loss"], val, lr)
        if on_epoch is not None:
            on_epoch(row)
        if bad_epochs >= train_cfg.early_stop_patience:
            out.stopped_early = True
            break
    return best, out
