"""Offline report figures, rendered with the Agg backend straight to PNG."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# no Software/date metadata, so reruns give identical bytes
_PNG_META = {"Software": None}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=110, metadata=_PNG_META)
    plt.close(fig)
    return path


def metric_vs_horizon(rows: list[dict], metric: str, path) -> Path:
    """One line per model: ``metric`` against the horizon in seconds."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for model in sorted({r["model"] for r in rows}):
        pts = sorted((r["horizon_s"], r[metric]) for r in rows if r["model"] == model and r.get(metric) is not None)
        if pts:
            x, y = zip(*pts)
            ax.plot(x, y, marker="o", label=model)
    ax.set_xlabel("horizon [s]")
    ax.set_ylabel(f"{metric} [m]")
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, path)


def training_curves(logs: dict, path) -> Path:
    """Validation MSE per epoch for every training log."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, rows in sorted(logs.items()):
        if rows:
            ax.plot([int(r["epoch"]) for r in rows], [float(r["val_mse"]) for r in rows], label=name)
    ax.set_xlabel("epoch")
    ax.set_ylabel("val MSE [m$^2$]")
    ax.set_yscale("log")
    ax.grid(alpha=0.3)
    ax.legend(fontsize=7)
    fig.tight_layout()
    return _save(fig, path)


def scene(lanemap, samples, path, n_tracks: int = 40, seed: int = 42) -> Path:
    """Lane centres with a seeded handful of test windows in absolute ENU."""
    fig, ax = plt.subplots(figsize=(6, 6))
    pts = lanemap.centre_points
    ax.scatter(pts[:, 0], pts[:, 1], s=1, c=lanemap.lane_ids, cmap="tab20", label="lane centres")
    if samples is not None and len(samples):
        rng = np.random.default_rng(seed)
        idx = np.sort(rng.choice(len(samples), size=min(n_tracks, len(samples)), replace=False))
        for i in idx:
            a = samples.anchor[i]
            hist = samples.history[i, :, :2] + a
            fut = samples.future[i] + a
            ax.plot(hist[:, 0], hist[:, 1], color="0.3", lw=0.8)
            ax.plot(fut[:, 0], fut[:, 1], color="tab:red", lw=0.8)
    ax.set_aspect("equal")
    ax.set_xlabel("east [m]")
    ax.set_ylabel("north [m]")
    fig.tight_layout()
    return _save(fig, path)
