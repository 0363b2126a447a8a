"""Stage functions behind the CLI verbs: synth, preprocess, train, evaluate, ablate.

Every stage reads its inputs from and writes its outputs under the config's
``out_dir``. Outputs contain no timestamps or host details, so identical
config and seed give byte-identical files.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import math
from pathlib import Path

import numpy as np

from .config import PipelineConfig
from .errors import ConfigError, HorizonMismatchError, IntegrityError
from .ingest import AssemblyStats, assemble_tracks, read_detections
from .lanemap import LaneMap, load_lanemap, nearest_centre
from .losses import BASELINE_VARIANTS, VARIANTS
from .metrics import MetricsReport, evaluate_all, infra_violation
from .neural import infra_gradient, init_params, load_checkpoint, predict, save_checkpoint, train
from .preprocess import (
    FeatureStats,
    SampleSet,
    assign_objects,
    base_object_id,
    check_feature_ranges,
    extract_windows,
    kalman_smooth,
    read_dataset,
    read_samples,
    resample_10hz,
    split_by_object,
    write_dataset,
)
from .preprocess.split import SPLITS
from .synth import generate_lanemap, generate_tracks, write_lanemap_file

log = logging.getLogger(__name__)

TABLE_COLUMNS = ("ADE", "FDE", "RMSE", "NL-ADE", "IV", "IV_naive", "SLC", "minADE@{K}", "minFDE@{K}", "NLL")
LOG_FIELDS = ("epoch", "train_loss", "train_mse", "train_infra", "train_coll", "val_mse", "lr")


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def dataset_dir(cfg: PipelineConfig, horizon: int) -> Path:
    return cfg.out_dir / "dataset" / f"P{horizon}"


def checkpoint_path(cfg: PipelineConfig, variant: str, horizon: int) -> Path:
    return cfg.out_dir / "checkpoints" / f"{variant}_P{horizon}.ckpt"


def report_dir(cfg: PipelineConfig, horizon: int) -> Path:
    return cfg.out_dir / "reports" / f"P{horizon}"


def _load_map(cfg: PipelineConfig) -> LaneMap:
    return load_lanemap(cfg.path("lanemap"), cfg.calibration, cfg.lanemap.spacing, cfg.lanemap.cell_size)


# --- synth -----------------------------------------------------------------


def run_synth(cfg: PipelineConfig) -> dict:
    """Write the synthetic lane map and detection file named in ``paths``."""
    polylines = generate_lanemap(cfg.synth)
    map_path, det_path = cfg.path("lanemap"), cfg.path("detections")
    map_path.parent.mkdir(parents=True, exist_ok=True)
    write_lanemap_file(polylines, map_path, cfg.calibration)
    kind = cfg.ingest.position_kind or "enu"
    lines = generate_tracks(cfg.synth, polylines, det_path, kind, cfg.geo)
    return {"lanes": len(polylines), "records": len(lines), "lanemap": str(map_path), "detections": str(det_path)}


# --- preprocess ------------------------------------------------------------


def smooth_tracks(cfg: PipelineConfig) -> list:
    path = cfg.path("detections")
    if not path.exists():
        raise ConfigError(f"detection file not found: {path}")
    records = read_detections(path, cfg.geo, cfg.classes, cfg.ingest.position_kind)
    stats = AssemblyStats()
    tracks = assemble_tracks(records, cfg.ingest.gap_threshold, stats)
    pp = cfg.preprocess
    out = []
    for tr in tracks:
        out.append(kalman_smooth(resample_10hz(tr), sigma_v_table=pp.sigma_v, default_sigma_v=pp.default_sigma_v,
                                 meas_sigma=pp.meas_sigma))
    return out


def build_samples(smoothed, cfg: PipelineConfig, lanemap: LaneMap, horizon: int, stats=None) -> SampleSet:
    H = cfg.preprocess.history
    parts = [extract_windows(s, H, horizon, lanemap, cfg.classes, stats) for s in smoothed]
    parts = [p for p in parts if len(p)]
    return SampleSet.concat(parts) if parts else SampleSet.empty(H, horizon)


def summary_table(counts: dict, objects: dict, horizons) -> tuple[str, str]:
    """Split-by-horizon window counts as aligned text and as TSV."""
    header = ["Split", "Objects"] + [f"{p / 10:g}s" for p in horizons]
    rows = []
    for split in SPLITS:
        rows.append([split.capitalize(), objects[split]] + [counts[p][split] for p in horizons])
    rows.append(["Total", sum(objects.values())] + [sum(counts[p].values()) for p in horizons])
    tsv = "\t".join(header) + "\n" + "".join("\t".join(str(v) for v in r) + "\n" for r in rows)
    widths = [max(len(str(r[i])) for r in rows + [header]) for i in range(len(header))]
    fmt = lambda r: "  ".join(str(v).rjust(w) if i else str(v).ljust(w) for i, (v, w) in enumerate(zip(r, widths)))
    text = fmt(header) + "\n" + "\n".join(fmt(r) for r in rows) + "\n"
    return text, tsv


def run_preprocess(cfg: PipelineConfig, horizons=None) -> dict:
    """Smooth, window and split the detections for every horizon."""
    horizons = tuple(horizons or cfg.preprocess.horizons)
    lanemap = _load_map(cfg)
    smoothed = smooth_tracks(cfg)
    pp = cfg.preprocess
    base_ids = sorted({base_object_id(s.object_id) for s in smoothed})
    assignment = assign_objects(base_ids, pp.split_ratios, pp.split_seed)
    objects = {name: sum(1 for b in base_ids if assignment[b] == name) for name in SPLITS}

    counts = {}
    for P in horizons:
        stats = FeatureStats()
        samples = build_samples(smoothed, cfg, lanemap, P, stats)
        ranges = check_feature_ranges(samples)
        if not ranges.ok:
            log.warning("P=%d feature range violations: %s", P, ranges.violations)
        split = split_by_object(samples, pp.split_ratios, pp.split_seed, assignment)
        target = dataset_dir(cfg, P)
        target.mkdir(parents=True, exist_ok=True)
        write_dataset(split, target)
        counts[P] = {name: len(s) for name, s in split.items()}
        _write_json(target / "meta.json", {
            "history": pp.history,
            "horizon": P,
            "counts": counts[P],
            "objects": objects,
            "split_ratios": list(pp.split_ratios),
            "split_seed": pp.split_seed,
            "feature_rows": stats.rows,
            "lane_distance_clamped": stats.clamped,
            "range_violations": [list(v) for v in ranges.violations],
        })
    text, tsv = summary_table(counts, objects, horizons)
    root = cfg.out_dir / "dataset"
    (root / "summary.txt").write_text(text, encoding="utf-8")
    (root / "summary.tsv").write_text(tsv, encoding="utf-8")
    return {"tracks": len(smoothed), "objects": objects, "counts": counts, "table": text}


# --- train -----------------------------------------------------------------


def _rows_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=LOG_FIELDS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: "" if r.get(k) is None else repr(float(r[k])) if k != "epoch" else r[k] for k in LOG_FIELDS})
    return buf.getvalue()


def train_variant(cfg: PipelineConfig, variant: str, dataset, lanemap: LaneMap | None, ckpt: Path,
                  log_path: Path | None = None, on_epoch=None, **overrides):
    """Train one variant on ``dataset`` and write its checkpoint (and CSV log)."""
    P = dataset.train.P
    tcfg = cfg.train_config(variant, **overrides)
    params, tlog = train(dataset, cfg.model_config(P), tcfg, lanemap, on_epoch)
    train_fields = {k: v for k, v in dataclasses.asdict(tcfg).items() if k != "loss"}
    header = {
        "kind": "lstm",
        "variant": variant,
        "horizon": P,
        "history": dataset.train.H,
        "seed": tcfg.seed,
        "loss": dataclasses.asdict(tcfg.loss),
        "train": train_fields,
        "best_epoch": tlog.best_epoch,
        "best_val_mse": tlog.best_val_mse,
        "stop_epoch": tlog.stop_epoch,
        "stopped_early": tlog.stopped_early,
    }
    save_checkpoint(ckpt, params, header)
    if log_path is not None:
        log_path.parent.mkdir(parents=True, exist_ok=True)
        log_path.write_text(_rows_to_csv(tlog.epochs), encoding="utf-8")
    return params, tlog


def run_train(cfg: PipelineConfig, variant: str, horizon: int, on_epoch=None) -> Path:
    """Checkpoint for ``variant`` at ``horizon``; baselines get a marker file."""
    ckpt = checkpoint_path(cfg, variant, horizon)
    if variant in BASELINE_VARIANTS:
        header = {"kind": "baseline", "variant": variant, "horizon": horizon, "seed": cfg.seed,
                  "baselines": dataclasses.asdict(cfg.baselines)}
        save_checkpoint(ckpt, None, header)
        return ckpt
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}; expected one of {VARIANTS + BASELINE_VARIANTS}")
    dataset = read_dataset(dataset_dir(cfg, horizon), cfg.preprocess.split_ratios)
    spec = cfg.loss_spec(variant)
    lanemap = _load_map(cfg) if spec.use_infra else None
    log_path = cfg.out_dir / "logs" / f"{variant}_P{horizon}.csv"
    train_variant(cfg, variant, dataset, lanemap, ckpt, log_path, on_epoch)
    return ckpt


# --- evaluate --------------------------------------------------------------


def _format(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.3f}" if math.isfinite(v) else str(v)
    return str(v)


def merged_table(reports: list[MetricsReport], iv_mode: str) -> tuple[str, str]:
    """Comparison table as aligned text and TSV, both headed by the run settings."""
    if not reports:
        return "", ""
    K = reports[0].K if len({r.K for r in reports}) == 1 else max(r.K for r in reports)
    cols = [c.format(K=K) for c in TABLE_COLUMNS]
    first = reports[0]
    meta = f"# horizon_steps={first.horizon} horizon_s={first.horizon / 10:g} iv_mode={iv_mode} K={K} n_samples={first.n_samples}"
    rows = []
    for r in reports:
        d = r.to_dict()
        d[f"minADE@{K}"], d[f"minFDE@{K}"] = r.minADE, r.minFDE
        rows.append([r.model] + [d.get(c) for c in cols])
    header = ["Model"] + cols
    tsv = meta + "\n" + "\t".join(header) + "\n"
    tsv += "".join("\t".join("" if v is None else repr(v) if isinstance(v, float) else str(v) for v in r) + "\n" for r in rows)
    text_rows = [[_format(v) for v in r] for r in rows]
    widths = [max(len(x[i]) for x in text_rows + [header]) for i in range(len(header))]
    fmt = lambda r: "  ".join(v.ljust(w) if i == 0 else v.rjust(w) for i, (v, w) in enumerate(zip(r, widths)))
    text = meta + "\n" + fmt(header) + "\n" + "\n".join(fmt(r) for r in text_rows) + "\n"
    return text, tsv


def _resolve_checkpoints(cfg, horizon, variants, checkpoints):
    items = []
    for path in checkpoints or ():
        items.append(Path(path))
    for v in variants or ():
        items.append(checkpoint_path(cfg, v, horizon))
    if not items:
        for v in cfg.evaluate.variants:
            p = checkpoint_path(cfg, v, horizon)
            if p.exists() or v in BASELINE_VARIANTS:
                items.append(p)
    return items


def _load_for_eval(cfg, path: Path, horizon: int):
    if not path.exists():
        variant = path.stem.rsplit("_P", 1)[0]
        if variant in BASELINE_VARIANTS:
            return variant, None, {"kind": "baseline", "horizon": horizon, "baselines": dataclasses.asdict(cfg.baselines)}
        raise IntegrityError(f"checkpoint not found: {path}")
    params, header = load_checkpoint(path)
    if header.get("horizon") != horizon:
        raise HorizonMismatchError(f"{path}: checkpoint horizon {header.get('horizon')} does not match dataset horizon {horizon}")
    return header["variant"], params, header


def run_evaluate(cfg: PipelineConfig, horizon: int, variants=None, checkpoints=None, K: int | None = None,
                 iv_mode: str | None = None) -> list[MetricsReport]:
    """Score checkpoints on the test split and write per-model and merged reports."""
    K = cfg.evaluate.k_samples if K is None else K
    iv_mode = iv_mode or cfg.evaluate.iv_mode
    test = read_samples(dataset_dir(cfg, horizon), "test")
    if test.P != horizon:
        raise HorizonMismatchError(f"dataset for P{horizon} holds horizon {test.P}")
    if not len(test):
        raise IntegrityError(f"empty test split for horizon {horizon}")
    lanemap = _load_map(cfg)
    ev = cfg.evaluate
    reports = []
    out = report_dir(cfg, horizon)
    for path in _resolve_checkpoints(cfg, horizon, variants, checkpoints):
        variant, params, header = _load_for_eval(cfg, path, horizon)
        rep = evaluate_all(variant, test, lanemap, K, params, cfg.seed, iv_mode, header.get("baselines"),
                           ev.slc_delta, ev.slc_min_gap, ev.batch_size)
        _write_json(out / f"{variant}.json", rep.to_dict())
        reports.append(rep)
    text, tsv = merged_table(reports, iv_mode)
    out.mkdir(parents=True, exist_ok=True)
    (out / "results.txt").write_text(text, encoding="utf-8")
    (out / "results.tsv").write_text(tsv, encoding="utf-8")
    return reports


# --- ablate ----------------------------------------------------------------


def map_offset(lanemap: LaneMap) -> float:
    """Distance from the ENU origin (where anchor-relative points sit) to the nearest lane centre."""
    return nearest_centre((0.0, 0.0), lanemap)[0]


def gradient_norm_ratio(params, history, anchors, lanemap) -> dict:
    g_unc = infra_gradient(params, history, anchors, lanemap, corrected=False).astype(np.float64)
    g_cor = infra_gradient(params, history, anchors, lanemap, corrected=True).astype(np.float64)
    n_unc, n_cor = g_unc.norm(), g_cor.norm()
    return {"uncorrected_norm": n_unc, "corrected_norm": n_cor, "ratio": n_unc / n_cor if n_cor > 0 else math.inf}


def run_ablate(cfg: PipelineConfig, horizon: int | None = None) -> dict:
    """Train Map_Loss with and without the anchor correction and compare.

    Both runs share seed and data. The gradient-norm ratio is measured on
    the first ``probe_batch`` training windows at the initial parameters,
    which both runs start from.
    """
    P = horizon or cfg.ablate.horizon
    dataset = read_dataset(dataset_dir(cfg, P), cfg.preprocess.split_ratios)
    lanemap = _load_map(cfg)
    out = cfg.out_dir / "ablation"
    results = {"horizon": P, "map_offset": map_offset(lanemap)}

    dtype = np.dtype(cfg.train.dtype)
    n = min(cfg.ablate.probe_batch, len(dataset.train))
    probe_hist = dataset.train.history[:n].astype(np.float64)
    probe_anchor = dataset.train.anchor[:n]
    init = init_params(cfg.model_config(P), cfg.seed, np.float64)
    results["gradient"] = gradient_norm_ratio(init, probe_hist, probe_anchor, lanemap)

    for label, corrected in (("corrected", True), ("uncorrected", False)):
        params, tlog = train_variant(
            cfg, "Map_Loss", dataset, lanemap, out / f"Map_Loss_{label}_P{P}.ckpt", out / f"Map_Loss_{label}_P{P}.csv",
            max_epochs=cfg.ablate.max_epochs, loss={"infra_corrected": corrected},
        )
        preds = predict(params, dataset.test.history.astype(dtype), cfg.train.eval_batch_size).astype(float)
        infra = [row["train_infra"] for row in tlog.epochs]
        results[label] = {
            "ADE": float(np.mean(np.hypot(*(preds - dataset.test.future).transpose(2, 0, 1)))),
            "IV": infra_violation(preds, dataset.test.anchor, lanemap),
            "infra_epoch1": infra[0],
            "infra_by_epoch": infra,
            "infra_spread": (max(infra) - min(infra)) / max(abs(infra[0]), 1e-12),
            "best_epoch": tlog.best_epoch,
        }
    unc = results["uncorrected"]
    results["uncorrected_offset_error"] = abs(unc["infra_epoch1"] - results["map_offset"]) / results["map_offset"]
    _write_json(out / f"ablation_P{P}.json", results)
    (out / f"ablation_P{P}.txt").write_text(ablation_text(results), encoding="utf-8")
    return results


def ablation_text(r: dict) -> str:
    g = r["gradient"]
    lines = [
        f"# horizon_steps={r['horizon']} map_offset_m={r['map_offset']:.3f}",
        f"{'run':<12}{'ADE':>10}{'IV':>12}{'infra@1':>12}{'spread':>10}",
    ]
    for label in ("corrected", "uncorrected"):
        x = r[label]
        lines.append(f"{label:<12}{x['ADE']:>10.3f}{x['IV']:>12.3f}{x['infra_epoch1']:>12.3f}{x['infra_spread']:>10.4f}")
    lines.append(f"infra gradient norm: uncorrected {g['uncorrected_norm']:.6g}, corrected {g['corrected_norm']:.6g}, "
                 f"ratio {g['ratio']:.4f}")
    lines.append(f"uncorrected epoch-1 infra vs map offset: {100 * r['uncorrected_offset_error']:.2f}% apart")
    return "\n".join(lines) + "\n"


# --- report ----------------------------------------------------------------


def collect_reports(cfg: PipelineConfig) -> list[dict]:
    root = cfg.out_dir / "reports"
    rows = []
    for path in sorted(root.glob("P*/*.json")):
        rows.append(json.loads(path.read_text(encoding="utf-8")))
    rows.sort(key=lambda d: (d["horizon_steps"], d["model"]))
    return rows


def collect_logs(cfg: PipelineConfig) -> dict:
    logs = {}
    for path in sorted((cfg.out_dir / "logs").glob("*.csv")):
        with open(path, newline="", encoding="utf-8") as fh:
            logs[path.stem] = list(csv.DictReader(fh))
    return logs


def run_report(cfg: PipelineConfig) -> dict:
    """Long-form metrics TSV across horizons plus figures under ``report/``."""
    from . import plotting

    out = cfg.out_dir / "report"
    out.mkdir(parents=True, exist_ok=True)
    rows = collect_reports(cfg)
    if not rows:
        raise IntegrityError(f"no evaluation reports under {cfg.out_dir / 'reports'}")
    keys = ["model", "horizon_steps", "horizon_s", "n_samples", "ADE", "FDE", "RMSE", "NL-ADE", "NL-ADE_count",
            "IV", "IV_naive", "iv_mode", "SLC", "K", "minADE@K", "minFDE@K", "NLL"]
    buf = io.StringIO()
    buf.write("\t".join(keys) + "\n")
    for d in rows:
        d = dict(d, **{"minADE@K": d[f"minADE@{d['K']}"], "minFDE@K": d[f"minFDE@{d['K']}"]})
        buf.write("\t".join("" if d.get(k) is None else str(d[k]) for k in keys) + "\n")
    (out / "metrics.tsv").write_text(buf.getvalue(), encoding="utf-8")

    figures = [plotting.metric_vs_horizon(rows, "ADE", out / "ade_vs_horizon.png"),
               plotting.metric_vs_horizon(rows, "IV", out / "iv_vs_horizon.png")]
    logs = collect_logs(cfg)
    if logs:
        figures.append(plotting.training_curves(logs, out / "training_curves.png"))
    map_path = cfg.path("lanemap")
    if map_path.exists():
        lanemap = _load_map(cfg)
        horizon = max(d["horizon_steps"] for d in rows)
        d_dir = dataset_dir(cfg, horizon)
        test = read_samples(d_dir, "test") if (d_dir / "test.bin").exists() else None
        figures.append(plotting.scene(lanemap, test, out / "scene.png", seed=cfg.seed))
    return {"rows": len(rows), "metrics": str(out / "metrics.tsv"), "figures": [str(f) for f in figures]}

