"""Command line entry point: ``twinpred <verb> [options]``.

Exit codes: 0 success, 1 other pipeline error, 2 usage error, 3 config,
4 parse, 5 schema, 6 vocabulary, 7 integrity, 8 divergence, 9 horizon
mismatch, 10 contract violation.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys

from . import pipeline
from .config import load_config
from .errors import TwinPredError
from .losses import BASELINE_VARIANTS, VARIANTS

log = logging.getLogger("twinpred")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML pipeline config (defaults built in)")
    p.add_argument("--out-dir", help="override paths.out_dir")
    p.add_argument("--seed", type=int, help="override the training, split and scenario seeds")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="twinpred", description="Intersection trajectory prediction pipeline.")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("synth", help="generate a synthetic lane map and detection file")
    _common(p)

    p = sub.add_parser("preprocess", help="smooth, window and split detections")
    _common(p)
    p.add_argument("--horizon", type=int, action="append", help="horizon in steps (repeatable)")

    p = sub.add_parser("train", help="train one variant at one horizon")
    _common(p)
    p.add_argument("--variant", required=True, choices=VARIANTS + BASELINE_VARIANTS)
    p.add_argument("--horizon", type=int, required=True)

    p = sub.add_parser("evaluate", help="score checkpoints on the test split")
    _common(p)
    p.add_argument("--horizon", type=int, required=True)
    p.add_argument("--variant", action="append", choices=VARIANTS + BASELINE_VARIANTS)
    p.add_argument("--k-samples", type=int)
    p.add_argument("--iv-mode", choices=("corrected", "naive"))
    p.add_argument("checkpoints", nargs="*", help="explicit checkpoint files")

    p = sub.add_parser("ablate", help="corrected vs uncorrected infra loss")
    _common(p)
    p.add_argument("--horizon", type=int)

    p = sub.add_parser("report", help="metrics table across horizons plus figures")
    _common(p)
    return parser


def _config(args):
    cfg = load_config(args.config)
    if args.out_dir:
        cfg = cfg.with_overrides(paths=dataclasses.replace(cfg.paths, out_dir=args.out_dir), base_dir=".")
    if args.seed is not None:
        cfg = cfg.with_overrides(
            seed=args.seed,
            synth=dataclasses.replace(cfg.synth, seed=args.seed),
            preprocess=dataclasses.replace(cfg.preprocess, split_seed=args.seed),
        )
    return cfg


def _run(args) -> None:
    cfg = _config(args)
    if args.verb == "synth":
        info = pipeline.run_synth(cfg)
        print(f"wrote {info['lanes']} lanes to {info['lanemap']}")
        print(f"wrote {info['records']} detections to {info['detections']}")
    elif args.verb == "preprocess":
        info = pipeline.run_preprocess(cfg, args.horizon)
        print(info["table"], end="")
    elif args.verb == "train":

        def progress(row):
            log.info("epoch %d train_loss %.5f val_mse %.5f lr %.2e", row["epoch"], row["train_loss"], row["val_mse"], row["lr"])

        path = pipeline.run_train(cfg, args.variant, args.horizon, progress)
        print(f"wrote {path}")
    elif args.verb == "evaluate":
        reports = pipeline.run_evaluate(cfg, args.horizon, args.variant, args.checkpoints, args.k_samples, args.iv_mode)
        text, _ = pipeline.merged_table(reports, args.iv_mode or cfg.evaluate.iv_mode)
        print(text, end="")
    elif args.verb == "ablate":
        res = pipeline.run_ablate(cfg, args.horizon)
        print(pipeline.ablation_text(res), end="")
    elif args.verb == "report":
        info = pipeline.run_report(cfg)
        print(json.dumps(info, indent=2))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        _run(args)
    except TwinPredError as exc:
        print(f"error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
