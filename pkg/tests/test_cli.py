import json

import pytest
import yaml

from twinpred.cli import main
from twinpred.config import config_from_dict, default_config_text, load_config
from twinpred.errors import ConfigError
from twinpred.neural import load_checkpoint
from twinpred.preprocess import read_dataset, window_count

TINY = {
    "seed": 42,
    "preprocess": {"horizons": [10, 20]},
    "model": {"hidden": 8},
    "train": {"max_epochs": 2, "batch_size": 64},
    "evaluate": {"k_samples": 4},
    "ablate": {"horizon": 10, "max_epochs": 2},
    "synth": {"agent_count": 12, "duration": 40.0},
}


def write_config(tmp_path, **overrides):
    data = json.loads(json.dumps(TINY))
    data["paths"] = {"out_dir": str(tmp_path / "out")}
    for k, v in overrides.items():
        data.setdefault(k, {}).update(v) if isinstance(v, dict) else data.__setitem__(k, v)
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump(data))
    return str(path)


@pytest.fixture(scope="module")
def pipeline_dir(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli")
    cfg = write_config(tmp)
    assert main(["synth", "--config", cfg]) == 0
    assert main(["preprocess", "--config", cfg]) == 0
    return tmp, cfg


def test_default_config_text_parses():
    cfg = config_from_dict(yaml.safe_load(default_config_text()))
    assert cfg.calibration.east == 31.0 and cfg.synth.agent_count == 300
    assert cfg.train_config("Twin_All").loss.use_coll


def test_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        config_from_dict({"bogus": 1})
    with pytest.raises(ConfigError):
        config_from_dict({"train": {"learning_rate": 1}})
    with pytest.raises(ConfigError):
        config_from_dict({"classes": ["A", "B"]})
    with pytest.raises(ConfigError):
        config_from_dict({"geo": {"lat0": 123.0}})
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")


def test_preprocess_counts_follow_formula(pipeline_dir):
    tmp, cfg_path = pipeline_dir
    from twinpred.pipeline import smooth_tracks

    cfg = load_config(cfg_path)
    lengths = {s.object_id: len(s) for s in smooth_tracks(cfg)}
    for P in (10, 20):
        data = read_dataset(tmp / "out" / "dataset" / f"P{P}")
        got = {}
        for _, part in data.items():
            for oid in part.object_id:
                got[oid] = got.get(oid, 0) + 1
        for oid, T in lengths.items():
            assert got.get(oid, 0) == window_count(T, 20, P)
    summary = (tmp / "out" / "dataset" / "summary.txt").read_text()
    assert summary.splitlines()[0].split() == ["Split", "Objects", "1s", "2s"]


def test_preprocess_rerun_is_byte_identical(pipeline_dir):
    tmp, cfg = pipeline_dir
    root = tmp / "out" / "dataset"
    before = {p: p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}
    assert main(["preprocess", "--config", cfg]) == 0
    after = {p: p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}
    assert before == after


def test_missing_lanemap_is_config_error(tmp_path):
    cfg = write_config(tmp_path, paths={"lanemap": str(tmp_path / "none.json")})
    assert main(["preprocess", "--config", cfg]) == 3


def test_train_without_dataset_is_integrity_error(tmp_path):
    cfg = write_config(tmp_path)
    assert main(["train", "--config", cfg, "--variant", "Baseline", "--horizon", "10"]) == 7


def test_train_and_evaluate(pipeline_dir, capsys):
    tmp, cfg = pipeline_dir
    out = tmp / "out"
    assert main(["train", "--config", cfg, "--variant", "CV", "--horizon", "10"]) == 0
    params, header = load_checkpoint(out / "checkpoints" / "CV_P10.ckpt")
    assert params is None and header["kind"] == "baseline"

    assert main(["train", "--config", cfg, "--variant", "Baseline", "--horizon", "10"]) == 0
    _, header = load_checkpoint(out / "checkpoints" / "Baseline_P10.ckpt")
    assert not header["loss"]["use_infra"] and not header["loss"]["use_coll"]
    assert {"seed", "best_epoch", "best_val_mse"} <= set(header)

    assert main(["train", "--config", cfg, "--variant", "Twin_All", "--horizon", "10"]) == 0
    _, header = load_checkpoint(out / "checkpoints" / "Twin_All_P10.ckpt")
    assert (header["loss"]["lambda_infra"], header["loss"]["lambda_coll"]) == (0.1, 0.05)
    log_lines = (out / "logs" / "Twin_All_P10.csv").read_text().splitlines()
    assert log_lines[0] == "epoch,train_loss,train_mse,train_infra,train_coll,val_mse,lr"
    assert len(log_lines) == 3

    capsys.readouterr()
    assert main(["evaluate", "--config", cfg, "--horizon", "10", "--variant", "CV", "--variant", "Baseline"]) == 0
    printed = capsys.readouterr().out
    rdir = out / "reports" / "P10"
    assert sorted(p.name for p in rdir.glob("*.json")) == ["Baseline.json", "CV.json"]
    tsv = (rdir / "results.tsv").read_text().splitlines()
    assert tsv[0].startswith("# horizon_steps=10") and "iv_mode=corrected" in tsv[0]
    assert tsv[1].split("\t") == ["Model", "ADE", "FDE", "RMSE", "NL-ADE", "IV", "IV_naive", "SLC",
                                  "minADE@4", "minFDE@4", "NLL"]
    assert len(tsv) == 4 and "Baseline" in printed

    assert main(["evaluate", "--config", cfg, "--horizon", "10", "--variant", "Baseline", "--k-samples", "1",
                 "--iv-mode", "naive"]) == 0
    rep = json.loads((rdir / "Baseline.json").read_text())
    assert rep["minADE@1"] == rep["ADE"] and rep["iv_mode"] == "naive"
    assert "iv_mode=naive" in (rdir / "results.txt").read_text().splitlines()[0]


def test_horizon_mismatch(pipeline_dir):
    tmp, cfg = pipeline_dir
    assert main(["train", "--config", cfg, "--variant", "Baseline", "--horizon", "20"]) == 0
    ckpt = str(tmp / "out" / "checkpoints" / "Baseline_P20.ckpt")
    assert main(["evaluate", "--config", cfg, "--horizon", "10", ckpt]) == 9


def test_ablate_and_report(pipeline_dir, capsys):
    tmp, cfg = pipeline_dir
    assert main(["ablate", "--config", cfg]) == 0
    res = json.loads((tmp / "out" / "ablation" / "ablation_P10.json").read_text())
    assert {"corrected", "uncorrected", "gradient", "map_offset"} <= set(res)
    assert len(res["uncorrected"]["infra_by_epoch"]) == 2
    assert main(["train", "--config", cfg, "--variant", "CV", "--horizon", "20"]) == 0
    assert main(["evaluate", "--config", cfg, "--horizon", "20", "--variant", "CV"]) == 0
    assert main(["report", "--config", cfg]) == 0
    report = tmp / "out" / "report"
    for name in ("metrics.tsv", "ade_vs_horizon.png", "iv_vs_horizon.png", "training_curves.png", "scene.png"):
        assert (report / name).stat().st_size > 0


def test_usage_error_exits_2(capsys):
    with pytest.raises(SystemExit) as info:
        main(["train", "--variant", "Nope", "--horizon", "10"])
    assert info.value.code == 2
