"""Pipeline configuration: one YAML file, one dataclass per section.

Unknown keys and wrongly typed values are rejected with :class:`ConfigError`.
Relative paths resolve against the directory holding the config file,
except those under ``paths`` which resolve against ``paths.out_dir``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import ConfigError
from .geo import CalibrationOffset, GeoReference
from .ingest import DEFAULT_CLASSES
from .lanemap import DEFAULT_CELL_SIZE, DEFAULT_SPACING
from .losses import LossSpec
from .metrics import CORRECTED, NAIVE, SLC_DELTA
from .neural.model import ModelConfig
from .neural.train import TrainConfig
from .preprocess.kalman import DEFAULT_SIGMA_V, MEAS_SIGMA, SIGMA_V
from .preprocess.split import DEFAULT_RATIOS
from .preprocess.windows import HISTORY, HORIZONS, N_CLASSES
from .synth import ScenarioSpec


@dataclass(frozen=True)
class PathsConfig:
    out_dir: str = "out"
    detections: str = "synth/detections.jsonl"
    lanemap: str = "synth/lanemap.json"


@dataclass(frozen=True)
class IngestConfig:
    gap_threshold: float = 1.0
    position_kind: str | None = None


@dataclass(frozen=True)
class LaneMapConfig:
    spacing: float = DEFAULT_SPACING
    cell_size: float = DEFAULT_CELL_SIZE


@dataclass(frozen=True)
class PreprocessConfig:
    history: int = HISTORY
    horizons: tuple = HORIZONS
    meas_sigma: float = MEAS_SIGMA
    sigma_v: dict = field(default_factory=lambda: dict(SIGMA_V))
    default_sigma_v: float = DEFAULT_SIGMA_V
    split_ratios: tuple = DEFAULT_RATIOS
    split_seed: int = 42


@dataclass(frozen=True)
class LossConfig:
    lambda_infra: float = 0.1
    lambda_coll: float = 0.05
    delta_coll: float = 1.5
    coll_frame: str = "anchor_relative"
    max_pairs: int | None = None


@dataclass(frozen=True)
class BaselineConfig:
    tau: float = 1.0
    sigma_a: float = 1.0


@dataclass(frozen=True)
class EvaluateConfig:
    k_samples: int = 20
    iv_mode: str = CORRECTED
    slc_delta: float = SLC_DELTA
    slc_min_gap: int = 1
    variants: tuple = ("CV", "KF-CA", "Baseline", "Map_Loss", "Collision_Loss", "Twin_All")
    batch_size: int = 1024


@dataclass(frozen=True)
class AblateConfig:
    horizon: int = 30
    max_epochs: int = 5
    probe_batch: int = 256


@dataclass(frozen=True)
class ModelSection:
    hidden: int = 128
    layers: int = 2
    dropout: float = 0.2
    output_scale: float = 10.0


@dataclass(frozen=True)
class TrainSection:
    lr: float = 1e-3
    batch_size: int = 256
    max_epochs: int = 40
    early_stop_patience: int = 10
    lr_patience: int = 5
    lr_factor: float = 0.5
    dtype: str = "float32"
    eval_batch_size: int = 1024


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 42
    geo: GeoReference = field(default_factory=GeoReference)
    calibration: CalibrationOffset = field(default_factory=lambda: CalibrationOffset(31.0, 20.0))
    classes: tuple = DEFAULT_CLASSES
    paths: PathsConfig = field(default_factory=PathsConfig)
    ingest: IngestConfig = field(default_factory=IngestConfig)
    lanemap: LaneMapConfig = field(default_factory=LaneMapConfig)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    losses: LossConfig = field(default_factory=LossConfig)
    baselines: BaselineConfig = field(default_factory=BaselineConfig)
    evaluate: EvaluateConfig = field(default_factory=EvaluateConfig)
    ablate: AblateConfig = field(default_factory=AblateConfig)
    synth: ScenarioSpec = field(default_factory=ScenarioSpec)
    base_dir: str = "."

    def __post_init__(self):
        if len(self.classes) != N_CLASSES or len(set(self.classes)) != N_CLASSES:
            raise ConfigError(f"classes must list exactly {N_CLASSES} distinct names")
        if self.evaluate.iv_mode not in (CORRECTED, NAIVE):
            raise ConfigError(f"unknown iv_mode {self.evaluate.iv_mode!r}")
        if self.evaluate.k_samples < 1:
            raise ConfigError("k_samples must be at least 1")
        if not self.preprocess.horizons or any(p < 1 for p in self.preprocess.horizons):
            raise ConfigError("horizons must be positive step counts")
        ratios = self.preprocess.split_ratios
        if len(ratios) != 3 or min(ratios) < 0 or abs(sum(ratios) - 1) > 1e-9:
            raise ConfigError("split_ratios must be three non-negative numbers summing to 1")
        if self.ingest.position_kind not in (None, "enu", "geodetic"):
            raise ConfigError(f"unknown position_kind {self.ingest.position_kind!r}")
        if not 0 <= self.model.dropout < 1:
            raise ConfigError("dropout must lie in [0, 1)")

    @property
    def out_dir(self) -> Path:
        p = Path(self.paths.out_dir)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def path(self, name: str) -> Path:
        p = Path(getattr(self.paths, name))
        return p if p.is_absolute() else self.out_dir / p

    def model_config(self, horizon: int) -> ModelConfig:
        m = self.model
        return ModelConfig(hidden=m.hidden, layers=m.layers, dropout=m.dropout, output_scale=m.output_scale,
                           horizon=horizon)

    def loss_spec(self, variant: str, **overrides) -> LossSpec:
        base = dataclasses.asdict(self.losses)
        base.update(overrides)
        return LossSpec.for_variant(variant, **base)

    def train_config(self, variant: str, **overrides) -> TrainConfig:
        t = self.train
        loss_overrides = overrides.pop("loss", {})
        kw = dict(dataclasses.asdict(t), seed=self.seed, variant=variant, loss=self.loss_spec(variant, **loss_overrides))
        kw.update(overrides)
        return TrainConfig(**kw)

    def with_overrides(self, **kw) -> PipelineConfig:
        return dataclasses.replace(self, **kw)


_SECTIONS = {
    "geo": GeoReference,
    "calibration": CalibrationOffset,
    "paths": PathsConfig,
    "ingest": IngestConfig,
    "lanemap": LaneMapConfig,
    "preprocess": PreprocessConfig,
    "model": ModelSection,
    "train": TrainSection,
    "losses": LossConfig,
    "baselines": BaselineConfig,
    "evaluate": EvaluateConfig,
    "ablate": AblateConfig,
    "synth": ScenarioSpec,
}
_TUPLE_FIELDS = {"horizons", "split_ratios", "variants", "translation"}


def _section(cls, data, name):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"section {name!r} must be a mapping")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown keys in section {name!r}: {unknown}")
    kw = {k: tuple(v) if k in _TUPLE_FIELDS and isinstance(v, list) else v for k, v in data.items()}
    try:
        return cls(**kw)
    except ConfigError as exc:
        raise ConfigError(f"section {name!r}: {exc}") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"section {name!r}: {exc}") from None


def config_from_dict(data: dict | None, base_dir: str | Path = ".") -> PipelineConfig:
    data = dict(data or {})
    known = set(_SECTIONS) | {"seed", "classes"}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown top-level config keys: {unknown}")
    kw = {name: _section(cls, data.get(name), name) for name, cls in _SECTIONS.items()}
    if "seed" in data:
        if not isinstance(data["seed"], int):
            raise ConfigError("seed must be an integer")
        kw["seed"] = data["seed"]
    if "classes" in data:
        if not isinstance(data["classes"], list) or not all(isinstance(c, str) for c in data["classes"]):
            raise ConfigError("classes must be a list of names")
        kw["classes"] = tuple(data["classes"])
    return PipelineConfig(**kw, base_dir=str(base_dir))


def load_config(path: str | Path | None) -> PipelineConfig:
    """Read a YAML config; ``None`` gives the built-in defaults rooted at the cwd."""
    if path is None:
        return config_from_dict({})
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from None
    if data is not None and not isinstance(data, dict):
        raise ConfigError(f"config {path} must be a mapping")
    return config_from_dict(data, path.parent)


def default_config_text() -> str:
    """A commented starting config equal to the built-in defaults."""
    return _DEFAULT_YAML


_DEFAULT_YAML = """\
# twinpred pipeline configuration
seed: 42
geo: {lat0: 48.2416, lon0: 11.6392, meters_per_degree: 111320.0}
calibration: {east: 31.0, north: 20.0}
paths:
  out_dir: out
  detections: synth/detections.jsonl
  lanemap: synth/lanemap.json
ingest: {gap_threshold: 1.0}
lanemap: {spacing: 1.0, cell_size: 5.0}
preprocess:
  history: 20
  horizons: [10, 20, 30, 40, 50]
  meas_sigma: 0.5
  sigma_v: {PEDESTRIAN: 1.5, CAR: 3.0}
  default_sigma_v: 2.5
  split_ratios: [0.7, 0.15, 0.15]
  split_seed: 42
model: {hidden: 128, layers: 2, dropout: 0.2, output_scale: 10.0}
train:
  lr: 0.001
  batch_size: 256
  max_epochs: 40
  early_stop_patience: 10
  lr_patience: 5
  lr_factor: 0.5
losses: {lambda_infra: 0.1, lambda_coll: 0.05, delta_coll: 1.5, coll_frame: anchor_relative}
baselines: {tau: 1.0, sigma_a: 1.0}
evaluate: {k_samples: 20, iv_mode: corrected}
ablate: {horizon: 30, max_epochs: 5}
synth:
  agent_count: 300
  arm_length: 45.0
  duration: 300.0
  translation: [0.0, 0.0]
  noise_sigma: 0.1
  seed: 42
"""
