"""Run configuration: one JSON document with an explicit version field.

Every training hyperparameter (temperature, loss balance, tradeoff
lambda, sparsity grid, epochs, patience, model dims, student init
strategy) is surfaced here with its default. The SHA-256 digest of the
canonical JSON form ties checkpoints to the configuration that produced
them.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields

from kdlab.errors import ParameterError

CONFIG_VERSION = 1

DEFAULT_GRID = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)


@dataclass
class ModelArch:
    """Dimensions of the miniature encoder."""

    layers: int = 6
    hidden: int = 64
    heads: int = 4
    head_dim: int = 16
    ffn_inner: int = 128
    max_len: int = 64
    classes: int = 2
    init_scale: float = 0.05

    def validate(self):
        for name in ("layers", "hidden", "heads", "head_dim", "ffn_inner", "max_len", "classes"):
            if getattr(self, name) <= 0:
                raise ParameterError(f"model.{name} must be positive")
        if self.init_scale <= 0:
            raise ParameterError("model.init_scale must be positive")


@dataclass
class InitStrategy:
    """Student initialization: drop-layers(k) or prune-params(s)."""

    kind: str = "drop-layers"
    layers: int = 2
    sparsity: float = 0.7

    def validate(self):
        if self.kind not in ("drop-layers", "prune-params"):
            raise ParameterError(f"unknown init strategy {self.kind!r}")
        if self.kind == "drop-layers" and self.layers <= 0:
            raise ParameterError("drop-layers student needs at least one layer")
        if self.kind == "prune-params" and not 0.0 < self.sparsity < 1.0:
            raise ParameterError("prune-params sparsity must lie in (0, 1)")


@dataclass
class DistillConfig:
    """Training and sparsification hyperparameters.

    `seed` is the root seed; every stochastic stage derives a named
    sub-seed from it.
    """

    tau: float = 2.0
    alpha: float = 1.0
    lam: float = 0.5
    lr: float = 0.5
    teacher_lr: float | None = None
    batch_size: int = 32
    epochs: int = 10
    patience: int = 3
    seed: int = 7
    weight_decay: float = 0.0
    dropout: float = 0.0
    grid: tuple = DEFAULT_GRID
    init: InitStrategy = field(default_factory=InitStrategy)
    score_grouping: str = "per-layer"  # or "global"
    bins: int = 50
    smooth_window: int = 3

    def validate(self):
        if self.tau <= 0:
            raise ParameterError("tau must be positive")
        if self.alpha < 0:
            raise ParameterError("alpha must be nonnegative")
        if not 0.0 <= self.lam <= 1.0:
            raise ParameterError("lambda must lie in [0, 1]")
        if self.lr <= 0 or (self.teacher_lr is not None and self.teacher_lr <= 0):
            raise ParameterError("learning rates must be positive")
        if self.batch_size <= 0:
            raise ParameterError("batch_size must be positive")
        if self.epochs < 0:
            raise ParameterError("epochs must be nonnegative")
        if self.patience < 1:
            raise ParameterError("patience must be at least 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ParameterError("dropout must lie in [0, 1)")
        grid = tuple(self.grid)
        if not grid:
            raise ParameterError("sparsity grid must be nonempty")
        if any(not 0.0 < s < 1.0 for s in grid):
            raise ParameterError("grid values must lie in (0, 1)")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ParameterError("grid values must be strictly increasing")
        if self.score_grouping not in ("per-layer", "global"):
            raise ParameterError(f"unknown score grouping {self.score_grouping!r}")
        if self.bins < 2:
            raise ParameterError("density bins must be at least 2")
        if self.smooth_window < 1 or self.smooth_window % 2 == 0:
            raise ParameterError("smoothing window must be odd and positive")
        self.init.validate()


@dataclass
class SyntheticSpec:
    """Sentence-pair agreement task generator settings."""

    train_size: int = 8000
    dev_size: int = 1000
    marker_classes: int = 4
    markers_per_class: int = 3
    filler_vocab: int = 30
    sent_len_min: int = 5
    sent_len_max: int = 9

    def validate(self):
        if self.train_size <= 0 or self.dev_size <= 0:
            raise ParameterError("synthetic sizes must be positive")
        if self.marker_classes < 2:
            raise ParameterError("need at least two marker classes")
        if self.markers_per_class < 1:
            raise ParameterError("need at least one marker per class")
        if self.filler_vocab < 1:
            raise ParameterError("need a nonempty filler vocabulary")
        if not 1 <= self.sent_len_min <= self.sent_len_max:
            raise ParameterError("bad sentence length range")


@dataclass
class DataConfig:
    kind: str = "synthetic"  # or "tsv"
    synthetic: SyntheticSpec = field(default_factory=SyntheticSpec)
    train_path: str | None = None
    dev_path: str | None = None
    label_col: int = 0
    text_cols: tuple = (1,)
    has_header: bool = False
    max_vocab: int = 1000

    def validate(self):
        if self.kind not in ("synthetic", "tsv"):
            raise ParameterError(f"unknown data kind {self.kind!r}")
        if self.kind == "tsv" and (self.train_path is None or self.dev_path is None):
            raise ParameterError("tsv data needs train_path and dev_path")
        if len(self.text_cols) not in (1, 2):
            raise ParameterError("schema needs 1 or 2 text columns")
        if self.max_vocab < 1:
            raise ParameterError("max_vocab must be positive")
        self.synthetic.validate()


@dataclass
class Config:
    """Top-level run configuration."""

    version: int = CONFIG_VERSION
    model: ModelArch = field(default_factory=ModelArch)
    distill: DistillConfig = field(default_factory=DistillConfig)
    data: DataConfig = field(default_factory=DataConfig)

    @property
    def seed(self) -> int:
        return self.distill.seed

    def validate(self) -> "Config":
        if self.version != CONFIG_VERSION:
            raise ParameterError(
                f"config version {self.version} unsupported (expected {CONFIG_VERSION})"
            )
        self.model.validate()
        self.distill.validate()
        self.data.validate()
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()


def _build(cls, data: dict, path: str):
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ParameterError(f"unknown config keys at {path}: {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        f = known[name]
        if f.name == "init" and isinstance(value, dict):
            value = _build(InitStrategy, value, f"{path}.init")
        elif f.name == "model" and isinstance(value, dict):
            value = _build(ModelArch, value, f"{path}.model")
        elif f.name == "distill" and isinstance(value, dict):
            value = _build(DistillConfig, value, f"{path}.distill")
        elif f.name == "data" and isinstance(value, dict):
            value = _build(DataConfig, value, f"{path}.data")
        elif f.name == "synthetic" and isinstance(value, dict):
            value = _build(SyntheticSpec, value, f"{path}.synthetic")
        elif isinstance(value, list):
            value = tuple(value)
        kwargs[name] = value
    return cls(**kwargs)


def config_from_dict(data: dict) -> Config:
    if not isinstance(data, dict):
        raise ParameterError("config document must be a JSON object")
    cfg = _build(Config, data, "$")
    return cfg.validate()


def load_config(path: str) -> Config:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParameterError(f"config is not valid JSON: {exc}") from exc
    return config_from_dict(data)
