"""Experiment configuration."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

VARIANTS = ("full", "no_ftb", "no_dsln", "no_gm", "layers_1", "layers_2", "layers_3", "layers_4")

# fields that do not change what stage 1 produces
HASH_EXCLUDE = {"corpus", "out_dir", "device", "stage2_epochs", "stage2_mode", "stage2_attr",
                "hard_mask", "eval_split"}


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    corpus: str = ""
    out_dir: str = "runs"
    patch_size: int = 64
    batch_size: int = 16
    stage1_epochs: int = 40
    cluster_interval: int = 10
    stage2_epochs: int = 40
    lr: float = 5e-4
    lr_min: float = 1e-6
    weight_decay: float = 1e-4
    alpha: float = 0.2
    seed: int = 0
    levels: int = 4
    branching: int = 2
    variant: str = "full"
    stage2_mode: str = "scratch"
    stage2_attr: bool = False
    hard_mask: bool = False
    val_fraction: float = 0.1
    kmeans_restarts: int = 10
    min_cluster_fraction: float = 0.05
    drn_widths: list = field(default_factory=lambda: [16, 32, 64, 128])
    drn_hidden: int = 64
    drn_detail: bool = True
    rn_widths: list = field(default_factory=lambda: [16, 32, 64])
    device: str = "cpu"
    eval_split: str = "val"

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        for name in ("patch_size", "batch_size", "stage1_epochs", "cluster_interval",
                     "stage2_epochs", "levels", "branching", "kmeans_restarts"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.cluster_interval * self.build_levels > self.stage1_epochs:
            raise ConfigError(
                f"cluster_interval ({self.cluster_interval}) x levels ({self.build_levels}) "
                f"exceeds stage1_epochs ({self.stage1_epochs})")
        if self.stage2_mode not in ("scratch", "finetune"):
            raise ConfigError("stage2_mode must be 'scratch' or 'finetune'")
        if not 0 <= self.val_fraction < 1:
            raise ConfigError("val_fraction must be in [0, 1)")
        if self.alpha < 0 or self.lr <= 0 or self.lr_min < 0:
            raise ConfigError("alpha, lr and lr_min must be non-negative (lr positive)")
        if self.eval_split not in ("val", "train", "all"):
            raise ConfigError("eval_split must be val, train or all")

    @property
    def build_levels(self) -> int:
        if self.variant.startswith("layers_"):
            return min(int(self.variant.split("_")[1]), self.levels)
        return self.levels

    @property
    def use_dsln(self) -> bool:
        return self.variant not in ("no_ftb", "no_dsln")

    @property
    def use_gm(self) -> bool:
        return self.variant not in ("no_ftb", "no_gm")

    def to_dict(self) -> dict:
        return asdict(self)

    def hash(self) -> str:
        data = {k: v for k, v in self.to_dict().items() if k not in HASH_EXCLUDE}
        return hashlib.sha256(json.dumps(data, sort_keys=True).encode()).hexdigest()[:16]

    def replace(self, **kw) -> "TrainConfig":
        d = self.to_dict()
        d.update(kw)
        return TrainConfig(**d)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path, **overrides) -> "TrainConfig":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"config file not found: {path}")
        try:
            data = yaml.safe_load(path.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path} must hold a mapping of config fields")
        data.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_dict(data)
