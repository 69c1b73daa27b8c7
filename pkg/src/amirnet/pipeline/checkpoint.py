"""Checkpoint archive.

A checkpoint is a ``torch.save`` archive of a plain dict with keys:

``format_version``  int, currently 1
``stage``           1 or 2
``epoch``           epochs completed in that stage
``config``          TrainConfig as a dict
``config_hash``     ``TrainConfig.hash()`` of the run that produced stage 1
``drn``             DRN state dict
``rn``              restoration-net state dict
``rn_flags``        ``{"use_dsln": bool, "use_gm": bool}``
``init``            parameter-init records for both networks
``paths``           ``(n_train, built_levels)`` int64 tensor of tree paths
``built_levels``    int
``train_ids``       corpus entry ids, row-aligned with ``paths``
``optimizer``       optimizer state dict of the last stage
``history``         list of per-epoch log rows
"""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import torch

from ..drn import DRN
from ..hierarchy import DegTree, TreeAssignment
from ..restorer import RestorationNet
from .config import TrainConfig

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


class ConfigMismatchError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    stage: int
    epoch: int
    config: TrainConfig
    config_hash: str
    drn: DRN
    rn: RestorationNet
    assignment: TreeAssignment
    train_ids: list
    optimizer: dict = field(default_factory=dict)
    history: list = field(default_factory=list)
    init: dict = field(default_factory=dict)

    @property
    def built_levels(self) -> int:
        return self.assignment.built_levels

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "stage": self.stage,
            "epoch": self.epoch,
            "config": self.config.to_dict(),
            "config_hash": self.config_hash,
            "drn": self.drn.state_dict(),
            "rn": self.rn.state_dict(),
            "rn_flags": {"use_dsln": self.rn.use_dsln, "use_gm": self.rn.use_gm},
            "init": self.init,
            "paths": torch.as_tensor(self.assignment.paths, dtype=torch.int64),
            "built_levels": self.assignment.built_levels,
            "train_ids": list(self.train_ids),
            "optimizer": self.optimizer,
            "history": self.history,
        }


def build_models(cfg: TrainConfig, use_dsln=None, use_gm=None):
    tree = DegTree(cfg.levels, cfg.branching)
    drn = DRN(tuple(cfg.drn_widths), cfg.drn_hidden, tree, detail=cfg.drn_detail)
    rn = RestorationNet(tuple(cfg.rn_widths), rdim=tree.flat_length,
                        use_dsln=cfg.use_dsln if use_dsln is None else use_dsln,
                        use_gm=cfg.use_gm if use_gm is None else use_gm)
    return drn, rn


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    """Write atomically: temp file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=path.name + ".", suffix=".tmp", dir=path.parent)
    os.close(fd)
    try:
        torch.save(ckpt.to_dict(), tmp)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.remove(tmp)
    return path


def load_checkpoint(path, expect_config: TrainConfig | None = None) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    try:
        data = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:  # torch raises a zoo of types for bad archives
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(data, dict) or data.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint format")
    cfg = TrainConfig.from_dict(data["config"])
    if expect_config is not None and expect_config.hash() != data["config_hash"]:
        raise ConfigMismatchError(
            f"{path} was produced with config hash {data['config_hash']}, "
            f"current config hashes to {expect_config.hash()}")
    drn, rn = build_models(cfg, **data["rn_flags"])
    drn.load_state_dict(data["drn"])
    rn.load_state_dict(data["rn"])
    paths = data["paths"].numpy()
    assign = TreeAssignment(paths, int(data["built_levels"]))
    return Checkpoint(int(data["stage"]), int(data["epoch"]), cfg, data["config_hash"], drn, rn,
                      assign, list(data["train_ids"]), data["optimizer"], list(data["history"]),
                      data["init"])
