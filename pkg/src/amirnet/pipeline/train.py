"""Two-stage training.

Stage 1 grows the degradation tree one level per clustering epoch and jointly
optimizes DRN and RN on ``L_cls + L_res``. Stage 2 freezes the DRN and
retrains the RN on ``L_res`` alone.
"""

from __future__ import annotations

import hashlib
import logging
import math

import numpy as np
import torch

from .. import autonn as ann
from ..degrade import CorpusManifest
from ..drn import classification_loss, to_tensor
from ..hierarchy import DegTree, KMeansConfig, TreeAssignment, build_level, flatten_all
from ..imgcore import random_patch
from ..restorer import restoration_loss, total_loss_stage1
from .checkpoint import Checkpoint, ConfigMismatchError, build_models
from .config import TrainConfig

log = logging.getLogger(__name__)

EMBED_BATCH = 64


class TrainingError(RuntimeError):
    pass


def cosine_lr(epoch: int, total: int, lr: float, lr_min: float) -> float:
    """Cosine annealing from ``lr`` at epoch 0 to ``lr_min`` at epoch ``total``."""
    return lr_min + 0.5 * (lr - lr_min) * (1 + math.cos(math.pi * epoch / total))


def make_optimizer(params, cfg: TrainConfig):
    return torch.optim.AdamW(params, lr=cfg.lr, weight_decay=cfg.weight_decay)


def is_val(entry_id: int, fraction: float) -> bool:
    """Deterministic hash split: roughly ``fraction`` of ids land in validation."""
    h = int(hashlib.sha256(str(entry_id).encode()).hexdigest(), 16)
    return (h % 10_000) < fraction * 10_000


def split_pairs(pairs, cfg: TrainConfig, split: str):
    if split == "all":
        return list(pairs)
    want_val = split == "val"
    return [p for p in pairs if is_val(p.meta.id, cfg.val_fraction) == want_val]


def sub_seed(seed: int, *keys: int) -> int:
    return int(np.random.SeedSequence([seed, *keys]).generate_state(1)[0])


@torch.no_grad()
def embed(drn, images) -> np.ndarray:
    """Pooled encoder features for a list of ``(H, W, C)`` images."""
    out = []
    for i in range(0, len(images), EMBED_BATCH):
        out.append(drn.encode(to_tensor(images[i:i + EMBED_BATCH])).numpy())
    return np.concatenate(out).astype(np.float64)


def _batches(order, size):
    for i in range(0, len(order), size):
        yield order[i:i + size]


def _patch_batch(pairs, idx, size, rng):
    crops = [random_patch(pairs[i], size, rng) for i in idx]
    x = to_tensor([c.degraded for c in crops])
    y = to_tensor([c.clean for c in crops])
    return x, y


def _check_finite(loss, epoch, step):
    if not torch.isfinite(loss):
        raise TrainingError(f"non-finite loss {loss.item()} at epoch {epoch}, step {step}")


def load_corpus(cfg: TrainConfig, corpus=None):
    manifest = corpus if isinstance(corpus, CorpusManifest) else CorpusManifest.load(corpus or cfg.corpus)
    return manifest, manifest.load_pairs()


def train_stage1(cfg: TrainConfig, corpus=None, pairs=None) -> Checkpoint:
    if pairs is None:
        _, pairs = load_corpus(cfg, corpus)
    train = split_pairs(pairs, cfg, "train")
    if len(train) < cfg.branching:
        raise TrainingError(f"training split has {len(train)} samples; need >= {cfg.branching}")
    tree = DegTree(cfg.levels, cfg.branching)
    drn, rn = build_models(cfg)
    init = {"drn": ann.init_params(drn, sub_seed(cfg.seed, 1, 0)),
            "rn": rn.reset_parameters(sub_seed(cfg.seed, 1, 1))}
    opt = make_optimizer(list(drn.parameters()) + list(rn.parameters()), cfg)
    kcfg = KMeansConfig(cfg.branching, cfg.kmeans_restarts, seed=sub_seed(cfg.seed, 1, 2),
                        min_cluster_fraction=cfg.min_cluster_fraction)
    build_at = {cfg.cluster_interval * i: i + 1 for i in range(cfg.build_levels)}
    assign = TreeAssignment.root(len(train))
    degraded = [p.degraded for p in train]
    history = []
    labels = None
    for epoch in range(cfg.stage1_epochs):
        if epoch in build_at:
            assign = build_level(embed(drn, degraded), assign, build_at[epoch], tree, kcfg)
            labels = torch.from_numpy(flatten_all(assign, tree))
            log.info("stage1 epoch %d: built level %d", epoch, assign.built_levels)
        built = assign.built_levels
        lr = cosine_lr(epoch, cfg.stage1_epochs, cfg.lr, cfg.lr_min)
        for g in opt.param_groups:
            g["lr"] = lr
        rng = np.random.default_rng([cfg.seed, 1, epoch])
        order = rng.permutation(len(train))
        sums = {"total": 0.0, "cls": 0.0, "res": 0.0}
        steps = 0
        for step, idx in enumerate(_batches(order, cfg.batch_size)):
            x, y = _patch_batch(train, idx, cfg.patch_size, rng)
            rep = drn(x, built, stage=1)
            out = rn(x, rep.r)
            l_res = restoration_loss(out, y, cfg.alpha)
            l_cls = classification_loss(rep.logits, labels[idx], built, tree) if built else None
            try:
                loss = total_loss_stage1(l_cls, l_res)
            except FloatingPointError as exc:
                raise TrainingError(f"{exc} at epoch {epoch}, step {step}") from exc
            opt.zero_grad()
            loss.backward()
            opt.step()
            sums["total"] += loss.item()
            sums["res"] += l_res.item()
            sums["cls"] += l_cls.item() if l_cls is not None else 0.0
            steps += 1
        row = {"stage": 1, "epoch": epoch, "lr": lr, "built_levels": built,
               **{f"loss_{k}": v / steps for k, v in sums.items()}}
        history.append(row)
        log.info("stage1 epoch %d lr %.3g loss %.5f (cls %.5f res %.5f)", epoch, lr,
                 row["loss_total"], row["loss_cls"], row["loss_res"])
    return Checkpoint(1, cfg.stage1_epochs, cfg, cfg.hash(), drn, rn, assign,
                      [p.meta.id for p in train], opt.state_dict(), history, init)


def train_stage2(cfg: TrainConfig, ckpt: Checkpoint, corpus=None, pairs=None,
                 allow_config_mismatch: bool = False) -> Checkpoint:
    if not allow_config_mismatch and cfg.hash() != ckpt.config_hash:
        raise ConfigMismatchError(
            f"stage-1 checkpoint has config hash {ckpt.config_hash}, current config {cfg.hash()}")
    if ckpt.built_levels != cfg.build_levels:
        raise TrainingError(
            f"stage 2 needs a finished tree ({cfg.build_levels} levels); checkpoint has {ckpt.built_levels}")
    if pairs is None:
        _, pairs = load_corpus(cfg, corpus)
    train = split_pairs(pairs, cfg, "train")
    drn = ckpt.drn
    for p in drn.parameters():
        p.requires_grad_(False)
    _, rn = build_models(ckpt.config)
    init = dict(ckpt.init)
    if cfg.stage2_mode == "finetune":
        rn.load_state_dict(ckpt.rn.state_dict())
    else:
        init["rn_stage2"] = rn.reset_parameters(sub_seed(cfg.seed, 2, 1))
    opt = make_optimizer(rn.parameters(), cfg)
    built = ckpt.built_levels
    history = list(ckpt.history)
    for epoch in range(cfg.stage2_epochs):
        lr = cosine_lr(epoch, cfg.stage2_epochs, cfg.lr, cfg.lr_min)
        for g in opt.param_groups:
            g["lr"] = lr
        rng = np.random.default_rng([cfg.seed, 2, epoch])
        order = rng.permutation(len(train))
        total, steps = 0.0, 0
        for step, idx in enumerate(_batches(order, cfg.batch_size)):
            x, y = _patch_batch(train, idx, cfg.patch_size, rng)
            with torch.no_grad():
                r = drn(x, built, stage=2, hard=cfg.hard_mask, attr_in_stage2=cfg.stage2_attr).r
            loss = restoration_loss(rn(x, r), y, cfg.alpha)
            _check_finite(loss, epoch, step)
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item()
            steps += 1
        row = {"stage": 2, "epoch": epoch, "lr": lr, "built_levels": built,
               "loss_total": total / steps, "loss_cls": 0.0, "loss_res": total / steps}
        history.append(row)
        log.info("stage2 epoch %d lr %.3g loss %.5f", epoch, lr, row["loss_total"])
    return Checkpoint(2, cfg.stage2_epochs, cfg, ckpt.config_hash, drn, rn, ckpt.assignment,
                      ckpt.train_ids, opt.state_dict(), history, init)
