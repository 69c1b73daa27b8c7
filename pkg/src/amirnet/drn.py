"""Degradation representation network: encoder, mask and attribute projectors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import autonn as ann
from .hierarchy import DegTree

REPR_DIM = 30
MIN_INPUT = 16
DETAIL_EPS = 1e-5
DETAIL_WINDOW = 7


def to_tensor(imgs, dtype=torch.float32) -> torch.Tensor:
    """``(H, W, C)`` image or list of them -> ``(N, C, H, W)`` tensor."""
    if isinstance(imgs, np.ndarray) and imgs.ndim == 3:
        imgs = [imgs]
    arr = np.stack([np.asarray(i) for i in imgs]).transpose(0, 3, 1, 2)
    return torch.from_numpy(np.ascontiguousarray(arr)).to(dtype)


def to_image(t: torch.Tensor) -> np.ndarray:
    return t.detach().cpu().numpy().transpose(1, 2, 0).astype(np.float32)


def detail_residual(x: torch.Tensor) -> torch.Tensor:
    """``x - box3(x)`` with replicate padding."""
    return x - F.avg_pool2d(F.pad(x, (1, 1, 1, 1), mode="replicate"), 3, stride=1)


def detail_energy(x: torch.Tensor, eps: float = DETAIL_EPS, window: int = DETAIL_WINDOW) -> torch.Tensor:
    """Local log energy of the detail residual, ``log(eps + box(d^2))``.

    Noise, compression, low light and blur differ by orders of magnitude in this
    quantity while image content moves it comparatively little.
    """
    p = window // 2
    d2 = F.pad(detail_residual(x) ** 2, (p, p, p, p), mode="replicate")
    return torch.log(eps + F.avg_pool2d(d2, window, stride=1))


class EncoderStage(nn.Module):
    def __init__(self, cin, cout, stride):
        super().__init__()
        self.inp = ann.Conv(cin, cout, 3, stride)
        self.res = ann.Conv(cout, cout, 3)

    def forward(self, x):
        h = ann.gelu(self.inp(x))
        return h + ann.gelu(self.res(h))


class MLP(nn.Module):
    def __init__(self, cin, hidden, cout):
        super().__init__()
        self.fc1 = ann.Linear(cin, hidden)
        self.fc2 = ann.Linear(hidden, cout)

    def forward(self, z):
        return self.fc2(ann.gelu(self.fc1(z)))


def mask_project(logits: torch.Tensor, built_levels: int, tree: DegTree = DegTree()) -> torch.Tensor:
    """Per-level softmax over built levels, zeros for the rest."""
    if not 0 <= built_levels <= tree.levels:
        raise ValueError(f"built_levels must be in [0, {tree.levels}]")
    parts = []
    for i, sl in enumerate(tree.level_slices()):
        seg = logits[..., sl]
        parts.append(torch.softmax(seg, dim=-1) if i < built_levels else torch.zeros_like(seg))
    return torch.cat(parts, dim=-1)


def hard_mask(r_m: torch.Tensor, built_levels: int, tree: DegTree = DegTree()) -> torch.Tensor:
    """One-hot root-down greedy path: at each level the likelier child of the chosen node."""
    out = torch.zeros_like(r_m)
    node = torch.zeros(r_m.shape[:-1] + (1,), dtype=torch.long, device=r_m.device)
    first = torch.arange(tree.branching, device=r_m.device)
    for i in range(1, built_levels + 1):
        off = tree.offset(i)
        kids = r_m.gather(-1, off + node * tree.branching + first)
        node = node * tree.branching + kids.argmax(-1, keepdim=True)
        out.scatter_(-1, off + node, 1.0)
    return out


def compose_representation(r_m, r_a, stage: int, attr_in_stage2: bool = False):
    """Stage 1: ``r_m * r_a``. Stage 2: ``r_m`` (or ``r_m * r_a`` when ``attr_in_stage2``)."""
    if stage not in (1, 2):
        raise ValueError(f"stage must be 1 or 2, got {stage}")
    if r_m.shape != r_a.shape:
        raise ValueError("r_m and r_a lengths differ")
    if stage == 1 or attr_in_stage2:
        return r_m * r_a
    return r_m


def classification_loss(logits, flat_labels, built_levels: int, tree: DegTree = DegTree()):
    return ann.per_level_cross_entropy(logits, flat_labels, built_levels, tree.branching, tree.levels)


@dataclass
class Representation:
    z: torch.Tensor
    logits: torch.Tensor
    r_m: torch.Tensor
    r_a: torch.Tensor
    r: torch.Tensor
    built_levels: int


class DRN(nn.Module):
    def __init__(self, widths=(16, 32, 64, 128), hidden: int = 64, tree: DegTree = DegTree(),
                 in_channels: int = 3, detail: bool = True):
        super().__init__()
        self.tree = tree
        self.rdim = tree.flat_length
        # the encoder sees the image stacked with its detail_energy map
        self.detail = bool(detail)
        stem = in_channels * (2 if self.detail else 1)
        chans = (stem,) + tuple(widths)
        self.stages = nn.ModuleList(
            EncoderStage(chans[i], chans[i + 1], 1 if i == 0 else 2) for i in range(len(widths)))
        self.mask_proj = MLP(widths[-1], hidden, self.rdim)
        self.attr_proj = MLP(widths[-1], hidden, self.rdim)

    @property
    def embed_dim(self) -> int:
        return self.mask_proj.fc1.weight.shape[1]

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        if min(x.shape[-2:]) < MIN_INPUT:
            raise ValueError(f"input must be at least {MIN_INPUT}x{MIN_INPUT}, got {tuple(x.shape[-2:])}")
        if self.detail:
            x = ann.channel_concat(x, detail_energy(x))
        for stage in self.stages:
            x = stage(x)
        return ann.global_average_pool(x)

    def forward(self, x, built_levels: int, stage: int = 1, hard: bool = False,
                attr_in_stage2: bool = False) -> Representation:
        z = self.encode(x)
        logits = self.mask_proj(z)
        r_m = mask_project(logits, built_levels, self.tree)
        if hard:
            r_m = hard_mask(r_m, built_levels, self.tree)
        r_a = self.attr_proj(z)
        r = compose_representation(r_m, r_a, stage, attr_in_stage2)
        return Representation(z, logits, r_m, r_a, r, built_levels)
