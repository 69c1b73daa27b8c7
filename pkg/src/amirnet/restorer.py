"""Restoration network: FTB encoder, NAF-lite decoder, skip fusion, residual output."""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from . import autonn as ann

class FTB(nn.Module):
    """Feature transform block: DSLN -> conv -> GELU -> conv -> gate -> scaled residual.

    With ``use_dsln=False`` the norm is plain LN; with ``use_gm=False`` the gate is
    dropped (phi == 1). Both off gives the unconditioned block.
    """

    def __init__(self, channels: int, rdim: int = 30, use_dsln: bool = True, use_gm: bool = True):
        super().__init__()
        self.norm = ann.DSLN(channels, rdim) if use_dsln else ann.LayerNorm2d(channels)
        self.conv1 = ann.Conv(channels, channels, 3)
        self.conv2 = ann.Conv(channels, channels, 3)
        self.gate = ann.Gate(channels, rdim) if use_gm else None
        self.scale = nn.Parameter(torch.zeros(channels))

    def forward(self, x, r):
        h = self.norm(x, r)
        h = self.conv2(ann.gelu(self.conv1(h)))
        if self.gate is not None:
            h = self.gate(h, r)
        return x + self.scale[None, :, None, None] * h


class NAFLite(nn.Module):
    """x + conv1x1(simple_gate(conv3x3(LN(x)))); last conv zero-initialized after init."""

    def __init__(self, channels: int):
        super().__init__()
        self.norm = ann.LayerNorm2d(channels)
        self.conv1 = ann.Conv(channels, 2 * channels, 3)
        self.conv2 = ann.Conv(channels, channels, 1)

    def forward(self, x, r=None):
        return x + self.conv2(ann.simple_gate(self.conv1(self.norm(x))))


class Stack(nn.ModuleList):
    def forward(self, x, r):
        for blk in self:
            x = blk(x, r)
        return x


class RestorationNet(nn.Module):
    def __init__(self, widths=(16, 32, 64), enc_blocks: int = 2, mid_blocks: int = 2,
                 dec_blocks: int = 2, rdim: int = 30, use_dsln: bool = True, use_gm: bool = True,
                 channels: int = 3):
        super().__init__()
        self.widths = tuple(widths)
        self.use_dsln, self.use_gm = use_dsln, use_gm
        ftb = lambda c: FTB(c, rdim, use_dsln, use_gm)  # noqa: E731
        self.stem = ann.Conv(channels, widths[0], 3)
        self.encoders = nn.ModuleList(Stack(ftb(w) for _ in range(enc_blocks)) for w in widths)
        self.downs = nn.ModuleList(ann.Conv(widths[i], widths[i + 1], 3, stride=2)
                                   for i in range(len(widths) - 1))
        self.middle = Stack(ftb(widths[-1]) for _ in range(mid_blocks))
        self.ups = nn.ModuleList(ann.Conv(widths[i + 1], widths[i], 3) for i in range(len(widths) - 1))
        self.fuses = nn.ModuleList(ann.Conv(2 * w, w, 1) for w in widths)
        self.decoders = nn.ModuleList(Stack(NAFLite(w) for _ in range(dec_blocks)) for w in widths)
        self.out = ann.Conv(widths[0], channels, 3)

    def reset_parameters(self, seed: int) -> dict:
        """Fan-in uniform init, then zero every residual branch so the net is the identity."""
        record = ann.init_params(self, seed)
        zeroed = [self.out.weight, self.out.bias]
        for m in self.modules():
            if isinstance(m, NAFLite):
                zeroed += [m.conv2.weight, m.conv2.bias]
            if isinstance(m, FTB):
                zeroed.append(m.scale)
        for p in zeroed:
            ann.zero_(p)
        ids = {id(p) for p in zeroed}
        for name, p in self.named_parameters():
            if id(p) in ids:
                record["params"][name] = "zeros"
        return record

    def residual(self, x, r):
        h = self.stem(x)
        skips = []
        for i, enc in enumerate(self.encoders):
            h = enc(h, r)
            skips.append(h)
            if i < len(self.downs):
                h = self.downs[i](h)
        h = self.middle(h, r)
        for i in reversed(range(len(self.widths))):
            if i < len(self.ups):
                h = ann.upsample(h, self.ups[i].weight, self.ups[i].bias)
            h = self.fuses[i](ann.channel_concat(h, skips[i]))
            h = self.decoders[i](h, r)
        return self.out(h)

    def forward(self, x, r, clip: bool = False):
        """Restored image ``x + residual``; sides not divisible by 4 are
        replicate-padded and cropped back."""
        h, w = x.shape[-2:]
        m = 2 ** (len(self.widths) - 1)
        ph, pw = (-h) % m, (-w) % m
        xp = F.pad(x, (0, pw, 0, ph), mode="replicate") if (ph or pw) else x
        out = xp + self.residual(xp, r)
        out = out[..., :h, :w]
        return out.clamp(0.0, 1.0) if clip else out

    def conditioned_parameters(self) -> int:
        n = 0
        for m in self.modules():
            if isinstance(m, (ann.DSLN, ann.Gate)):
                n += sum(p.numel() for p in m.parameters())
        return n


def restoration_loss(pred, target, alpha: float = 0.2):
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    loss = ann.smooth_l1(pred, target)
    if alpha:
        loss = loss + alpha * ann.ssim_loss(pred, target)
    return loss


def total_loss_stage1(l_cls, l_res):
    """Unweighted sum; ``l_cls=None`` (no built level yet) contributes zero."""
    parts = {"cls": l_cls, "res": l_res}
    for name, v in parts.items():
        if v is None:
            continue
        val = float(v.detach()) if torch.is_tensor(v) else float(v)
        if not math.isfinite(val):
            raise FloatingPointError(f"non-finite {name} loss: {val} (cls={l_cls}, res={l_res})")
    return l_res if l_cls is None else l_cls + l_res
