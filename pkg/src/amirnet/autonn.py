"""Differentiable operators used by the representation and restoration networks.

Thin functional layer over ``torch`` autograd. Feature maps are ``(N, C, H, W)``;
representation vectors are ``(N, D)`` (a single ``(D,)`` vector is broadcast
over the batch).
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from .imgcore import SSIM_K1, SSIM_K2, SSIM_SIGMA, SSIM_WINDOW

EPS = 1e-6


def _as_batch(r: torch.Tensor, n: int) -> torch.Tensor:
    if r.dim() == 1:
        r = r.unsqueeze(0)
    if r.shape[0] == 1 and n != 1:
        r = r.expand(n, -1)
    if r.shape[0] != n:
        raise ValueError(f"representation batch {r.shape[0]} does not match features {n}")
    return r


# -- primitive layers ----------------------------------------------------------

def conv2d(x, weight, bias=None, stride: int = 1, padding: int | None = None):
    """Cross-correlation; ``padding`` defaults to ``k // 2`` (zero padding)."""
    kh, kw = weight.shape[-2:]
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError(f"kernel must be odd-sized, got {kh}x{kw}")
    if x.shape[1] != weight.shape[1]:
        raise ValueError(f"channel mismatch: input has {x.shape[1]}, kernel expects {weight.shape[1]}")
    if padding is None:
        padding = kh // 2
    return F.conv2d(x, weight, bias, stride=stride, padding=padding)


def linear(x, weight, bias=None):
    if x.shape[-1] != weight.shape[1]:
        raise ValueError(f"linear expects {weight.shape[1]} inputs, got {x.shape[-1]}")
    return F.linear(x, weight, bias)


def gelu(x):
    return F.gelu(x, approximate="none")


def global_average_pool(x):
    return x.mean(dim=(2, 3))


def downsample(x, weight, bias=None):
    """Stride-2 convolution; halves even spatial sizes."""
    return conv2d(x, weight, bias, stride=2)


def upsample(x, weight, bias=None):
    """Nearest-neighbour x2 followed by a convolution."""
    return conv2d(F.interpolate(x, scale_factor=2, mode="nearest"), weight, bias)


def channel_concat(*xs):
    return torch.cat(xs, dim=1)


def layer_norm(x, gamma, beta, eps: float = EPS):
    """Normalize over channels at each spatial position, then scale and shift.

    ``gamma``/``beta`` are ``(C,)`` or per-sample ``(N, C)``.
    """
    if gamma.shape[-1] != x.shape[1] or beta.shape[-1] != x.shape[1]:
        raise ValueError("affine parameters do not match the channel count")
    mu = x.mean(dim=1, keepdim=True)
    var = ((x - mu) ** 2).mean(dim=1, keepdim=True)
    xhat = (x - mu) / torch.sqrt(var + eps)
    if gamma.dim() == 1:
        gamma = gamma.unsqueeze(0)
    if beta.dim() == 1:
        beta = beta.unsqueeze(0)
    return xhat * gamma[:, :, None, None] + beta[:, :, None, None]


def dsln(x, r, w_gamma, b_gamma, w_beta, b_beta, eps: float = EPS):
    """Layer norm whose scale and shift are affine functions of ``r``."""
    if r.shape[-1] != w_gamma.shape[1] or r.shape[-1] != w_beta.shape[1]:
        raise ValueError(f"representation has dimension {r.shape[-1]}, "
                         f"expected {w_gamma.shape[1]}")
    r = _as_batch(r, x.shape[0])
    return layer_norm(x, linear(r, w_gamma, b_gamma), linear(r, w_beta, b_beta), eps)


def gate_values(r, w1, b1, w2, b2):
    return gelu(linear(r, w1, b1)) * linear(r, w2, b2)


def gating_modulation(x, r, w1, b1, w2, b2):
    """Channel-wise product of ``x`` with ``GELU(W1 r + b1) * (W2 r + b2)``."""
    if w1.shape[0] != x.shape[1] or w2.shape[0] != x.shape[1]:
        raise ValueError("gate width does not match the channel count")
    r = _as_batch(r, x.shape[0])
    phi = gate_values(r, w1, b1, w2, b2)
    return x * phi[:, :, None, None]


def simple_gate(x):
    if x.shape[1] % 2:
        raise ValueError(f"simple gate needs an even channel count, got {x.shape[1]}")
    a, b = x.chunk(2, dim=1)
    return a * b


# -- losses ----------------------------------------------------------------------

def smooth_l1(pred, target):
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
    d = (pred - target).abs()
    return torch.where(d < 1.0, 0.5 * d * d, d - 0.5).mean()


def _ssim_kernel(channels: int, dtype, device):
    ax = torch.arange(SSIM_WINDOW, dtype=torch.float64) - (SSIM_WINDOW - 1) / 2.0
    g = torch.exp(-(ax ** 2) / (2 * SSIM_SIGMA ** 2))
    g = g / g.sum()
    k = torch.outer(g, g).to(dtype=dtype, device=device)
    return k.expand(channels, 1, SSIM_WINDOW, SSIM_WINDOW).contiguous()


def ssim_map_mean(pred, target):
    """Mean SSIM over valid 11x11 Gaussian windows; per-channel then averaged."""
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
    if min(pred.shape[-2:]) < SSIM_WINDOW:
        raise ValueError(f"image smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    c = pred.shape[1]
    k = _ssim_kernel(c, pred.dtype, pred.device)

    def filt(t):
        return F.conv2d(t, k, groups=c)

    mx, my = filt(pred), filt(target)
    sxx = filt(pred * pred) - mx * mx
    syy = filt(target * target) - my * my
    sxy = filt(pred * target) - mx * my
    c1, c2 = SSIM_K1 ** 2, SSIM_K2 ** 2
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return (num / den).mean()


def ssim_loss(pred, target):
    return 1.0 - ssim_map_mean(pred, target)


def level_slices(branching: int = 2, levels: int = 4) -> list:
    out, start = [], 0
    for i in range(1, levels + 1):
        n = branching ** i
        out.append(slice(start, start + n))
        start += n
    return out


def per_level_cross_entropy(logits, labels, built_levels: int, branching: int = 2, levels: int = 4):
    """Sum over built levels of softmax cross-entropy; batch-averaged.

    ``logits`` and ``labels`` are ``(N, sum(branching**i))`` in level order;
    ``labels`` is the flattened binary tree membership.
    """
    if not 1 <= built_levels <= levels:
        raise ValueError(f"built_levels must be in [1, {levels}], got {built_levels}")
    if logits.dim() == 1:
        logits = logits.unsqueeze(0)
    if labels.dim() == 1:
        labels = labels.unsqueeze(0)
    slices = level_slices(branching, levels)
    total = logits.new_zeros(())
    for i, sl in enumerate(slices):
        lab = labels[:, sl]
        if i >= built_levels:
            if torch.any(lab != 0):
                raise ValueError(f"label has bits set in unbuilt level {i + 1}")
            continue
        if not torch.all(lab.sum(dim=1) == 1) or torch.any((lab != 0) & (lab != 1)):
            raise ValueError(f"label is not one-hot at level {i + 1}")
        target = lab.argmax(dim=1)
        total = total + F.cross_entropy(logits[:, sl], target)
    return total


# -- parameterized modules -------------------------------------------------------

def gelu_inverse_one() -> float:
    """The x with GELU(x) == 1 (Newton iteration)."""
    x = 1.0
    for _ in range(50):
        cdf = 0.5 * (1 + math.erf(x / math.sqrt(2)))
        pdf = math.exp(-x * x / 2) / math.sqrt(2 * math.pi)
        x -= (x * cdf - 1.0) / (cdf + x * pdf)
    return x


GATE_OPEN_BIAS = gelu_inverse_one()


class Conv(nn.Module):
    def __init__(self, cin, cout, k=3, stride=1):
        super().__init__()
        self.stride = stride
        self.weight = nn.Parameter(torch.empty(cout, cin, k, k))
        self.bias = nn.Parameter(torch.empty(cout))

    def forward(self, x):
        return conv2d(x, self.weight, self.bias, self.stride)


class Linear(nn.Module):
    def __init__(self, cin, cout):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(cout, cin))
        self.bias = nn.Parameter(torch.empty(cout))

    def forward(self, x):
        return linear(x, self.weight, self.bias)


class LayerNorm2d(nn.Module):
    def __init__(self, channels):
        super().__init__()
        self.gamma = nn.Parameter(torch.ones(channels))
        self.beta = nn.Parameter(torch.zeros(channels))

    def forward(self, x, r=None):
        return layer_norm(x, self.gamma, self.beta)


class DSLN(nn.Module):
    """Degradation-specific layer norm; starts as plain LN (W=0, b_gamma=1, b_beta=0)."""

    def __init__(self, channels, rdim):
        super().__init__()
        self.w_gamma = nn.Parameter(torch.zeros(channels, rdim))
        self.b_gamma = nn.Parameter(torch.ones(channels))
        self.w_beta = nn.Parameter(torch.zeros(channels, rdim))
        self.b_beta = nn.Parameter(torch.zeros(channels))

    def forward(self, x, r):
        return dsln(x, r, self.w_gamma, self.b_gamma, self.w_beta, self.b_beta)


class Gate(nn.Module):
    """Representation-driven channel gate; starts fully open (phi == 1)."""

    def __init__(self, channels, rdim):
        super().__init__()
        self.w1 = nn.Parameter(torch.zeros(channels, rdim))
        self.b1 = nn.Parameter(torch.full((channels,), GATE_OPEN_BIAS))
        self.w2 = nn.Parameter(torch.zeros(channels, rdim))
        self.b2 = nn.Parameter(torch.ones(channels))

    def forward(self, x, r):
        return gating_modulation(x, r, self.w1, self.b1, self.w2, self.b2)


def init_params(module: nn.Module, seed: int) -> dict:
    """Fan-in uniform init for every ``Conv``/``Linear``; returns the init record.

    Other parameters keep their constructor values. Draws come from a private
    generator so the result does not depend on global RNG state.
    """
    gen = torch.Generator().manual_seed(seed)
    record = {}
    for name, mod in module.named_modules():
        if isinstance(mod, (Conv, Linear)):
            fan_in = mod.weight[0].numel()
            bound = 1.0 / math.sqrt(fan_in)
            with torch.no_grad():
                w = torch.rand(mod.weight.shape, generator=gen, dtype=torch.float64)
                b = torch.rand(mod.bias.shape, generator=gen, dtype=torch.float64)
                mod.weight.copy_((2 * w - 1) * bound)
                mod.bias.copy_((2 * b - 1) * bound)
            record[f"{name}.weight" if name else "weight"] = f"uniform(+-1/sqrt({fan_in}))"
            record[f"{name}.bias" if name else "bias"] = f"uniform(+-1/sqrt({fan_in}))"
    for name, _ in module.named_parameters():
        record.setdefault(name, "constant")
    return {"seed": seed, "params": record}


def zero_(param: nn.Parameter) -> None:
    with torch.no_grad():
        param.zero_()


def snapshot(module: nn.Module) -> dict:
    return {k: v.detach().clone() for k, v in module.state_dict().items()}


def same_params(a: dict, b: dict) -> bool:
    return a.keys() == b.keys() and all(torch.equal(a[k], b[k]) for k in a)
