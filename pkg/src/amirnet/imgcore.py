"""Images, raster I/O, patch sampling and full-reference quality metrics.

Images are plain ``numpy`` arrays of shape ``(H, W, C)`` holding reals in
``[0, 1]`` (``C`` is 1 or 3). Files are stored as lossless 8-bit PNG; binary
PPM/PGM are accepted on input.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
from PIL import Image as PILImage, UnidentifiedImageError
from scipy import signal

MIN_SIDE = 8
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03

SUPPORTED_SUFFIXES = {".png", ".ppm", ".pgm", ".pnm"}


class ImageError(ValueError):
    pass


class UnsupportedFormatError(ImageError):
    pass


class CorruptImageError(ImageError):
    pass


class DimensionMismatchError(ImageError):
    pass


@dataclass
class ImagePair:
    degraded: np.ndarray
    clean: np.ndarray
    meta: Any = field(default=None)

    def __post_init__(self):
        if self.degraded.shape != self.clean.shape:
            raise DimensionMismatchError(
                f"pair shapes differ: {self.degraded.shape} vs {self.clean.shape}")


def as_image(arr) -> np.ndarray:
    """Validate and coerce ``arr`` to an ``(H, W, C)`` float32 image."""
    img = np.asarray(arr, dtype=np.float32)
    if img.ndim == 2:
        img = img[:, :, None]
    if img.ndim != 3 or img.shape[2] not in (1, 3):
        raise ImageError(f"expected HxWxC with C in (1, 3), got shape {img.shape}")
    if min(img.shape[:2]) < MIN_SIDE:
        raise ImageError(f"image sides must be >= {MIN_SIDE}, got {img.shape[:2]}")
    if not np.all(np.isfinite(img)):
        raise ImageError("image contains non-finite values")
    return np.clip(img, 0.0, 1.0)


def quantize(img: np.ndarray) -> np.ndarray:
    """Map [0,1] reals to bytes with round-half-up."""
    return np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def load_image(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"image not found: {path}")
    if path.suffix.lower() not in SUPPORTED_SUFFIXES:
        raise UnsupportedFormatError(f"unsupported image format: {path.suffix!r} ({path})")
    try:
        with PILImage.open(path) as im:
            im.load()
            if im.mode in ("L", "1", "P", "LA"):
                data = np.asarray(im.convert("L"))
            elif im.mode in ("RGB", "RGBA"):
                data = np.asarray(im.convert("RGB"))
            else:
                raise UnsupportedFormatError(f"unsupported pixel mode {im.mode!r} in {path}")
    except UnidentifiedImageError as exc:
        raise CorruptImageError(f"cannot decode {path}: {exc}") from exc
    except (OSError, SyntaxError) as exc:
        raise CorruptImageError(f"corrupt image data in {path}: {exc}") from exc
    return as_image(data.astype(np.float32) / 255.0)


def save_image(img: np.ndarray, path) -> None:
    img = as_image(img)
    path = Path(path)
    data = quantize(img)
    data = data[:, :, 0] if data.shape[2] == 1 else data
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        PILImage.fromarray(data).save(path, format="PNG")
    except OSError as exc:
        raise OSError(f"cannot write image to {path}: {exc}") from exc


def random_patch(pair: ImagePair, size: int, rng: np.random.Generator) -> ImagePair:
    """Co-located crop of ``size`` x ``size`` from both images.

    Offsets are drawn uniformly from ``[0, H - size]`` x ``[0, W - size]``,
    both ends inclusive.
    """
    h, w = pair.clean.shape[:2]
    if size > min(h, w):
        raise ValueError(f"patch size {size} exceeds image size {h}x{w}")
    top = int(rng.integers(0, h - size + 1))
    left = int(rng.integers(0, w - size + 1))
    sl = (slice(top, top + size), slice(left, left + size))
    return ImagePair(pair.degraded[sl], pair.clean[sl], pair.meta)


def _check_same(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise DimensionMismatchError(f"shape mismatch: {a.shape} vs {b.shape}")


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """PSNR in dB with peak 1.0; ``math.inf`` for identical inputs."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_same(a, b)
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return math.inf
    return float(10.0 * np.log10(1.0 / mse))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(ax ** 2) / (2 * sigma ** 2))
    g /= g.sum()
    return np.outer(g, g)


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean SSIM over all fully-covered 11x11 windows, averaged over channels."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_same(a, b)
    if a.ndim == 2:
        a, b = a[:, :, None], b[:, :, None]
    if min(a.shape[:2]) < SSIM_WINDOW:
        raise ImageError(f"image smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    win = gaussian_window()
    c1 = (SSIM_K1 * 1.0) ** 2
    c2 = (SSIM_K2 * 1.0) ** 2
    scores = []
    for ch in range(a.shape[2]):
        x, y = a[:, :, ch], b[:, :, ch]
        mx = signal.correlate2d(x, win, mode="valid")
        my = signal.correlate2d(y, win, mode="valid")
        sxx = signal.correlate2d(x * x, win, mode="valid") - mx * mx
        syy = signal.correlate2d(y * y, win, mode="valid") - my * my
        sxy = signal.correlate2d(x * y, win, mode="valid") - mx * my
        num = (2 * mx * my + c1) * (2 * sxy + c2)
        den = (mx * mx + my * my + c1) * (sxx + syy + c2)
        scores.append(np.mean(num / den))
    return float(np.mean(scores))
