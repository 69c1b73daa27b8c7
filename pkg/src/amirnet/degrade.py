"""Synthetic degradation operators and multi-degradation corpus generation."""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy import fft as spfft
from scipy import ndimage

from .imgcore import ImagePair, as_image, load_image, quantize, save_image

CORPUS_VERSION = "amirnet-corpus/1"
MANIFEST_NAME = "manifest.json"

KINDS = (
    "gaussian_noise",
    "gaussian_blur",
    "motion_blur",
    "defocus_blur",
    "low_light",
    "block_compression",
)

# name -> (low, high, low_inclusive, high_inclusive)
PARAM_RANGES = {
    "gaussian_noise": {"sigma": (0.0, 1.0, True, True)},
    "gaussian_blur": {"sigma": (0.0, 20.0, True, True)},
    "motion_blur": {"length": (1.0, 64.0, True, True), "angle": (-360.0, 360.0, True, True)},
    "defocus_blur": {"radius": (0.5, 32.0, True, True)},
    "low_light": {"gamma": (1.0, 10.0, False, True), "gain": (0.0, 1.0, False, True)},
    "block_compression": {"quality": (1.0, 100.0, True, True)},
}

BLUR_IDENTITY_SIGMA = 0.01

# Standard JPEG luminance quantization table (ITU-T T.81, Annex K).
JPEG_LUMA_TABLE = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=np.float64)


class DegradationError(ValueError):
    pass


@dataclass
class DegradationSpec:
    kind: str
    params: dict
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DegradationError(f"unknown degradation kind {self.kind!r}")
        expected = PARAM_RANGES[self.kind]
        if set(self.params) != set(expected):
            raise DegradationError(
                f"{self.kind} needs params {sorted(expected)}, got {sorted(self.params)}")
        for name, (lo, hi, lo_inc, hi_inc) in expected.items():
            v = float(self.params[name])
            ok_lo = v >= lo if lo_inc else v > lo
            ok_hi = v <= hi if hi_inc else v < hi
            if not (ok_lo and ok_hi and math.isfinite(v)):
                raise DegradationError(f"{self.kind}.{name}={v} outside valid range")
            self.params[name] = v


# -- kernels -----------------------------------------------------------------

def gaussian_kernel(sigma: float) -> np.ndarray:
    if sigma <= BLUR_IDENTITY_SIGMA:
        return np.ones((1, 1))
    radius = max(1, int(math.ceil(3.0 * sigma)))
    ax = np.arange(-radius, radius + 1, dtype=np.float64)
    g = np.exp(-(ax ** 2) / (2.0 * sigma ** 2))
    k = np.outer(g, g)
    return k / k.sum()


def motion_kernel(length: float, angle: float) -> np.ndarray:
    """Line kernel of the given length (pixels) and angle (degrees), bilinearly splatted."""
    half = length / 2.0
    radius = int(math.ceil(half)) + 1
    size = 2 * radius + 1
    k = np.zeros((size, size))
    theta = math.radians(angle)
    dx, dy = math.cos(theta), -math.sin(theta)
    n = max(2, int(math.ceil(length * 4)) + 1)
    for t in np.linspace(-half, half, n):
        x = radius + t * dx
        y = radius + t * dy
        x0, y0 = int(math.floor(x)), int(math.floor(y))
        fx, fy = x - x0, y - y0
        for yy, xx, w in ((y0, x0, (1 - fx) * (1 - fy)), (y0, x0 + 1, fx * (1 - fy)),
                          (y0 + 1, x0, (1 - fx) * fy), (y0 + 1, x0 + 1, fx * fy)):
            k[yy, xx] += w
    return k / k.sum()


def disk_kernel(radius: float, supersample: int = 8) -> np.ndarray:
    """Normalized disk with anti-aliased edge (fractional pixel coverage)."""
    r = int(math.ceil(radius))
    size = 2 * r + 1
    offs = (np.arange(supersample) + 0.5) / supersample - 0.5
    ax = np.arange(-r, r + 1, dtype=np.float64)
    yy = (ax[:, None, None, None] + offs[None, None, :, None])
    xx = (ax[None, :, None, None] + offs[None, None, None, :])
    cover = ((yy ** 2 + xx ** 2) <= radius ** 2).mean(axis=(2, 3))
    k = cover.reshape(size, size)
    return k / k.sum()


def _convolve(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    h, w = img.shape[:2]
    if kernel.shape[0] > h or kernel.shape[1] > w:
        raise DegradationError(f"kernel {kernel.shape} larger than image {h}x{w}")
    if kernel.shape == (1, 1):
        return img.copy()
    img64 = img.astype(np.float64)
    out = np.empty_like(img64)
    for c in range(img.shape[2]):
        out[:, :, c] = ndimage.correlate(img64[:, :, c], kernel, mode="nearest")
    return out


def quant_table(quality: float) -> np.ndarray:
    q = int(round(quality))
    scale = 5000.0 / q if q < 50 else 200.0 - 2.0 * q
    table = np.floor((JPEG_LUMA_TABLE * scale + 50.0) / 100.0)
    return np.clip(table, 1.0, 255.0)


def block_dct_compress(img: np.ndarray, quality: float) -> np.ndarray:
    """8x8 block DCT quantization (no entropy coding), channels independently."""
    h, w, c = img.shape
    ph, pw = (-h) % 8, (-w) % 8
    x = np.pad(img.astype(np.float64), ((0, ph), (0, pw), (0, 0)), mode="edge") * 255.0 - 128.0
    H, W = x.shape[:2]
    # (by, bx, 8, 8, c) view of the blocks
    blocks = x.reshape(H // 8, 8, W // 8, 8, c).transpose(0, 2, 1, 3, 4)
    coef = spfft.dctn(blocks, type=2, norm="ortho", axes=(2, 3))
    table = quant_table(quality)[None, None, :, :, None]
    coef = np.round(coef / table) * table
    rec = spfft.idctn(coef, type=2, norm="ortho", axes=(2, 3))
    rec = rec.transpose(0, 2, 1, 3, 4).reshape(H, W, c)
    return (rec[:h, :w] + 128.0) / 255.0


def apply_degradation(img: np.ndarray, spec: DegradationSpec) -> np.ndarray:
    img = as_image(img)
    p = spec.params
    if spec.kind == "gaussian_noise":
        if p["sigma"] == 0:
            return img.copy()
        rng = np.random.default_rng(spec.seed)
        out = img.astype(np.float64) + rng.normal(0.0, p["sigma"], size=img.shape)
    elif spec.kind == "gaussian_blur":
        out = _convolve(img, gaussian_kernel(p["sigma"]))
    elif spec.kind == "motion_blur":
        out = _convolve(img, motion_kernel(p["length"], p["angle"]))
    elif spec.kind == "defocus_blur":
        out = _convolve(img, disk_kernel(p["radius"]))
    elif spec.kind == "low_light":
        out = p["gain"] * np.power(img.astype(np.float64), p["gamma"])
    else:
        out = block_dct_compress(img, p["quality"])
    return np.clip(out, 0.0, 1.0).astype(np.float32)


# -- roster templates --------------------------------------------------------

DEFAULT_ROSTER = (
    "gaussian_noise:sigma=25/255",
    "gaussian_blur:sigma=2",
    "low_light:gamma=2.5,gain=0.4",
    "block_compression:quality=10",
)


def _num(text: str) -> float:
    return float(Fraction(text.strip()))


@dataclass
class DegradationTemplate:
    """A roster entry: fixed values, choice sets (``a|b``) or uniform ranges (``lo~hi``)."""

    kind: str
    params: dict = field(default_factory=dict)

    @classmethod
    def parse(cls, text: str) -> "DegradationTemplate":
        kind, _, rest = text.strip().partition(":")
        if kind not in KINDS:
            raise DegradationError(f"unknown degradation kind {kind!r} in {text!r}")
        params = {}
        for item in filter(None, (s.strip() for s in rest.split(","))):
            name, eq, value = item.partition("=")
            if not eq:
                raise DegradationError(f"malformed parameter {item!r} in {text!r}")
            if "|" in value:
                params[name.strip()] = {"choice": [_num(v) for v in value.split("|")]}
            elif "~" in value:
                lo, hi = value.split("~")
                params[name.strip()] = {"uniform": [_num(lo), _num(hi)]}
            else:
                params[name.strip()] = _num(value)
        return cls(kind, params)

    def realize(self, rng: np.random.Generator, seed: int) -> DegradationSpec:
        values = {}
        for name in sorted(self.params):
            v = self.params[name]
            if isinstance(v, dict) and "choice" in v:
                values[name] = float(v["choice"][int(rng.integers(len(v["choice"])))])
            elif isinstance(v, dict) and "uniform" in v:
                values[name] = float(rng.uniform(*v["uniform"]))
            else:
                values[name] = float(v)
        return DegradationSpec(self.kind, values, seed)


def derive_seed(seed: int, index: int) -> int:
    """Per-entry seed: first 32-bit word of ``SeedSequence([seed, index])``."""
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


# -- corpus ------------------------------------------------------------------

@dataclass
class ManifestEntry:
    id: int
    clean: str
    degraded: str
    kind: str
    params: dict
    seed: int
    source: str


@dataclass
class CorpusManifest:
    entries: list
    seed: int
    version: str = CORPUS_VERSION
    root: Path | None = None

    def to_json(self) -> str:
        data = {
            "version": self.version,
            "seed": self.seed,
            "entries": [asdict(e) for e in self.entries],
        }
        return json.dumps(data, indent=1, sort_keys=True) + "\n"

    def write(self, root) -> Path:
        path = Path(root) / MANIFEST_NAME
        path.write_text(self.to_json())
        return path

    @classmethod
    def load(cls, path) -> "CorpusManifest":
        path = Path(path)
        if path.is_dir():
            path = path / MANIFEST_NAME
        if not path.exists():
            raise FileNotFoundError(f"manifest not found: {path}")
        try:
            data = json.loads(path.read_text())
            entries = [ManifestEntry(**e) for e in data["entries"]]
            return cls(entries, int(data["seed"]), data["version"], path.parent)
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            raise ValueError(f"invalid manifest {path}: {exc}") from exc

    @property
    def kinds(self) -> list:
        return sorted({e.kind for e in self.entries})

    def load_pairs(self) -> list:
        root = self.root or Path(".")
        return [
            ImagePair(load_image(root / e.degraded), load_image(root / e.clean), e)
            for e in self.entries
        ]


def list_clean_images(clean_dir) -> list:
    clean_dir = Path(clean_dir)
    if not clean_dir.is_dir():
        raise FileNotFoundError(f"clean directory not found: {clean_dir}")
    files = sorted(p for p in clean_dir.iterdir() if p.suffix.lower() in {".png", ".ppm", ".pgm", ".pnm"})
    if not files:
        raise DegradationError(f"no clean images in {clean_dir}")
    return files


def generate_corpus(clean_dir, type_roster, n_per_type: int, out_dir, seed: int,
                    overwrite: bool = False, workers: int = 1) -> CorpusManifest:
    """Degrade clean images with every roster entry; ``n_per_type`` pairs each.

    Entry ``i`` (type-major order) uses clean image ``i mod n_per_type`` modulo
    the clean set size, and draws both its parameters and its noise from
    ``derive_seed(seed, i)``.
    """
    if n_per_type < 1:
        raise ValueError("n_per_type must be >= 1")
    templates = [t if isinstance(t, DegradationTemplate) else DegradationTemplate.parse(t)
                 for t in type_roster]
    if not templates:
        raise ValueError("empty degradation roster")
    files = list_clean_images(clean_dir)
    out_dir = Path(out_dir)
    clean_out = out_dir / "clean"
    if Path(clean_dir).resolve() in (clean_out.resolve(), (out_dir / "degraded").resolve()):
        raise DegradationError("clean_dir collides with the corpus output directories")

    jobs = []
    for t, tmpl in enumerate(templates):
        for j in range(n_per_type):
            idx = t * n_per_type + j
            jobs.append((idx, tmpl, files[j % len(files)]))

    if not overwrite:
        for idx, _, _ in jobs:
            for sub in ("clean", "degraded"):
                p = out_dir / sub / f"{idx:05d}.png"
                if p.exists():
                    raise FileExistsError(f"output path already exists: {p}")

    def work(job):
        idx, tmpl, src = job
        entry_seed = derive_seed(seed, idx)
        spec = tmpl.realize(np.random.default_rng(entry_seed), entry_seed)
        # degrade the stored (quantized) clean image so pairs are self-consistent
        clean = quantize(load_image(src)).astype(np.float32) / 255.0
        degraded = apply_degradation(clean, spec)
        name = f"{idx:05d}.png"
        save_image(clean, out_dir / "clean" / name)
        save_image(degraded, out_dir / "degraded" / name)
        return ManifestEntry(idx, f"clean/{name}", f"degraded/{name}", spec.kind,
                             dict(spec.params), entry_seed, src.name)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            entries = list(pool.map(work, jobs))
    else:
        entries = [work(j) for j in jobs]
    manifest = CorpusManifest(entries, seed, CORPUS_VERSION, out_dir)
    manifest.write(out_dir)
    return manifest


# -- procedural clean images ---------------------------------------------------

def synth_clean_image(size: int, rng: np.random.Generator) -> np.ndarray:
    """Smooth shaded background with random shapes and fine texture."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / size
    c0, c1 = rng.uniform(0.25, 0.8, 3), rng.uniform(0.25, 0.8, 3)
    ang = rng.uniform(0, 2 * np.pi)
    t = (np.cos(ang) * xx + np.sin(ang) * yy)
    t = (t - t.min()) / (np.ptp(t) + 1e-9)
    img = c0[None, None, :] * (1 - t[..., None]) + c1[None, None, :] * t[..., None]
    for _ in range(int(rng.integers(3, 7))):
        color = rng.uniform(0.1, 0.9, 3)
        cy, cx = rng.uniform(0, 1, 2)
        ry, rx = rng.uniform(0.08, 0.3, 2)
        if rng.random() < 0.5:
            mask = (((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2) <= 1.0
        else:
            mask = (np.abs(yy - cy) <= ry) & (np.abs(xx - cx) <= rx)
        img[mask] = color
    tex = ndimage.gaussian_filter(rng.normal(0, 1, (size, size)), 1.0)
    tex /= tex.std() + 1e-9
    img = img + 0.04 * tex[..., None]
    freq = rng.uniform(4, 12)
    img = img + 0.03 * np.sin(2 * np.pi * freq * (xx * np.cos(ang) - yy * np.sin(ang)))[..., None]
    return np.clip(img, 0.02, 0.98).astype(np.float32)


def write_clean_images(out_dir, n: int, size: int, seed: int) -> list:
    out_dir = Path(out_dir)
    paths = []
    for i in range(n):
        rng = np.random.default_rng(derive_seed(seed, i))
        p = out_dir / f"clean_{i:04d}.png"
        save_image(synth_clean_image(size, rng), p)
        paths.append(p)
    return paths
