"""Evaluation, ablation harness and embedding dumps."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from ..drn import to_image, to_tensor
from ..imgcore import psnr, ssim
from .checkpoint import Checkpoint
from .config import TrainConfig
from .train import load_corpus, split_pairs, train_stage1, train_stage2

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("kind", "n", "psnr", "ssim", "input_psnr", "input_ssim")


@torch.no_grad()
def representation(ckpt: Checkpoint, x: torch.Tensor):
    cfg = ckpt.config
    return ckpt.drn(x, ckpt.built_levels, stage=ckpt.stage, hard=cfg.hard_mask and ckpt.stage == 2,
                    attr_in_stage2=cfg.stage2_attr)


@torch.no_grad()
def restore(ckpt: Checkpoint, img: np.ndarray) -> np.ndarray:
    """Restore one whole ``(H, W, C)`` image, clipped to [0, 1]."""
    x = to_tensor(img)
    return to_image(ckpt.rn(x, representation(ckpt, x).r, clip=True)[0])


@dataclass
class MetricsReport:
    rows: list

    @property
    def average(self) -> dict:
        return self.rows[-1]

    def by_kind(self) -> dict:
        return {r["kind"]: r for r in self.rows}

    def write_csv(self, path) -> Path:
        return write_rows(self.rows, path, METRIC_COLUMNS)


def write_rows(rows, path, columns=None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    columns = list(columns or rows[0].keys())
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in r.items()})
    return path


def evaluate(ckpt: Checkpoint, corpus=None, pairs=None, split: str | None = None) -> MetricsReport:
    """Per-kind and overall PSNR/SSIM on whole images, plus the degraded-input baseline.

    The final row (kind ``average``) averages over all evaluated images.
    """
    cfg = ckpt.config
    if pairs is None:
        _, pairs = load_corpus(cfg, corpus)
    chosen = split_pairs(pairs, cfg, split or cfg.eval_split)
    if not chosen:
        raise ValueError(f"no images in split {split or cfg.eval_split!r}")
    per = []
    for p in chosen:
        if p.degraded.shape[2] != ckpt.rn.out.weight.shape[0]:
            raise ValueError(f"image {p.meta.id} has {p.degraded.shape[2]} channels; "
                             f"checkpoint expects {ckpt.rn.out.weight.shape[0]}")
        out = restore(ckpt, p.degraded)
        per.append((p.meta.kind, psnr(out, p.clean), ssim(out, p.clean),
                    psnr(p.degraded, p.clean), ssim(p.degraded, p.clean)))
    rows = []
    for kind in sorted({k for k, *_ in per}) + ["average"]:
        sel = [m for m in per if kind == "average" or m[0] == kind]
        vals = np.array([m[1:] for m in sel], dtype=np.float64)
        mean = vals.sum(axis=0) / len(sel)
        rows.append({"kind": kind, "n": len(sel), "psnr": float(mean[0]), "ssim": float(mean[1]),
                     "input_psnr": float(mean[2]), "input_ssim": float(mean[3])})
    return MetricsReport(rows)


def variant_config(cfg: TrainConfig, variant: str) -> TrainConfig:
    return cfg.replace(variant=variant)


def run_two_stage(cfg: TrainConfig, pairs):
    s1 = train_stage1(cfg, pairs=pairs)
    s2 = train_stage2(cfg, s1, pairs=pairs)
    return s1, s2


def ablate(variant: str, cfg: TrainConfig, corpus=None, pairs=None) -> dict:
    """Train both stages for ``variant`` under ``cfg``'s seeds and schedule; one metrics row."""
    if pairs is None:
        _, pairs = load_corpus(cfg, corpus)
    vcfg = variant_config(cfg, variant)
    log.info("ablation: training variant %s", variant)
    _, s2 = run_two_stage(vcfg, pairs)
    report = evaluate(s2, pairs=pairs)
    row = {"variant": variant, "psnr": report.average["psnr"], "ssim": report.average["ssim"],
           "conditioned_params": s2.rn.conditioned_parameters(),
           "built_levels": s2.built_levels}
    for r in report.rows[:-1]:
        row[f"psnr_{r['kind']}"] = r["psnr"]
    return row


# -- embeddings --------------------------------------------------------------------

def pca_2d(z: np.ndarray) -> np.ndarray:
    """Coordinates on the top-2 principal components of centered ``z``."""
    zc = z - z.mean(axis=0, keepdims=True)
    _, _, vt = np.linalg.svd(zc, full_matrices=False)
    comps = vt[:2]
    if comps.shape[0] < 2:
        comps = np.vstack([comps, np.zeros((2 - comps.shape[0], z.shape[1]))])
    return zc @ comps.T


def projection_silhouette(coords: np.ndarray, kinds) -> float:
    from sklearn.metrics import silhouette_score
    return float(silhouette_score(coords, np.asarray(kinds)))


@torch.no_grad()
def embeddings(ckpt: Checkpoint, pairs) -> dict:
    ids, kinds, paths, zs, rs = [], [], [], [], []
    for p in pairs:
        x = to_tensor(p.degraded)
        rep = representation(ckpt, x)
        ids.append(p.meta.id)
        kinds.append(p.meta.kind)
        path = _greedy_path(rep.r_m[0].numpy(), ckpt)
        paths.append("".join(str(c) for c in path) or "root")
        zs.append(rep.z[0].numpy())
        rs.append(rep.r[0].numpy())
    z = np.array(zs, dtype=np.float64)
    return {"id": ids, "kind": kinds, "path": paths, "z": z, "r": np.array(rs), "proj": pca_2d(z)}


def _greedy_path(r_m, ckpt):
    tree = ckpt.drn.tree
    node, path = 0, []
    for lvl in range(1, ckpt.built_levels + 1):
        kids = tree.children(node)
        probs = [r_m[tree.offset(lvl) + k] for k in kids]
        c = int(np.argmax(probs))
        path.append(c)
        node = kids[c]
    return path


def dump_embeddings(ckpt: Checkpoint, corpus=None, out=None, pairs=None) -> dict:
    """Write id, kind, tree path, z, r and the 2-D projection per sample as CSV."""
    if pairs is None:
        _, pairs = load_corpus(ckpt.config, corpus)
    emb = embeddings(ckpt, pairs)
    if out is not None:
        out = Path(out)
        out.parent.mkdir(parents=True, exist_ok=True)
        nz, nr = emb["z"].shape[1], emb["r"].shape[1]
        header = (["id", "kind", "path"] + [f"z{i}" for i in range(nz)]
                  + [f"r{i}" for i in range(nr)] + ["pc1", "pc2"])
        with out.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for i in range(len(emb["id"])):
                w.writerow([emb["id"][i], emb["kind"][i], emb["path"][i]]
                           + [f"{v:.7g}" for v in emb["z"][i]] + [f"{v:.7g}" for v in emb["r"][i]]
                           + [f"{v:.7g}" for v in emb["proj"][i]])
    return emb
