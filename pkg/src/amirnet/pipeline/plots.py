"""Report figures written next to the CSV outputs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_losses(history, path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 3))
        for stage, color in ((1, "C0"), (2, "C1")):
            rows = [r for r in history if r["stage"] == stage]
            if not rows:
                continue
            ep = [r["epoch"] for r in rows]
            ax.plot(ep, [r["loss_total"] for r in rows], color=color, label=f"stage {stage} total")
            if stage == 1:
                ax.plot(ep, [r["loss_res"] for r in rows], color=color, ls="--", label="stage 1 res")
                for r0, r1 in zip(rows, rows[1:]):
                    if r1["built_levels"] != r0["built_levels"]:
                        ax.axvline(r1["epoch"], color="0.7", lw=0.8)
        ax.set_xlabel("epoch")
        ax.set_ylabel("loss")
        ax.set_yscale("log")
        ax.legend(frameon=False)
        return _save(fig, path)


def plot_metrics(rows, path) -> Path:
    with plt.rc_context(STYLE):
        kinds = [r["kind"] for r in rows]
        x = np.arange(len(kinds))
        fig, ax = plt.subplots(figsize=(1.2 * len(kinds) + 2, 3))
        ax.bar(x - 0.2, [r["input_psnr"] for r in rows], 0.4, label="degraded", color="0.7")
        ax.bar(x + 0.2, [r["psnr"] for r in rows], 0.4, label="restored", color="C0")
        ax.set_xticks(x, kinds, rotation=20, ha="right")
        ax.set_ylabel("PSNR (dB)")
        ax.legend(frameon=False)
        return _save(fig, path)


def plot_embeddings(proj, kinds, path, title=None) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4, 4))
        kinds = np.asarray(kinds)
        for i, k in enumerate(sorted(set(kinds))):
            sel = kinds == k
            ax.scatter(proj[sel, 0], proj[sel, 1], s=8, color=f"C{i}", label=k)
        ax.set_xlabel("PC 1")
        ax.set_ylabel("PC 2")
        if title:
            ax.set_title(title)
        ax.legend(frameon=False, markerscale=2)
        return _save(fig, path)


def plot_ablation(rows, path) -> Path:
    with plt.rc_context(STYLE):
        names = [r["variant"] for r in rows]
        fig, ax = plt.subplots(figsize=(1.0 * len(names) + 2, 3))
        ax.bar(np.arange(len(names)), [r["psnr"] for r in rows], color="C0")
        ax.set_xticks(np.arange(len(names)), names, rotation=20, ha="right")
        vals = [r["psnr"] for r in rows]
        ax.set_ylim(min(vals) - 0.5, max(vals) + 0.3)
        ax.set_ylabel("PSNR (dB)")
        return _save(fig, path)
