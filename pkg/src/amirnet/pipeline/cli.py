"""Command-line interface: ``amirnet <subcommand> ...``.

Training subcommands take ``--config FILE`` (YAML or JSON mapping of
TrainConfig fields); explicit flags override file values.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from ..degrade import DEFAULT_ROSTER, DegradationError, generate_corpus, write_clean_images
from ..hierarchy import DegTree, flatten
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import VARIANTS, ConfigError, TrainConfig
from .evaluate import ablate, dump_embeddings, evaluate, projection_silhouette, write_rows
from .plots import plot_ablation, plot_embeddings, plot_losses, plot_metrics
from .train import TrainingError, load_corpus, train_stage1, train_stage2

log = logging.getLogger("amirnet")

EXIT_ERROR = 1
EXIT_MISSING = 3
EXIT_CONFIG = 4


def _global(p):
    p.add_argument("--config", help="YAML/JSON config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--device", default=None, help="torch device (cpu only is tested)")
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="amirnet", description="hierarchical-representation all-in-one restoration")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("gen-data", help="generate a synthetic degraded corpus")
    _global(p)
    p.add_argument("--clean-dir", required=True)
    p.add_argument("--types", nargs="+", default=list(DEFAULT_ROSTER),
                   help="roster entries like 'gaussian_noise:sigma=15/255|50/255'")
    p.add_argument("--n-per-type", type=int, default=50)
    p.add_argument("--synthesize-clean", type=int, default=0, metavar="N",
                   help="first write N procedural clean images into --clean-dir")
    p.add_argument("--image-size", type=int, default=64)
    p.add_argument("--overwrite", action="store_true")

    for name, helptext in (("train-stage1", "build the tree and train DRN+RN"),
                           ("train-stage2", "freeze DRN, retrain RN")):
        p = sub.add_parser(name, help=helptext)
        _global(p)
        p.add_argument("--corpus")
        p.add_argument("--epochs", type=int)
        p.add_argument("--patch-size", type=int)
        p.add_argument("--batch-size", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--alpha", type=float)
        p.add_argument("--variant", choices=VARIANTS)
        if name == "train-stage1":
            p.add_argument("--interval", type=int)
        else:
            p.add_argument("--checkpoint", required=True)
            p.add_argument("--mode", choices=("scratch", "finetune"))
            p.add_argument("--allow-config-mismatch", action="store_true")

    p = sub.add_parser("eval", help="per-kind PSNR/SSIM report")
    _global(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus")
    p.add_argument("--split", choices=("val", "train", "all"))

    p = sub.add_parser("ablate", help="train and evaluate ablation variants")
    _global(p)
    p.add_argument("--corpus")
    p.add_argument("--variants", nargs="+", choices=VARIANTS, default=["full", "no_ftb", "no_dsln", "no_gm"])
    p.add_argument("--epochs", type=int, help="stage-1 and stage-2 epochs")
    p.add_argument("--interval", type=int)
    p.add_argument("--patch-size", type=int)
    p.add_argument("--batch-size", type=int)

    p = sub.add_parser("embed-dump", help="dump z, r and a 2-D projection per sample")
    _global(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus")
    p.add_argument("--out", help="CSV path (default OUT_DIR/embeddings.csv)")

    p = sub.add_parser("inspect-tree", help="print sample id, path and flat label")
    _global(p)
    p.add_argument("--checkpoint", required=True)
    return parser


def _config(args, **extra) -> TrainConfig:
    over = {"seed": args.seed, "device": args.device, "out_dir": args.out_dir}
    for flag in ("corpus", "patch_size", "batch_size", "lr", "alpha", "variant"):
        over[flag] = getattr(args, flag, None)
    over["cluster_interval"] = getattr(args, "interval", None)
    over["stage2_mode"] = getattr(args, "mode", None)
    over.update(extra)
    over = {k: v for k, v in over.items() if v is not None}
    if args.config:
        return TrainConfig.load(args.config, **over)
    return TrainConfig.from_dict(over)


def _out(cfg: TrainConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_gen_data(args):
    out_dir = Path(args.out_dir or "corpus")
    if args.synthesize_clean:
        write_clean_images(args.clean_dir, args.synthesize_clean, args.image_size,
                           args.seed if args.seed is not None else 0)
    manifest = generate_corpus(args.clean_dir, args.types, args.n_per_type, out_dir,
                               args.seed if args.seed is not None else 0, overwrite=args.overwrite)
    print(f"wrote {len(manifest.entries)} pairs to {out_dir}")


def cmd_train_stage1(args):
    extra = {"stage1_epochs": args.epochs} if args.epochs else {}
    cfg = _config(args, **extra)
    ckpt = train_stage1(cfg)
    out = _out(cfg)
    save_checkpoint(ckpt, out / "stage1.pt")
    write_rows(ckpt.history, out / "stage1_log.csv")
    plot_losses(ckpt.history, out / "stage1_loss.png")
    print(f"stage 1 done: built_levels={ckpt.built_levels}, checkpoint {out / 'stage1.pt'}")


def cmd_train_stage2(args):
    ck = load_checkpoint(args.checkpoint)
    base = ck.config.to_dict()
    if args.config:
        base.update(TrainConfig.load(args.config).to_dict())
    cfg = TrainConfig.from_dict(base)
    over = {k: v for k, v in _config_overrides(args).items() if v is not None}
    if args.epochs:
        over["stage2_epochs"] = args.epochs
    cfg = cfg.replace(**over)
    ckpt = train_stage2(cfg, ck, allow_config_mismatch=args.allow_config_mismatch)
    out = _out(cfg)
    save_checkpoint(ckpt, out / "stage2.pt")
    write_rows(ckpt.history, out / "train_log.csv")
    plot_losses(ckpt.history, out / "train_loss.png")
    print(f"stage 2 done: checkpoint {out / 'stage2.pt'}")


def _config_overrides(args):
    return {"corpus": args.corpus, "patch_size": args.patch_size, "batch_size": args.batch_size,
            "lr": args.lr, "alpha": args.alpha, "variant": args.variant, "stage2_mode": args.mode,
            "seed": args.seed, "device": args.device, "out_dir": args.out_dir}


def cmd_eval(args):
    ck = load_checkpoint(args.checkpoint)
    corpus = args.corpus or ck.config.corpus
    report = evaluate(ck, corpus, split=args.split)
    out = Path(args.out_dir or Path(args.checkpoint).parent)
    report.write_csv(out / "metrics.csv")
    plot_metrics(report.rows, out / "metrics.png")
    for r in report.rows:
        print(f"{r['kind']},{r['n']},{r['psnr']:.4f},{r['ssim']:.4f},{r['input_psnr']:.4f},{r['input_ssim']:.4f}")


def cmd_ablate(args):
    extra = {}
    if args.epochs:
        extra = {"stage1_epochs": args.epochs, "stage2_epochs": args.epochs}
    cfg = _config(args, **extra)
    _, pairs = load_corpus(cfg)
    rows = [ablate(v, cfg, pairs=pairs) for v in args.variants]
    out = _out(cfg)
    write_rows(rows, out / "ablation.csv")
    plot_ablation(rows, out / "ablation.png")
    for r in rows:
        print(f"{r['variant']},{r['psnr']:.4f},{r['ssim']:.4f}")


def cmd_embed_dump(args):
    ck = load_checkpoint(args.checkpoint)
    out_dir = Path(args.out_dir or Path(args.checkpoint).parent)
    path = Path(args.out) if args.out else out_dir / "embeddings.csv"
    emb = dump_embeddings(ck, args.corpus or ck.config.corpus, path)
    score = projection_silhouette(emb["proj"], emb["kind"]) if len(set(emb["kind"])) > 1 else float("nan")
    plot_embeddings(emb["proj"], emb["kind"], path.with_suffix(".png"),
                    title=f"silhouette {score:.3f}")
    print(f"wrote {len(emb['id'])} rows to {path} (silhouette {score:.4f})")


def cmd_inspect_tree(args):
    ck = load_checkpoint(args.checkpoint)
    tree = DegTree(ck.config.levels, ck.config.branching)
    w = sys.stdout
    w.write("id,path,flat\n")
    for sid, path in zip(ck.train_ids, ck.assignment.paths):
        bits = "".join(str(int(b)) for b in flatten(path, tree))
        w.write(f"{sid},{''.join(map(str, path)) or 'root'},{bits}\n")


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-stage1": cmd_train_stage1,
    "train-stage2": cmd_train_stage2,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "embed-dump": cmd_embed_dump,
    "inspect-tree": cmd_inspect_tree,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not args.command:
        parser.print_usage(sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        COMMANDS[args.command](args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except ConfigError as exc:
        print(f"error: invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CheckpointError, TrainingError, DegradationError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return 0


if __name__ == "__main__":
    sys.exit(main())
