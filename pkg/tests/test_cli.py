import csv
import subprocess
import sys
import time

import pytest

from amirnet.pipeline.cli import EXIT_CONFIG, EXIT_MISSING, main

SMALL = ["--patch-size", "16", "--batch-size", "8"]


def test_no_args_prints_usage(capsys):
    assert main([]) != 0
    assert "usage" in capsys.readouterr().err


def test_unknown_subcommand():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code != 0


def test_eval_missing_checkpoint(tmp_path, capsys):
    code = main(["eval", "--checkpoint", str(tmp_path / "nope.pt")])
    assert code == EXIT_MISSING
    err = capsys.readouterr().err
    assert "checkpoint not found" in err and "nope.pt" in err


def test_invalid_config(tmp_path, capsys):
    cfg = tmp_path / "bad.yaml"
    cfg.write_text("variant: nonsense\n")
    assert main(["train-stage1", "--config", str(cfg)]) == EXIT_CONFIG
    assert "invalid config" in capsys.readouterr().err
    cfg.write_text("no_such_field: 1\n")
    assert main(["train-stage1", "--config", str(cfg)]) == EXIT_CONFIG


def test_full_pipeline_smoke(tmp_path):
    """gen-data -> stage 1 -> stage 2 -> eval -> embed-dump on 16 images, as a subprocess."""
    corpus, run = tmp_path / "corpus", tmp_path / "run"
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text("stage1_epochs: 4\ncluster_interval: 1\nstage2_epochs: 2\nval_fraction: 0.25\n"
                   "patch_size: 64\n")

    def run_cli(*args):
        res = subprocess.run([sys.executable, "-m", "amirnet", *args], capture_output=True, text=True)
        assert res.returncode == 0, res.stderr
        return res.stdout

    t0 = time.time()
    run_cli("gen-data", "--clean-dir", str(tmp_path / "clean"), "--synthesize-clean", "4",
            "--image-size", "32", "--n-per-type", "4", "--out-dir", str(corpus), "--seed", "1")
    # flags override file values (patch 64 would not fit 32x32 images)
    run_cli("train-stage1", "--config", str(cfg), "--corpus", str(corpus), "--out-dir", str(run), *SMALL)
    run_cli("train-stage2", "--checkpoint", str(run / "stage1.pt"), "--out-dir", str(run))
    out = run_cli("eval", "--checkpoint", str(run / "stage2.pt"), "--split", "all")
    run_cli("embed-dump", "--checkpoint", str(run / "stage2.pt"))
    tree = run_cli("inspect-tree", "--checkpoint", str(run / "stage1.pt"))
    elapsed = time.time() - t0

    assert elapsed < 300
    lines = out.strip().splitlines()
    assert len(lines) == 5 and lines[-1].startswith("average,16,")
    for name in ("stage1.pt", "stage2.pt", "metrics.csv", "metrics.png", "train_log.csv",
                 "train_loss.png", "embeddings.csv", "embeddings.png"):
        assert (run / name).exists(), name
    log = list(csv.DictReader((run / "train_log.csv").open()))
    assert [int(r["stage"]) for r in log] == [1] * 4 + [2] * 2
    rows = tree.strip().splitlines()
    assert rows[0] == "id,path,flat" and all(len(r.split(",")[2]) == 30 for r in rows[1:])
