import json
import subprocess
import sys

import numpy as np
import pytest

from lanechange.cli import build_parser, run
from lanechange.clipset import read_manifest


def files_of(d):
    """Relative path -> bytes, with the output directory itself masked out."""
    return {p.relative_to(d).as_posix(): p.read_bytes().replace(str(d).encode(), b"OUT")
            for p in sorted(d.rglob("*")) if p.is_file()}


def test_help_lists_subcommands(capsys):
    assert run(["--help"]) == 0
    text = capsys.readouterr().out
    for cmd in ("synth", "ingest", "build-dataset", "train", "eval", "cam", "flops",
                "ablate-kernel"):
        assert cmd in text


def test_unknown_subcommand_exits_2(capsys):
    assert run(["frobnicate"]) == 2
    assert "invalid choice" in capsys.readouterr().err


def test_console_entry_point():
    proc = subprocess.run([sys.executable, "-m", "lanechange.cli", "bogus"],
                          capture_output=True, text=True)
    assert proc.returncode == 2 and "usage" in proc.stderr


def test_synth_then_ingest(tmp_path, capsys):
    d = tmp_path / "d"
    assert run(["synth", "--seed", "7", "--out", str(d)]) == 0
    assert (d / "detections_filtered.txt").exists() and (d / "lane_changes.txt").exists()
    assert run(["ingest", str(d)]) == 0
    lines = (d / "records.jsonl").read_text().splitlines()
    assert len(lines) == 1
    rec = json.loads(lines[0])
    assert len(rec["events"]) == 1


def test_synth_is_reproducible(tmp_path):
    assert run(["synth", "--seed", "3", "--scenes", "2", "--out", str(tmp_path / "a")]) == 0
    assert run(["synth", "--seed", "3", "--scenes", "2", "--out", str(tmp_path / "b")]) == 0
    assert files_of(tmp_path / "a") == files_of(tmp_path / "b")


def test_precedence_flag_over_file_over_default(tmp_path):
    cfg = tmp_path / "settings.txt"
    cfg.write_text("# test settings\nlanes = 3\ndistractors = 0\nout = /nowhere\n")
    out = tmp_path / "o"
    assert run(["synth", "--config", str(cfg), "--distractors", "1", "--out", str(out)]) == 0
    echoed = json.loads((out / "run_config.json").read_text())
    assert echoed["lanes"] == 3  # from the file
    assert echoed["distractors"] == 1  # flag wins
    assert echoed["noise"] == 0.0  # built-in default
    assert echoed["out"] == str(out)  # paths never come from the file
    ids = {ln.split()[1] for ln in (out / "detections_filtered.txt").read_text().splitlines()}
    assert len(ids) == 2


def test_json_config(tmp_path):
    cfg = tmp_path / "s.json"
    cfg.write_text(json.dumps({"lead": 50, "label": 2}))
    out = tmp_path / "o"
    assert run(["synth", "--config", str(cfg), "--out", str(out)]) == 0
    ev = (out / "lane_changes.txt").read_text().split()
    assert json.loads((out / "run_config.json").read_text())["lead"] == 50
    assert ev[2] == "4"


def test_bad_config_key_fails(tmp_path, capsys):
    cfg = tmp_path / "s.txt"
    cfg.write_text("colour = red\n")
    assert run(["synth", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
    assert "colour" in capsys.readouterr().err


def test_flops_table(tmp_path, capsys):
    assert run(["flops", "--out", str(tmp_path)]) == 0
    rows = [ln.split("\t") for ln in capsys.readouterr().out.strip().splitlines()]
    assert rows[0] == ["model", "frames", "size", "gflops", "reference"]
    assert len(rows) == 8
    for r in rows[1:]:
        assert abs(float(r[3]) / float(r[4]) - 1) <= 0.10
    assert (tmp_path / "flops.tsv").exists() and (tmp_path / "flops.png").exists()


def test_invalid_kernel_is_reported(tmp_path, capsys):
    code = run(["ablate-kernel", "--synthetic", "--kernels", "16,99", "--out", str(tmp_path)])
    assert code == 1
    assert "99" in capsys.readouterr().err


def test_missing_dataset_is_reported(tmp_path, capsys):
    assert run(["train", "--out", str(tmp_path / "t")]) == 1
    assert "--dataset" in capsys.readouterr().err


TINY = ["--frames", "8", "--size", "32", "--epochs", "1", "--folds", "2", "--per-class", "4",
        "--distractors", "0"]


def test_train_synthetic_reproducible(tmp_path):
    for name in "ab":
        assert run(["train", "--synthetic", "--out", str(tmp_path / name)] + TINY) == 0
    a, b = tmp_path / "a", tmp_path / "b"
    for f in ("metrics.jsonl", "eval.json", "report.txt", "run_config.json"):
        text_a = (a / f).read_text().replace(str(a), "")
        assert text_a == (b / f).read_text().replace(str(b), "")
    for f in ("confusion.png", "history.png"):
        assert (a / f).read_bytes() == (b / f).read_bytes()
    rep = json.loads((a / "eval.json").read_text())
    assert len(rep["per_fold_accuracy"]) == 2


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipe")
    assert run(["synth", "--seed", "0", "--scenes", "6", "--out", str(root / "raw")]) == 0
    assert run(["ingest", str(root / "raw")]) == 0
    assert run(["build-dataset", "--input", str(root / "raw"), "--out", str(root / "ds"),
                "--frames", "8", "--size", "200", "--out-size", "32", "--aug-copies", "0"]) == 0
    assert run(["train", "--dataset", str(root / "ds"), "--out", str(root / "tr"), "--fold", "0",
                "--frames", "8", "--size", "32", "--epochs", "1", "--folds", "2"]) == 0
    return root


def test_pipeline_outputs(pipeline):
    rows = read_manifest(pipeline / "ds" / "manifest.jsonl")
    assert {r["label"] for r in rows} == {0, 1, 2}
    for f in ("metrics.jsonl", "eval.json", "report.txt", "confusion.png", "history.png",
              "fold0.pt", "run_config.json"):
        assert (pipeline / "tr" / f).exists()


def test_eval_held_out(pipeline, capsys):
    out = pipeline / "ev"
    assert run(["eval", "--checkpoint", str(pipeline / "tr" / "fold0.pt"), "--dataset",
                str(pipeline / "ds"), "--out", str(out), "--held-out"]) == 0
    rep = json.loads((out / "eval.json").read_text())
    train_rep = json.loads((pipeline / "tr" / "eval.json").read_text())
    assert rep["per_fold_accuracy"] == train_rep["per_fold_accuracy"]
    lines = (out / "confusion.tsv").read_text().splitlines()
    assert lines[0].split("\t") == ["truth", "LK", "LLC", "RLC"] and len(lines) == 4


def test_cam_outputs(pipeline):
    clip = read_manifest(pipeline / "ds" / "manifest.jsonl")[0]["path"]
    out = pipeline / "cam"
    assert run(["cam", "--checkpoint", str(pipeline / "tr" / "fold0.pt"), "--clip", clip,
                "--class", "1", "--out", str(out)]) == 0
    assert len(list(out.glob("cam_[0-9]*.png"))) == 8
    scores = np.load(out / "scores.npy")
    assert scores.min() >= 0 and scores.max() <= 1
    assert (out / "cam_strip.png").exists()


def test_parser_defaults_are_unset():
    args = build_parser().parse_args(["synth", "--out", "x"])
    assert args.seed is None and args.lanes is None
