"""Command-line entry point: ``lanechange <subcommand> ...``.

Settings resolve as command-line flag, then ``--config`` file, then the
built-in default.  Every command that writes an output directory also writes
``run_config.json`` there with the fully resolved settings.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

log = logging.getLogger("lanechange")

DEFAULT_SEED = 0

# Built-in defaults per subcommand; argparse itself defaults to None so that
# "flag not given" can be told apart from "flag given with the default value".
DEFAULTS: Dict[str, dict] = {
    "synth": dict(seed=DEFAULT_SEED, scenes=1, label=None, lanes=4, distractors=2,
                  wobble=0.0, lead=64, noise=0.0),
    "ingest": dict(strict=False),
    "build-dataset": dict(variant="tte00", seed=DEFAULT_SEED, lk_per_record=1, bb=False,
                          aug_copies=3, frames=32, size=400, out_size=None),
    "train": dict(seed=DEFAULT_SEED, family="X3D", preset="DESK", frames=16, size=48,
                  alpha=None, beta=None, temporal_pool_kernel=None, dropout=None,
                  epochs=30, batch_size=8, lr=0.01, momentum=0.9, weight_decay=1e-4,
                  optimizer="sgd", schedule="cosine", loss_norm="classes", augment="",
                  folds=4, fold=None, split="cv", val_fraction=0.2,
                  synthetic=False, per_class=100, bb=False, distractors=2, wobble=0.0),
    "eval": dict(size=None),
    "cam": dict(alpha=0.5),
    "flops": dict(family=None, preset=None, frames=None, size=None, alpha=None),
    "ablate-kernel": dict(seed=DEFAULT_SEED, family="X3D", preset="DESK", frames=16, size=48,
                          kernels="16,8,4,2,1", seeds="0,1,2", epochs=30, batch_size=8,
                          lr=0.003, optimizer="adam", weight_decay=0.0, augment="hflip,crop",
                          folds=4, fold=0, synthetic=False, per_class=100, bb=False,
                          distractors=2, wobble=0.0, alpha=None, beta=None),
}

# Keys a config file may not override (paths are always explicit).
_PATH_KEYS = {"out", "input", "dataset", "checkpoint", "clip", "config"}


class CLIError(Exception):
    pass


# -- config resolution ------------------------------------------------------------

def read_settings(path: Path) -> dict:
    """Settings from a JSON file or a ``key = value`` text file (``#`` comments)."""
    text = Path(path).read_text()
    if str(path).endswith(".json"):
        return json.loads(text)
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CLIError(f"{path}:{n}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _coerce(value, default):
    if not isinstance(value, str) or isinstance(default, str):
        return value
    low = value.lower()
    if low in ("none", "null"):
        return None
    if isinstance(default, bool) or low in ("true", "false"):
        return low in ("1", "true", "yes")
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float) or default is None:
        try:
            if "/" in value:
                a, b = value.split("/")
                return float(a) / float(b)
            return int(value) if value.lstrip("-").isdigit() else float(value)
        except ValueError:
            return value
    return value


def resolve(command: str, args: argparse.Namespace) -> dict:
    """Merge defaults < config file < explicit flags."""
    resolved = dict(DEFAULTS.get(command, {}))
    cfg_path = getattr(args, "config", None)
    if cfg_path:
        for k, v in read_settings(Path(cfg_path)).items():
            if k in _PATH_KEYS:
                continue
            if k not in resolved:
                raise CLIError(f"unknown setting {k!r} in {cfg_path}")
            resolved[k] = _coerce(v, resolved[k])
    for k, v in vars(args).items():
        if k in ("command", "verbose"):
            continue
        if v is not None or k not in resolved:
            resolved[k] = v
    resolved["command"] = command
    return resolved


def echo_config(out_dir: Path, settings: dict) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "run_config.json"
    clean = {k: (str(v) if isinstance(v, Path) else v) for k, v in settings.items()}
    path.write_text(json.dumps(clean, indent=2, sort_keys=True) + "\n")
    return path


def _ints(text) -> List[int]:
    if isinstance(text, (list, tuple)):
        return [int(t) for t in text]
    return [int(t) for t in str(text).split(",") if t.strip()]


def _ops(text) -> tuple:
    if isinstance(text, (list, tuple)):
        return tuple(text)
    return tuple(t.strip() for t in str(text or "").split(",") if t.strip())


# -- subcommands --------------------------------------------------------------------

def cmd_synth(s: dict) -> int:
    from . import synthgen

    out = Path(s["out"])
    echo_config(out, s)
    for i in range(s["scenes"]):
        seed = s["seed"] + i
        label = s["label"] if s["label"] is not None else 1 + seed % 2
        spec = synthgen.random_scene(seed, label, lanes=s["lanes"], distractors=s["distractors"],
                                     distractor_wobble=s["wobble"], lead=s["lead"],
                                     lk_frames=40 + 20 + s["lead"] + 50, record_id=i + 1,
                                     noise=s["noise"])
        scene = synthgen.generate(spec)
        dest = out if s["scenes"] == 1 else out / f"scene_{i:04d}"
        synthgen.write_scene(scene, dest)
        print(f"{dest}\tlabel={label}\tframes={spec.total_frames}\tevents={len(scene.events)}")
    return 0


def cmd_ingest(s: dict) -> int:
    from .annotations import ingest

    top = Path(s["input"])
    if not top.is_dir():
        raise CLIError(f"{top} is not a directory")
    out = Path(s["out"]) if s.get("out") else top / "records.jsonl"
    lines = ingest(top, out, strict=s["strict"])
    if not lines:
        raise CLIError(f"no records found under {top}")
    for ln in lines:
        print(f"{ln['record']}\tframes={ln['num_frames']}\tevents={len(ln['events'])}")
    print(f"wrote {out} ({len(lines)} records)")
    return 0


def cmd_build_dataset(s: dict) -> int:
    from .clipset import build_dataset, read_manifest

    if not Path(s["input"]).is_dir():
        raise CLIError(f"{s['input']} is not a directory")
    out = Path(s["out"])
    echo_config(out, s)
    manifest = build_dataset(s["input"], out, s["variant"], s["seed"], s["lk_per_record"],
                             s["bb"], s["aug_copies"], s["frames"], s["size"], s["out_size"])
    rows = read_manifest(manifest)
    counts = np.bincount([r["label"] for r in rows], minlength=3)
    print(f"wrote {manifest}: {len(rows)} clips, per class {counts.tolist()}")
    return 0


def _model_config(s: dict, frames: int, size: int, channels: int = 3):
    from .models import ModelConfig, desk_config

    kw = {key: s[key] for key in ("alpha", "beta", "temporal_pool_kernel", "dropout")
          if s.get(key) is not None}
    if s["preset"] == "DESK":
        return desk_config(s["family"], frames, size, in_channels=channels, **kw)
    return ModelConfig(family=s["family"], preset=s["preset"], input_frames=frames,
                       input_size=size, in_channels=channels, **kw)


def _hyperparams(s: dict, seed: Optional[int] = None):
    from .training import Hyperparams

    return Hyperparams(epochs=s["epochs"], batch_size=s["batch_size"], lr=s["lr"],
                       momentum=s.get("momentum", 0.9), weight_decay=s["weight_decay"],
                       schedule=s.get("schedule", "cosine"), optimizer=s["optimizer"],
                       loss_norm=s.get("loss_norm", "classes"),
                       seed=s["seed"] if seed is None else seed, augment=_ops(s["augment"]))


def _load_data(s: dict):
    """Training data: a built dataset directory or an in-memory synthetic set."""
    from .clipset import read_manifest
    from .training import ManifestClips

    if s.get("synthetic"):
        from .experiments import desk_set

        d = desk_set(s["per_class"], s["seed"], bb=s["bb"], num_frames=s["frames"],
                     size=s["size"], distractors=s["distractors"],
                     distractor_wobble=s["wobble"])
        return d.dataset(), d.groups
    if not s.get("dataset"):
        raise CLIError("give --dataset DIR or --synthetic")
    rows = read_manifest(Path(s["dataset"]) / "manifest.jsonl")
    if not rows:
        raise CLIError("empty dataset manifest")
    frames = rows[0]["frames"]
    if frames != s["frames"]:
        raise CLIError(f"dataset clips have {frames} frames, model expects {s['frames']}")
    groups = [r.get("source_id", r["clip"]) for r in rows]
    return ManifestClips(rows, size=s["size"]), groups


def cmd_train(s: dict) -> int:
    from . import plotting, report
    from .training import EvalReport, evaluate, kfold_split, save_checkpoint, train

    out = Path(s["out"])
    echo_config(out, s)
    data, groups = _load_data(s)
    cfg = _model_config(s, s["frames"], s["size"])
    hp = _hyperparams(s)
    metrics = out / "metrics.jsonl"
    metrics.write_text("")
    on_epoch = lambda row: report.append_jsonl(metrics, row)  # noqa: E731
    history = []

    def log_row(row):
        history.append(row)
        on_epoch(row)
        log.info("fold %s epoch %d loss %.4f acc %.3f val %.3f", row.get("fold"), row["epoch"],
                 row["train_loss"], row["train_acc"], row.get("val_acc", float("nan")))

    if s["split"] == "fixed":
        # one seeded stratified hold-out of about val_fraction of the source events
        k = max(2, int(round(1.0 / s["val_fraction"])))
        split = kfold_split(list(data.y), k, s["seed"], groups)
        folds = [0]
    else:
        k = s["folds"]
        split = kfold_split(list(data.y), k, s["seed"], groups)
        folds = list(range(k)) if s["fold"] is None else [s["fold"]]
    evals = []
    for fold in folds:
        tr = data.subset(split.train_indices(fold))
        va = data.subset(split.val_indices(fold))
        res = train(cfg, tr, va, hp, lambda r, f=fold: log_row(dict(r, fold=f)))
        ev = evaluate(res.model, va, cfg.num_classes)
        evals.append(ev)
        save_checkpoint(out / f"fold{fold}.pt", res.model, cfg, hp, fold=fold,
                        best_epoch=res.best_epoch, history=res.history,
                        val_indices=split.val_indices(fold))
        report.append_jsonl(metrics, {"fold": fold, "event": "eval", "accuracy": ev.accuracy,
                                      "confusion_counts": ev.confusion})
        print(f"fold {fold}\taccuracy {ev.accuracy:.4f}")
    rep = EvalReport.from_folds(evals)
    (out / "eval.json").write_text(json.dumps(rep.to_dict(), indent=2) + "\n")
    name = f"RGB{'+BB' if _is_bb(s, data) else ''}+{cfg.name}"
    text = report.render_report(f"{name} ({s['split']}, {len(folds)} fold(s))",
                                [(name, s.get("variant", "synthetic" if s.get("synthetic")
                                                         else Path(s.get("dataset", "")).name),
                                  rep.mean_accuracy)],
                                [(f"{name} confusion (%)", rep.confusion)])
    (out / "report.txt").write_text(text + "\n")
    plotting.plot_confusion(rep.confusion, out / "confusion.png", name)
    plotting.plot_history(history, out / "history.png", name)
    print(text)
    return 0


def _is_bb(s, data) -> bool:
    return bool(s.get("bb")) or bool(getattr(data, "bb", False))


def cmd_eval(s: dict) -> int:
    from . import plotting, report
    from .clipset import read_manifest
    from .training import EvalReport, ManifestClips, evaluate, load_checkpoint

    model, ckpt = load_checkpoint(s["checkpoint"])
    cfg = model.config
    rows = read_manifest(Path(s["dataset"]) / "manifest.jsonl")
    if s.get("held_out"):
        idx = ckpt.get("val_indices")
        if idx is None:
            raise CLIError("checkpoint records no held-out indices")
        rows = [rows[i] for i in idx]
    data = ManifestClips(rows, size=s["size"] or cfg.input_size)
    ev = evaluate(model, data, cfg.num_classes)
    rep = EvalReport.from_folds([ev])
    out = Path(s["out"])
    echo_config(out, s)
    (out / "eval.json").write_text(json.dumps(rep.to_dict(), indent=2) + "\n")
    report.write_tsv(out / "confusion.tsv", ["truth"] + ["LK", "LLC", "RLC"],
                     [[lab] + list(r) for lab, r in zip(["LK", "LLC", "RLC"],
                                                         np.round(rep.confusion, 2).tolist())])
    plotting.plot_confusion(rep.confusion, out / "confusion.png", cfg.name)
    print(report.confusion_table(rep.confusion))
    print(f"accuracy\t{rep.mean_accuracy:.4f}")
    return 0


def cmd_cam(s: dict) -> int:
    from . import plotting
    from .cam import compute_cam, export_cam, overlay
    from .clipset import downscale, load_clip_array
    from .training import load_checkpoint

    model, _ = load_checkpoint(s["checkpoint"])
    clip = load_clip_array(s["clip"])
    if clip.shape[-1] != model.config.input_size:
        clip = downscale(clip, model.config.input_size)
    amap = compute_cam(model, clip, s["cls"])
    out = Path(s["out"])
    echo_config(out, s)
    paths = export_cam(amap, clip, out, alpha=s["alpha"])
    overlays = [overlay(f, h, s["alpha"]) for f, h in zip(clip, amap.upsampled)]
    plotting.plot_cam_strip(overlays, out / "cam_strip.png", amap.frame_profile())
    np.save(out / "scores.npy", amap.scores)
    print(f"wrote {len(paths)} overlays to {out}; peak frame {amap.temporal_peak()}")
    return 0


def cmd_flops(s: dict) -> int:
    from . import plotting, report
    from .models import (CANONICAL_INPUT, PRESETS, REFERENCE_GFLOPS, ModelConfig,
                         canonical_config, count_flops)

    if s["family"]:
        presets = [s["preset"]] if s["preset"] else list(PRESETS[s["family"]])
        pairs = [(s["family"], p) for p in presets]
    else:
        pairs = [(f, p) for f, p in REFERENCE_GFLOPS]
    rows = []
    for fam, pre in pairs:
        cfg = canonical_config(fam, pre) if (fam, pre) in CANONICAL_INPUT else \
            ModelConfig(family=fam, preset=pre, input_frames=16, input_size=64)
        over = {k: s[v] for k, v in (("input_frames", "frames"), ("input_size", "size"),
                                     ("alpha", "alpha")) if s[v] is not None}
        if over:
            cfg = replace(cfg, **over)
        rep = count_flops(cfg)
        ref = REFERENCE_GFLOPS.get((fam, pre)) if not over else None
        rows.append((cfg.name, cfg.input_frames, cfg.input_size, rep.gflops, ref))
    header = ["model", "frames", "size", "gflops", "reference"]
    lines = ["\t".join(header)]
    for name, frames, size, gflops, ref in rows:
        ref_text = "" if ref is None else f"{ref:.2f}"
        lines.append("\t".join([name, str(frames), str(size), f"{gflops:.3f}", ref_text]))
    print("\n".join(lines))
    if s.get("out"):
        out = Path(s["out"])
        echo_config(out, s)
        report.write_tsv(out / "flops.tsv", header,
                         [(r[0], r[1], r[2], round(r[3], 3), "" if r[4] is None else r[4])
                          for r in rows])
        plotting.plot_flops([(r[0], r[3], r[4]) for r in rows], out / "flops.png")
    return 0


def cmd_ablate_kernel(s: dict) -> int:
    from . import plotting, report
    from .models import ConfigError
    from .training import cross_validate

    out = Path(s["out"])
    kernels = _ints(s["kernels"])
    seeds = _ints(s["seeds"])
    cfg0 = _model_config(s, s["frames"], s["size"])
    for k in kernels:  # fail fast on invalid kernels before any training
        if not 1 <= k <= cfg0.temporal_extent:
            raise ConfigError(f"temporal pool kernel {k} outside [1, {cfg0.temporal_extent}]")
    echo_config(out, s)
    data, groups = _load_data(s)
    rows = []
    for k in kernels:
        cfg = replace(cfg0, temporal_pool_kernel=k)
        accs = []
        for seed in seeds:
            res = cross_validate(cfg, data, _hyperparams(s, seed), s["folds"], seed, groups,
                                 [s["fold"]] if s["fold"] is not None else None)
            accs.append(res.report.mean_accuracy)
        rows.append((k, float(np.mean(accs)), accs))
        print(f"k={k}\taccuracy {np.mean(accs):.4f}\t{accs}")
    report.write_tsv(out / "ablation.tsv", ["kernel", "accuracy"] + [f"seed{x}" for x in seeds],
                     [[k, m] + a for k, m, a in rows])
    plotting.plot_kernel_ablation([(k, m) for k, m, _ in rows], out / "ablation.png",
                                  cfg0.name)
    return 0


COMMANDS = {
    "synth": cmd_synth, "ingest": cmd_ingest, "build-dataset": cmd_build_dataset,
    "train": cmd_train, "eval": cmd_eval, "cam": cmd_cam, "flops": cmd_flops,
    "ablate-kernel": cmd_ablate_kernel,
}


# -- parser -------------------------------------------------------------------------

def _model_flags(p):
    p.add_argument("--family", choices=["I3D", "SlowFast", "X3D"])
    p.add_argument("--preset")
    p.add_argument("--frames", type=int, help="input frames per clip")
    p.add_argument("--size", type=int, help="input side length in pixels")
    p.add_argument("--alpha", type=int, help="SlowFast frame-rate ratio")
    p.add_argument("--beta", type=float, help="SlowFast channel ratio")


def _train_flags(p):
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--optimizer", choices=["sgd", "adam"])
    p.add_argument("--augment", help="online augmentation ops, e.g. hflip,crop")
    p.add_argument("--folds", type=int)
    p.add_argument("--fold", type=int, help="run a single fold")
    p.add_argument("--dataset", help="directory written by build-dataset")
    p.add_argument("--synthetic", action="store_const", const=True,
                   help="generate an in-memory synthetic set instead of --dataset")
    p.add_argument("--per-class", type=int)
    p.add_argument("--bb", action="store_const", const=True, help="RGB+BB encoding")
    p.add_argument("--distractors", type=int)
    p.add_argument("--wobble", type=float, help="distractor lateral wobble amplitude (px)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lanechange",
                                     description="Lane-change recognition with 3D CNNs.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", metavar="{" + ",".join(COMMANDS) + "}")
    sub.required = True

    def add(name, help):
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", help="settings file (key = value, or .json)")
        return p

    p = add("synth", "render synthetic highway scenes with annotations")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--scenes", type=int)
    p.add_argument("--label", type=int, choices=[0, 1, 2])
    p.add_argument("--lanes", type=int)
    p.add_argument("--distractors", type=int)
    p.add_argument("--wobble", type=float)
    p.add_argument("--lead", type=int, help="frames between observation start and maneuver")
    p.add_argument("--noise", type=float)

    p = add("ingest", "validate annotated records and write a record manifest")
    p.add_argument("input")
    p.add_argument("--out", help="manifest path (default INPUT/records.jsonl)")
    p.add_argument("--strict", action="store_const", const=True)

    p = add("build-dataset", "extract labelled clips for one dataset variant")
    p.add_argument("--variant", choices=["tte00", "tte10", "tte20"])
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--lk-per-record", type=int)
    p.add_argument("--bb", action="store_const", const=True)
    p.add_argument("--aug-copies", type=int)
    p.add_argument("--frames", type=int)
    p.add_argument("--size", type=int)
    p.add_argument("--out-size", type=int)

    p = add("train", "train with k-fold cross-validation (or a fixed split)")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    _model_flags(p)
    _train_flags(p)
    p.add_argument("--temporal-pool-kernel", type=int)
    p.add_argument("--split", choices=["cv", "fixed"])
    p.add_argument("--val-fraction", type=float)

    p = add("eval", "evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--size", type=int)
    p.add_argument("--held-out", action="store_true",
                   help="only the clips held out when the checkpoint was trained")

    p = add("cam", "class activation map overlays for one clip")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--clip", required=True)
    p.add_argument("--class", dest="cls", type=int, choices=[0, 1, 2], required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--alpha", type=float)

    p = add("flops", "count FLOPs of model presets")
    p.add_argument("--family", choices=["I3D", "SlowFast", "X3D"])
    p.add_argument("--preset")
    p.add_argument("--frames", type=int)
    p.add_argument("--size", type=int)
    p.add_argument("--alpha", type=int)
    p.add_argument("--out")

    p = add("ablate-kernel", "accuracy against the temporal pool kernel")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--kernels", help="comma-separated, e.g. 16,8,4,2,1")
    p.add_argument("--seeds", help="comma-separated training seeds")
    _model_flags(p)
    _train_flags(p)
    return parser


def run(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help (0) and usage errors (2)
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        settings = resolve(args.command, args)
        return COMMANDS[args.command](settings)
    except (CLIError, ValueError, OSError, KeyError) as exc:
        print(f"lanechange {args.command}: error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
