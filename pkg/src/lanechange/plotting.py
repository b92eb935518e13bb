"""Matplotlib figures written straight to files (Agg backend, no display)."""

from __future__ import annotations

from pathlib import Path
from typing import Iterable, Optional, Sequence, Tuple, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .annotations import LABEL_NAMES  # noqa: E402

PathLike = Union[str, Path]


def _save(fig, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120, bbox_inches="tight", metadata={"Software": None})
    plt.close(fig)
    return path


def plot_confusion(percent: np.ndarray, path: PathLike, title: str = "",
                   labels: Sequence[str] = LABEL_NAMES) -> Path:
    """Row-normalised confusion matrix; rows are ground truth."""
    percent = np.asarray(percent, dtype=float)
    fig, ax = plt.subplots(figsize=(3.6, 3.2))
    ax.imshow(percent, cmap="Blues", vmin=0, vmax=100)
    for i in range(percent.shape[0]):
        for j in range(percent.shape[1]):
            colour = "white" if percent[i, j] > 60 else "black"
            ax.text(j, i, f"{percent[i, j]:.1f}", ha="center", va="center", color=colour)
    ax.set_xticks(range(len(labels)), labels)
    ax.set_yticks(range(len(labels)), labels)
    ax.set_xlabel("predicted")
    ax.set_ylabel("ground truth")
    if title:
        ax.set_title(title)
    return _save(fig, path)


def plot_history(history: Sequence[dict], path: PathLike, title: str = "") -> Path:
    """Loss and accuracy per epoch; one line per fold when histories carry ``fold``."""
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(8, 3))
    folds = sorted({h.get("fold", 0) for h in history})
    for f in folds:
        rows = [h for h in history if h.get("fold", 0) == f]
        ep = [r["epoch"] for r in rows]
        suffix = f" f{f}" if len(folds) > 1 else ""
        a1.plot(ep, [r["train_loss"] for r in rows], label="train" + suffix)
        a2.plot(ep, [r["train_acc"] for r in rows], label="train" + suffix)
        if "val_loss" in rows[0]:
            a1.plot(ep, [r["val_loss"] for r in rows], "--", label="val" + suffix)
            a2.plot(ep, [r["val_acc"] for r in rows], "--", label="val" + suffix)
    a1.set_xlabel("epoch")
    a1.set_ylabel("loss")
    a2.set_xlabel("epoch")
    a2.set_ylabel("accuracy")
    a2.set_ylim(0, 1.02)
    a2.legend(fontsize=6, ncol=2)
    if title:
        fig.suptitle(title)
    return _save(fig, path)


def plot_kernel_ablation(rows: Iterable[Tuple[int, float]], path: PathLike,
                         title: str = "") -> Path:
    """Accuracy against temporal pool kernel, largest kernel first."""
    rows = sorted(rows, key=lambda r: -r[0])
    fig, ax = plt.subplots(figsize=(4, 3))
    ks = [r[0] for r in rows]
    ax.plot(range(len(ks)), [100 * r[1] for r in rows], "o-")
    ax.set_xticks(range(len(ks)), [str(k) for k in ks])
    ax.set_xlabel("temporal pool kernel")
    ax.set_ylabel("accuracy (%)")
    if title:
        ax.set_title(title)
    return _save(fig, path)


def plot_flops(rows: Iterable[Tuple[str, float, Optional[float]]], path: PathLike) -> Path:
    """Bar chart of counted GFLOPs, with reference values as markers where known."""
    rows = list(rows)
    fig, ax = plt.subplots(figsize=(max(4, 0.8 * len(rows)), 3))
    x = np.arange(len(rows))
    ax.bar(x, [r[1] for r in rows], color="tab:blue", label="counted")
    ref = [(i, r[2]) for i, r in enumerate(rows) if r[2] is not None]
    if ref:
        ax.plot([i for i, _ in ref], [v for _, v in ref], "k_", markersize=18, label="reference")
    ax.set_xticks(x, [r[0] for r in rows], rotation=30, ha="right")
    ax.set_yscale("log")
    ax.set_ylabel("GFLOPs")
    ax.legend(fontsize=7)
    return _save(fig, path)


def plot_cam_strip(overlays: Sequence[np.ndarray], path: PathLike,
                   profile: Optional[np.ndarray] = None, step: int = 1) -> Path:
    """Overlay frames in a row with the per-frame CAM mass underneath."""
    idx = list(range(0, len(overlays), step))
    rows = 2 if profile is not None else 1
    fig = plt.figure(figsize=(1.1 * len(idx), 1.3 * rows + 0.2))
    for n, i in enumerate(idx):
        ax = fig.add_subplot(rows, len(idx), n + 1)
        ax.imshow(overlays[i])
        ax.set_title(str(i), fontsize=7)
        ax.axis("off")
    if profile is not None:
        ax = fig.add_subplot(rows, 1, 2)
        ax.plot(profile, "o-", markersize=3)
        ax.set_xlim(-0.5, len(profile) - 0.5)
        ax.set_xlabel("frame")
        ax.set_ylabel("CAM mass")
    return _save(fig, path)
