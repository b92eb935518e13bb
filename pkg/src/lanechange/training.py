"""Training and evaluation: loss, stratified folds, the fit loop, metrics."""

from __future__ import annotations

import copy
import logging
import math
import random
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from torch.utils.data import DataLoader, Dataset

from .annotations import LABEL_NAMES
from .clipset import Clip, augment, downscale, load_clip_array
from .models import ModelConfig, build_model

log = logging.getLogger(__name__)

NUM_CLASSES = 3
PROB_FLOOR = 1e-12


# -- loss -----------------------------------------------------------------------

def cross_entropy(probabilities: Sequence[float], label: int) -> float:
    """Categorical cross-entropy of one prediction, averaged over the classes.

    ``-(1/N) * sum_i y_i log(p_i)`` with one-hot ``y`` and ``N`` classes.
    """
    p = np.asarray(probabilities, dtype=np.float64)
    n = p.shape[-1]
    if not 0 <= label < n:
        raise ValueError(f"label {label} outside [0, {n})")
    pt = p[label]
    if pt <= 0.0:
        log.warning("probability of the true class is %g; clamping to %g", pt, PROB_FLOOR)
        pt = PROB_FLOOR
    return float(-math.log(pt) / n)


def batch_loss(logits: torch.Tensor, labels: torch.Tensor, norm: str = "classes") -> torch.Tensor:
    """Mean over clips of the per-clip loss.

    ``norm="classes"`` divides by the number of classes as in the loss
    definition; ``norm="batch"`` is the usual mean cross-entropy.
    """
    nll = F.cross_entropy(logits, labels, reduction="mean")
    if norm == "classes":
        return nll / logits.shape[1]
    if norm == "batch":
        return nll
    raise ValueError(f"loss_norm must be 'classes' or 'batch', got {norm!r}")


# -- folds ----------------------------------------------------------------------

@dataclass
class FoldSplit:
    k: int
    assignments: List[int]  # fold index per sample
    seed: int

    def train_indices(self, fold: int) -> List[int]:
        return [i for i, f in enumerate(self.assignments) if f != fold]

    def val_indices(self, fold: int) -> List[int]:
        return [i for i, f in enumerate(self.assignments) if f == fold]


def kfold_split(labels: Sequence[int], k: int = 4, seed: int = 0,
                groups: Optional[Sequence] = None) -> FoldSplit:
    """Stratified, seeded k-fold assignment.

    Samples sharing a group (for instance an event and its augmented copies)
    always land in the same fold.  Groups are stratified by the label of
    their first sample, and per-class group counts differ by at most one
    between folds.
    """
    if k < 2:
        raise ValueError("k must be at least 2")
    groups = list(range(len(labels))) if groups is None else list(groups)
    if len(groups) != len(labels):
        raise ValueError("labels and groups differ in length")
    group_label: Dict = {}
    for g, y in zip(groups, labels):
        group_label.setdefault(g, int(y))
    by_class: Dict[int, list] = {}
    for g, y in group_label.items():
        by_class.setdefault(y, []).append(g)
    rng = np.random.default_rng(seed)
    fold_of: Dict = {}
    filled = np.zeros(k, dtype=int)
    for y in sorted(by_class):
        gs = sorted(by_class[y], key=str)
        if len(gs) < k:
            name = LABEL_NAMES[y] if 0 <= y < len(LABEL_NAMES) else str(y)
            raise ValueError(f"class {y} ({name}) has {len(gs)} source events, needs >= {k}")
        order = rng.permutation(len(gs))
        # start each class at the emptiest folds so totals stay balanced too
        folds = np.argsort(filled, kind="stable")
        for j, gi in enumerate(order):
            f = int(folds[j % k])
            fold_of[gs[gi]] = f
            filled[f] += 1
    return FoldSplit(k, [fold_of[g] for g in groups], seed)


# -- data -------------------------------------------------------------------------

class ArrayClips(Dataset):
    """In-memory clips; uint8 arrays are scaled to [0, 1] on access."""

    def __init__(self, x: np.ndarray, y: Sequence[int], bb: bool = False):
        self.x = x
        self.y = np.asarray(y, dtype=np.int64)
        self.bb = bb

    def __len__(self):
        return len(self.y)

    def __getitem__(self, i):
        clip = self.x[i]
        if clip.dtype == np.uint8:
            clip = clip.astype(np.float32) / 255.0
        return torch.from_numpy(np.ascontiguousarray(clip, dtype=np.float32)), int(self.y[i])

    def subset(self, idx: Sequence[int]) -> "ArrayClips":
        idx = np.asarray(idx, dtype=int)
        return ArrayClips(self.x[idx], self.y[idx], self.bb)


class ManifestClips(Dataset):
    """Clips listed in a dataset manifest, loaded lazily from disk."""

    def __init__(self, rows: Sequence[dict], size: Optional[int] = None):
        self.rows = list(rows)
        self.size = size

    def __len__(self):
        return len(self.rows)

    def __getitem__(self, i):
        row = self.rows[i]
        clip = load_clip_array(row["path"])
        if self.size is not None:
            clip = downscale(clip, self.size)
        return torch.from_numpy(np.ascontiguousarray(clip)), int(row["label"])

    def subset(self, idx: Sequence[int]) -> "ManifestClips":
        return ManifestClips([self.rows[i] for i in idx], self.size)

    @property
    def y(self):
        return np.array([r["label"] for r in self.rows], dtype=np.int64)

    @property
    def bb(self) -> bool:
        return any(r.get("bb") for r in self.rows)


class OnlineAugment(Dataset):
    """Re-draws a seeded augmentation of every clip each epoch.

    The seed of a draw depends only on ``(seed, epoch, index)``, so runs are
    reproducible regardless of the loader's visiting order.
    """

    def __init__(self, base: Dataset, ops: Sequence[str], seed: int = 0):
        self.base = base
        self.ops = tuple(ops)
        self.seed = seed
        self.epoch = 0

    def set_epoch(self, epoch: int) -> None:
        self.epoch = epoch

    def __len__(self):
        return len(self.base)

    def __getitem__(self, i):
        x, y = self.base[i]
        s = (self.seed * 1_000_003 + self.epoch * 100_003 + i) % 2**32
        clip = augment(Clip(x.numpy(), int(y), bb=getattr(self.base, "bb", False)), s, self.ops)
        return torch.from_numpy(clip.data), clip.label


# -- training ---------------------------------------------------------------------

@dataclass
class Hyperparams:
    epochs: int = 30
    batch_size: int = 8
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-4
    schedule: str = "cosine"  # or "constant"
    optimizer: str = "sgd"  # or "adam"
    loss_norm: str = "classes"
    shuffle: bool = True
    seed: int = 0
    augment: Tuple[str, ...] = ()  # online augmentation ops, redrawn every epoch

    @classmethod
    def from_dict(cls, d: dict) -> "Hyperparams":
        names = {f.name for f in fields(cls)}
        kw = {k: v for k, v in d.items() if k in names}
        if "augment" in kw:
            aug = kw["augment"]
            ops = aug.split(",") if isinstance(aug, str) else aug
            kw["augment"] = tuple(a for a in ops if a)
        return cls(**kw)


def seed_everything(seed: int) -> None:
    random.seed(seed)
    np.random.seed(seed % 2**32)
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True, warn_only=True)


@dataclass
class TrainResult:
    history: List[dict]
    best_state: dict
    best_epoch: int
    model: nn.Module
    diverged: bool = False


class DivergenceError(RuntimeError):
    def __init__(self, message: str, result: TrainResult):
        super().__init__(message)
        self.result = result


def _make_optimizer(model: nn.Module, hp: Hyperparams):
    if hp.optimizer == "sgd":
        return torch.optim.SGD(model.parameters(), lr=hp.lr, momentum=hp.momentum,
                               weight_decay=hp.weight_decay)
    if hp.optimizer == "adam":
        return torch.optim.Adam(model.parameters(), lr=hp.lr, weight_decay=hp.weight_decay)
    raise ValueError(f"unknown optimizer {hp.optimizer!r}")


def _loss_and_accuracy(model, loader, norm):
    model.eval()
    total, correct, loss_sum = 0, 0, 0.0
    with torch.no_grad():
        for x, y in loader:
            logits = model(x)
            loss_sum += float(batch_loss(logits, y, norm)) * len(y)
            correct += int((logits.argmax(1) == y).sum())
            total += len(y)
    return loss_sum / max(total, 1), correct / max(total, 1)


def fit(model: nn.Module, train_data: Dataset, val_data: Optional[Dataset], hp: Hyperparams,
        on_epoch: Optional[Callable[[dict], None]] = None) -> TrainResult:
    """Minibatch training on the cross-entropy; keeps the best validation state.

    Each history entry holds the epoch's mean training loss and accuracy
    (as seen during the epoch) and, with validation data, eval-mode loss and
    accuracy.  Raises :class:`DivergenceError` on a non-finite loss.
    """
    seed_everything(hp.seed)
    gen = torch.Generator().manual_seed(hp.seed)
    if hp.augment:
        train_data = OnlineAugment(train_data, hp.augment, hp.seed)
    loader = DataLoader(train_data, batch_size=hp.batch_size, shuffle=hp.shuffle,
                        generator=gen, num_workers=0)
    val_loader = (DataLoader(val_data, batch_size=max(hp.batch_size, 16), shuffle=False)
                  if val_data is not None and len(val_data) else None)
    opt = _make_optimizer(model, hp)
    sched = (torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=max(hp.epochs, 1))
             if hp.schedule == "cosine" else None)
    history: List[dict] = []
    best_state = copy.deepcopy(model.state_dict())
    best_key, best_epoch = None, -1
    for epoch in range(hp.epochs):
        if isinstance(train_data, OnlineAugment):
            train_data.set_epoch(epoch)
        model.train()
        total, correct, loss_sum = 0, 0, 0.0
        for x, y in loader:
            logits = model(x)
            loss = batch_loss(logits, y, hp.loss_norm)
            if not torch.isfinite(loss):
                result = TrainResult(history, best_state, best_epoch, model, diverged=True)
                model.load_state_dict(best_state)
                raise DivergenceError(f"non-finite loss at epoch {epoch}", result)
            opt.zero_grad()
            loss.backward()
            opt.step()
            loss_sum += float(loss.detach()) * len(y)
            correct += int((logits.detach().argmax(1) == y).sum())
            total += len(y)
        row = {"epoch": epoch, "lr": opt.param_groups[0]["lr"],
               "train_loss": loss_sum / total, "train_acc": correct / total}
        if sched is not None:
            sched.step()
        if val_loader is not None:
            row["val_loss"], row["val_acc"] = _loss_and_accuracy(model, val_loader, hp.loss_norm)
            key = (row["val_acc"], -row["val_loss"])
        else:
            key = (epoch,)
        if best_key is None or key > best_key:
            best_key, best_epoch = key, epoch
            best_state = copy.deepcopy(model.state_dict())
        history.append(row)
        if on_epoch is not None:
            on_epoch(row)
    model.load_state_dict(best_state)
    return TrainResult(history, best_state, best_epoch, model)


def train(cfg: ModelConfig, train_data: Dataset, val_data: Optional[Dataset],
          hp: Hyperparams, on_epoch=None) -> TrainResult:
    seed_everything(hp.seed)
    model = build_model(cfg)
    return fit(model, train_data, val_data, hp, on_epoch)


# -- evaluation -------------------------------------------------------------------

def confusion_counts(y_true: Sequence[int], y_pred: Sequence[int],
                     num_classes: int = NUM_CLASSES) -> np.ndarray:
    """Counts with rows = ground truth and columns = prediction."""
    m = np.zeros((num_classes, num_classes), dtype=np.int64)
    for t, p in zip(y_true, y_pred):
        m[int(t), int(p)] += 1
    return m


def accuracy_from_confusion(counts: np.ndarray) -> float:
    counts = np.asarray(counts, dtype=np.float64)
    return float(np.trace(counts) / counts.sum())


def row_percentages(counts: np.ndarray) -> np.ndarray:
    counts = np.asarray(counts, dtype=np.float64)
    rows = counts.sum(axis=1, keepdims=True)
    return np.divide(100.0 * counts, rows, out=np.zeros_like(counts), where=rows > 0)


@dataclass
class FoldEval:
    accuracy: float
    confusion: np.ndarray  # counts
    y_true: List[int]
    y_pred: List[int]


def predict(model: nn.Module, data: Dataset, batch_size: int = 16) -> np.ndarray:
    model.eval()
    preds = []
    with torch.no_grad():
        for x, _ in DataLoader(data, batch_size=batch_size, shuffle=False):
            preds.append(model(x).argmax(1).numpy())
    return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)


def evaluate(model: nn.Module, data: Dataset, num_classes: int = NUM_CLASSES) -> FoldEval:
    """Top-1 accuracy (correct predictions over all samples) and confusion counts."""
    if len(data) == 0:
        raise ValueError("empty validation set")
    y_true = [int(data[i][1]) for i in range(len(data))] if not hasattr(data, "y") \
        else [int(v) for v in data.y]
    y_pred = [int(v) for v in predict(model, data)]
    cm = confusion_counts(y_true, y_pred, num_classes)
    return FoldEval(accuracy_from_confusion(cm), cm, y_true, y_pred)


@dataclass
class EvalReport:
    per_fold_accuracy: List[float]
    confusion_counts: np.ndarray

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean(self.per_fold_accuracy))

    @property
    def confusion(self) -> np.ndarray:
        """Row-normalised percentages (rows = ground truth LK/LLC/RLC)."""
        return row_percentages(self.confusion_counts)

    @classmethod
    def from_folds(cls, folds: Sequence[FoldEval]) -> "EvalReport":
        total = sum((f.confusion for f in folds), np.zeros_like(folds[0].confusion))
        return cls([f.accuracy for f in folds], total)

    def to_dict(self) -> dict:
        return {"per_fold_accuracy": self.per_fold_accuracy,
                "mean_accuracy": self.mean_accuracy,
                "confusion_counts": self.confusion_counts.tolist(),
                "confusion_percent": np.round(self.confusion, 4).tolist()}


@dataclass
class CVResult:
    report: EvalReport
    folds: List[FoldEval]
    runs: List[TrainResult]
    split: FoldSplit


def cross_validate(cfg: ModelConfig, data: Dataset, hp: Hyperparams, k: int = 4,
                   split_seed: int = 0, groups: Optional[Sequence] = None,
                   folds: Optional[Sequence[int]] = None, on_epoch=None) -> CVResult:
    """Train one model per fold and evaluate each on its held-out fold."""
    split = kfold_split(list(data.y), k, split_seed, groups)
    evals, runs = [], []
    for fold in (range(k) if folds is None else folds):
        tr = data.subset(split.train_indices(fold))
        va = data.subset(split.val_indices(fold))
        cb = (lambda row, fold=fold: on_epoch(dict(row, fold=fold))) if on_epoch else None
        res = train(cfg, tr, va, hp, cb)
        runs.append(res)
        evals.append(evaluate(res.model, va, cfg.num_classes))
        log.info("fold %d: accuracy %.4f", fold, evals[-1].accuracy)
    return CVResult(EvalReport.from_folds(evals), evals, runs, split)


# -- checkpoints ------------------------------------------------------------------

def save_checkpoint(path: Union[str, Path], model: nn.Module, cfg: ModelConfig,
                    hp: Optional[Hyperparams] = None, **extra) -> None:
    torch.save({"config": cfg.to_dict(), "state_dict": model.state_dict(),
                "hyperparams": asdict(hp) if hp else None, **extra}, path)


def load_checkpoint(path: Union[str, Path]):
    """Returns ``(model, checkpoint dict)`` with the model in eval mode."""
    ckpt = torch.load(path, map_location="cpu", weights_only=False)
    cfg = ModelConfig.from_dict(ckpt["config"])
    model = build_model(cfg)
    model.load_state_dict(ckpt["state_dict"])
    model.eval()
    return model, ckpt
