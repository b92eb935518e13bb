"""Desk-scale experiments on procedurally generated scenes.

These build small labelled clip sets in memory (no files) and run the same
training and evaluation code the CLI uses on real datasets.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import synthgen
from .annotations import LANE_KEEP, LEFT_CHANGE, RIGHT_CHANGE
from .clipset import (VARIANTS, DatasetVariant, compute_window, extract_clip,
                      sample_lane_keeping, temporal_resample)
from .models import desk_config
from .training import ArrayClips, CVResult, Hyperparams, cross_validate

log = logging.getLogger(__name__)


@dataclass
class DeskSet:
    """An in-memory clip set plus the bookkeeping experiments need."""

    x: np.ndarray  # N x F x C x H x W uint8
    y: np.ndarray
    groups: List[str]
    maneuver_frames: np.ndarray  # N x F bool: clip frame shows the maneuver
    seeds: List[int]
    bb: bool

    def dataset(self) -> ArrayClips:
        return ArrayClips(self.x, self.y, self.bb)

    def __len__(self):
        return len(self.y)


def desk_set(per_class: int = 100, seed: int = 0, variant: DatasetVariant = VARIANTS["tte00"],
             bb: bool = False, num_frames: int = 16, size: int = 48, distractors: int = 2,
             distractor_wobble: float = 0.0, noise: float = 0.0) -> DeskSet:
    """``per_class`` clips of each label, each from its own random scene."""
    xs, ys, groups, masks, seeds = [], [], [], [], []
    for label in (LANE_KEEP, LEFT_CHANGE, RIGHT_CHANGE):
        for i in range(per_class):
            scene_seed = seed * 1_000_003 + label * 100_003 + i
            spec = synthgen.random_scene(scene_seed, label, distractors=distractors,
                                         distractor_wobble=distractor_wobble, noise=noise)
            scene = synthgen.generate(spec)
            if scene.events:
                ev = scene.events[0]
                win = compute_window(ev, variant)
                target = ev.maneuver_id
                lo, hi = ev.f0, ev.f2
            else:
                rng_seed = scene_seed % 2**32
                win = sample_lane_keeping(spec.total_frames, [], variant, 1, rng_seed)[0]
                target, lo, hi = None, 1, 0
            by_frame: Dict[int, list] = {}
            for d in scene.detections:
                by_frame.setdefault(d.frame, []).append(d)
            clip = extract_clip(lambda t: scene.frames[t], win, label,
                                detections_by_frame=by_frame, target_id=target, bb=bb,
                                num_frames=num_frames, out_size=size,
                                record=f"synth{scene_seed}")
            src = np.array([win.start + k for k in temporal_resample(len(win), num_frames)])
            xs.append(np.round(clip.data * 255.0).astype(np.uint8))
            ys.append(label)
            groups.append(clip.record)
            masks.append((src >= lo) & (src <= hi))
            seeds.append(scene_seed)
    return DeskSet(np.stack(xs), np.array(ys, dtype=np.int64), groups, np.stack(masks),
                   seeds, bb)


# Adam with online flips and crops; SlowFast's thin fast pathway needs longer.
DESK_HYPERPARAMS = Hyperparams(epochs=30, batch_size=8, lr=1e-3, optimizer="adam",
                               weight_decay=0.0, augment=("hflip", "crop"))
DESK_OVERRIDES = {
    "I3D": {},
    "SlowFast": {"epochs": 40},
    "X3D": {"lr": 3e-3},
}


def desk_hyperparams(family: str, **overrides) -> Hyperparams:
    return replace(DESK_HYPERPARAMS, **{**DESK_OVERRIDES[family], **overrides})


def desk_cv(family: str, data: DeskSet, hp: Optional[Hyperparams] = None, k: int = 4,
            split_seed: int = 0, folds: Optional[Sequence[int]] = None,
            temporal_pool_kernel: Optional[int] = None, on_epoch=None,
            **model_kw) -> CVResult:
    hp = hp or desk_hyperparams(family)
    _, f, c, s, _ = data.x.shape
    cfg = desk_config(family, input_frames=f, input_size=s, in_channels=c,
                      temporal_pool_kernel=temporal_pool_kernel, **model_kw)
    return cross_validate(cfg, data.dataset(), hp, k, split_seed, data.groups, folds, on_epoch)


@dataclass
class AblationRow:
    kernel: int
    accuracies: List[float]
    histories: List[List[dict]] = field(default_factory=list)

    @property
    def mean(self) -> float:
        return float(np.mean(self.accuracies))


def kernel_ablation(family: str, data: DeskSet, kernels: Sequence[int],
                    seeds: Sequence[int] = (0, 1, 2), hp: Optional[Hyperparams] = None,
                    k: int = 4, fold: int = 0) -> List[AblationRow]:
    """Accuracy per temporal pool kernel; one held-out fold per seed.

    The seed drives both the fold assignment and the training run, so each
    kernel sees exactly the same splits and initialisations.
    """
    hp = hp or desk_hyperparams(family)
    rows = []
    for kern in kernels:
        row = AblationRow(kern, [])
        for s in seeds:
            res = desk_cv(family, data, replace(hp, seed=s), k, split_seed=s, folds=[fold],
                          temporal_pool_kernel=kern)
            row.accuracies.append(res.report.per_fold_accuracy[0])
            row.histories.append(res.runs[0].history)
        rows.append(row)
        log.info("kernel %d: %s", kern, row.accuracies)
    return rows
