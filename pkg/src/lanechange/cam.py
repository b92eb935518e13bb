"""Class activation maps over the last convolutional features.

The classifier head is applied at every position of the unpooled feature
grid, which for a head ending in global average pooling is exactly the plain
CAM projection.  Scores for the requested class are min-max normalised over
all positions and frames at once.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import List, Union

import cv2
import matplotlib
import numpy as np
import torch
import torch.nn.functional as F

from .clipset import temporal_resample


@dataclass
class ActivationMap:
    scores: np.ndarray  # T' x h x w, normalised to [0, 1]
    upsampled: np.ndarray  # F x H x W
    target_class: int
    raw: np.ndarray  # T' x h x w before normalisation

    def frame_profile(self) -> np.ndarray:
        """Per-input-frame sum of the upsampled map."""
        return self.upsampled.reshape(len(self.upsampled), -1).sum(axis=1)

    def temporal_peak(self) -> int:
        return int(np.argmax(self.frame_profile()))

    def peak(self) -> tuple:
        """``(t, y, x)`` of the largest coarse score."""
        return tuple(int(v) for v in np.unravel_index(np.argmax(self.scores), self.scores.shape))


def normalize(scores: np.ndarray) -> np.ndarray:
    """Joint min-max scaling; an all-equal grid maps to zeros."""
    scores = np.asarray(scores, dtype=np.float64)
    lo, hi = scores.min(), scores.max()
    if hi <= lo:
        return np.zeros_like(scores)
    return (scores - lo) / (hi - lo)


def compute_cam(model, clip: Union[np.ndarray, torch.Tensor], target_class: int) -> ActivationMap:
    """CAM of ``clip`` (``F x C x H x W``) for ``target_class``."""
    if not hasattr(model, "class_score_grid"):
        raise TypeError(f"{type(model).__name__} has no convolutional feature grid")
    num_classes = model.head.fc.out_features
    if not 0 <= int(target_class) < num_classes:
        raise ValueError(f"target class {target_class} outside [0, {num_classes})")
    x = torch.as_tensor(np.ascontiguousarray(clip), dtype=torch.float32)[None]
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            grid = model.class_score_grid(x)[0, ..., int(target_class)]
    finally:
        model.train(was_training)
    raw = grid.double().numpy()
    scores = normalize(raw)
    n_frames, height, width = x.shape[1], x.shape[3], x.shape[4]
    idx = temporal_resample(scores.shape[0], n_frames)
    coarse = torch.from_numpy(scores[idx])[:, None]
    up = F.interpolate(coarse, size=(height, width), mode="bilinear", align_corners=False)
    up = up[:, 0].clamp(0.0, 1.0).numpy()
    return ActivationMap(scores, up, int(target_class), raw)


def _frame_rgb(frame: np.ndarray) -> np.ndarray:
    """``C x H x W`` frame in [0, 1] (or uint8) -> ``H x W x 3`` float in [0, 1]."""
    f = np.asarray(frame)
    f = f.astype(np.float64) / 255.0 if f.dtype == np.uint8 else f.astype(np.float64)
    f = np.moveaxis(f, 0, -1)
    if f.shape[-1] == 1:
        f = np.repeat(f, 3, axis=-1)
    return np.clip(f[..., :3], 0.0, 1.0)


def overlay(frame: np.ndarray, heat: np.ndarray, alpha: float = 0.5,
            cmap: str = "jet") -> np.ndarray:
    """Alpha-blend a colour-mapped heat map onto one frame; returns uint8 RGB."""
    colours = matplotlib.colormaps[cmap](heat)[..., :3]
    blend = (1.0 - alpha) * _frame_rgb(frame) + alpha * colours
    return np.round(blend * 255.0).astype(np.uint8)


def export_cam(amap: ActivationMap, clip: np.ndarray, path: Union[str, Path],
               alpha: float = 0.5, cmap: str = "jet") -> List[Path]:
    """Write one overlay PNG per frame (``cam_000.png`` ...) into ``path``."""
    clip = np.asarray(clip)
    if len(clip) != len(amap.upsampled) or clip.shape[2:] != amap.upsampled.shape[1:]:
        raise ValueError(f"clip {clip.shape} does not match map {amap.upsampled.shape}")
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for i, (frame, heat) in enumerate(zip(clip, amap.upsampled)):
        p = out / f"cam_{i:03d}.png"
        rgb = overlay(frame, heat, alpha, cmap)
        if not cv2.imwrite(str(p), cv2.cvtColor(rgb, cv2.COLOR_RGB2BGR)):
            raise OSError(f"could not write {p}")
        written.append(p)
    return written
