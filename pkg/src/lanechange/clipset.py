"""Turning annotated recordings into fixed-shape labelled clips.

A lane-change sample spans ``[f0 - N, f1 - TTE)``: ``N`` observation frames
before the maneuver starts, truncated ``TTE`` frames before the vehicle
reaches the lane marking.  Every window is resampled to the same number of
frames, center-cropped from 1920x600 to 1600x600 and resized to a square.
"""

from __future__ import annotations

import json
import logging
import math
import os
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Union

import cv2
import numpy as np

from .annotations import (LANE_KEEP, LEFT_CHANGE, RIGHT_CHANGE, LaneChangeEvent,
                          Record, find_records, load_record)
from .bbencode import SOURCE_SIZE, CROP_WIDTH, encode_clip

log = logging.getLogger(__name__)

CLIP_FRAMES = 32
CLIP_SIZE = 400
AVERAGE_EVENT_FRAMES = 20  # mean f1 - f0 at 10 FPS
AUG_OPS = frozenset({"crop", "rotate", "jitter", "hflip"})


@dataclass(frozen=True)
class DatasetVariant:
    observation_frames: int = 40
    tte_frames: int = 0

    def __post_init__(self):
        if self.observation_frames <= 0:
            raise ValueError("observation_frames must be positive")
        if not 0 <= self.tte_frames <= 20:
            raise ValueError("tte_frames must lie in [0, 20]")

    @property
    def name(self) -> str:
        return f"N{self.observation_frames}-TTE{self.tte_frames:02d}"

    @property
    def nominal_length(self) -> int:
        """Window length for an event of average duration."""
        return self.observation_frames + AVERAGE_EVENT_FRAMES - self.tte_frames


VARIANTS = {
    "tte00": DatasetVariant(40, 0),
    "tte10": DatasetVariant(40, 10),
    "tte20": DatasetVariant(40, 20),
}


@dataclass(frozen=True)
class FrameWindow:
    start: int  # inclusive
    end: int  # exclusive

    def __post_init__(self):
        if not self.start < self.end:
            raise ValueError(f"empty window [{self.start}, {self.end})")

    def __len__(self) -> int:
        return self.end - self.start

    def overlaps(self, lo: int, hi: int) -> bool:
        """True if the window shares a frame with the closed span ``[lo, hi]``."""
        return self.start <= hi and lo < self.end


class WindowError(ValueError):
    pass


def compute_window(event: LaneChangeEvent, variant: DatasetVariant,
                   first_frame: int = 0) -> FrameWindow:
    start = event.f0 - variant.observation_frames
    end = event.f1 - variant.tte_frames
    if start < first_frame:
        raise WindowError(
            f"event at f0={event.f0} lacks {variant.observation_frames} frames of history")
    if end < event.f0 or end <= start:
        # the clip would stop before the maneuver starts
        raise WindowError(
            f"degenerate window [{start}, {end}) for f0={event.f0}, f1={event.f1}, "
            f"TTE={variant.tte_frames}")
    return FrameWindow(start, end)


def temporal_resample(f_in: int, f_out: int) -> List[int]:
    """Source index for each output frame, sampling at bin centers."""
    if f_in < 1 or f_out < 1:
        raise ValueError("f_in and f_out must be >= 1")
    return [min(f_in - 1, ((2 * k + 1) * f_in) // (2 * f_out)) for k in range(f_out)]


# -- spatial preprocessing ---------------------------------------------------

def center_crop(frame: np.ndarray, crop_width: int = CROP_WIDTH) -> np.ndarray:
    off = (frame.shape[1] - crop_width) // 2
    return frame[:, off:off + crop_width]


def spatial_preprocess(frame: np.ndarray, size: int = CLIP_SIZE,
                       any_resolution: bool = False) -> np.ndarray:
    """Crop/resize one ``H x W x 3`` frame to ``size x size`` float in [0, 1]."""
    h, w = frame.shape[:2]
    if (w, h) != SOURCE_SIZE:
        if not any_resolution:
            raise ValueError(f"expected {SOURCE_SIZE[0]}x{SOURCE_SIZE[1]} frames, got {w}x{h}")
        frame = cv2.resize(frame, SOURCE_SIZE, interpolation=cv2.INTER_LINEAR)
    img = np.ascontiguousarray(center_crop(frame))
    if img.dtype == np.uint8:
        img = img.astype(np.float32) / 255.0
    else:
        img = img.astype(np.float32)
    img = cv2.resize(img, (size, size), interpolation=cv2.INTER_LINEAR)
    return np.clip(img, 0.0, 1.0)


def preprocess(raw_frames: Sequence[np.ndarray], num_frames: int = CLIP_FRAMES,
               size: int = CLIP_SIZE, any_resolution: bool = False) -> np.ndarray:
    """Raw 1920x600 RGB frames -> ``F x 3 x size x size`` float32 clip."""
    idx = temporal_resample(len(raw_frames), num_frames)
    frames = [spatial_preprocess(raw_frames[i], size, any_resolution) for i in idx]
    return np.stack(frames).transpose(0, 3, 1, 2).copy()


def downscale(clip: np.ndarray, size: int) -> np.ndarray:
    """Resize an ``F x C x H x W`` clip spatially (area interpolation)."""
    if clip.shape[-1] == size and clip.shape[-2] == size:
        return clip
    frames = [cv2.resize(np.ascontiguousarray(f.transpose(1, 2, 0)), (size, size),
                         interpolation=cv2.INTER_AREA) for f in clip]
    out = np.stack(frames)
    if out.ndim == 3:
        out = out[..., None]
    return out.transpose(0, 3, 1, 2).astype(np.float32)


# -- lane-keep sampling -------------------------------------------------------

def sample_lane_keeping(num_frames: int, events: Iterable[LaneChangeEvent],
                        variant: DatasetVariant, count: int, seed: int,
                        length: Optional[int] = None) -> List[FrameWindow]:
    """Draw ``count`` lane-keep windows clear of every event's ``[f0 - N, f2]``."""
    length = length or variant.nominal_length
    if num_frames < length:
        log.warning("record of %d frames is shorter than a %d-frame window", num_frames, length)
        return []
    spans = [(e.f0 - variant.observation_frames, e.f2) for e in events]
    starts = [s for s in range(num_frames - length + 1)
              if all(not (s <= hi and lo < s + length) for lo, hi in spans)]
    if len(starts) < count:
        log.warning("only %d lane-keep windows available, %d requested", len(starts), count)
        count = len(starts)
    rng = np.random.default_rng(seed)
    chosen = sorted(rng.choice(len(starts), size=count, replace=False).tolist())
    return [FrameWindow(starts[i], starts[i] + length) for i in chosen]


# -- clips and augmentation ---------------------------------------------------

@dataclass
class Clip:
    data: np.ndarray  # F x C x H x W, float32 in [0, 1]
    label: int
    record: str = ""
    maneuver: Union[int, str] = "LK"
    window: Optional[FrameWindow] = None
    bb: bool = False
    aug_seed: Optional[int] = None


def swap_lr(label: int) -> int:
    return {LEFT_CHANGE: RIGHT_CHANGE, RIGHT_CHANGE: LEFT_CHANGE}.get(label, label)


def hflip(clip: Clip) -> Clip:
    return replace(clip, data=clip.data[..., ::-1].copy(), label=swap_lr(clip.label))


def _warp_frames(data: np.ndarray, matrix: np.ndarray) -> np.ndarray:
    f, c, h, w = data.shape
    out = np.empty_like(data)
    for i in range(f):
        img = np.ascontiguousarray(data[i].transpose(1, 2, 0))
        warped = cv2.warpAffine(img, matrix, (w, h), flags=cv2.INTER_LINEAR,
                                borderMode=cv2.BORDER_REPLICATE)
        if warped.ndim == 2:
            warped = warped[..., None]
        out[i] = warped.transpose(2, 0, 1)
    return out


def _random_crop(data: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    f, c, h, w = data.shape
    side = math.sqrt(rng.uniform(0.9, 1.0))
    ch, cw = max(1, int(round(h * side))), max(1, int(round(w * side)))
    y, x = int(rng.integers(0, h - ch + 1)), int(rng.integers(0, w - cw + 1))
    cropped = data[:, :, y:y + ch, x:x + cw]
    frames = [cv2.resize(np.ascontiguousarray(fr.transpose(1, 2, 0)), (w, h),
                         interpolation=cv2.INTER_LINEAR) for fr in cropped]
    out = np.stack(frames)
    if out.ndim == 3:
        out = out[..., None]
    return out.transpose(0, 3, 1, 2)


def _rotate(data: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    h, w = data.shape[-2:]
    angle = rng.uniform(-5.0, 5.0)
    m = cv2.getRotationMatrix2D(((w - 1) / 2.0, (h - 1) / 2.0), angle, 1.0)
    return _warp_frames(data, m)


def _jitter(data: np.ndarray, rng: np.random.Generator, channels) -> np.ndarray:
    brightness = rng.uniform(0.8, 1.2)
    contrast = rng.uniform(0.8, 1.2)
    out = data.copy()
    sel = out[:, channels]
    mean = sel.mean()
    out[:, channels] = ((sel - mean) * contrast + mean) * brightness
    return out


def augment(clip: Clip, seed: int, ops: Iterable[str] = AUG_OPS, p: float = 0.5) -> Clip:
    """Apply each op in ``ops`` with probability ``p``, identically to every frame.

    A horizontal flip mirrors the scene, so left and right lane-change labels
    are swapped.  On RGB+BB clips the colour jitter only touches the
    grayscale (red) channel so box channels keep their meaning.
    """
    ops = set(ops)
    unknown = ops - AUG_OPS
    if unknown:
        raise ValueError(f"unknown augmentation ops {sorted(unknown)}")
    rng = np.random.default_rng(seed)
    # draw all coin flips up front so each op's randomness is independent of the others
    apply = {op: rng.random() < p for op in sorted(AUG_OPS)}
    data = clip.data.astype(np.float32, copy=True)
    label = clip.label
    if "crop" in ops and apply["crop"]:
        data = _random_crop(data, rng)
    if "rotate" in ops and apply["rotate"]:
        data = _rotate(data, rng)
    if "jitter" in ops and apply["jitter"]:
        data = _jitter(data, rng, [0] if clip.bb else slice(None))
    if "hflip" in ops and apply["hflip"]:
        data = data[..., ::-1]
        label = swap_lr(label)
    data = np.clip(data, 0.0, 1.0).astype(np.float32)
    return replace(clip, data=np.ascontiguousarray(data), label=label, aug_seed=seed)


# -- extraction from recordings ----------------------------------------------

FrameGetter = Callable[[int], np.ndarray]


def directory_frames(frames_dir: Union[str, Path]) -> FrameGetter:
    """Frame loader for a directory of images named by frame index."""
    paths = sorted(p for p in Path(frames_dir).iterdir()
                   if p.suffix.lower() in (".png", ".jpg", ".jpeg"))
    by_index = {int(p.stem.split("_")[-1]): p for p in paths}

    def get(i: int) -> np.ndarray:
        img = cv2.imread(str(by_index[i]), cv2.IMREAD_COLOR)
        if img is None:
            raise IOError(f"cannot read frame {by_index[i]}")
        return cv2.cvtColor(img, cv2.COLOR_BGR2RGB)

    return get


def extract_clip(get_frame: FrameGetter, window: FrameWindow, label: int, *,
                 detections_by_frame: Optional[Dict[int, list]] = None,
                 target_id: Optional[int] = None, bb: bool = False,
                 num_frames: int = CLIP_FRAMES, size: int = CLIP_SIZE,
                 out_size: Optional[int] = None, any_resolution: bool = False,
                 record: str = "", maneuver: Union[int, str] = "LK") -> Clip:
    """Cut, preprocess and optionally box-encode one window.

    ``out_size`` downsizes the preprocessed clip further (area filter) for
    small models; boxes are always drawn at ``size`` first.
    """
    idx = [window.start + i for i in temporal_resample(len(window), num_frames)]
    frames = [spatial_preprocess(get_frame(i), size, any_resolution) for i in idx]
    if bb:
        dets = detections_by_frame or {}
        data = encode_clip(frames, [dets.get(i, []) for i in idx], target_id)
    else:
        data = np.stack(frames).transpose(0, 3, 1, 2)
    data = np.ascontiguousarray(data, dtype=np.float32)
    if out_size is not None:
        data = downscale(data, out_size)
    return Clip(np.clip(data, 0.0, 1.0), label, record, maneuver, window, bb)


@dataclass
class SampleSpec:
    """Everything needed to extract one clip; picklable for worker processes."""

    record_root: str
    record: str
    window: FrameWindow
    label: int
    maneuver: Union[int, str]
    target_id: Optional[int]


def record_samples(rec: Record, variant: DatasetVariant, lk_count: int,
                   seed: int) -> List[SampleSpec]:
    out = []
    for ev in rec.events:
        try:
            win = compute_window(ev, variant)
        except WindowError as exc:
            log.warning("%s: rejecting maneuver %d: %s", rec.name, ev.maneuver_id, exc)
            continue
        if win.end > rec.num_frames:
            log.warning("%s: maneuver %d runs past the last frame", rec.name, ev.maneuver_id)
            continue
        out.append(SampleSpec(str(rec.root), rec.name, win, ev.label, ev.maneuver_id,
                              ev.maneuver_id))
    for win in sample_lane_keeping(rec.num_frames, rec.events, variant, lk_count, seed):
        out.append(SampleSpec(str(rec.root), rec.name, win, LANE_KEEP, "LK", None))
    return out


def _clip_name(s: SampleSpec, copy: int) -> str:
    tag = s.maneuver if s.maneuver != "LK" else f"lk{s.window.start}"
    return f"{s.record}_{tag}_c{copy}.npz"


def save_clip(clip: Clip, path: Union[str, Path]) -> None:
    """Clips are stored as uint8 ``F x C x H x W`` (value * 255) in an npz."""
    q = np.round(clip.data * 255.0).astype(np.uint8)
    np.savez_compressed(path, data=q, label=np.int64(clip.label))


def load_clip_array(path: Union[str, Path]) -> np.ndarray:
    with np.load(path) as z:
        return z["data"].astype(np.float32) / 255.0


def _build_one(args) -> List[dict]:
    spec, out_dir, variant_name, bb, copies, num_frames, size, out_size, seed = args
    rec = load_record(spec.record_root)
    clip = extract_clip(directory_frames(rec.frames_dir), spec.window, spec.label,
                        detections_by_frame=rec.detections_by_frame(),
                        target_id=spec.target_id, bb=bb, num_frames=num_frames,
                        size=size, out_size=out_size, record=spec.record,
                        maneuver=spec.maneuver)
    rows = []
    source_id = f"{spec.record}:{spec.maneuver}:{spec.window.start}"
    for copy in range(copies + 1):
        aug_seed = None
        c = clip
        if copy:
            aug_seed = (seed * 1_000_003 + zlib.crc32(source_id.encode()) + copy) % 2**32
            c = augment(clip, aug_seed)
        path = Path(out_dir) / _clip_name(spec, copy)
        save_clip(c, path)
        rows.append({
            "clip": path.name, "label": int(c.label), "variant": variant_name,
            "record": spec.record, "maneuver": spec.maneuver,
            "window": [spec.window.start, spec.window.end],
            "aug_seed": aug_seed, "bb": bb, "source_id": source_id,
            "frames": num_frames, "size": out_size or size,
        })
    return rows


def worker_count(default: int = 1) -> int:
    try:
        return max(1, int(os.environ.get("LANECHANGE_WORKERS", default)))
    except ValueError:
        return default


def build_dataset(input_dir: Union[str, Path], out_dir: Union[str, Path],
                  variant: str = "tte00", seed: int = 0, lk_per_record: int = 1,
                  bb: bool = False, aug_copies: int = 3, num_frames: int = CLIP_FRAMES,
                  size: int = CLIP_SIZE, out_size: Optional[int] = None,
                  workers: Optional[int] = None) -> Path:
    """Extract every sample under ``input_dir`` into ``out_dir``.

    Writes one ``.npz`` per clip and ``manifest.jsonl`` listing them.
    """
    var = VARIANTS[variant]
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    specs = []
    for i, root in enumerate(find_records(input_dir)):
        specs.extend(record_samples(load_record(root), var, lk_per_record, seed + i))
    jobs = [(s, str(out_dir), variant, bb, aug_copies, num_frames, size, out_size, seed)
            for s in specs]
    workers = workers or worker_count()
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_build_one, jobs))
    else:
        results = [_build_one(j) for j in jobs]
    manifest = out_dir / "manifest.jsonl"
    with open(manifest, "w", encoding="utf-8") as fh:
        for rows in results:
            for row in rows:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
    return manifest


def read_manifest(path: Union[str, Path]) -> List[dict]:
    path = Path(path)
    rows = []
    with open(path, encoding="utf-8") as fh:
        for ln in fh:
            if ln.strip():
                row = json.loads(ln)
                row["path"] = str(path.parent / row["clip"])
                rows.append(row)
    return rows
