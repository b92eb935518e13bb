"""RGB+BB frame encoding.

The red channel carries the scene as grayscale, the green channel the outline
of the target vehicle and the blue channel the outlines of every other
vehicle.  Boxes come in source coordinates and follow the same center crop
and resize the frames went through.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np

from .annotations import Detection

SOURCE_SIZE = (1920, 600)  # (width, height)
CROP_WIDTH = 1600
OUTLINE_PX = 3
OUTLINE_REF_SIZE = 400

Box = Tuple[float, float, float, float]


@dataclass
class EncodedFrame:
    data: np.ndarray  # 3 x H x W, float32 in [0, 1]
    target_id: Optional[int]


def luma(frame: np.ndarray) -> np.ndarray:
    """BT.601 luma of an ``H x W x 3`` RGB image."""
    frame = np.asarray(frame, dtype=np.float32)
    return (0.299 * frame[..., 0] + 0.587 * frame[..., 1]
            + 0.114 * frame[..., 2]).astype(np.float32)


def transform_bbox(bbox: Box, out_size: Tuple[int, int] = (400, 400),
                   source_size: Tuple[int, int] = SOURCE_SIZE,
                   crop_width: int = CROP_WIDTH) -> Optional[Box]:
    """Map a source-resolution box into the cropped and resized frame.

    ``out_size`` is ``(width, height)``.  Returns None when nothing of the box
    survives the crop.
    """
    src_w, src_h = source_size
    out_w, out_h = out_size
    off = (src_w - crop_width) / 2.0
    sx, sy = out_w / crop_width, out_h / src_h
    x0, y0, x1, y1 = bbox
    x0, x1 = (x0 - off) * sx, (x1 - off) * sx
    y0, y1 = y0 * sy, y1 * sy
    x0, x1 = max(x0, 0.0), min(x1, float(out_w))
    y0, y1 = max(y0, 0.0), min(y1, float(out_h))
    if x1 <= x0 or y1 <= y0:
        return None
    return (x0, y0, x1, y1)


def outline_thickness(height: int, width: int) -> int:
    return max(1, round(OUTLINE_PX * min(height, width) / OUTLINE_REF_SIZE))


def box_pixels(box: Box) -> Tuple[int, int, int, int]:
    """Integer half-open pixel extent of a float box."""
    x0, y0, x1, y1 = box
    return (int(math.floor(x0 + 0.5)), int(math.floor(y0 + 0.5)),
            int(math.floor(x1 + 0.5)), int(math.floor(y1 + 0.5)))


def draw_outline(canvas: np.ndarray, box: Box, thickness: int, value: float = 1.0) -> None:
    """Paint a ``thickness``-wide inner border of ``box`` into a 2-D canvas."""
    h, w = canvas.shape
    X0, Y0, X1, Y1 = box_pixels(box)
    X0, Y0 = max(X0, 0), max(Y0, 0)
    X1, Y1 = min(X1, w), min(Y1, h)
    if X1 <= X0 or Y1 <= Y0:
        return
    t = thickness
    canvas[Y0:min(Y0 + t, Y1), X0:X1] = value
    canvas[max(Y1 - t, Y0):Y1, X0:X1] = value
    canvas[Y0:Y1, X0:min(X0 + t, X1)] = value
    canvas[Y0:Y1, max(X1 - t, X0):X1] = value


def encode_frame(frame: np.ndarray, detections: Iterable[Detection],
                 target_id: Optional[int],
                 source_size: Tuple[int, int] = SOURCE_SIZE) -> EncodedFrame:
    """Encode one preprocessed ``H x W x 3`` frame with its source-space boxes."""
    frame = np.asarray(frame, dtype=np.float32)
    h, w = frame.shape[:2]
    t = outline_thickness(h, w)
    out = np.zeros((3, h, w), dtype=np.float32)
    out[0] = luma(frame)
    for det in detections:
        box = transform_bbox(det.bbox, (w, h), source_size)
        if box is None:
            continue
        channel = 1 if target_id is not None and det.object_id == target_id else 2
        draw_outline(out[channel], box, t)
    return EncodedFrame(out, target_id)


class TargetMissingError(ValueError):
    pass


def encode_clip(frames: np.ndarray, detections_per_frame: Sequence[Sequence[Detection]],
                target_id: Optional[int],
                source_size: Tuple[int, int] = SOURCE_SIZE) -> np.ndarray:
    """Encode an ``F x H x W x 3`` clip; returns ``F x 3 x H x W``.

    A lane-change clip whose target never shows up is rejected.  Pass
    ``target_id=None`` for lane-keep clips, which get an empty green channel.
    """
    if target_id is not None and not any(
            d.object_id == target_id for dets in detections_per_frame for d in dets):
        raise TargetMissingError(f"target track {target_id} absent from every frame")
    return np.stack([encode_frame(f, dets, target_id, source_size).data
                     for f, dets in zip(frames, detections_per_frame)])
