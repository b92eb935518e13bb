"""Procedural highway scenes with exact lane-change ground truth.

The road is drawn as vertical lanes across a 1920x600 frame; the vertical
axis stands in for distance ahead, so longitudinal motion moves a vehicle up
or down and a lane change moves it sideways.  A maneuvering vehicle follows a
normalised logistic curve from its lane center to the neighbouring one, and
``f1`` is the first frame at which its box center reaches the lane marking.

Every vehicle is a solid rectangle, so the emitted detections are exactly the
rendered boxes.  Scenes are symmetric under a left/right mirror.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import List, NamedTuple, Optional, Sequence, Tuple, Union

import cv2
import numpy as np

from .annotations import (LC_LEFT, LC_RIGHT, LANE_KEEP, LEFT_CHANGE, RIGHT_CHANGE, Detection,
                          LaneChangeEvent, write_detections, write_lane_changes,
                          DETECTIONS_FILE, LANE_CHANGES_FILE)

ROAD = (88, 88, 92)
SHOULDER = (70, 110, 60)
MARKING = (235, 235, 235)
TAIL_LIGHT = (220, 30, 30)
MARKING_WIDTH = 8
DASH, GAP = 36, 28
STEEPNESS = 6.0
VEHICLE_CLASS = 1


class SceneError(ValueError):
    pass


@dataclass(frozen=True)
class Vehicle:
    lane: int
    speed: float  # px/frame along the vertical axis
    size: Tuple[int, int] = (200, 140)  # width, height; width must be even
    y0: float = 200.0  # top edge at frame 0
    color: Tuple[int, int, int] = (40, 90, 200)
    wobble: float = 0.0  # lateral sway amplitude in px (distractors)
    wobble_period: float = 24.0
    wobble_phase: float = 0.0


@dataclass(frozen=True)
class Maneuver:
    vehicle: int
    direction: str  # "left" or "right"
    f0: int
    duration: int

    @property
    def sign(self) -> int:
        return -1 if self.direction == "left" else 1


@dataclass(frozen=True)
class SceneSpec:
    lanes: int = 4
    vehicles: Tuple[Vehicle, ...] = ()
    maneuver: Optional[Maneuver] = None
    image_size: Tuple[int, int] = (1920, 600)  # width, height
    total_frames: int = 120
    seed: int = 0
    record_id: int = 1
    lane_width: int = 400
    noise: float = 0.0  # std of additive pixel noise, 0 disables

    @property
    def road_left(self) -> int:
        return (self.image_size[0] - self.lanes * self.lane_width) // 2

    def lane_center(self, lane: int) -> int:
        return self.road_left + lane * self.lane_width + self.lane_width // 2

    def boundary(self, i: int) -> int:
        return self.road_left + i * self.lane_width


def lateral_profile(u: float) -> float:
    """Logistic ramp normalised so that 0 -> 0, 0.5 -> 0.5 and 1 -> 1."""
    if u <= 0.0:
        return 0.0
    if u >= 1.0:
        return 1.0
    sig = lambda z: 1.0 / (1.0 + math.exp(-z))
    lo, hi = sig(-STEEPNESS / 2), sig(STEEPNESS / 2)
    return (sig(STEEPNESS * (u - 0.5)) - lo) / (hi - lo)


def _sym_round(v: float) -> int:
    """Round half away from zero, so that _sym_round(-v) == -_sym_round(v)."""
    return int(math.copysign(math.floor(abs(v) + 0.5), v))


def vehicle_box(spec: SceneSpec, idx: int, t: int) -> Tuple[int, int, int, int]:
    """Half-open pixel box ``(x0, y0, x1, y1)`` of vehicle ``idx`` at frame ``t``."""
    v = spec.vehicles[idx]
    w, h = v.size
    offset = 0.0
    m = spec.maneuver
    if m is not None and m.vehicle == idx:
        offset += m.sign * spec.lane_width * lateral_profile((t - m.f0) / m.duration)
    if v.wobble:
        offset += v.wobble * math.sin(2 * math.pi * t / v.wobble_period + v.wobble_phase)
    cx = spec.lane_center(v.lane) + _sym_round(offset)
    y = int(math.floor(v.y0 + v.speed * t + 0.5))
    return (cx - w // 2, y, cx + w // 2, y + h)


def _validate(spec: SceneSpec) -> None:
    W, H = spec.image_size
    if spec.lanes < 2:
        raise SceneError("need at least two lanes")
    if spec.road_left < 0:
        raise SceneError("lanes do not fit the image width")
    for i, v in enumerate(spec.vehicles):
        if not 0 <= v.lane < spec.lanes:
            raise SceneError(f"vehicle {i} in lane {v.lane} outside [0, {spec.lanes})")
        if v.size[0] % 2:
            raise SceneError(f"vehicle {i} width must be even")
    m = spec.maneuver
    if m is not None:
        if not 0 <= m.vehicle < len(spec.vehicles):
            raise SceneError(f"maneuver vehicle {m.vehicle} does not exist")
        if m.direction not in ("left", "right"):
            raise SceneError(f"maneuver direction must be left or right, got {m.direction!r}")
        if m.duration < 2 or m.f0 < 0 or m.f0 + m.duration >= spec.total_frames:
            raise SceneError("maneuver window must lie inside [0, total_frames)")
        target = spec.vehicles[m.vehicle].lane + m.sign
        if not 0 <= target < spec.lanes:
            raise SceneError("maneuver pushes the vehicle off the road")
    for i in range(len(spec.vehicles)):
        for t in range(spec.total_frames):
            x0, y0, x1, y1 = vehicle_box(spec, i, t)
            if x0 < 0 or y0 < 0 or x1 > W or y1 > H:
                raise SceneError(f"vehicle {i} leaves the image at frame {t}")


def render_background(spec: SceneSpec) -> np.ndarray:
    W, H = spec.image_size
    img = np.empty((H, W, 3), dtype=np.uint8)
    img[:] = SHOULDER
    left = spec.road_left
    img[:, left:W - left] = ROAD
    half = MARKING_WIDTH // 2
    dashed = (np.arange(H) % (DASH + GAP)) < DASH
    for i in range(spec.lanes + 1):
        b = spec.boundary(i)
        if 0 < i < spec.lanes:
            img[dashed, b - half:b + half] = MARKING
        else:
            img[:, b - half:b + half] = MARKING
    return img


def _paint_vehicle(img: np.ndarray, box, color) -> None:
    x0, y0, x1, y1 = box
    img[y0:y1, x0:x1] = color
    w, h = x1 - x0, y1 - y0
    lw, lh = max(2, w // 8), max(2, h // 10)
    img[y1 - lh:y1, x0:x0 + lw] = TAIL_LIGHT
    img[y1 - lh:y1, x1 - lw:x1] = TAIL_LIGHT


class Frames(Sequence):
    """Lazily rendered frames of a scene (``H x W x 3`` uint8 RGB)."""

    def __init__(self, spec: SceneSpec, boxes: List[List[Tuple[int, int, int, int]]]):
        self.spec = spec
        self._boxes = boxes
        self._bg = render_background(spec)

    def __len__(self) -> int:
        return self.spec.total_frames

    def __getitem__(self, t):
        if isinstance(t, slice):
            return [self[i] for i in range(*t.indices(len(self)))]
        if t < 0:
            t += len(self)
        if not 0 <= t < len(self):
            raise IndexError(t)
        img = self._bg.copy()
        boxes = self._boxes[t]
        for i in sorted(range(len(boxes)), key=lambda i: boxes[i][1]):
            _paint_vehicle(img, boxes[i], self.spec.vehicles[i].color)
        if self.spec.noise > 0:
            rng = np.random.default_rng([self.spec.seed, t])
            noisy = img.astype(np.float32) + rng.normal(0, self.spec.noise, img.shape)
            img = np.clip(noisy, 0, 255).astype(np.uint8)
        return img


class Scene(NamedTuple):
    frames: Frames
    detections: List[Detection]
    events: List[LaneChangeEvent]


def track_id(idx: int) -> int:
    return idx + 1


def crossing_frame(spec: SceneSpec) -> int:
    """First frame whose rendered target center sits on or past the marking."""
    m = spec.maneuver
    v = spec.vehicles[m.vehicle]
    marking = spec.boundary(v.lane + (1 if m.sign > 0 else 0))
    for t in range(m.f0, spec.total_frames):
        x0, _, x1, _ = vehicle_box(spec, m.vehicle, t)
        cx = (x0 + x1) / 2
        if (m.sign > 0 and cx >= marking) or (m.sign < 0 and cx <= marking):
            return t
    raise SceneError("maneuvering vehicle never reaches the lane marking")


def generate(spec: SceneSpec) -> Scene:
    """Render a scene and emit its detections and lane-change events."""
    _validate(spec)
    n = len(spec.vehicles)
    boxes = [[vehicle_box(spec, i, t) for i in range(n)] for t in range(spec.total_frames)]
    dets = []
    for t, frame_boxes in enumerate(boxes):
        for i, (x0, y0, x1, y1) in enumerate(frame_boxes):
            contour = ((x0, y0), (x1, y0), (x1, y1), (x0, y1))
            dets.append(Detection(t, track_id(i), VEHICLE_CLASS, x0, y0, x1, y1, 1.0, contour))
    events = []
    m = spec.maneuver
    if m is not None:
        f1 = crossing_frame(spec)
        events.append(LaneChangeEvent(spec.record_id, track_id(m.vehicle),
                                      LC_LEFT if m.sign < 0 else LC_RIGHT,
                                      m.f0, f1, m.f0 + m.duration, 1))
    return Scene(Frames(spec, boxes), dets, events)


def mirror(spec: SceneSpec) -> SceneSpec:
    """The same scene reflected left/right."""
    vehicles = tuple(replace(v, lane=spec.lanes - 1 - v.lane,
                             wobble=-v.wobble) for v in spec.vehicles)
    m = spec.maneuver
    if m is not None:
        m = replace(m, direction="right" if m.direction == "left" else "left")
    return replace(spec, vehicles=vehicles, maneuver=m)


# -- random scenes -------------------------------------------------------------

def _color(rng: np.random.Generator) -> Tuple[int, int, int]:
    c = rng.integers(30, 230, size=3)
    return (int(c[0]), int(c[1]), int(c[2]))


def _vehicle(rng, lane: int, frames: int, H: int, wobble: float = 0.0) -> Vehicle:
    w = int(rng.integers(70, 101)) * 2
    h = int(rng.integers(100, 170))
    speed = float(rng.uniform(-1.2, 1.2))
    lo = max(0.0, -speed * (frames - 1))
    hi = min(H - h, H - h - speed * (frames - 1))
    y0 = float(rng.uniform(lo + 2, hi - 2))
    period = float(rng.uniform(16, 32))
    return Vehicle(lane, speed, (w, h), y0, _color(rng), wobble, period,
                   float(rng.uniform(0, 2 * math.pi)))


def random_scene(seed: int, label: int, *, lanes: int = 4, distractors: int = 2,
                 distractor_wobble: float = 0.0, observation: int = 40,
                 duration: Tuple[int, int] = (36, 44), lead: int = 4, tail: int = 6,
                 lk_frames: int = 80, record_id: int = 1,
                 image_size: Tuple[int, int] = (1920, 600), noise: float = 0.0) -> SceneSpec:
    """Draw a scene whose target vehicle (index 0) does ``label``.

    Lane-change scenes start ``observation + lead`` frames before the maneuver.
    Distractors occupy distinct lanes that the target never enters.
    """
    if label not in (LANE_KEEP, LEFT_CHANGE, RIGHT_CHANGE):
        raise ValueError(f"label must be 0, 1 or 2, got {label}")
    rng = np.random.default_rng(seed)
    H = image_size[1]
    if label == LANE_KEEP:
        lane = int(rng.integers(0, lanes))
        used = {lane}
        total = lk_frames
        maneuver = None
    else:
        direction = "left" if label == LEFT_CHANGE else "right"
        sign = -1 if direction == "left" else 1
        lane = int(rng.integers(1, lanes)) if sign < 0 else int(rng.integers(0, lanes - 1))
        used = {lane, lane + sign}
        dur = int(rng.integers(duration[0], duration[1] + 1))
        f0 = observation + lead
        total = f0 + dur + tail
        maneuver = Maneuver(0, direction, f0, dur)
    vehicles = [_vehicle(rng, lane, total, H)]
    free = [l for l in range(lanes) if l not in used]
    rng.shuffle(free)
    for l in free[:distractors]:
        vehicles.append(_vehicle(rng, int(l), total, H, distractor_wobble))
    return SceneSpec(lanes, tuple(vehicles), maneuver, image_size, total, seed, record_id,
                     noise=noise)


def write_scene(scene: Scene, out_dir: Union[str, Path]) -> Path:
    """Write frames as PNGs plus both annotation files."""
    out_dir = Path(out_dir)
    frames_dir = out_dir / "frames"
    frames_dir.mkdir(parents=True, exist_ok=True)
    for t in range(len(scene.frames)):
        bgr = cv2.cvtColor(scene.frames[t], cv2.COLOR_RGB2BGR)
        cv2.imwrite(str(frames_dir / f"{t:06d}.png"), bgr)
    write_detections(scene.detections, out_dir / DETECTIONS_FILE)
    write_lane_changes(scene.events, out_dir / LANE_CHANGES_FILE)
    return out_dir
