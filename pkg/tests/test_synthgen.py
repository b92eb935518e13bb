import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lanechange import synthgen
from lanechange.annotations import (LC_RIGHT, load_record, parse_detections,
                                    parse_lane_changes)
from lanechange.synthgen import Maneuver, SceneError, SceneSpec, Vehicle


def right_spec(f0=100, duration=40, lane=1):
    return SceneSpec(lanes=4, vehicles=(Vehicle(lane, 0.5, (200, 140), 200.0),),
                     maneuver=Maneuver(0, "right", f0, duration), total_frames=f0 + duration + 5)


def analytic_crossing(f0, duration, lane_width=400):
    """First frame where the rounded lateral offset reaches half a lane, by inverting the ramp."""
    s = synthgen.STEEPNESS
    sig = lambda z: 1 / (1 + math.exp(-z))
    lo, hi = sig(-s / 2), sig(s / 2)
    q = (lane_width / 2 - 0.5) / lane_width  # rounding half up reaches 200 from 199.5
    p = lo + q * (hi - lo)
    u = 0.5 + math.log(p / (1 - p)) / s
    return math.ceil(f0 + duration * u - 1e-12)


def test_no_maneuver_only_longitudinal_motion():
    spec = SceneSpec(vehicles=(Vehicle(0, 1.0, (180, 120), 100.0),
                               Vehicle(2, -0.5, (160, 150), 300.0)), total_frames=30)
    scene = synthgen.generate(spec)
    assert scene.events == []
    by_vehicle = {}
    for d in scene.detections:
        by_vehicle.setdefault(d.object_id, set()).add((d.x_min, d.x_max))
    assert all(len(xs) == 1 for xs in by_vehicle.values())
    # rows of road never touched by a vehicle stay the same across frames
    assert np.array_equal(scene.frames[0][:, :200], scene.frames[29][:, :200])


def test_right_maneuver_event():
    spec = right_spec()
    ev, = synthgen.generate(spec).events
    assert ev.f0 == 100 and ev.lc_type == LC_RIGHT == 4
    assert 100 < ev.f1 < 140
    assert ev.f1 == analytic_crossing(100, 40)
    assert ev.f2 == 140


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 60), st.integers(10, 80), st.sampled_from(["left", "right"]))
def test_crossing_matches_analytic_inverse(f0, duration, direction):
    lane = 2 if direction == "left" else 1
    spec = SceneSpec(vehicles=(Vehicle(lane, 0.0, (200, 140), 200.0),),
                     maneuver=Maneuver(0, direction, f0, duration), total_frames=f0 + duration + 2)
    assert synthgen.crossing_frame(spec) == analytic_crossing(f0, duration)


def test_profile_monotone_and_anchored():
    us = np.linspace(-0.5, 1.5, 401)
    vals = [synthgen.lateral_profile(u) for u in us]
    assert all(b >= a for a, b in zip(vals, vals[1:]))
    assert synthgen.lateral_profile(0) == 0 and synthgen.lateral_profile(1) == 1
    assert synthgen.lateral_profile(0.5) == pytest.approx(0.5)


def test_same_seed_identical_frames():
    a = synthgen.generate(synthgen.random_scene(11, 1, noise=3.0))
    b = synthgen.generate(synthgen.random_scene(11, 1, noise=3.0))
    assert all(np.array_equal(a.frames[t], b.frames[t]) for t in range(len(a.frames)))
    assert a.detections == b.detections and a.events == b.events


def rendered_box(frame, background):
    """Bounding box of every pixel that differs from the empty road."""
    painted = np.any(frame != background, axis=-1)
    ys, xs = np.nonzero(painted)
    return xs.min(), ys.min(), xs.max() + 1, ys.max() + 1


def iou(a, b):
    ix = max(0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    area = lambda r: (r[2] - r[0]) * (r[3] - r[1])
    return inter / (area(a) + area(b) - inter)


@pytest.mark.parametrize("seed", range(5))
def test_detections_bound_rendered_rectangles(seed):
    spec = synthgen.random_scene(seed, seed % 3, distractors=0)
    scene = synthgen.generate(spec)
    bg = synthgen.render_background(spec)
    for t in range(0, len(scene.frames), 7):
        det, = [d for d in scene.detections if d.frame == t]
        box = rendered_box(scene.frames[t], bg)
        assert iou(box, det.bbox) == 1.0


def test_annotations_round_trip(tmp_path):
    for seed in range(3):
        scene = synthgen.generate(synthgen.random_scene(seed, 1 + seed % 2))
        d = synthgen.write_scene(scene, tmp_path / str(seed))
        assert parse_detections(d / "detections_filtered.txt") == scene.detections
        assert parse_lane_changes(d / "lane_changes.txt") == scene.events
        rec = load_record(d)
        assert rec.events == scene.events


@pytest.mark.parametrize("seed", range(4))
def test_mirror_symmetry(seed):
    spec = synthgen.random_scene(seed, 1)
    left, right = synthgen.generate(spec), synthgen.generate(synthgen.mirror(spec))
    assert right.events[0].lc_type == LC_RIGHT
    assert right.events[0].f1 == left.events[0].f1
    W = spec.image_size[0]
    for dl, dr in zip(left.detections, right.detections):
        assert (dr.x_min, dr.x_max) == (W - dl.x_max, W - dl.x_min)
        assert (dr.y_min, dr.y_max) == (dl.y_min, dl.y_max)
    for t in (0, 30, len(left.frames) - 1):
        assert np.array_equal(right.frames[t], left.frames[t][:, ::-1])


def test_off_image_is_rejected():
    with pytest.raises(SceneError):
        synthgen.generate(SceneSpec(vehicles=(Vehicle(3, 0.0),),
                                    maneuver=Maneuver(0, "right", 5, 20), total_frames=40))
    with pytest.raises(SceneError):
        synthgen.generate(SceneSpec(vehicles=(Vehicle(0, 5.0, y0=300.0),), total_frames=60))
    with pytest.raises(SceneError):
        synthgen.generate(SceneSpec(vehicles=(Vehicle(1, 0.0),),
                                    maneuver=Maneuver(0, "left", 30, 20), total_frames=40))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(0, 2), st.integers(0, 3))
def test_random_scenes_are_valid(seed, label, distractors):
    spec = synthgen.random_scene(seed, label, distractors=distractors)
    scene = synthgen.generate(spec)
    assert len(scene.events) == (label != 0)
    assert len(scene.detections) == spec.total_frames * len(spec.vehicles)
