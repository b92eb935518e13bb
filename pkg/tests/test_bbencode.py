import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lanechange.annotations import Detection
from lanechange.bbencode import (TargetMissingError, encode_clip, encode_frame, luma,
                                 outline_thickness, transform_bbox)
from lanechange.clipset import Clip, hflip, spatial_preprocess
from oracles import scanline_outline, within_one_px


def det(oid, box):
    return Detection(0, oid, 1, *box, 1.0)


def test_transform_examples():
    assert transform_bbox((160, 0, 1760, 600)) == (0, 0, 400, 400)
    x0, y0, x1, y1 = transform_bbox((960, 300, 1060, 400))
    assert (x0, y0, x1) == (200, 200, 225)
    assert y1 == pytest.approx(266.6667, abs=1e-3)
    assert transform_bbox((0, 0, 150, 100)) is None


def test_no_detections():
    rng = np.random.default_rng(0)
    frame = rng.random((400, 400, 3)).astype(np.float32)
    enc = encode_frame(frame, [], target_id=5).data
    assert not enc[1].any() and not enc[2].any()
    expected = 0.299 * frame[..., 0] + 0.587 * frame[..., 1] + 0.114 * frame[..., 2]
    assert np.allclose(enc[0], expected, atol=1e-6)


def test_target_only():
    frame = np.zeros((400, 400, 3), np.float32)
    src = (960, 300, 1060, 400)
    enc = encode_frame(frame, [det(7, src)], target_id=7).data
    assert not enc[2].any()
    oracle = scanline_outline(transform_bbox(src), 3, 400, 400)
    assert within_one_px(enc[1] > 0, oracle)
    assert set(np.unique(enc[1])) <= {0.0, 1.0}


def test_target_and_other_against_oracle():
    frame = np.zeros((400, 400, 3), np.float32)
    a, b = (400, 100, 700, 350), (1200, 50, 1500, 500)
    enc = encode_frame(frame, [det(1, a), det(2, b)], target_id=1).data
    ga = scanline_outline(transform_bbox(a), 3, 400, 400)
    gb = scanline_outline(transform_bbox(b), 3, 400, 400)
    assert within_one_px(enc[1] > 0, ga)
    assert within_one_px(enc[2] > 0, gb)
    assert not ((enc[1] > 0) & (enc[2] > 0)).any()
    assert abs(int((enc[1] > 0).sum()) - int(ga.sum())) <= 2 * 3 * 4


boxes = st.tuples(st.integers(0, 1800), st.integers(0, 560), st.integers(20, 400),
                  st.integers(20, 300)).map(lambda t: (t[0], t[1], min(t[0] + t[2], 1920),
                                                       min(t[1] + t[3], 600)))


@settings(max_examples=60, deadline=None)
@given(boxes, st.sampled_from([400, 200, 64]))
def test_outline_matches_scanline_oracle(src, size):
    frame = np.zeros((size, size, 3), np.float32)
    enc = encode_frame(frame, [det(3, src)], target_id=3).data
    tb = transform_bbox(src, (size, size))
    if tb is None:
        assert not enc[1].any()
        return
    oracle = scanline_outline(tb, outline_thickness(size, size), size, size)
    assert within_one_px(enc[1] > 0, oracle)


def test_channel_roles_on_clip():
    rng = np.random.default_rng(1)
    frames = rng.random((4, 64, 64, 3)).astype(np.float32)
    dets = [[det(1, (300, 100, 600, 300)), det(2, (1000, 200, 1300, 500))]] * 4
    clip = encode_clip(frames, dets, target_id=1)
    plain = clip.copy()
    plain[:, 1:] = 0
    assert np.allclose(plain[:, 0], luma(frames))


def test_target_missing_everywhere():
    frames = np.zeros((2, 32, 32, 3), np.float32)
    with pytest.raises(TargetMissingError):
        encode_clip(frames, [[det(2, (300, 0, 400, 100))]] * 2, target_id=9)
    clip = encode_clip(frames, [[det(2, (300, 0, 400, 100))]] * 2, target_id=None)
    assert not clip[:, 1].any() and clip[:, 2].any()


@settings(max_examples=25, deadline=None)
@given(boxes)
def test_box_geometry_commutes_with_preprocessing(src):
    """Filled box drawn in the source frame and then preprocessed covers the same
    pixels as the transformed box, up to one pixel of rasterisation slack."""
    x0, y0, x1, y1 = src
    tb = transform_bbox(src)
    if tb is None or tb[2] - tb[0] < 2 or tb[3] - tb[1] < 2:
        return
    frame = np.zeros((600, 1920, 3), np.uint8)
    frame[y0:y1, x0:x1] = 255
    pre = spatial_preprocess(frame)[..., 0] > 0.5
    want = np.zeros((400, 400), bool)
    bx0, by0, bx1, by1 = (int(math.floor(v + 0.5)) for v in tb)
    want[by0:by1, bx0:bx1] = True
    assert within_one_px(pre, want)


def test_flip_on_encoded_clip():
    frames = np.random.default_rng(2).random((3, 64, 64, 3)).astype(np.float32)
    data = encode_clip(frames, [[det(1, (300, 100, 700, 300))]] * 3, target_id=1)
    c = Clip(data, 1, bb=True)
    f = hflip(c)
    assert f.label == 2
    assert np.array_equal(f.data, data[..., ::-1])
