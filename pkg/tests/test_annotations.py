import io

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lanechange.annotations import (AnnotationError, Detection, LaneChangeEvent,
                                    format_detection, format_lane_change, ingest,
                                    label_to_lc_type, lc_type_to_label, load_record,
                                    parse_detections, parse_lane_changes, read_record_manifest,
                                    write_detections, write_lane_changes)

FIXTURE = """\
130 9 0 100 50 180 120 0.75
120 7 0 510 200 640 290 0.98 4 510 200 640 200 640 290 510 290
120 3 1 10.5 20 30 40.25 0.5
[121, 7, 0, 512, 201, 642, 291, 0.97, 4, 512, 201, 642, 201, 642, 291, 512, 291]
"""


def test_plain_line_maps_fields():
    (d,) = parse_detections(["120 7 0 510 200 640 290 0.98"])
    assert (d.frame, d.object_id, d.object_class) == (120, 7, 0)
    assert d.bbox == (510, 200, 640, 290)
    assert d.confidence == 0.98
    assert d.contour == ()


def test_fixture_field_by_field():
    dets = parse_detections(io.StringIO(FIXTURE))
    # hand-written expectation, sorted by (frame, id)
    expected = [
        (120, 3, 1, (10.5, 20, 30, 40.25), 0.5, ()),
        (120, 7, 0, (510, 200, 640, 290), 0.98,
         ((510, 200), (640, 200), (640, 290), (510, 290))),
        (121, 7, 0, (512, 201, 642, 291), 0.97,
         ((512, 201), (642, 201), (642, 291), (512, 291))),
        (130, 9, 0, (100, 50, 180, 120), 0.75, ()),
    ]
    got = [(d.frame, d.object_id, d.object_class, d.bbox, d.confidence, d.contour) for d in dets]
    assert got == expected


def test_contour_count_as_scalars_accepted():
    (d,) = parse_detections(["1 1 0 0 0 10 10 1.0 8 0 0 10 0 10 10 0 10"])
    assert len(d.contour) == 4


def test_contour_ambiguous_rejected():
    with pytest.raises(AnnotationError, match="line 1"):
        parse_detections(["1 1 0 0 0 10 10 1.0 3 0 0 10"])


def test_inverted_box_is_error_with_line_number():
    with pytest.raises(AnnotationError) as exc:
        parse_detections(["120 7 0 510 200 640 290 0.98", "120 7 0 640 200 510 290 0.98"])
    assert exc.value.line_no == 2
    assert "x_min" in str(exc.value)


def test_lenient_mode_skips_bad_lines():
    dets = parse_detections(["120 7 0 640 200 510 290 0.98", "garbage", "1 2 0 0 0 5 5 0.5"],
                            strict=False)
    assert [d.frame for d in dets] == [1]


def test_lane_change_direct_mapping():
    (e,) = parse_lane_changes(["1 42 3 100 120 140 1"])
    assert (e.maneuver_id, e.lc_type, e.f0, e.f1, e.f2, e.blinker) == (42, 3, 100, 120, 140, 1)
    assert e.label == 1


def test_lane_change_unknown_type():
    with pytest.raises(AnnotationError, match="lc_type"):
        parse_lane_changes(["1 42 5 100 120 140 1"])


def test_lane_change_frame_order():
    with pytest.raises(AnnotationError, match="frame order"):
        parse_lane_changes(["1 42 3 100 90 140 1"])


def test_lane_changes_sorted_by_f0():
    text = "1 5 4 300 310 330 0\n1 6 3 100 120 140 1\n1 7 3, 200, 215, 230, 1\n"
    events = parse_lane_changes(io.StringIO(text))
    f0s = [e.f0 for e in events]
    assert f0s == sorted([300, 100, 200])


@pytest.mark.parametrize("code,label", [(3, 1), (4, 2)])
def test_label_mapping(code, label):
    assert lc_type_to_label(code) == label
    assert label_to_lc_type(label) == code


@pytest.mark.parametrize("code", [0, 1, 2, 5, -3])
def test_label_mapping_domain(code):
    with pytest.raises(ValueError):
        lc_type_to_label(code)


coord = st.integers(0, 1900)


@st.composite
def detections(draw):
    x0, y0 = draw(coord), draw(st.integers(0, 580))
    x1 = x0 + draw(st.integers(1, 300))
    y1 = y0 + draw(st.integers(1, 300))
    frac = draw(st.sampled_from([0, 0.5, 0.25, 0.125]))
    n = draw(st.integers(0, 5))
    contour = tuple((draw(coord), draw(coord)) for _ in range(n))
    conf = draw(st.floats(0, 1, allow_nan=False))
    return Detection(draw(st.integers(0, 10**5)), draw(st.integers(0, 999)),
                     draw(st.integers(0, 9)), x0 + frac, y0, x1 + frac, y1, conf, contour)


@settings(max_examples=200, deadline=None)
@given(st.lists(detections(), max_size=20))
def test_detection_round_trip(dets):
    text = [format_detection(d) for d in dets]
    back = parse_detections(text)
    assert back == sorted(dets, key=lambda d: (d.frame, d.object_id))


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 99), st.integers(0, 999), st.sampled_from([3, 4]),
       st.integers(0, 5000), st.integers(0, 50), st.integers(0, 50), st.integers(0, 1))
def test_event_round_trip(rec, man, code, f0, d1, d2, blink):
    ev = LaneChangeEvent(rec, man, code, f0, f0 + d1, f0 + d1 + d2, blink)
    assert parse_lane_changes([format_lane_change(ev)]) == [ev]


def test_ingest_writes_manifest(tmp_path):
    rec = tmp_path / "r1"
    (rec / "frames").mkdir(parents=True)
    for i in range(3):
        (rec / "frames" / f"{i:06d}.png").write_bytes(b"")
    write_detections([Detection(0, 1, 0, 0, 0, 5, 5, 1.0)], rec / "detections_filtered.txt")
    write_lane_changes([LaneChangeEvent(1, 1, 4, 0, 1, 2, 0)], rec / "lane_changes.txt")
    lines = ingest(tmp_path, tmp_path / "records.jsonl")
    assert len(lines) == 1 and lines[0]["num_frames"] == 3
    assert read_record_manifest(tmp_path / "records.jsonl")[0]["events"][0]["label"] == 2
    assert load_record(rec).events[0].label == 2
