"""Readers and writers for PREVENTION-style annotation files.

Two plain-text formats are handled:

``detections_filtered.txt``
    ``frame id class x_min y_min x_max y_max conf [n c1 c2 ...]`` where the
    optional tail is a contour: a count ``n`` followed by ``x y`` pairs.

``lane_changes.txt``
    ``id id_m lc_type f0 f1 f2 blinker`` where ``lc_type`` is 3 (left) or 4
    (right) and ``id_m`` is the track id of the vehicle doing the maneuver.

Fields may be separated by whitespace, commas, or both, and a line may be
wrapped in square brackets.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import IO, Iterable, List, Optional, Sequence, Tuple, Union

log = logging.getLogger(__name__)

DETECTIONS_FILE = "detections_filtered.txt"
LANE_CHANGES_FILE = "lane_changes.txt"

LANE_KEEP, LEFT_CHANGE, RIGHT_CHANGE = 0, 1, 2
LABEL_NAMES = ("LK", "LLC", "RLC")
LC_LEFT, LC_RIGHT = 3, 4
_LC_TO_LABEL = {LC_LEFT: LEFT_CHANGE, LC_RIGHT: RIGHT_CHANGE}

_SPLIT = re.compile(r"[,\s]+")

Source = Union[str, Path, IO[str], Iterable[str]]


class AnnotationError(ValueError):
    """A record failed to parse or violated an invariant."""

    def __init__(self, message: str, line_no: Optional[int] = None):
        self.line_no = line_no
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class Detection:
    frame: int
    object_id: int
    object_class: int
    x_min: float
    y_min: float
    x_max: float
    y_max: float
    confidence: float
    contour: Tuple[Tuple[float, float], ...] = ()

    def __post_init__(self):
        if self.frame < 0:
            raise AnnotationError(f"negative frame index {self.frame}")
        if not self.x_min < self.x_max:
            raise AnnotationError(f"x_min >= x_max ({self.x_min} >= {self.x_max})")
        if not self.y_min < self.y_max:
            raise AnnotationError(f"y_min >= y_max ({self.y_min} >= {self.y_max})")
        if not 0.0 <= self.confidence <= 1.0:
            raise AnnotationError(f"confidence {self.confidence} outside [0, 1]")

    @property
    def bbox(self) -> Tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)


@dataclass(frozen=True)
class LaneChangeEvent:
    record_id: int
    maneuver_id: int  # track id of the maneuvering vehicle (matches Detection.object_id)
    lc_type: int
    f0: int
    f1: int
    f2: int
    blinker: int = 0

    def __post_init__(self):
        if self.lc_type not in _LC_TO_LABEL:
            raise AnnotationError(f"unknown lc_type {self.lc_type} (expected 3 or 4)")
        if not self.f0 <= self.f1 <= self.f2:
            raise AnnotationError(
                f"frame order violated: f0={self.f0}, f1={self.f1}, f2={self.f2}")

    @property
    def label(self) -> int:
        return lc_type_to_label(self.lc_type)


def lc_type_to_label(lc_type: int) -> int:
    """Map a raw lane-change code to a training label (3 -> 1, 4 -> 2)."""
    try:
        return _LC_TO_LABEL[int(lc_type)]
    except (KeyError, TypeError, ValueError):
        raise ValueError(f"lc_type must be 3 or 4, got {lc_type!r}") from None


def label_to_lc_type(label: int) -> int:
    for code, lab in _LC_TO_LABEL.items():
        if lab == label:
            return code
    raise ValueError(f"label {label!r} has no lane-change code")


def _lines(source: Source) -> Iterable[str]:
    if isinstance(source, (str, Path)):
        with open(source, encoding="utf-8") as fh:
            yield from fh
    else:
        yield from source


def _tokens(line: str) -> List[str]:
    line = line.strip().strip("[]")
    return [t for t in _SPLIT.split(line) if t]


def _int(tok: str) -> int:
    v = float(tok)
    if not v.is_integer():
        raise ValueError(f"expected integer, got {tok!r}")
    return int(v)


def _num(tok: str) -> float:
    v = float(tok)
    return int(v) if v.is_integer() else v


def _parse_contour(tail: Sequence[str]) -> Tuple[Tuple[float, float], ...]:
    """Decode ``n c1 c2 ...``.  ``n`` may count points or scalars."""
    if not tail:
        return ()
    n = _int(tail[0])
    vals = [_num(t) for t in tail[1:]]
    if n < 0:
        raise ValueError(f"negative contour length {n}")
    if len(vals) == 2 * n:
        pass
    elif len(vals) == n and n % 2 == 0:
        log.debug("contour length %d read as a scalar count", n)
    else:
        raise ValueError(
            f"ambiguous contour: n={n} but {len(vals)} coordinates follow")
    return tuple(zip(vals[0::2], vals[1::2]))


def _parse_detection(tokens: Sequence[str]) -> Detection:
    if len(tokens) < 8:
        raise ValueError(f"expected at least 8 fields, got {len(tokens)}")
    frame, oid, cls = (_int(t) for t in tokens[:3])
    x0, y0, x1, y1 = (_num(t) for t in tokens[3:7])
    return Detection(frame, oid, cls, x0, y0, x1, y1, float(tokens[7]),
                     _parse_contour(tokens[8:]))


def _collect(source: Source, parse, strict: bool, what: str) -> list:
    out = []
    for line_no, line in enumerate(_lines(source), start=1):
        toks = _tokens(line)
        if not toks or toks[0].startswith("#"):
            continue
        try:
            out.append(parse(toks))
        except (ValueError, AnnotationError) as exc:
            msg = str(exc.args[0]) if isinstance(exc, AnnotationError) else str(exc)
            err = AnnotationError(msg, line_no)
            if strict:
                raise err from None
            log.warning("skipping malformed %s record: %s", what, err)
    return out


def parse_detections(source: Source, strict: bool = True) -> List[Detection]:
    """Parse a detections file; output is sorted by ``(frame, object_id)``.

    In lenient mode (``strict=False``) malformed lines are logged and skipped.
    """
    dets = _collect(source, _parse_detection, strict, "detection")
    dets.sort(key=lambda d: (d.frame, d.object_id))
    return dets


def _parse_event(tokens: Sequence[str]) -> LaneChangeEvent:
    if len(tokens) not in (6, 7):
        raise ValueError(f"expected 7 fields, got {len(tokens)}")
    vals = [_int(t) for t in tokens]
    if len(vals) == 6:
        vals.append(0)
    return LaneChangeEvent(*vals)


def parse_lane_changes(source: Source, strict: bool = True) -> List[LaneChangeEvent]:
    """Parse a lane-change file; output is sorted by ``f0``."""
    events = _collect(source, _parse_event, strict, "lane-change")
    events.sort(key=lambda e: (e.f0, e.record_id, e.maneuver_id))
    return events


def _fmt(v) -> str:
    v = float(v)
    return str(int(v)) if v.is_integer() else repr(v)


def format_detection(det: Detection) -> str:
    fields = [str(det.frame), str(det.object_id), str(det.object_class),
              *(_fmt(v) for v in det.bbox), _fmt(det.confidence)]
    if det.contour:
        fields.append(str(len(det.contour)))
        fields.extend(_fmt(c) for pt in det.contour for c in pt)
    return " ".join(fields)


def format_lane_change(ev: LaneChangeEvent) -> str:
    return " ".join(str(v) for v in (ev.record_id, ev.maneuver_id, ev.lc_type,
                                     ev.f0, ev.f1, ev.f2, ev.blinker))


def write_detections(dets: Iterable[Detection], path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for d in dets:
            fh.write(format_detection(d) + "\n")


def write_lane_changes(events: Iterable[LaneChangeEvent], path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for e in events:
            fh.write(format_lane_change(e) + "\n")


# -- records and the ingest manifest ----------------------------------------

@dataclass
class Record:
    """One recording: annotation files plus the directory holding its frames."""

    name: str
    root: Path
    detections: List[Detection] = field(default_factory=list)
    events: List[LaneChangeEvent] = field(default_factory=list)
    num_frames: int = 0

    def detections_by_frame(self) -> dict:
        by_frame: dict = {}
        for d in self.detections:
            by_frame.setdefault(d.frame, []).append(d)
        return by_frame

    @property
    def frames_dir(self) -> Path:
        return self.root / "frames"


def count_frames(root: Path) -> int:
    frames = root / "frames"
    if not frames.is_dir():
        return 0
    return sum(1 for p in frames.iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg"))


def load_record(root: Union[str, Path], strict: bool = False) -> Record:
    root = Path(root)
    dets = parse_detections(root / DETECTIONS_FILE, strict=strict)
    lc_path = root / LANE_CHANGES_FILE
    events = parse_lane_changes(lc_path, strict=strict) if lc_path.exists() else []
    n = count_frames(root)
    if not n and dets:
        n = dets[-1].frame + 1
    return Record(root.name, root, dets, events, n)


def find_records(top: Union[str, Path]) -> List[Path]:
    """Every directory at or below ``top`` that holds a detections file."""
    top = Path(top)
    return sorted(p.parent for p in top.rglob(DETECTIONS_FILE))


def manifest_line(rec: Record) -> dict:
    return {
        "record": rec.name,
        "path": str(rec.root.resolve()),
        "num_frames": rec.num_frames,
        "num_detections": len(rec.detections),
        "track_ids": sorted({d.object_id for d in rec.detections}),
        "events": [dict(asdict(e), label=e.label) for e in rec.events],
    }


def ingest(top: Union[str, Path], out: Union[str, Path, None] = None,
           strict: bool = False) -> List[dict]:
    """Validate every record under ``top`` and write ``records.jsonl``."""
    lines = []
    for root in find_records(top):
        rec = load_record(root, strict=strict)
        lines.append(manifest_line(rec))
    if out is not None:
        with open(out, "w", encoding="utf-8") as fh:
            for ln in lines:
                fh.write(json.dumps(ln, sort_keys=True) + "\n")
    return lines


def read_record_manifest(path: Union[str, Path]) -> List[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(ln) for ln in fh if ln.strip()]
