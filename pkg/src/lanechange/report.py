"""Delimited metric output: JSON lines, TSV tables and a plain-text report."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, List, Sequence, Union

import numpy as np

from .annotations import LABEL_NAMES

PathLike = Union[str, Path]


def _plain(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    return v


def append_jsonl(path: PathLike, row: dict) -> None:
    with open(path, "a") as fh:
        fh.write(json.dumps({k: _plain(v) for k, v in row.items()}, sort_keys=True) + "\n")


def write_jsonl(path: PathLike, rows: Iterable[dict]) -> Path:
    path = Path(path)
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps({k: _plain(v) for k, v in row.items()}, sort_keys=True) + "\n")
    return path


def read_jsonl(path: PathLike) -> List[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_tsv(path: PathLike, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    with open(path, "w") as fh:
        fh.write("\t".join(header) + "\n")
        for r in rows:
            fh.write("\t".join(_cell(v) for v in r) + "\n")
    return path


def _cell(v) -> str:
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


def accuracy_rows(results: Iterable[tuple]) -> str:
    """``(method, dataset variant, accuracy in [0,1])`` rows as a text table."""
    lines = [f"{'method':<24}{'dataset':<16}{'accuracy (%)':>12}"]
    for method, variant, acc in results:
        lines.append(f"{method:<24}{variant:<16}{100 * acc:>12.2f}")
    return "\n".join(lines)


def confusion_table(percent: np.ndarray, labels: Sequence[str] = LABEL_NAMES) -> str:
    """Rows are ground truth, columns predictions, entries row percentages."""
    percent = np.asarray(percent, dtype=float)
    head = f"{'':<6}" + "".join(f"{lab:>8}" for lab in labels)
    body = [f"{labels[i]:<6}" + "".join(f"{v:>8.1f}" for v in row)
            for i, row in enumerate(percent)]
    return "\n".join([head] + body)


def render_report(title: str, accuracy: Iterable[tuple], confusions: Iterable[tuple]) -> str:
    parts = [title, "=" * len(title), "", accuracy_rows(accuracy), ""]
    for name, percent in confusions:
        parts += [name, confusion_table(percent), ""]
    return "\n".join(parts)
