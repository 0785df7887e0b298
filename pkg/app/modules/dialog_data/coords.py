"""Coordinates as plain text: normalised to [0, 1], fixed-point, no special tokens."""

from __future__ import annotations

import re
from typing import Sequence

from app.core.errors import BoxParseError, RecordValidationError

DEFAULT_PRECISION = 3

_NUM = r"[-+]?\d+(?:\.\d+)?"
_BOX_RE = re.compile(rf"\[\s*({_NUM})\s*,\s*({_NUM})\s*,\s*({_NUM})\s*,\s*({_NUM})\s*\]")
_POINT_RE = re.compile(rf"\[\s*({_NUM})\s*,\s*({_NUM})\s*\]")
_POLYGON_RE = re.compile(rf"\[\s*((?:{_NUM}\s*,\s*{_NUM}\s*)+)\]")
_PAIR_RE = re.compile(rf"({_NUM})\s*,\s*({_NUM})")
_KEYPOINT_RE = re.compile(rf"\(\s*([^:()]+?)\s*:\s*\[\s*({_NUM})\s*,\s*({_NUM})\s*\]\s*\)")
_DETECTION_RE = re.compile(rf"([^;\[\]]+?)\s*(\[\s*{_NUM}\s*,\s*{_NUM}\s*,\s*{_NUM}\s*,\s*{_NUM}\s*\])\s*;")


def _fmt(values: Sequence[float], precision: int) -> list[str]:
    return [f"{v:.{precision}f}" for v in values]


def normalize_box(box: Sequence[float], img_w: float, img_h: float) -> tuple[float, float, float, float]:
    x1, y1, x2, y2 = (float(v) for v in box)
    if not (x1 < x2 and y1 < y2):
        raise RecordValidationError(f"degenerate box {tuple(box)}")
    if x1 < 0 or y1 < 0 or x2 > img_w or y2 > img_h:
        raise RecordValidationError(f"box {tuple(box)} outside a {img_w}x{img_h} image")
    return x1 / img_w, y1 / img_h, x2 / img_w, y2 / img_h


def normalize_point(x: float, y: float, img_w: float, img_h: float) -> tuple[float, float]:
    if not (0 <= x <= img_w and 0 <= y <= img_h):
        raise RecordValidationError(f"point ({x}, {y}) outside a {img_w}x{img_h} image")
    return x / img_w, y / img_h


def textualize_box(
    box: Sequence[float], img_w: float, img_h: float, precision: int = DEFAULT_PRECISION
) -> str:
    return "[" + ",".join(_fmt(normalize_box(box, img_w, img_h), precision)) + "]"


def textualize_point(
    x: float, y: float, img_w: float, img_h: float, precision: int = DEFAULT_PRECISION
) -> str:
    return "[" + ",".join(_fmt(normalize_point(x, y, img_w, img_h), precision)) + "]"


def textualize_polygon(
    points: Sequence[tuple[float, float]], img_w: float, img_h: float, precision: int = DEFAULT_PRECISION
) -> str:
    if len(points) < 3:
        raise RecordValidationError("a polygon needs at least 3 vertices")
    parts = [",".join(_fmt(normalize_point(x, y, img_w, img_h), precision)) for x, y in points]
    return "[" + " ".join(parts) + "]"


def parse_box(text: str) -> tuple[float, float, float, float]:
    """First bracketed 4-tuple in ``text``, in normalised coordinates."""
    m = _BOX_RE.search(text)
    if m is None:
        bracket = text.find("[")
        raise BoxParseError(
            "no well-formed [x1,y1,x2,y2] tuple", position=bracket if bracket >= 0 else len(text)
        )
    x1, y1, x2, y2 = (float(g) for g in m.groups())
    if not (x1 < x2 and y1 < y2):
        raise BoxParseError(f"box [{x1},{y1},{x2},{y2}] needs x1 < x2 and y1 < y2", position=m.start())
    return x1, y1, x2, y2


def parse_point(text: str) -> tuple[float, float]:
    m = _POINT_RE.search(text)
    if m is None:
        bracket = text.find("[")
        raise BoxParseError("no well-formed [x,y] point", position=bracket if bracket >= 0 else len(text))
    return float(m.group(1)), float(m.group(2))


def parse_polygon(text: str) -> list[tuple[float, float]]:
    m = _POLYGON_RE.search(text)
    if m is None:
        bracket = text.find("[")
        raise BoxParseError("no well-formed polygon", position=bracket if bracket >= 0 else len(text))
    pts = [(float(x), float(y)) for x, y in _PAIR_RE.findall(m.group(1))]
    if len(pts) < 3:
        raise BoxParseError("a polygon needs at least 3 vertices", position=m.start())
    return pts


def parse_keypoints(text: str) -> list[tuple[str, float, float]]:
    return [(m.group(1), float(m.group(2)), float(m.group(3))) for m in _KEYPOINT_RE.finditer(text)]


def parse_labeled_boxes(text: str) -> list[tuple[str, tuple[float, float, float, float]]]:
    """Every ``label [x1,y1,x2,y2];`` clause, in order."""
    return [(m.group(1).strip(), parse_box(m.group(2))) for m in _DETECTION_RE.finditer(text)]
