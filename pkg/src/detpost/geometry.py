"""Axis-aligned bounding-box primitives.

Boxes are stored in corner format ``(x1, y1, x2, y2)`` with real-valued pixel
coordinates. Center/size conversions happen only at I/O boundaries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np


@dataclass(frozen=True)
class Box:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self) -> None:
        # NaN fails both comparisons; infinities fail the finite-width check
        if not (self.x2 >= self.x1 and self.y2 >= self.y1):
            raise ValueError(f"box has negative or undefined extent: {self.as_tuple()}")
        if not (math.isfinite(self.x2 - self.x1) and math.isfinite(self.y2 - self.y1)):
            raise ValueError(f"box coordinates must be finite, got {self.as_tuple()}")

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)

    @classmethod
    def from_cxcywh(cls, cx: float, cy: float, w: float, h: float) -> Box:
        return cls(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)


@dataclass(frozen=True)
class BoxWH:
    """Width/height pair of a box with its position discarded."""

    w: float
    h: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.w) and math.isfinite(self.h)):
            raise ValueError(f"dimensions must be finite, got ({self.w}, {self.h})")
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"dimensions must be positive, got ({self.w}, {self.h})")

    @property
    def area(self) -> float:
        return self.w * self.h


def area(b: Box) -> float:
    return (b.x2 - b.x1) * (b.y2 - b.y1)


def intersection_area(a: Box, b: Box) -> float:
    w = min(a.x2, b.x2) - max(a.x1, b.x1)
    h = min(a.y2, b.y2) - max(a.y1, b.y1)
    if w <= 0 or h <= 0:
        return 0.0
    return w * h


def iou(a: Box, b: Box) -> float:
    """Intersection over union; 0 when the union is empty."""
    inter = intersection_area(a, b)
    union = area(a) + area(b) - inter
    if union <= 0:
        return 0.0
    return inter / union


def enclosing_box(a: Box, b: Box) -> Box:
    return Box(min(a.x1, b.x1), min(a.y1, b.y1), max(a.x2, b.x2), max(a.y2, b.y2))


def center(b: Box) -> tuple[float, float]:
    return ((b.x1 + b.x2) / 2.0, (b.y1 + b.y2) / 2.0)


def boxes_to_array(boxes: Iterable[Box] | np.ndarray) -> np.ndarray:
    """Stack boxes into an ``(N, 4)`` float64 array."""
    if isinstance(boxes, np.ndarray):
        arr = np.asarray(boxes, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != 4:
            raise ValueError(f"expected an (N, 4) array, got shape {arr.shape}")
        return arr
    rows = [b.as_tuple() for b in boxes]
    if not rows:
        return np.zeros((0, 4), dtype=np.float64)
    return np.array(rows, dtype=np.float64)


def array_to_boxes(arr: np.ndarray) -> list[Box]:
    return [Box(*map(float, row)) for row in np.asarray(arr, dtype=np.float64)]


def dims_to_array(dims: Sequence[BoxWH] | np.ndarray) -> np.ndarray:
    """Stack (w, h) pairs into an ``(N, 2)`` float64 array."""
    if isinstance(dims, np.ndarray):
        arr = np.asarray(dims, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != 2:
            raise ValueError(f"expected an (N, 2) array, got shape {arr.shape}")
        return arr
    if not dims:
        return np.zeros((0, 2), dtype=np.float64)
    return np.array([(d.w, d.h) for d in dims], dtype=np.float64)


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Dense IoU between every row of ``a`` (N, 4) and ``b`` (M, 4)."""
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(iw, 0.0, None) * np.clip(ih, 0.0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=union > 0)
    return out
