"""Axis-aligned box arithmetic.

Coordinates are continuous pixel positions; a box covering pixel columns
0..9 is ``BBox(0, 0, 10, h)``. There is no ``+1`` convention anywhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from paveval.errors import ValidationError


@dataclass(frozen=True, slots=True)
class BBox:
    """Box in corner format ``(x_min, y_min, x_max, y_max)``.

    Construction requires finite coordinates and strictly positive area.
    Negative coordinates are allowed here because intermediate affine maps
    (crop offsets, mosaic placement) produce them before clipping; records
    that own boxes check containment in their image bounds.
    """

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self) -> None:
        coords = (self.x_min, self.y_min, self.x_max, self.y_max)
        if not all(math.isfinite(c) for c in coords):
            raise ValidationError(f"non-finite box coordinates {coords}")
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValidationError(f"degenerate box {coords}")
        if (self.x_max - self.x_min) * (self.y_max - self.y_min) <= 0:
            raise ValidationError(f"box area underflows to zero {coords}")

    @classmethod
    def from_xywh(cls, x: float, y: float, w: float, h: float) -> BBox:
        return cls(x, y, x + w, y + h)

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def center(self) -> tuple[float, float]:
        return (self.x_min + self.x_max) / 2, (self.y_min + self.y_max) / 2

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)

    def translate(self, dx: float, dy: float) -> BBox:
        return BBox(self.x_min + dx, self.y_min + dy, self.x_max + dx, self.y_max + dy)

    def within(self, width: float, height: float) -> bool:
        """True when the box lies inside ``[0, width] x [0, height]``."""
        return (
            self.x_min >= 0
            and self.y_min >= 0
            and self.x_max <= width
            and self.y_max <= height
        )


def area(b: BBox) -> float:
    return (b.x_max - b.x_min) * (b.y_max - b.y_min)


def intersect(a: BBox, b: BBox) -> BBox | None:
    """Overlap rectangle of two boxes, or None when the overlap has no area."""
    x0 = max(a.x_min, b.x_min)
    y0 = max(a.y_min, b.y_min)
    x1 = min(a.x_max, b.x_max)
    y1 = min(a.y_max, b.y_max)
    if x0 >= x1 or y0 >= y1 or (x1 - x0) * (y1 - y0) <= 0:
        return None
    return BBox(x0, y0, x1, y1)


def iou(a: BBox, b: BBox) -> float:
    inter = intersect(a, b)
    if inter is None:
        return 0.0
    ia = area(inter)
    return ia / (area(a) + area(b) - ia)


def clip(b: BBox, window: BBox) -> BBox | None:
    """Part of ``b`` inside ``window``, expressed in window-local coordinates."""
    inter = intersect(b, window)
    if inter is None:
        return None
    return inter.translate(-window.x_min, -window.y_min)


def boxes_array(boxes: Iterable[BBox]) -> np.ndarray:
    """Stack boxes into an ``(N, 4)`` float64 array."""
    arr = np.array([b.as_tuple() for b in boxes], dtype=np.float64)
    return arr.reshape(-1, 4)


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between ``(N, 4)`` and ``(M, 4)`` corner arrays.

    Uses the same operation order as :func:`iou` so scalar and vectorised
    results agree bit for bit.
    """
    if len(a) == 0 or len(b) == 0:
        return np.zeros((len(a), len(b)))
    x0 = np.maximum(a[:, None, 0], b[None, :, 0])
    y0 = np.maximum(a[:, None, 1], b[None, :, 1])
    x1 = np.minimum(a[:, None, 2], b[None, :, 2])
    y1 = np.minimum(a[:, None, 3], b[None, :, 3])
    with np.errstate(invalid="ignore", over="ignore"):
        inter = (x1 - x0) * (y1 - y0)
    overlap = (x0 < x1) & (y0 < y1) & (inter > 0)
    inter = np.where(overlap, inter, 0.0)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(overlap, inter / union, 0.0)
