"""Axis-aligned box arithmetic shared by every other module."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Box:
    """Axis-aligned box with top-left (x1, y1) and bottom-right (x2, y2) corners.

    Coordinates are continuous pixels; boxes are closed intervals with area
    (x2 - x1) * (y2 - y1), no +1 convention.
    """

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x1, self.y1, self.x2, self.y2)):
            raise ValueError(f"box coordinates must be finite: {self}")
        if self.x2 < self.x1 or self.y2 < self.y1:
            raise ValueError(f"box corners out of order: {self}")

    def as_array(self) -> np.ndarray:
        return np.array([self.x1, self.y1, self.x2, self.y2], dtype=np.float64)


@dataclass(frozen=True)
class ImageSize:
    """Image extent in pixels, strictly positive."""

    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"image size must be positive: {self.w}x{self.h}")


def area(b: Box) -> float:
    """Box area; zero for degenerate boxes."""
    return (b.x2 - b.x1) * (b.y2 - b.y1)


def iou(a: Box, b: Box) -> float:
    """Intersection over union in [0, 1]; returns 0 when the union is empty."""
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    inter = iw * ih if (iw > 0.0 and ih > 0.0) else 0.0
    union = area(a) + area(b) - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def normalize_geometric(b: Box, img: ImageSize) -> np.ndarray:
    """Scale-invariant geometric feature of a box relative to its image.

    Returns the 4-vector
    (log(x1/w + 1/2), log(y1/h + 1/2), log(x2/w + 1/2), log(y2/h + 1/2))
    using natural logs. Raises ValueError if any log argument is <= 0, i.e.
    the box extends more than half an image size past the top-left corner.
    """
    args = np.array(
        [
            b.x1 / img.w + 0.5,
            b.y1 / img.h + 0.5,
            b.x2 / img.w + 0.5,
            b.y2 / img.h + 0.5,
        ],
        dtype=np.float64,
    )
    if np.any(args <= 0.0):
        raise ValueError(f"box {b} is too far outside image {img} to normalize")
    return np.log(args)


def boxes_to_array(boxes) -> np.ndarray:
    """Stack boxes into an (N, 4) float64 array; (0, 4) for an empty input."""
    if not boxes:
        return np.zeros((0, 4), dtype=np.float64)
    return np.array([[b.x1, b.y1, b.x2, b.y2] for b in boxes], dtype=np.float64)


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between two (N, 4) / (M, 4) corner arrays.

    Cells with an empty union are 0.
    """
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(iw, 0.0, None) * np.clip(ih, 0.0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=union > 0.0)
    return out
