"""Bounding-box algebra and planar affine transforms.

Boxes are stored in MOTChallenge order (x_left, y_top, width, height) plus a
detection confidence. Every other parameterization is a derived view.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np


@dataclass(frozen=True, slots=True)
class BoundingBox:
    x_left: float
    y_top: float
    width: float
    height: float
    confidence: float = 1.0

    def __post_init__(self) -> None:
        if not (self.width > 0 and self.height > 0):
            raise ValueError(f"box must have positive size, got w={self.width} h={self.height}")
        if not (0.0 <= self.confidence <= 1.0):
            raise ValueError(f"confidence must lie in [0, 1], got {self.confidence}")

    @property
    def y_bottom(self) -> float:
        return self.y_top + self.height

    @property
    def x_right(self) -> float:
        return self.x_left + self.width

    @property
    def center(self) -> tuple[float, float]:
        return (self.x_left + self.width / 2.0, self.y_top + self.height / 2.0)

    @property
    def area(self) -> float:
        return self.width * self.height

    def tlwh(self) -> np.ndarray:
        return np.array([self.x_left, self.y_top, self.width, self.height], dtype=np.float64)

    def xyxy(self) -> np.ndarray:
        return np.array([self.x_left, self.y_top, self.x_right, self.y_bottom], dtype=np.float64)

    @classmethod
    def from_tlwh(cls, values, confidence: float = 1.0) -> "BoundingBox":
        x, y, w, h = (float(v) for v in values)
        return cls(x, y, w, h, confidence)

    @classmethod
    def from_xyxy(cls, values, confidence: float = 1.0) -> "BoundingBox":
        x1, y1, x2, y2 = (float(v) for v in values)
        return cls(x1, y1, x2 - x1, y2 - y1, confidence)

    def with_confidence(self, confidence: float) -> "BoundingBox":
        return replace(self, confidence=confidence)


def iou(a: BoundingBox, b: BoundingBox) -> float:
    iw = min(a.x_right, b.x_right) - max(a.x_left, b.x_left)
    ih = min(a.y_bottom, b.y_bottom) - max(a.y_top, b.y_top)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    return min(inter / (a.area + b.area - inter), 1.0)  # rounding can overshoot 1


def iou_matrix(boxes_a: np.ndarray, boxes_b: np.ndarray) -> np.ndarray:
    """Pairwise IoU for (n, 4) and (m, 4) arrays in tlwh form."""
    a = np.asarray(boxes_a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(boxes_b, dtype=np.float64).reshape(-1, 4)
    ax1, ay1 = a[:, None, 0], a[:, None, 1]
    ax2, ay2 = ax1 + a[:, None, 2], ay1 + a[:, None, 3]
    bx1, by1 = b[None, :, 0], b[None, :, 1]
    bx2, by2 = bx1 + b[None, :, 2], by1 + b[None, :, 3]
    iw = np.clip(np.minimum(ax2, bx2) - np.maximum(ax1, bx1), 0.0, None)
    ih = np.clip(np.minimum(ay2, by2) - np.maximum(ay1, by1), 0.0, None)
    inter = iw * ih
    union = a[:, None, 2] * a[:, None, 3] + b[None, :, 2] * b[None, :, 3] - inter
    return np.minimum(inter / union, 1.0)


def expand(b: BoundingBox, e_rate: float) -> BoundingBox:
    """Grow both sides by ``e_rate`` of their own length, keeping the center fixed."""
    if e_rate < 0:
        raise ValueError("expansion rate must be non-negative")
    cx, cy = b.center
    w = b.width * (1.0 + e_rate)
    h = b.height * (1.0 + e_rate)
    return BoundingBox(cx - w / 2.0, cy - h / 2.0, w, h, b.confidence)


@dataclass(frozen=True, slots=True)
class AffineTransform:
    """2x3 planar affine map ``p -> [[a, b], [c, d]] @ p + [tx, ty]``."""

    a: float = 1.0
    b: float = 0.0
    tx: float = 0.0
    c: float = 0.0
    d: float = 1.0
    ty: float = 0.0

    def __post_init__(self) -> None:
        coeffs = (self.a, self.b, self.tx, self.c, self.d, self.ty)
        if not all(np.isfinite(coeffs)):
            raise ValueError("affine coefficients must be finite")
        if abs(self.a * self.d - self.b * self.c) <= 1e-9:
            raise ValueError("affine transform has a singular linear part")

    @classmethod
    def identity(cls) -> "AffineTransform":
        return cls()

    @classmethod
    def translation(cls, dx: float, dy: float) -> "AffineTransform":
        return cls(tx=dx, ty=dy)

    @classmethod
    def scale(cls, s: float) -> "AffineTransform":
        return cls(a=s, d=s)

    @classmethod
    def from_matrix(cls, m) -> "AffineTransform":
        m = np.asarray(m, dtype=np.float64).reshape(2, 3)
        return cls(m[0, 0], m[0, 1], m[0, 2], m[1, 0], m[1, 1], m[1, 2])

    def matrix(self) -> np.ndarray:
        return np.array([[self.a, self.b, self.tx], [self.c, self.d, self.ty]], dtype=np.float64)

    @property
    def linear(self) -> np.ndarray:
        return np.array([[self.a, self.b], [self.c, self.d]], dtype=np.float64)

    @property
    def offset(self) -> np.ndarray:
        return np.array([self.tx, self.ty], dtype=np.float64)

    def apply_point(self, x: float, y: float) -> tuple[float, float]:
        return (self.a * x + self.b * y + self.tx, self.c * x + self.d * y + self.ty)

    def is_identity(self) -> bool:
        return self == AffineTransform()


def apply_affine(t: AffineTransform, b: BoundingBox) -> BoundingBox:
    """Map the top-left and bottom-right corners and span them with an axis-aligned box."""
    x1, y1 = t.apply_point(b.x_left, b.y_top)
    x2, y2 = t.apply_point(b.x_right, b.y_bottom)
    left, right = min(x1, x2), max(x1, x2)
    top, bottom = min(y1, y2), max(y1, y2)
    return BoundingBox(left, top, right - left, bottom - top, b.confidence)


def compose(outer: AffineTransform, inner: AffineTransform) -> AffineTransform:
    """Transform equivalent to applying ``inner`` first, then ``outer``."""
    lin = outer.linear @ inner.linear
    off = outer.linear @ inner.offset + outer.offset
    return AffineTransform(lin[0, 0], lin[0, 1], off[0], lin[1, 0], lin[1, 1], off[1])
