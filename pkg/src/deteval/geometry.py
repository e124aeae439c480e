"""Axis-aligned box primitives and overlap measures."""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class Box2D:
    """Corner-encoded rectangle (left, top, right, bottom) in continuous pixel coordinates.

    Zero- or negative-area boxes are rejected at construction: a degenerate
    box in an evaluation pipeline means corrupt input, and silently treating
    it as "no overlap" would hide the corruption.
    """

    left: float
    top: float
    right: float
    bottom: float

    def __post_init__(self) -> None:
        for name in ("left", "top", "right", "bottom"):
            value = getattr(self, name)
            if not isinstance(value, (int, float)) or not math.isfinite(value):
                raise ValueError(f"box coordinate {name!r} is not a finite number: {value!r}")
        if not (self.left < self.right and self.top < self.bottom):
            raise ValueError(
                "degenerate box: need left < right and top < bottom, got "
                f"({self.left}, {self.top}, {self.right}, {self.bottom})"
            )

    @property
    def width(self) -> float:
        return self.right - self.left

    @property
    def height(self) -> float:
        return self.bottom - self.top

    @property
    def area(self) -> float:
        return self.width * self.height

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.left, self.top, self.right, self.bottom)


def intersection_area(a: Box2D, b: Box2D) -> float:
    """Overlap area of two boxes; 0.0 when they are disjoint or merely touch."""
    w = min(a.right, b.right) - max(a.left, b.left)
    h = min(a.bottom, b.bottom) - max(a.top, b.top)
    if w <= 0.0 or h <= 0.0:
        return 0.0
    return w * h


def iou(a: Box2D, b: Box2D) -> float:
    """Intersection-over-union of two boxes. Symmetric, in [0, 1]."""
    inter = intersection_area(a, b)
    if inter == 0.0:
        return 0.0
    return inter / (a.area + b.area - inter)


def overlap_over_area(a: Box2D, region: Box2D) -> float:
    """Fraction of box ``a`` covered by ``region``. Asymmetric by design."""
    return intersection_area(a, region) / a.area


def expected_stereo_depth_error(
    z: float, baseline: float, focal: float, disparity_error: float
) -> float:
    """Depth error implied by a disparity error, z**2 * dD / (baseline * focal).

    ``z`` (meters), ``baseline`` (meters) and ``focal`` (pixels) must be
    strictly positive; ``disparity_error`` (pixels) may be zero. The result
    scales quadratically with depth.
    """
    if z <= 0 or baseline <= 0 or focal <= 0:
        raise ValueError("z, baseline and focal must be strictly positive")
    if disparity_error < 0:
        raise ValueError("disparity_error must be non-negative")
    return z * z * disparity_error / (baseline * focal)
