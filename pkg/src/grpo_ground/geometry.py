"""Axis-aligned bounding boxes on the unit square: area, IoU, threshold accuracy.

Coordinates are normalized reals in [0, 1]. Predicted boxes are allowed to
be degenerate (x1 >= x2 or y1 >= y2) and then have area 0 by definition;
ground-truth boxes must be strictly ordered with a minimum area.
"""

from __future__ import annotations

from dataclasses import dataclass

DEFAULT_MIN_GT_AREA = 0.0025


@dataclass(frozen=True)
class BBox:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        for name in ("x1", "y1", "x2", "y2"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"BBox.{name}={v!r} outside [0, 1]")

    @property
    def degenerate(self) -> bool:
        return self.x1 >= self.x2 or self.y1 >= self.y2

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)


def require_ground_truth(box: BBox, min_area: float = DEFAULT_MIN_GT_AREA) -> BBox:
    """Validate the ground-truth invariants (strict ordering, minimum area)."""
    if box.degenerate:
        raise ValueError(f"ground-truth box must satisfy x1 < x2 and y1 < y2: {box}")
    if area(box) < min_area:
        raise ValueError(f"ground-truth box area {area(box)} below minimum {min_area}")
    return box


def area(box: BBox) -> float:
    return max(0.0, box.x2 - box.x1) * max(0.0, box.y2 - box.y1)


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union; 0 for degenerate boxes or empty union."""
    if a.degenerate or b.degenerate:
        return 0.0
    inter_w = min(a.x2, b.x2) - max(a.x1, b.x1)
    inter_h = min(a.y2, b.y2) - max(a.y1, b.y1)
    inter = max(0.0, inter_w) * max(0.0, inter_h)
    union = area(a) + area(b) - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def acc_at_threshold(pairs: list[tuple[BBox, BBox]], tau: float = 0.5) -> float:
    """Fraction of (predicted, ground-truth) pairs with IoU strictly above tau."""
    if not pairs:
        raise ValueError("no samples")
    if not (0.0 < tau < 1.0):
        raise ValueError(f"tau must lie in (0, 1), got {tau}")
    hits = sum(1 for pred, gt in pairs if iou(pred, gt) > tau)
    return hits / len(pairs)
