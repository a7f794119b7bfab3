"""Axis-aligned box arithmetic and the zoom-factor bisection searches."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional, Sequence


class BoxError(ValueError):
    pass


@dataclass(frozen=True)
class BoundingBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        coords = (self.x_min, self.y_min, self.x_max, self.y_max)
        if not all(math.isfinite(c) for c in coords):
            raise BoxError(f"non-finite box coordinates {coords}")
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise BoxError(f"degenerate box {coords}")

    @classmethod
    def from_sequence(cls, values: Sequence[float]) -> "BoundingBox":
        if len(values) != 4:
            raise BoxError(f"box needs 4 coordinates, got {len(values)}")
        return cls(*(float(v) for v in values))

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)

    def contains(self, other: "BoundingBox") -> bool:
        """Inclusive containment: touching edges still count."""
        return (
            self.x_min <= other.x_min
            and self.y_min <= other.y_min
            and self.x_max >= other.x_max
            and self.y_max >= other.y_max
        )


class RelativePosition(enum.Enum):
    DISJOINT = "disjoint"
    INTERSECT_NO_CONTAIN = "intersect"
    A_CONTAINS_B = "a_contains_b"
    B_CONTAINS_A = "b_contains_a"


@dataclass(frozen=True)
class ScaleSearchConfig:
    """Bisection bounds for a zoom search.

    ``early_stop`` enables the literal threshold exit (return as soon as
    ``0 < IOU <= iter_threshold``). It is off by default because for boxes of
    very different sizes the IOU stays under the threshold long after the
    boxes start to overlap, which makes the returned factor imprecise.
    """

    scale_min: float = 1.0
    scale_max: float = 8.0
    iter_num: int = 30
    iter_threshold: float = 1e-3
    early_stop: bool = False

    def __post_init__(self):
        if not (0 < self.scale_min < self.scale_max):
            raise ValueError(f"need 0 < scale_min < scale_max, got {self.scale_min}, {self.scale_max}")
        if self.iter_num < 1:
            raise ValueError("iter_num must be >= 1")
        if not (0 < self.iter_threshold < 1):
            raise ValueError("iter_threshold must lie in (0, 1)")

    @property
    def resolution(self) -> float:
        return (self.scale_max - self.scale_min) / 2.0 ** self.iter_num


ZOOM_IN_DEFAULT = ScaleSearchConfig(1.0, 8.0)
ZOOM_OUT_DEFAULT = ScaleSearchConfig(0.01, 1.0)


def intersection_area(a: BoundingBox, b: BoundingBox) -> float:
    w = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    h = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if w <= 0 or h <= 0:
        return 0.0
    return w * h


def iou(a: BoundingBox, b: BoundingBox) -> float:
    inter = intersection_area(a, b)
    if inter == 0.0:
        return 0.0
    return inter / (a.area + b.area - inter)


def classify_pair(a: BoundingBox, b: BoundingBox) -> RelativePosition:
    # subject priority: identical boxes report A_CONTAINS_B
    if a.contains(b):
        return RelativePosition.A_CONTAINS_B
    if b.contains(a):
        return RelativePosition.B_CONTAINS_A
    if iou(a, b) == 0.0:
        return RelativePosition.DISJOINT
    return RelativePosition.INTERSECT_NO_CONTAIN


def scale_box(box: BoundingBox, factor: float) -> BoundingBox:
    """Scale ``box`` about its center by ``factor``."""
    if not factor > 0:
        raise ValueError(f"scale factor must be positive, got {factor}")
    cx, cy = box.center
    hw = box.width * factor / 2.0
    hh = box.height * factor / 2.0
    return BoundingBox(cx - hw, cy - hh, cx + hw, cy + hh)


def _iou_at(a: BoundingBox, b: BoundingBox, factor: float) -> float:
    return iou(scale_box(a, factor), scale_box(b, factor))


def _touching_scale(a: BoundingBox, b: BoundingBox, lo: float, hi: float, cfg: ScaleSearchConfig) -> float:
    # Invariant: boxes are disjoint at lo and intersect at hi.
    for _ in range(cfg.iter_num):
        mid = (lo + hi) / 2.0
        overlap = _iou_at(a, b, mid)
        if cfg.early_stop and 0.0 < overlap <= cfg.iter_threshold:
            return mid
        if overlap > 0.0:
            hi = mid
        else:
            lo = mid
    return hi


def max_zoom_in_factor(a: BoundingBox, b: BoundingBox, cfg: ScaleSearchConfig = ZOOM_IN_DEFAULT) -> Optional[float]:
    """Smallest common center-scale at which two disjoint boxes overlap.

    Returns ``None`` when the boxes are still apart at ``cfg.scale_max``.
    """
    if classify_pair(a, b) is not RelativePosition.DISJOINT:
        raise ValueError("max_zoom_in_factor requires disjoint boxes")
    if _iou_at(a, b, cfg.scale_min) > 0.0:
        raise ValueError(f"boxes already intersect at scale_min={cfg.scale_min}")
    if _iou_at(a, b, cfg.scale_max) == 0.0:
        return None
    return _touching_scale(a, b, cfg.scale_min, cfg.scale_max, cfg)


def min_zoom_out_factor(a: BoundingBox, b: BoundingBox, cfg: ScaleSearchConfig = ZOOM_OUT_DEFAULT) -> float:
    """Smallest common center-scale at which two intersecting boxes still overlap.

    If they overlap even at ``cfg.scale_min`` that bound is returned as-is.
    """
    if classify_pair(a, b) is not RelativePosition.INTERSECT_NO_CONTAIN:
        raise ValueError("min_zoom_out_factor requires intersecting, non-nested boxes")
    if _iou_at(a, b, cfg.scale_min) > 0.0:
        return cfg.scale_min
    if _iou_at(a, b, cfg.scale_max) == 0.0:
        raise ValueError(f"boxes do not intersect at scale_max={cfg.scale_max}")
    return _touching_scale(a, b, cfg.scale_min, cfg.scale_max, cfg)


def critical_scale(a: BoundingBox, b: BoundingBox) -> float:
    """Closed-form scale where the two center-scaled boxes start to overlap.

    Overlap on an axis needs ``|center gap| < s * (w_a + w_b) / 2``; both axes
    must overlap, so the threshold is the larger of the two per-axis ratios.
    """
    (ax, ay), (bx, by) = a.center, b.center
    rx = abs(ax - bx) / ((a.width + b.width) / 2.0)
    ry = abs(ay - by) / ((a.height + b.height) / 2.0)
    return max(rx, ry)
