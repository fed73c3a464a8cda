"""Truncation severity, box overlap scores, segmentation overlap, pixel error."""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable, NamedTuple

import numpy as np

from .raster import ImageGrid, MaskGrid, boundary

__all__ = [
    "BBox",
    "SeverityLevel",
    "BoxLosses",
    "GIOU_LOSS_WEIGHT",
    "mask_bbox",
    "tci",
    "scan_tci",
    "severity_from_tci",
    "giou",
    "box_iou",
    "bbox_losses",
    "dice",
    "mask_iou",
    "pixel_rmse",
]

GIOU_LOSS_WEIGHT = 1500.0


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box in continuous pixel coordinates."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self) -> None:
        vals = (self.x_min, self.y_min, self.x_max, self.y_max)
        if not all(np.isfinite(v) for v in vals):
            raise ValueError(f"box coordinates must be finite, got {vals}")
        if self.x_max < self.x_min or self.y_max < self.y_min:
            raise ValueError(f"box must satisfy max >= min per axis, got {vals}")
        for name in ("x_min", "y_min", "x_max", "y_max"):
            object.__setattr__(self, name, float(getattr(self, name)))

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)

    def union_bounds(self, other: "BBox") -> "BBox":
        return BBox(
            min(self.x_min, other.x_min),
            min(self.y_min, other.y_min),
            max(self.x_max, other.x_max),
            max(self.y_max, other.y_max),
        )

    def contains(self, other: "BBox", tol: float = 0.0) -> bool:
        """True when `other` lies inside this box (tol loosens every edge)."""
        return (
            self.x_min - tol <= other.x_min
            and self.y_min - tol <= other.y_min
            and self.x_max + tol >= other.x_max
            and self.y_max + tol >= other.y_max
        )


class SeverityLevel(str, enum.Enum):
    """Truncation severity bands over the boundary-overlap index."""

    NONE = "none"
    TRACE = "trace"
    MILD = "mild"
    MODERATE = "moderate"
    SEVERE = "severe"

    @property
    def rank(self) -> int:
        return _SEVERITY_RANK[self]


_SEVERITY_RANK = {
    SeverityLevel.NONE: 0,
    SeverityLevel.TRACE: 1,
    SeverityLevel.MILD: 2,
    SeverityLevel.MODERATE: 3,
    SeverityLevel.SEVERE: 4,
}


def severity_from_tci(value: float) -> SeverityLevel:
    """Band a truncation index: 0, (0, .15], (.15, .3], (.3, .5], (.5, 1]."""
    if not (0.0 <= value <= 1.0):
        raise ValueError(f"truncation index must lie in [0, 1], got {value}")
    if value == 0.0:
        return SeverityLevel.NONE
    if value <= 0.15:
        return SeverityLevel.TRACE
    if value <= 0.3:
        return SeverityLevel.MILD
    if value <= 0.5:
        return SeverityLevel.MODERATE
    return SeverityLevel.SEVERE


def mask_bbox(mask: MaskGrid) -> BBox:
    """Tight pixel-extent box of a mask: [min_col, min_row, max_col+1, max_row+1]."""
    if not mask.bits.any():
        raise ValueError("cannot take the bounding box of an empty mask")
    rows = np.flatnonzero(mask.bits.any(axis=1))
    cols = np.flatnonzero(mask.bits.any(axis=0))
    return BBox(float(cols[0]), float(rows[0]), float(cols[-1] + 1), float(rows[-1] + 1))


def tci(body: MaskGrid, fov: MaskGrid) -> float:
    """Fraction of the body boundary that coincides with the FOV boundary.

    0 means the body outline is fully inside the usable FOV; values
    approach 1 as more of the outline is cut off by it.
    """
    if body.bits.shape != fov.bits.shape:
        raise ValueError("body and FOV masks must share a shape")
    eb = boundary(body).bits
    denom = int(eb.sum())
    if denom == 0:
        raise ValueError("body mask is empty; truncation index undefined")
    ef = boundary(fov).bits
    return float((eb & ef).sum() / denom)


def scan_tci(slice_tcis: Iterable[float]) -> float:
    """Scan-level index: mean of the per-slice indices (e.g. T5/T8/T10)."""
    vals = [float(v) for v in slice_tcis]
    if not vals:
        raise ValueError("scan-level index needs at least one slice value")
    for v in vals:
        if not (0.0 <= v <= 1.0):
            raise ValueError(f"slice index must lie in [0, 1], got {v}")
    return float(np.mean(vals))


def _intersection_area(a: BBox, b: BBox) -> float:
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    return iw * ih


def box_iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two boxes; degenerate unions give 0 (or 1 if equal)."""
    if a == b:
        return 1.0
    inter = _intersection_area(a, b)
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def giou(a: BBox, b: BBox) -> float:
    """Overlap score: IoU minus the enclosing-box area not covered by the union.

    Ranges over (-1, 1]; 1 iff the boxes coincide, negative when they
    are far apart relative to their joint enclosing box. Degenerate
    zero-area boxes are handled by limits: identical boxes score 1,
    otherwise zero areas contribute zero intersection and union.
    """
    if a == b:
        return 1.0
    inter = _intersection_area(a, b)
    union = a.area + b.area - inter
    iou = inter / union if union > 0.0 else 0.0
    hull = a.union_bounds(b).area
    if hull <= 0.0:
        return iou
    return iou - (hull - union) / hull


class BoxLosses(NamedTuple):
    mse: float
    giou_loss: float
    total: float


def bbox_losses(pred: BBox, gt: BBox, lam: float = GIOU_LOSS_WEIGHT) -> BoxLosses:
    """Regression losses for a predicted box against its ground truth.

    mse averages the squared differences of the 4 coordinates,
    giou_loss = 1 - giou (so minimizing it maximizes the overlap
    score), and total = mse + lam * giou_loss with the default weight
    lam = 1500.
    """
    if lam < 0:
        raise ValueError(f"loss weight must be nonnegative, got {lam}")
    p = np.asarray(pred.as_tuple())
    t = np.asarray(gt.as_tuple())
    mse = float(np.mean((p - t) ** 2))
    gl = 1.0 - giou(pred, gt)
    return BoxLosses(mse=mse, giou_loss=gl, total=mse + lam * gl)


def dice(a: MaskGrid, b: MaskGrid) -> float:
    """Dice overlap 2|A&B| / (|A|+|B|); two empty masks count as identical (1)."""
    if a.bits.shape != b.bits.shape:
        raise ValueError("masks must share a shape")
    sa = int(a.bits.sum())
    sb = int(b.bits.sum())
    if sa + sb == 0:
        return 1.0
    return 2.0 * int((a.bits & b.bits).sum()) / (sa + sb)


def mask_iou(a: MaskGrid, b: MaskGrid) -> float:
    """Pixel-mask IoU; two empty masks count as identical (1)."""
    if a.bits.shape != b.bits.shape:
        raise ValueError("masks must share a shape")
    union = int((a.bits | b.bits).sum())
    if union == 0:
        return 1.0
    return int((a.bits & b.bits).sum()) / union


def pixel_rmse(x: ImageGrid, y: ImageGrid, region: MaskGrid) -> float:
    """Root-mean-square HU difference between two images over a region."""
    if x.values.shape != y.values.shape or x.values.shape != region.bits.shape:
        raise ValueError("images and region mask must share a shape")
    n = region.count()
    if n == 0:
        raise ValueError("pixel RMSE over an empty region is undefined")
    diff = x.values[region.bits] - y.values[region.bits]
    return float(np.sqrt(np.mean(diff * diff)))
