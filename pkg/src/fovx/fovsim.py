"""Synthetic field-of-view truncation for complete axial CT slices.

The usable FOV is the intersection of a reduced circular scan FOV
(radius drawn as a fraction of the half-dimension) with a square
display FOV, laid out in one of three patterns:

- "a": display square inscribed in the scan circle (side = radius * sqrt(2)),
- "b": display square equal to the circle's bounding box (side = 2 * radius),
- "c": smaller display square offset away from the center, constrained
  to stay inside the circle's bounding box but never fully inside the
  circle's inscribed square (where the circle could not clip it).

Pixels outside the usable FOV are overwritten with the display-window
floor, which is how truncated regions actually present after windowing.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Any

import numpy as np

from .metrics import BBox, SeverityLevel, mask_bbox, severity_from_tci, tci
from .raster import (
    AffineAug,
    ImageGrid,
    MaskGrid,
    apply_affine,
    bilinear_sample,
    sample_affine_aug,
    touches_border,
)

__all__ = [
    "WINDOW_FLOOR_HU",
    "WINDOW_CEIL_HU",
    "FovSpec",
    "SimConfig",
    "CropTransform",
    "TruncationSample",
    "apply_window",
    "sample_fov",
    "fov_mask",
    "corrupt",
    "crop_transform",
    "cropped_fov_mask",
    "crop_to_dfov",
    "generate_sample",
]

WINDOW_FLOOR_HU = -150.0
WINDOW_CEIL_HU = 150.0

_PATTERNS = ("a", "b", "c")
_MAX_DRAW_ATTEMPTS = 100
_GEOM_TOL = 1e-6


def _square_inside_inscribed_square(
    half_side: float, ox: float, oy: float, radius: float
) -> bool:
    # inscribed square of the circle has half-side radius/sqrt(2)
    h = radius / math.sqrt(2.0)
    return abs(ox) + half_side <= h and abs(oy) + half_side <= h


@dataclass(frozen=True)
class FovSpec:
    """Geometry of one truncation draw, in pixel units.

    The scan circle sits at `rfov_center` (the image center for every
    draw of `sample_fov`); the display square of side `dfov_side` is
    centered at `dfov_center`.
    """

    pattern: str
    rfov_center: tuple[float, float]
    rfov_radius: float
    dfov_center: tuple[float, float]
    dfov_side: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "rfov_center", tuple(float(c) for c in self.rfov_center))
        object.__setattr__(self, "dfov_center", tuple(float(c) for c in self.dfov_center))
        if self.pattern not in _PATTERNS:
            raise ValueError(f"pattern must be one of {_PATTERNS}, got {self.pattern!r}")
        if len(self.rfov_center) != 2 or len(self.dfov_center) != 2:
            raise ValueError("centers must be (x, y) pairs")
        if self.rfov_radius <= 0:
            raise ValueError(f"rfov_radius must be positive, got {self.rfov_radius}")
        if self.dfov_side <= 0:
            raise ValueError(f"dfov_side must be positive, got {self.dfov_side}")
        r = self.rfov_radius
        ox = self.dfov_center[0] - self.rfov_center[0]
        oy = self.dfov_center[1] - self.rfov_center[1]
        if self.pattern == "a":
            if abs(self.dfov_side - r * math.sqrt(2.0)) > _GEOM_TOL * r or (ox, oy) != (0.0, 0.0):
                raise ValueError("pattern a requires a centered square of side radius*sqrt(2)")
        elif self.pattern == "b":
            if abs(self.dfov_side - 2.0 * r) > _GEOM_TOL * r or (ox, oy) != (0.0, 0.0):
                raise ValueError("pattern b requires a centered square of side 2*radius")
        else:
            half = self.dfov_side / 2.0
            if abs(ox) + half > r + _GEOM_TOL * r or abs(oy) + half > r + _GEOM_TOL * r:
                raise ValueError("pattern c square must stay inside the circle's bounding box")
            if _square_inside_inscribed_square(half, ox, oy, r):
                raise ValueError(
                    "pattern c square must not sit fully inside the circle's inscribed square"
                )

    def to_dict(self) -> dict[str, Any]:
        return {
            "pattern": self.pattern,
            "rfov_center": list(self.rfov_center),
            "rfov_radius": self.rfov_radius,
            "dfov_center": list(self.dfov_center),
            "dfov_side": self.dfov_side,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "FovSpec":
        return cls(
            pattern=d["pattern"],
            rfov_center=tuple(d["rfov_center"]),
            rfov_radius=d["rfov_radius"],
            dfov_center=tuple(d["dfov_center"]),
            dfov_side=d["dfov_side"],
        )


@dataclass(frozen=True)
class SimConfig:
    """Knobs of the truncation simulator (defaults mirror the training setup)."""

    dim: int = 256
    fill_hu: float = WINDOW_FLOOR_HU
    p_a: float = 0.5
    p_b: float = 0.3
    p_c: float = 0.2
    r_rfov_range: tuple[float, float] = (0.6, 0.9)
    r_dfov_range: tuple[float, float] = (0.7, 1.0)
    augment: bool = True
    scale_range: tuple[float, float] = (0.7, 1.0)
    max_rotation_deg: float = 15.0
    max_translate_x: float = 0.2
    max_translate_y: float = 0.1
    bbox_training: bool = False
    max_per_severity: int = 5
    seed: int = 0

    def __post_init__(self) -> None:
        if self.dim < 8:
            raise ValueError(f"dim must be >= 8, got {self.dim}")
        probs = (self.p_a, self.p_b, self.p_c)
        if any(q < 0 for q in probs):
            raise ValueError(f"pattern probabilities must be nonnegative, got {probs}")
        if abs(sum(probs) - 1.0) > 1e-9:
            raise ValueError(f"pattern probabilities must sum to 1, got {probs}")
        for name, (lo, hi) in (
            ("r_rfov_range", self.r_rfov_range),
            ("r_dfov_range", self.r_dfov_range),
            ("scale_range", self.scale_range),
        ):
            if not (0 < lo <= hi <= 1.0):
                raise ValueError(f"{name} must satisfy 0 < lo <= hi <= 1, got ({lo}, {hi})")
        if not (WINDOW_FLOOR_HU <= self.fill_hu <= WINDOW_CEIL_HU):
            raise ValueError(f"fill_hu must lie inside the display window, got {self.fill_hu}")
        if self.max_per_severity < 1:
            raise ValueError(f"max_per_severity must be >= 1, got {self.max_per_severity}")
        if not (0 <= int(self.seed) < 2**64):
            raise ValueError("seed must fit an unsigned 64-bit integer")

    @property
    def pattern_probs(self) -> tuple[float, float, float]:
        return (self.p_a, self.p_b, self.p_c)

    def to_json(self) -> str:
        d = asdict(self)
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SimConfig":
        d = json.loads(text)
        for key in ("r_rfov_range", "r_dfov_range", "scale_range"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


def apply_window(
    img: ImageGrid, lo: float = WINDOW_FLOOR_HU, hi: float = WINDOW_CEIL_HU
) -> ImageGrid:
    """Clip HU values to the display window [lo, hi]."""
    if lo >= hi:
        raise ValueError(f"window must satisfy lo < hi, got ({lo}, {hi})")
    return ImageGrid(np.clip(img.values, lo, hi), spacing=img.spacing)


def sample_fov(cfg: SimConfig, rng: np.random.Generator) -> FovSpec:
    """Draw a truncation geometry per the configured pattern probabilities.

    Pattern "c" redraws its offset (bounded attempts) whenever the
    display square would land fully inside the circle's inscribed
    square, where it could never be clipped by the circle.
    """
    dim = cfg.dim
    center = (dim / 2.0, dim / 2.0)
    pattern = _PATTERNS[int(rng.choice(3, p=np.asarray(cfg.pattern_probs, dtype=float)))]
    r_rfov = float(rng.uniform(*cfg.r_rfov_range))
    radius = r_rfov * dim / 2.0

    if pattern == "a":
        return FovSpec("a", center, radius, center, radius * math.sqrt(2.0))
    if pattern == "b":
        return FovSpec("b", center, radius, center, 2.0 * radius)

    for _ in range(_MAX_DRAW_ATTEMPTS):
        r_dfov = float(rng.uniform(*cfg.r_dfov_range))
        side = r_dfov * 2.0 * radius
        max_off = dim * (1.0 - r_dfov) * r_rfov / 2.0
        ox = float(rng.uniform(-max_off, max_off))
        oy = float(rng.uniform(-max_off, max_off))
        if not _square_inside_inscribed_square(side / 2.0, ox, oy, radius):
            return FovSpec("c", center, radius, (center[0] + ox, center[1] + oy), side)
    raise RuntimeError("could not draw a pattern-c geometry clipped by the scan circle")


def fov_mask(spec: FovSpec, width: int, height: int) -> MaskGrid:
    """Rasterize the usable FOV: pixel centers inside both circle and square."""
    if width < 1 or height < 1:
        raise ValueError("mask dimensions must be positive")
    xs = np.arange(width, dtype=np.float64) + 0.5
    ys = np.arange(height, dtype=np.float64) + 0.5
    x, y = np.meshgrid(xs, ys)
    rcx, rcy = spec.rfov_center
    in_disc = (x - rcx) ** 2 + (y - rcy) ** 2 <= spec.rfov_radius**2
    half = spec.dfov_side / 2.0
    dcx, dcy = spec.dfov_center
    in_square = (np.abs(x - dcx) <= half) & (np.abs(y - dcy) <= half)
    return MaskGrid(in_disc & in_square)


def corrupt(img: ImageGrid, mask: MaskGrid, fill: float = WINDOW_FLOOR_HU) -> ImageGrid:
    """Overwrite everything outside the usable FOV with the fill value."""
    if img.values.shape != mask.bits.shape:
        raise ValueError("image and FOV mask must share a shape")
    return ImageGrid(np.where(mask.bits, img.values, fill), spacing=img.spacing)


@dataclass(frozen=True)
class CropTransform:
    """Similarity map from original pixel coordinates into a square crop.

    forward: (x, y) -> ((x - x0) * scale, (y - y0) * scale).
    """

    x0: float
    y0: float
    scale: float

    def forward_box(self, box: BBox) -> BBox:
        return BBox(
            (box.x_min - self.x0) * self.scale,
            (box.y_min - self.y0) * self.scale,
            (box.x_max - self.x0) * self.scale,
            (box.y_max - self.y0) * self.scale,
        )

    def inverse_box(self, box: BBox) -> BBox:
        return BBox(
            box.x_min / self.scale + self.x0,
            box.y_min / self.scale + self.y0,
            box.x_max / self.scale + self.x0,
            box.y_max / self.scale + self.y0,
        )


def crop_transform(spec: FovSpec, out_dim: int) -> CropTransform:
    """Coordinate map of `crop_to_dfov` for the given geometry."""
    half = spec.dfov_side / 2.0
    return CropTransform(
        x0=spec.dfov_center[0] - half,
        y0=spec.dfov_center[1] - half,
        scale=out_dim / spec.dfov_side,
    )


def cropped_fov_mask(spec: FovSpec, out_dim: int) -> MaskGrid:
    """Usable-FOV mask in crop coordinates.

    The crop frame is exactly the display square, so only the scan
    circle constrains membership there; the circle maps to a circle
    because the crop is an isotropic similarity.
    """
    if out_dim < 1:
        raise ValueError("out_dim must be positive")
    tr = crop_transform(spec, out_dim)
    cx = (spec.rfov_center[0] - tr.x0) * tr.scale
    cy = (spec.rfov_center[1] - tr.y0) * tr.scale
    radius = spec.rfov_radius * tr.scale
    coords = np.arange(out_dim, dtype=np.float64) + 0.5
    x, y = np.meshgrid(coords, coords)
    return MaskGrid((x - cx) ** 2 + (y - cy) ** 2 <= radius**2)


def crop_to_dfov(
    img: ImageGrid,
    body_bbox: BBox,
    spec: FovSpec,
    out_dim: int | None = None,
    fill: float = WINDOW_FLOOR_HU,
) -> tuple[ImageGrid, BBox]:
    """Resample the display-square region to a square grid of side out_dim.

    Returns the cropped image and the body box carried through the same
    shift-and-rescale; the transformed box may extend beyond [0, out_dim)
    when the body exceeds the display square.
    """
    if out_dim is None:
        out_dim = img.values.shape[0]
    if out_dim < 2:
        raise ValueError(f"out_dim must be >= 2, got {out_dim}")
    if spec.dfov_side < 8.0:
        raise ValueError(f"display square is degenerate ({spec.dfov_side:.2f} px)")
    tr = crop_transform(spec, out_dim)
    # output pixel center u+0.5 sits at original x = x0 + (u+0.5)/scale
    centers = (np.arange(out_dim, dtype=np.float64) + 0.5) / tr.scale
    xs = tr.x0 + centers - 0.5
    ys = tr.y0 + centers - 0.5
    gx, gy = np.meshgrid(xs, ys)
    vals = bilinear_sample(img.values, gx, gy, fill=fill)
    cropped = ImageGrid(vals, spacing=img.spacing / tr.scale)
    return cropped, tr.forward_box(body_bbox)


@dataclass(frozen=True)
class TruncationSample:
    """One simulated truncation draw with every frame needed downstream."""

    uncorrupted: ImageGrid
    corrupted: ImageGrid
    fov_mask: MaskGrid
    cropped: ImageGrid
    gt_bbox_cropped_space: BBox
    tci: float
    severity: SeverityLevel
    body: MaskGrid
    gt_bbox: BBox
    spec: FovSpec
    aug: AffineAug


def generate_sample(
    slice_img: ImageGrid,
    body: MaskGrid,
    cfg: SimConfig,
    rng: np.random.Generator,
) -> TruncationSample:
    """Augment a complete slice, then truncate it with a random FOV draw.

    The input slice is windowed first. Inputs must hold a complete body
    (not touching the frame). Augmentation redraws (bounded attempts)
    whenever it empties the body mask and, in bbox-training mode,
    whenever the body leaves the frame (full-extent box targets are
    only well defined for fully contained bodies).
    """
    if slice_img.values.shape != (cfg.dim, cfg.dim):
        raise ValueError(f"slice must be {cfg.dim}x{cfg.dim}, got {slice_img.values.shape}")
    if slice_img.values.shape != body.bits.shape:
        raise ValueError("slice and body mask must share a shape")
    if not body.bits.any():
        raise ValueError("body mask is empty")
    if touches_border(body):
        raise ValueError("input slice is already truncated (body touches the frame)")

    windowed = apply_window(slice_img)
    for _ in range(_MAX_DRAW_ATTEMPTS):
        if cfg.augment:
            aug = sample_affine_aug(
                rng,
                scale_range=cfg.scale_range,
                max_rotation_deg=cfg.max_rotation_deg,
                max_translate_x=cfg.max_translate_x,
                max_translate_y=cfg.max_translate_y,
            )
            aug_img, aug_body = apply_affine(windowed, body, aug, fill=cfg.fill_hu)
        else:
            aug = AffineAug()
            aug_img, aug_body = windowed, body
        if not aug_body.bits.any():
            continue
        if cfg.bbox_training and touches_border(aug_body):
            continue
        break
    else:
        raise ValueError("could not draw an augmentation keeping the body usable")

    spec = sample_fov(cfg, rng)
    fov = fov_mask(spec, cfg.dim, cfg.dim)
    corrupted = corrupt(aug_img, fov, cfg.fill_hu)
    # Severity is scored on the observed body: its artificial cut edges
    # fall on the FOV boundary, so the shared-boundary ratio measures
    # how much of the contour the truncation manufactured.
    observed = MaskGrid(aug_body.bits & fov.bits)
    t = tci(observed, fov) if observed.bits.any() else 1.0
    bbox = mask_bbox(aug_body)
    cropped, bbox_cropped = crop_to_dfov(corrupted, bbox, spec, out_dim=cfg.dim, fill=cfg.fill_hu)
    return TruncationSample(
        uncorrupted=aug_img,
        corrupted=corrupted,
        fov_mask=fov,
        cropped=cropped,
        gt_bbox_cropped_space=bbox_cropped,
        tci=t,
        severity=severity_from_tci(t),
        body=aug_body,
        gt_bbox=bbox,
        spec=spec,
        aug=aug,
    )
