"""Synthetic elliptical torso slices with known tissue composition.

Each phantom is an elliptical body on background air: a thin
subcutaneous-fat rind over a muscle band, a visceral-fat interior
holding two lung ellipses at the window floor, plus smooth
low-amplitude texture inside the soft tissue so the infill problem is
not trivially constant. The muscle band sits close to the surface so
even shallow rim cuts clip some of it, as they do anatomically. The
geometry keeps a safety margin to the frame, so every phantom is a
complete, untruncated slice, and the true tissue masks are exactly
what the HU-range classifier recovers from the rendered image.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any

import numpy as np

from .bcstats import Anthro, classify_tissues
from .raster import ImageGrid, MaskGrid, bilinear_sample

__all__ = [
    "FAT_HU",
    "MUSCLE_HU",
    "LUNG_HU",
    "BACKGROUND_HU",
    "PhantomSpec",
    "Phantom",
    "sample_phantom_spec",
    "build_phantom",
    "generate_phantom",
]

FAT_HU = -100.0
MUSCLE_HU = 40.0
LUNG_HU = -150.0
BACKGROUND_HU = -150.0

TEXTURE_AMPLITUDE_HU = 8.0  # keeps fat/muscle inside their classifier bands
_TEXTURE_CELLS = 8

# geometry ranges as fractions of the frame dimension
_SEMI_X_RANGE = (0.30, 0.44)
_SEMI_Y_RANGE = (0.24, 0.38)
_CENTER_JITTER = 0.02
_TILT_RANGE = (-0.15, 0.15)
_MUSCLE_SCALE_RANGE = (0.96, 0.985)
_MUSCLE_INNER_FRAC = 0.88  # band inner edge as a fraction of its outer edge
_LUNG_CENTER_X = 0.42  # of the muscle semi-axis
_LUNG_SEMI = (0.26, 0.48)  # of the muscle semi-axes


@dataclass(frozen=True)
class PhantomSpec:
    """Full recipe for one phantom; rebuilding from it is deterministic."""

    dim: int
    spacing: float
    center: tuple[float, float]
    semi_x: float
    semi_y: float
    tilt: float
    muscle_scale: float
    texture_seed: int
    anthro: Anthro

    def to_dict(self) -> dict[str, Any]:
        return {
            "dim": self.dim,
            "spacing": self.spacing,
            "center": list(self.center),
            "semi_x": self.semi_x,
            "semi_y": self.semi_y,
            "tilt": self.tilt,
            "muscle_scale": self.muscle_scale,
            "texture_seed": self.texture_seed,
            "anthro": {
                "height": self.anthro.height,
                "weight": self.anthro.weight,
                "sex": self.anthro.sex,
            },
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "PhantomSpec":
        return cls(
            dim=d["dim"],
            spacing=d["spacing"],
            center=tuple(d["center"]),
            semi_x=d["semi_x"],
            semi_y=d["semi_y"],
            tilt=d["tilt"],
            muscle_scale=d["muscle_scale"],
            texture_seed=d["texture_seed"],
            anthro=Anthro(**d["anthro"]),
        )


@dataclass(frozen=True)
class Phantom:
    image: ImageGrid
    body: MaskGrid
    sat: MaskGrid
    muscle: MaskGrid
    spec: PhantomSpec


def _ellipse_membership(
    dim: int, cx: float, cy: float, ax: float, ay: float, tilt: float
) -> np.ndarray:
    coords = np.arange(dim, dtype=np.float64) + 0.5
    x, y = np.meshgrid(coords, coords)
    dx = x - cx
    dy = y - cy
    c, s = math.cos(tilt), math.sin(tilt)
    u = (c * dx + s * dy) / ax
    v = (-s * dx + c * dy) / ay
    return u * u + v * v <= 1.0


def _smooth_texture(dim: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    coarse = rng.uniform(-TEXTURE_AMPLITUDE_HU, TEXTURE_AMPLITUDE_HU, size=(_TEXTURE_CELLS, _TEXTURE_CELLS))
    ratio = _TEXTURE_CELLS / dim
    pos = np.clip((np.arange(dim) + 0.5) * ratio - 0.5, 0.0, _TEXTURE_CELLS - 1.0)
    gx, gy = np.meshgrid(pos, pos)
    return bilinear_sample(coarse, gx, gy, fill=0.0)


def sample_phantom_spec(
    rng: np.random.Generator, dim: int = 256, spacing: float = 1.5
) -> PhantomSpec:
    """Draw a phantom recipe; body weight tracks the analytic body area."""
    if dim < 32:
        raise ValueError(f"dim must be >= 32, got {dim}")
    if spacing <= 0:
        raise ValueError(f"spacing must be positive, got {spacing}")
    semi_x = float(rng.uniform(*_SEMI_X_RANGE)) * dim
    semi_y = float(rng.uniform(*_SEMI_Y_RANGE)) * dim
    cx = dim / 2.0 + float(rng.uniform(-_CENTER_JITTER, _CENTER_JITTER)) * dim
    cy = dim / 2.0 + float(rng.uniform(-_CENTER_JITTER, _CENTER_JITTER)) * dim
    tilt = float(rng.uniform(*_TILT_RANGE))
    muscle_scale = float(rng.uniform(*_MUSCLE_SCALE_RANGE))
    texture_seed = int(rng.integers(0, 2**63))

    sex = "male" if rng.random() < 0.5 else "female"
    height = float(rng.uniform(1.5, 1.95))
    body_area_cm2 = math.pi * semi_x * semi_y * (spacing / 10.0) ** 2
    weight = 0.12 * body_area_cm2 + float(rng.uniform(-5.0, 5.0))
    weight = float(min(max(weight, 35.0), 200.0))
    return PhantomSpec(
        dim=dim,
        spacing=spacing,
        center=(cx, cy),
        semi_x=semi_x,
        semi_y=semi_y,
        tilt=tilt,
        muscle_scale=muscle_scale,
        texture_seed=texture_seed,
        anthro=Anthro(height=height, weight=weight, sex=sex),
    )


def build_phantom(spec: PhantomSpec) -> Phantom:
    """Render a phantom recipe into image and masks."""
    dim = spec.dim
    cx, cy = spec.center
    body = _ellipse_membership(dim, cx, cy, spec.semi_x, spec.semi_y, spec.tilt)
    ax_m = spec.semi_x * spec.muscle_scale
    ay_m = spec.semi_y * spec.muscle_scale
    band_outer = _ellipse_membership(dim, cx, cy, ax_m, ay_m, spec.tilt)
    band_inner = _ellipse_membership(
        dim, cx, cy, ax_m * _MUSCLE_INNER_FRAC, ay_m * _MUSCLE_INNER_FRAC, spec.tilt
    )
    c, s = math.cos(spec.tilt), math.sin(spec.tilt)
    lungs = np.zeros((dim, dim), dtype=bool)
    for side in (-1.0, 1.0):
        # lung centers sit on the (tilted) transverse axis of the muscle band
        lx = cx + side * _LUNG_CENTER_X * ax_m * c
        ly = cy + side * _LUNG_CENTER_X * ax_m * s
        lungs |= _ellipse_membership(
            dim, lx, ly, _LUNG_SEMI[0] * ax_m, _LUNG_SEMI[1] * ay_m, spec.tilt
        )

    values = np.full((dim, dim), BACKGROUND_HU)
    values[body] = FAT_HU  # rind outside the band, visceral fat inside it
    values[band_outer & ~band_inner] = MUSCLE_HU
    soft = body & ~lungs
    values += _smooth_texture(dim, spec.texture_seed) * soft
    values[lungs & body] = LUNG_HU

    img = ImageGrid(values, spacing=spec.spacing)
    body_mask = MaskGrid(body)
    sat, muscle = classify_tissues(img, body_mask)
    return Phantom(image=img, body=body_mask, sat=sat, muscle=muscle, spec=spec)


def generate_phantom(
    rng: np.random.Generator, dim: int = 256, spacing: float = 1.5
) -> Phantom:
    return build_phantom(sample_phantom_spec(rng, dim=dim, spacing=spacing))
