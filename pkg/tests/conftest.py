"""Shared builders for the test suite."""
from __future__ import annotations

import math

import numpy as np
import pytest

from fovx.raster import ImageGrid, MaskGrid


def disc_mask(dim: int, cx: float, cy: float, r: float) -> MaskGrid:
    """Disc rasterized with the pixel-center membership rule."""
    ys, xs = np.mgrid[0:dim, 0:dim]
    px = xs + 0.5
    py = ys + 0.5
    return MaskGrid((px - cx) ** 2 + (py - cy) ** 2 <= r * r)


def rect_mask(dim: int, x0: int, y0: int, x1: int, y1: int) -> MaskGrid:
    bits = np.zeros((dim, dim), dtype=bool)
    bits[y0:y1, x0:x1] = True
    return MaskGrid(bits)


def ellipse_points(
    cx: float,
    cy: float,
    a: float,
    b: float,
    tilt: float,
    n: int,
    t0: float = 0.0,
    t1: float = 2.0 * math.pi,
) -> np.ndarray:
    """Exact points on a (possibly tilted) ellipse arc, endpoints excluded
    only when the arc closes on itself."""
    full = abs((t1 - t0) - 2.0 * math.pi) < 1e-12
    t = np.linspace(t0, t1, n, endpoint=not full)
    x = a * np.cos(t)
    y = b * np.sin(t)
    c, s = math.cos(tilt), math.sin(tilt)
    return np.column_stack([cx + x * c - y * s, cy + x * s + y * c])


def constant_image(dim: int, value: float, spacing: float = 1.0) -> ImageGrid:
    return ImageGrid(np.full((dim, dim), value, dtype=float), spacing=spacing)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240817)
