"""Grid primitives: HU rasters, binary masks, boundaries, components, resampling.

Coordinate convention used throughout the package: pixel (row i, col j)
covers the continuous cell [j, j+1) x [i, i+1); its center is at
(x, y) = (j + 0.5, i + 0.5). All region-membership tests are
pixel-center-in-region.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

HU_OFFSET = -1024  # storage offset for 16-bit PGM images

__all__ = [
    "ImageGrid",
    "MaskGrid",
    "AffineAug",
    "boundary",
    "largest_component",
    "erode",
    "resample",
    "resample_mask",
    "apply_affine",
    "touches_border",
    "extract_body_mask",
    "sample_affine_aug",
    "bilinear_sample",
    "nearest_sample",
    "read_image",
    "write_image",
    "read_mask",
    "write_mask",
]


@dataclass(frozen=True)
class ImageGrid:
    """2-D scalar raster in Hounsfield units with isotropic pixel spacing (mm)."""

    values: np.ndarray
    spacing: float = 1.0

    def __post_init__(self) -> None:
        v = np.ascontiguousarray(np.asarray(self.values, dtype=np.float64))
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise ValueError(f"image must be 2-D and nonempty, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("image values must all be finite")
        if not (np.isfinite(self.spacing) and self.spacing > 0):
            raise ValueError(f"spacing must be positive, got {self.spacing}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "spacing", float(self.spacing))

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class MaskGrid:
    """2-D binary raster (body / FOV / tissue-class regions)."""

    bits: np.ndarray

    def __post_init__(self) -> None:
        b = np.ascontiguousarray(np.asarray(self.bits, dtype=bool))
        if b.ndim != 2 or b.shape[0] < 1 or b.shape[1] < 1:
            raise ValueError(f"mask must be 2-D and nonempty, got shape {b.shape}")
        b.setflags(write=False)
        object.__setattr__(self, "bits", b)

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    def count(self) -> int:
        return int(self.bits.sum())


@dataclass(frozen=True)
class AffineAug:
    """Scale-rotate-translate augmentation parameters.

    scale is a unitless ratio, rotation_deg is in degrees, and the
    translations are fractions of the image dimension (translate_x of
    width, translate_y of height). The default is the identity.
    """

    scale: float = 1.0
    rotation_deg: float = 0.0
    translate_x: float = 0.0
    translate_y: float = 0.0


def sample_affine_aug(
    rng: np.random.Generator,
    scale_range: tuple[float, float] = (0.7, 1.0),
    max_rotation_deg: float = 15.0,
    max_translate_x: float = 0.2,
    max_translate_y: float = 0.1,
) -> AffineAug:
    """Draw augmentation parameters uniformly from the default ranges.

    Translation limits differ per axis: the transverse (x) limit is
    wider than the anterior-posterior (y) limit.
    """
    return AffineAug(
        scale=float(rng.uniform(*scale_range)),
        rotation_deg=float(rng.uniform(-max_rotation_deg, max_rotation_deg)),
        translate_x=float(rng.uniform(-max_translate_x, max_translate_x)),
        translate_y=float(rng.uniform(-max_translate_y, max_translate_y)),
    )


def boundary(mask: MaskGrid) -> MaskGrid:
    """Pixels that are true and 4-adjacent to a false-or-outside pixel.

    Pixels beyond the frame count as background, so a region touching
    the image border has boundary pixels along that border.
    """
    b = mask.bits
    padded = np.pad(b, 1, constant_values=False)
    interior = (
        padded[:-2, 1:-1]
        & padded[2:, 1:-1]
        & padded[1:-1, :-2]
        & padded[1:-1, 2:]
    )
    return MaskGrid(b & ~interior)


_STRUCT8 = np.ones((3, 3), dtype=bool)


def largest_component(mask: MaskGrid) -> MaskGrid:
    """Keep only the largest 8-connected component of the mask.

    Ties are broken in favor of the component whose first pixel occurs
    earliest in row-major order. An empty mask maps to itself.
    """
    labels, n = ndimage.label(mask.bits, structure=_STRUCT8)
    if n == 0:
        return mask
    counts = np.bincount(labels.ravel())
    counts[0] = 0
    best = counts.max()
    tied = np.flatnonzero(counts == best)
    if len(tied) > 1:
        # first row-major occurrence decides the tie
        labs, first = np.unique(labels.ravel(), return_index=True)
        order = {int(l): int(f) for l, f in zip(labs, first)}
        winner = min(tied, key=lambda l: order[int(l)])
    else:
        winner = tied[0]
    return MaskGrid(labels == winner)


def erode(mask: MaskGrid, px: int) -> MaskGrid:
    """Shrink the mask by px pixels (8-connected); the frame counts as background."""
    if px < 0:
        raise ValueError(f"erosion radius must be >= 0, got {px}")
    if px == 0:
        return mask
    bits = ndimage.binary_erosion(
        mask.bits, structure=_STRUCT8, iterations=px, border_value=0
    )
    return MaskGrid(bits)


def bilinear_sample(
    values: np.ndarray, xs: np.ndarray, ys: np.ndarray, fill: float
) -> np.ndarray:
    """Bilinear lookup at pixel-index coordinates; outside [0, n-1] -> fill."""
    h, w = values.shape
    valid = (xs >= 0.0) & (xs <= w - 1.0) & (ys >= 0.0) & (ys <= h - 1.0)
    xc = np.clip(xs, 0.0, w - 1.0)
    yc = np.clip(ys, 0.0, h - 1.0)
    x0 = np.floor(xc).astype(np.intp)
    y0 = np.floor(yc).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = xc - x0
    fy = yc - y0
    out = (
        values[y0, x0] * (1.0 - fy) * (1.0 - fx)
        + values[y0, x1] * (1.0 - fy) * fx
        + values[y1, x0] * fy * (1.0 - fx)
        + values[y1, x1] * fy * fx
    )
    return np.where(valid, out, fill)


def nearest_sample(
    values: np.ndarray, xs: np.ndarray, ys: np.ndarray, fill
) -> np.ndarray:
    """Nearest-neighbor lookup at pixel-index coordinates; outside -> fill."""
    h, w = values.shape
    xi = np.rint(xs).astype(np.intp)
    yi = np.rint(ys).astype(np.intp)
    valid = (xi >= 0) & (xi <= w - 1) & (yi >= 0) & (yi <= h - 1)
    xi = np.clip(xi, 0, w - 1)
    yi = np.clip(yi, 0, h - 1)
    out = values[yi, xi]
    return np.where(valid, out, fill)


def _resize_coords(n_src: int, n_dst: int) -> np.ndarray:
    # half-pixel-center mapping, clamped so constants stay constant
    ratio = n_src / n_dst
    return np.clip((np.arange(n_dst) + 0.5) * ratio - 0.5, 0.0, n_src - 1.0)


def _resize_values(values: np.ndarray, new_h: int, new_w: int, mode: str) -> np.ndarray:
    h, w = values.shape
    if mode == "bilinear":
        xs = _resize_coords(w, new_w)
        ys = _resize_coords(h, new_h)
        gx, gy = np.meshgrid(xs, ys)
        return bilinear_sample(values, gx, gy, fill=0.0)
    if mode == "nearest":
        xi = np.minimum((np.arange(new_w) + 0.5) * (w / new_w), w - 1).astype(np.intp)
        yi = np.minimum((np.arange(new_h) + 0.5) * (h / new_h), h - 1).astype(np.intp)
        return values[np.ix_(yi, xi)]
    raise ValueError(f"unknown resample mode {mode!r}")


def resample(img: ImageGrid, new_width: int, new_height: int, mode: str = "bilinear") -> ImageGrid:
    """Resize to (new_width, new_height) with bilinear or nearest interpolation.

    Spacing follows the horizontal old/new dimension ratio; only
    uniform resizes preserve physical isotropy (the package only ever
    performs square-to-square resizes).
    """
    if new_width < 1 or new_height < 1:
        raise ValueError("target dimensions must be positive")
    if (new_width, new_height) == (img.width, img.height):
        return img
    out = _resize_values(img.values, new_height, new_width, mode)
    return ImageGrid(out, spacing=img.spacing * img.width / new_width)


def resample_mask(mask: MaskGrid, new_width: int, new_height: int) -> MaskGrid:
    """Nearest-neighbor mask resize (masks never interpolate)."""
    if new_width < 1 or new_height < 1:
        raise ValueError("target dimensions must be positive")
    if (new_width, new_height) == (mask.width, mask.height):
        return mask
    return MaskGrid(_resize_values(mask.bits, new_height, new_width, "nearest"))


def apply_affine(
    img: ImageGrid, mask: MaskGrid, aug: AffineAug, fill: float
) -> tuple[ImageGrid, MaskGrid]:
    """Apply the same scale/rotate/translate to an image and its mask.

    Transform order: scale about the image center, rotate about the
    center, then translate. The image is sampled bilinearly and the
    mask with nearest-neighbor; regions mapped from outside the frame
    become `fill` (image) and false (mask). The identity augmentation
    reproduces the inputs bit-exactly.
    """
    if (img.width, img.height) != (mask.width, mask.height):
        raise ValueError("image and mask dimensions must match")
    h, w = img.values.shape
    cx = (w - 1) / 2.0
    cy = (h - 1) / 2.0
    tx = aug.translate_x * w
    ty = aug.translate_y * h
    theta = np.deg2rad(aug.rotation_deg)
    cos_t = np.cos(theta)
    sin_t = np.sin(theta)
    if aug.scale <= 0:
        raise ValueError("scale must be positive")

    # inverse map: undo translation, rotation, then scaling
    xo, yo = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    dx = xo - cx - tx
    dy = yo - cy - ty
    xs = (cos_t * dx + sin_t * dy) / aug.scale + cx
    ys = (-sin_t * dx + cos_t * dy) / aug.scale + cy

    out_img = bilinear_sample(img.values, xs, ys, fill=fill)
    out_bits = nearest_sample(mask.bits, xs, ys, fill=False)
    return ImageGrid(out_img, spacing=img.spacing), MaskGrid(out_bits)


def touches_border(mask: MaskGrid) -> bool:
    """True when any true pixel lies on the image frame border."""
    b = mask.bits
    return bool(b[0, :].any() or b[-1, :].any() or b[:, 0].any() or b[:, -1].any())


def extract_body_mask(img: ImageGrid, threshold: float = -140.0) -> MaskGrid:
    """Simplified body-mask extraction: threshold, keep the largest blob, fill holes.

    Works on windowed HU slices where everything outside the body sits
    at or near the window floor; internal air (lungs) is recovered by
    hole filling.
    """
    rough = img.values > threshold
    if not rough.any():
        return MaskGrid(rough)
    blob = largest_component(MaskGrid(rough))
    return MaskGrid(ndimage.binary_fill_holes(blob.bits))


# ---------------------------------------------------------------------------
# PGM + JSON-sidecar I/O
#
# Images: binary PGM (P5, maxval 65535, big-endian) storing HU - HU_OFFSET,
# with a sidecar `<name>.json` = {"spacing_mm": float, "hu_offset": -1024}.
# Masks: binary PGM (P5, maxval 255), 0/255.
# ---------------------------------------------------------------------------


def _parse_pnm_header(data: bytes) -> tuple[bytes, int, int, int, int]:
    tokens: list[bytes] = []
    i = 0
    while len(tokens) < 4:
        while i < len(data) and data[i : i + 1].isspace():
            i += 1
        if i < len(data) and data[i : i + 1] == b"#":
            nl = data.find(b"\n", i)
            i = len(data) if nl < 0 else nl + 1
            continue
        j = i
        while j < len(data) and not data[j : j + 1].isspace():
            j += 1
        if i == j:
            raise ValueError("truncated PGM header")
        tokens.append(data[i:j])
        i = j
    i += 1  # single whitespace byte separating header from raster
    magic, w, h, maxval = tokens
    return magic, int(w), int(h), int(maxval), i


def _sidecar_path(path: Path) -> Path:
    return path.with_suffix(".json")


def write_image(path: str | Path, img: ImageGrid) -> None:
    """Write a 16-bit PGM plus its JSON spacing sidecar."""
    path = Path(path)
    stored = np.clip(np.rint(img.values - HU_OFFSET), 0, 65535).astype(">u2")
    header = f"P5\n{img.width} {img.height}\n65535\n".encode("ascii")
    path.write_bytes(header + stored.tobytes())
    sidecar = {"spacing_mm": img.spacing, "hu_offset": HU_OFFSET}
    _sidecar_path(path).write_text(json.dumps(sidecar, sort_keys=True) + "\n")


def read_image(path: str | Path) -> ImageGrid:
    """Read a 16-bit PGM written by `write_image` (sidecar required)."""
    path = Path(path)
    data = path.read_bytes()
    magic, w, h, maxval, off = _parse_pnm_header(data)
    if magic != b"P5":
        raise ValueError(f"{path}: expected binary PGM (P5), got {magic!r}")
    if maxval != 65535:
        raise ValueError(f"{path}: expected 16-bit image PGM, maxval {maxval}")
    raw = np.frombuffer(data, dtype=">u2", count=w * h, offset=off)
    meta = json.loads(_sidecar_path(path).read_text())
    hu_offset = int(meta.get("hu_offset", HU_OFFSET))
    values = raw.reshape(h, w).astype(np.float64) + hu_offset
    return ImageGrid(values, spacing=float(meta["spacing_mm"]))


def write_mask(path: str | Path, mask: MaskGrid) -> None:
    """Write an 8-bit 0/255 PGM mask."""
    path = Path(path)
    stored = np.where(mask.bits, 255, 0).astype(np.uint8)
    header = f"P5\n{mask.width} {mask.height}\n255\n".encode("ascii")
    path.write_bytes(header + stored.tobytes())


def read_mask(path: str | Path) -> MaskGrid:
    """Read an 8-bit PGM mask; any nonzero byte counts as true."""
    path = Path(path)
    data = path.read_bytes()
    magic, w, h, maxval, off = _parse_pnm_header(data)
    if magic != b"P5":
        raise ValueError(f"{path}: expected binary PGM (P5), got {magic!r}")
    if maxval != 255:
        raise ValueError(f"{path}: expected 8-bit mask PGM, maxval {maxval}")
    raw = np.frombuffer(data, dtype=np.uint8, count=w * h, offset=off)
    return MaskGrid(raw.reshape(h, w) > 0)
