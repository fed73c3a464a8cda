"""Classical field-of-view recovery toolkit for axial CT slices.

Five concerns, one per module:

- `fovsim`: synthetic FOV truncation (reduced scan FOV intersected with
  a square display FOV) applied to complete slices.
- `metrics`: truncation severity (boundary-overlap index), box overlap
  scores and losses, segmentation overlap, pixel error.
- `extent`: body-extent recovery from the visible anatomical boundary
  via direct ellipse fitting, and the border-extension ratio.
- `inpaint`: harmonic (Laplace) infill of the truncated region.
- `bcstats`: body-composition measurement and the statistics used to
  compare measurement series (rank correlation, agreement limits,
  dependent-correlation tests, fat-free-mass anthropometrics).

`raster` holds the shared grid primitives, `phantom` generates
synthetic test slices, and `pipeline`/`cli` wire everything into a
runnable tool.
"""
from __future__ import annotations

from .errors import FitError, NumericError, UnfittableSlice

__version__ = "0.1.0"

__all__ = ["FitError", "NumericError", "UnfittableSlice", "__version__"]
