"""Exception types shared across the package.

Contract violations (bad arguments, malformed configs, impossible
requests) raise plain ValueError; the classes here mark conditions
that arise from the data or the numerics rather than from misuse.
"""
from __future__ import annotations

__all__ = ["NumericError", "UnfittableSlice", "FitError"]


class NumericError(RuntimeError):
    """An iterative solver failed to reach the requested tolerance."""


class UnfittableSlice(ValueError):
    """A slice exposes no usable anatomical boundary to fit against."""


class FitError(RuntimeError):
    """Geometric model fitting failed and no fallback applies."""
