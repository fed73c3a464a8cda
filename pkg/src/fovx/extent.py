"""Body-extent recovery from truncated slices and FOV border extension.

The complete-body bounding box is estimated by fitting an ellipse to
the visible anatomical boundary (body outline pixels that do not lie on
the truncation boundary), then the frame is symmetrically padded and
resized back so the working grid covers the estimated extent, with the
physical pixel spacing scaled up by the same ratio.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.optimize import least_squares
from scipy.spatial import ConvexHull, QhullError

from .errors import FitError, UnfittableSlice
from .metrics import BBox, mask_bbox
from .raster import (
    ImageGrid,
    MaskGrid,
    bilinear_sample,
    boundary,
    resample,
    resample_mask,
)

__all__ = [
    "DEFAULT_R0",
    "EllipseFit",
    "BodyBBoxEstimate",
    "ExtensionResult",
    "anatomical_boundary_points",
    "fit_ellipse",
    "predict_body_bbox",
    "extension_ratio",
    "extend_border",
]

DEFAULT_R0 = 1.05  # safety factor multiplying the estimated extension ratio


@dataclass(frozen=True)
class EllipseFit:
    """Geometric ellipse parameters plus the algebraic fit residual.

    semi_axes is (major, minor); tilt is the major-axis angle in
    radians, normalized to (-pi/2, pi/2], and 0 for circles.
    """

    center: tuple[float, float]
    semi_axes: tuple[float, float]
    tilt: float
    residual: float

    def __post_init__(self) -> None:
        a, b = self.semi_axes
        if not (a > 0 and b > 0):
            raise ValueError(f"semi-axes must be positive, got {self.semi_axes}")
        if a < b:
            raise ValueError("semi_axes must be ordered (major, minor)")

    def bbox(self) -> BBox:
        a, b = self.semi_axes
        c, s = math.cos(self.tilt), math.sin(self.tilt)
        ex = math.sqrt((a * c) ** 2 + (b * s) ** 2)
        ey = math.sqrt((a * s) ** 2 + (b * c) ** 2)
        cx, cy = self.center
        return BBox(cx - ex, cy - ey, cx + ex, cy + ey)


def anatomical_boundary_points(body: MaskGrid, fov: MaskGrid) -> np.ndarray:
    """Body-boundary pixel centers away from the FOV boundary, as (x, y) rows.

    The FOV boundary is dilated by one pixel before exclusion so that
    aliased truncation arcs cannot leak into the fit.
    """
    if body.bits.shape != fov.bits.shape:
        raise ValueError("body and FOV masks must share a shape")
    if not body.bits.any():
        raise ValueError("body mask is empty")
    eb = boundary(body).bits
    ef = boundary(fov).bits
    cut = ndimage.binary_dilation(ef, structure=np.ones((3, 3), dtype=bool))
    keep = eb & ~cut
    if not keep.any():
        raise UnfittableSlice("no anatomical boundary visible outside the FOV border")
    rows, cols = np.nonzero(keep)
    return np.column_stack([cols + 0.5, rows + 0.5]).astype(np.float64)


def _fit_circle(pts: np.ndarray) -> EllipseFit:
    # least-squares circle: minimize ||x^2+y^2 + D x + E y + F||
    x, y = pts[:, 0], pts[:, 1]
    a_mat = np.column_stack([x, y, np.ones_like(x)])
    b_vec = x * x + y * y
    sol, _, rank, _ = np.linalg.lstsq(a_mat, b_vec, rcond=None)
    if rank < 3:
        raise FitError("circle fit is rank-deficient")
    cx, cy = sol[0] / 2.0, sol[1] / 2.0
    r2 = sol[2] + cx * cx + cy * cy
    if not (np.isfinite(r2) and r2 > 0):
        raise FitError("circle fit produced a nonpositive radius")
    r = float(math.sqrt(r2))
    dists = np.hypot(x - cx, y - cy)
    residual = float(np.sqrt(np.mean((dists - r) ** 2)) / r)
    return EllipseFit((float(cx), float(cy)), (r, r), 0.0, residual)


def _conic_to_geometry(coef: np.ndarray, residual: float) -> EllipseFit:
    a, b, c, d, e, f = (float(v) for v in coef)
    disc = 4.0 * a * c - b * b
    if disc <= 0:
        raise FitError("fitted conic is not an ellipse")
    if a + c < 0:  # normalize sign so the quadratic form is positive definite
        a, b, c, d, e, f = (-v for v in (a, b, c, d, e, f))
    cx = (b * e - 2.0 * c * d) / disc
    cy = (b * d - 2.0 * a * e) / disc
    f0 = f + (d * cx + e * cy) / 2.0
    if not f0 < 0:
        raise FitError("fitted conic is degenerate or imaginary")
    quad = np.array([[a, b / 2.0], [b / 2.0, c]])
    evals, evecs = np.linalg.eigh(quad)  # ascending, both positive here
    if evals[0] <= 0:
        raise FitError("fitted conic is not an ellipse")
    major = math.sqrt(-f0 / evals[0])
    minor = math.sqrt(-f0 / evals[1])
    if (evals[1] - evals[0]) <= 1e-9 * evals[1]:
        tilt = 0.0  # circle: orientation is arbitrary, fix it
    else:
        vx, vy = evecs[0, 0], evecs[1, 0]
        tilt = math.atan2(vy, vx)
        if tilt <= -math.pi / 2.0:
            tilt += math.pi
        elif tilt > math.pi / 2.0:
            tilt -= math.pi
    return EllipseFit((cx, cy), (major, minor), tilt, residual)


def _fit_conic(pts: np.ndarray) -> np.ndarray:
    """Direct least-squares conic fit constrained to ellipses.

    Splits the design matrix into quadratic and linear blocks and
    reduces the constrained problem (4ac - b^2 = 1) to a 3x3
    eigenproblem, which keeps the solve stable on arcs.
    """
    x, y = pts[:, 0], pts[:, 1]
    d1 = np.column_stack([x * x, x * y, y * y])
    d2 = np.column_stack([x, y, np.ones_like(x)])
    s1 = d1.T @ d1
    s2 = d1.T @ d2
    s3 = d2.T @ d2
    try:
        t = -np.linalg.solve(s3, s2.T)
    except np.linalg.LinAlgError as exc:
        raise FitError("boundary points are rank-deficient") from exc
    m = s1 + s2 @ t
    m = np.vstack([m[2] / 2.0, -m[1], m[0] / 2.0])  # apply C1^{-1}
    evals, evecs = np.linalg.eig(m)
    evecs = np.real(evecs)
    cond = 4.0 * evecs[0] * evecs[2] - evecs[1] ** 2
    good = np.flatnonzero(cond > 0)
    if good.size == 0:
        raise FitError("no ellipse-admissible eigenvector")
    a1 = evecs[:, good[0]]
    return np.concatenate([a1, t @ a1])


def fit_ellipse(points: np.ndarray) -> EllipseFit:
    """Fit an ellipse to (x, y) points; fall back to a circle when needed.

    Points are centered and isotropically scaled before the conic
    solve, and the geometry is mapped back afterwards, so the fit is
    insensitive to the absolute coordinate magnitude. The residual is
    the RMS algebraic error of the unit-norm conic in the normalized
    frame. Fewer than 6 points, or a rank-deficient or non-elliptical
    solve, fall back to a least-squares circle; if that also fails,
    FitError propagates.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError(f"points must be an (N, 2) array, got shape {pts.shape}")
    if pts.shape[0] < 3:
        raise FitError(f"need at least 3 points, got {pts.shape[0]}")
    if not np.all(np.isfinite(pts)):
        raise ValueError("points must be finite")

    mu = pts.mean(axis=0)
    q = pts - mu
    s = float(np.sqrt(np.mean(q * q)))
    if s == 0.0:
        raise FitError("all points coincide")
    qn = q / s

    if pts.shape[0] >= 6:
        try:
            coef = _fit_conic(qn)
            norm = float(np.linalg.norm(coef))
            coef = coef / norm
            design = np.column_stack(
                [qn[:, 0] ** 2, qn[:, 0] * qn[:, 1], qn[:, 1] ** 2, qn[:, 0], qn[:, 1], np.ones(len(qn))]
            )
            residual = float(np.sqrt(np.mean((design @ coef) ** 2)))
            fit_n = _conic_to_geometry(coef, residual)
            return EllipseFit(
                center=(mu[0] + s * fit_n.center[0], mu[1] + s * fit_n.center[1]),
                semi_axes=(s * fit_n.semi_axes[0], s * fit_n.semi_axes[1]),
                tilt=fit_n.tilt,
                residual=residual,
            )
        except FitError:
            pass
    return _fit_circle(pts)


@dataclass(frozen=True)
class BodyBBoxEstimate:
    """Estimated complete-body box plus the confidence bookkeeping the
    batch manifest records (fallback estimates carry no fit residual)."""

    bbox: BBox
    low_confidence: bool
    residual: float | None


# Robust-estimation knobs. Contaminated point sets arise when interior
# air cavities get opened by the truncation cut (their walls then count
# as anatomical boundary) or when resampling smears the cut arc; clean
# phantom fits sit near residual 1e-2, contaminated ones an order above.
_RESIDUAL_GATE = 0.08
_CONTAINMENT_SLACK = 0.15
_CONTAINMENT_QUANTILE = 0.98
_MIN_SEMI_AXIS_PX = 4.0
_RANSAC_ITERS = 300
_RANSAC_SAMPLE = 6
_RANSAC_SEED = 1905
_GATE_CONTOUR_CAP = 512
# subpixel edge refinement: slide boundary points along the outward
# normal to the body-threshold crossing of the attenuation ramp
_EDGE_ISO_HU = -140.0
_EDGE_SEARCH_PX = 2.0
_EDGE_STEPS = 9
# geometric polish: outside-the-fit misfit costs more than inside
# (nothing genuine lies outside the body outline), and points deeper
# inside than the trim are discarded as interior contamination
_POLISH_OUT_WEIGHT = 8.0
_POLISH_TRIM_PX = -3.0


def _ellipse_scores(fit: EllipseFit, pts: np.ndarray) -> np.ndarray:
    """Signed normalized scores: 0 on the ellipse, <0 inside, >0 outside."""
    c, s = math.cos(fit.tilt), math.sin(fit.tilt)
    dx = pts[:, 0] - fit.center[0]
    dy = pts[:, 1] - fit.center[1]
    u = dx * c + dy * s
    v = -dx * s + dy * c
    a, b = fit.semi_axes
    return (u / a) ** 2 + (v / b) ** 2 - 1.0


def _plausible(fit: EllipseFit, contour: np.ndarray, w: int, h: int) -> bool:
    """A credible complete-body outline: sane axes and contains the
    observed body contour (the true outline circumscribes everything
    visible, artificial cut edges included)."""
    if max(fit.semi_axes) > 2.0 * max(w, h):
        return False
    if min(fit.semi_axes) < _MIN_SEMI_AXIS_PX:
        return False
    scores = _ellipse_scores(fit, contour)
    return float(np.quantile(scores, _CONTAINMENT_QUANTILE)) <= _CONTAINMENT_SLACK


def _hull_vertices(pts: np.ndarray) -> np.ndarray:
    """Indices of convex-hull vertices; all indices when the hull degenerates."""
    try:
        return ConvexHull(pts).vertices
    except QhullError:
        return np.arange(len(pts))


def _normalize_tilt(tilt: float) -> float:
    while tilt <= -math.pi / 2.0:
        tilt += math.pi
    while tilt > math.pi / 2.0:
        tilt -= math.pi
    return tilt


def _sampson_distances(p: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Signed first-order geometric distances (px) from points to the ellipse
    parametrized as (cx, cy, a, b, tilt); positive outside."""
    cx, cy, a, b, th = p
    c, s = np.cos(th), np.sin(th)
    dx = pts[:, 0] - cx
    dy = pts[:, 1] - cy
    u = dx * c + dy * s
    v = -dx * s + dy * c
    score = (u / a) ** 2 + (v / b) ** 2 - 1.0
    gx = 2.0 * u / a**2 * c - 2.0 * v / b**2 * s
    gy = 2.0 * u / a**2 * s + 2.0 * v / b**2 * c
    grad = np.maximum(np.hypot(gx, gy), 1e-12)
    return score / grad


def _refine_geometric(fit: EllipseFit, pts: np.ndarray) -> EllipseFit:
    """Polish a fit by minimizing Sampson (gradient-normalized) distances.

    Algebraic least squares systematically shrinks ellipses fitted to
    partial arcs; the geometric polish removes most of that bias, which
    matters when extrapolating the far side of a truncated body. The
    loss is robust and asymmetric: the true outline circumscribes every
    genuine boundary point, so positive (outside) distances are real
    misfit while large negative ones are interior contamination, which
    is additionally dropped for a second pass. Falls back to the input
    fit on any numerical trouble.
    """

    def solve(p0: np.ndarray, sub: np.ndarray) -> np.ndarray:
        def resid(p: np.ndarray) -> np.ndarray:
            r = _sampson_distances(p, sub)
            return np.where(r > 0, _POLISH_OUT_WEIGHT * r, r)

        res = least_squares(
            resid, p0, method="trf", loss="soft_l1", f_scale=1.0, max_nfev=300
        )
        return res.x

    p = np.array(
        [fit.center[0], fit.center[1], fit.semi_axes[0], fit.semi_axes[1], fit.tilt]
    )
    try:
        p = solve(p, pts)
        kept = pts[_sampson_distances(p, pts) > _POLISH_TRIM_PX]
        if 20 <= len(kept) < len(pts):
            p = solve(p, kept)
    except Exception:
        return fit
    cx, cy, a, b, th = (float(v) for v in p)
    a, b = abs(a), abs(b)
    if not all(map(math.isfinite, (cx, cy, a, b, th))) or min(a, b) <= 0.0:
        return fit
    if a < b:
        a, b = b, a
        th += math.pi / 2.0
    return EllipseFit((cx, cy), (a, b), _normalize_tilt(th), fit.residual)


def _ransac_ellipse(pts: np.ndarray, contour: np.ndarray, w: int, h: int) -> EllipseFit | None:
    """Consensus refit for contaminated boundary point sets.

    Contamination (cavity walls opened by the cut, resampling smear)
    lies strictly inside the true outline, so convex-hull vertices of
    the point set are mostly genuine outline points; when the cut
    removes a whole sector, interior points still slip onto the hull,
    but only as a contiguous angular run. Hypotheses therefore come
    from consecutive-vertex windows around the hull (hull order is
    angular, so clean runs yield clean windows) plus seeded random hull
    subsets. A hypothesis competes only if it plausibly contains the
    observed body; the widest consensus set is refit and must pass the
    same gate. When no hypothesis passes outright (a shallow visible
    arc makes every few-point fit ill-conditioned), the inlier sets of
    the failed hypotheses are refit and polished: an implausible seed
    can still select a clean arc whose full-set refit converges to a
    credible outline. The generator seed is fixed, so the estimate is
    a pure function of the points.
    """
    n = len(pts)
    min_count = max(12, n // 6)
    hull = _hull_vertices(pts)
    gate_step = max(1, len(contour) // _GATE_CONTOUR_CAP)
    gate_contour = contour[::gate_step]

    candidates: list[np.ndarray] = []
    if len(hull) >= _RANSAC_SAMPLE:
        for start in range(len(hull)):
            candidates.append(hull[(start + np.arange(_RANSAC_SAMPLE)) % len(hull)])
    pool = hull if len(hull) >= _RANSAC_SAMPLE else np.arange(n)
    rng = np.random.default_rng(_RANSAC_SEED)
    for _ in range(_RANSAC_ITERS):
        candidates.append(rng.choice(pool, size=min(_RANSAC_SAMPLE, len(pool)), replace=False))

    best_count = 0
    best_inliers: np.ndarray | None = None
    rescue: dict[bytes, tuple[int, np.ndarray]] = {}
    for idx in candidates:
        try:
            cand = fit_ellipse(pts[idx])
        except FitError:
            continue
        tol = min(max(5.0 / min(cand.semi_axes), 0.01), 0.5)
        inliers = np.abs(_ellipse_scores(cand, pts)) <= tol
        count = int(inliers.sum())
        if count < min_count:
            continue
        # hypotheses that fail to contain the observed body are compromise
        # fits pulled inward by interior structures; never let them compete
        # directly, but their inlier sets may still select a clean arc
        if not _plausible(cand, gate_contour, w, h):
            rescue[inliers.tobytes()] = (count, inliers)
            continue
        if count > best_count:
            best_count, best_inliers = count, inliers
    if best_inliers is not None:
        fit = _refit_and_gate(pts, best_inliers, contour, w, h)
        if fit is not None:
            return fit
    for _, inliers in sorted(rescue.values(), key=lambda item: -item[0]):
        fit = _refit_and_gate(pts, inliers, contour, w, h)
        if fit is not None:
            return fit
    return None


def _refit_and_gate(
    pts: np.ndarray, inliers: np.ndarray, contour: np.ndarray, w: int, h: int
) -> EllipseFit | None:
    """Refit on an inlier set, polish, and accept only a plausible result."""
    try:
        refit = fit_ellipse(pts[inliers])
    except FitError:
        return None
    polished = _refine_geometric(refit, pts[inliers])
    if _plausible(polished, contour, w, h):
        return polished
    if _plausible(refit, contour, w, h):
        return refit
    return None


def _refine_subpixel(img: ImageGrid, body: MaskGrid, pts: np.ndarray) -> np.ndarray:
    """Slide boundary points along their outward normals to the subpixel
    crossing of the body threshold.

    Pixel-center quantization (about 0.3 px RMS) is harmless for a full
    outline but dominates the error of a fit extrapolated from a partial
    arc, where it leaks into the unobserved axis amplified. The
    attenuation ramp at the skin is smooth after resampling, so the
    threshold crossing localizes the true edge to a fraction of a pixel.
    Points with no usable normal or no crossing stay where they are.
    """
    if len(pts) == 0:
        return pts
    smooth = ndimage.gaussian_filter(body.bits.astype(np.float64), sigma=1.5)
    gy, gx = np.gradient(smooth)
    h, w = body.bits.shape
    rows = np.clip(np.rint(pts[:, 1] - 0.5).astype(np.intp), 0, h - 1)
    cols = np.clip(np.rint(pts[:, 0] - 0.5).astype(np.intp), 0, w - 1)
    nx = -gx[rows, cols]
    ny = -gy[rows, cols]
    norm = np.hypot(nx, ny)
    usable = norm > 1e-9
    nx = np.divide(nx, norm, out=np.zeros_like(nx), where=usable)
    ny = np.divide(ny, norm, out=np.zeros_like(ny), where=usable)

    ts = np.linspace(-_EDGE_SEARCH_PX, _EDGE_SEARCH_PX, _EDGE_STEPS)
    xs = pts[None, :, 0] + ts[:, None] * nx[None, :]
    ys = pts[None, :, 1] + ts[:, None] * ny[None, :]
    profile = bilinear_sample(img.values, xs - 0.5, ys - 0.5, fill=_EDGE_ISO_HU - 10.0)
    f = profile - _EDGE_ISO_HU
    # inside-to-outside sign change; of several, take the one nearest
    # the starting point (farther ones belong to other structures)
    crossing = (f[:-1] >= 0.0) & (f[1:] < 0.0)
    midpoints = np.abs((ts[:-1] + ts[1:]) / 2.0)
    cost = np.where(crossing, midpoints[:, None], np.inf)
    k = np.argmin(cost, axis=0)
    found = np.isfinite(np.min(cost, axis=0)) & usable
    cols_idx = np.arange(len(pts))
    f0 = f[k, cols_idx]
    f1 = f[k + 1, cols_idx]
    step = ts[1] - ts[0]
    t_star = ts[k] + step * f0 / np.maximum(f0 - f1, 1e-12)
    refined = pts.copy()
    refined[found, 0] += t_star[found] * nx[found]
    refined[found, 1] += t_star[found] * ny[found]
    return refined


def predict_body_bbox(img: ImageGrid, body: MaskGrid, fov: MaskGrid) -> BodyBBoxEstimate:
    """Estimate the complete-body bounding box of a (possibly truncated) slice.

    Fits an ellipse to the visible anatomical boundary, refined to
    subpixel against the image, and returns the union of the ellipse's
    box with the observed body box, so the estimate never undercuts
    visible anatomy and may extrude the frame.

    A direct fit is accepted only if its residual is small and it
    plausibly contains the observed body; otherwise a consensus refit
    rejects contaminated points, then a circle fit; when everything
    fails, the observed box is returned flagged low-confidence.
    """
    observed = mask_bbox(body)
    h, w = body.bits.shape
    try:
        pts = anatomical_boundary_points(body, fov)
    except UnfittableSlice:
        return BodyBBoxEstimate(bbox=observed, low_confidence=True, residual=None)
    pts = _refine_subpixel(img, body, pts)

    rows, cols = np.nonzero(boundary(body).bits)
    contour = np.column_stack([cols + 0.5, rows + 0.5]).astype(np.float64)

    fit: EllipseFit | None = None
    try:
        cand = fit_ellipse(pts)
        if cand.residual <= _RESIDUAL_GATE and _plausible(cand, contour, w, h):
            polished = _refine_geometric(cand, pts)
            fit = polished if _plausible(polished, contour, w, h) else cand
    except FitError:
        pass
    if fit is None and len(pts) >= 2 * _RANSAC_SAMPLE:
        fit = _ransac_ellipse(pts, contour, w, h)
    if fit is None:
        try:
            cand = _fit_circle(pts)
            if _plausible(cand, contour, w, h):
                fit = cand
        except FitError:
            pass
    if fit is None:
        return BodyBBoxEstimate(bbox=observed, low_confidence=True, residual=None)
    return BodyBBoxEstimate(
        bbox=fit.bbox().union_bounds(observed),
        low_confidence=False,
        residual=fit.residual,
    )


def extension_ratio(pred: BBox, width: int, height: int, r0: float = DEFAULT_R0) -> float:
    """Frame-extension ratio covering the predicted box, times the safety factor.

    The estimated ratio is the largest distance from the image center
    to a box edge, normalized by the half-dimension of its axis and
    clamped to at least 1 (a box inside the frame needs no extension).
    """
    if r0 < 1.0:
        raise ValueError(f"safety factor must be >= 1, got {r0}")
    if width < 1 or height < 1:
        raise ValueError("frame dimensions must be positive")
    cx, cy = width / 2.0, height / 2.0
    rx = max(abs(pred.x_min - cx), abs(pred.x_max - cx)) / (width / 2.0)
    ry = max(abs(pred.y_min - cy), abs(pred.y_max - cy)) / (height / 2.0)
    r_est = max(rx, ry, 1.0)
    return r0 * r_est


@dataclass(frozen=True)
class ExtensionResult:
    """Borders extended by symmetric padding, resized back to the frame.

    `ratio` is the realized ratio (integer padding rounds the request
    up), so new_spacing = old_spacing * ratio holds exactly. The
    padding bookkeeping supports mapping boxes, masks, and completed
    images between the two frames.
    """

    extended_image: ImageGrid
    extended_fov: MaskGrid
    ratio: float
    new_spacing: float
    requested_ratio: float
    orig_dim: int
    padded_dim: int
    pad_left: int

    @property
    def scale(self) -> float:
        # original coordinate -> extended coordinate factor
        return self.orig_dim / self.padded_dim

    def forward_box(self, box: BBox) -> BBox:
        k = self.scale
        return BBox(
            (box.x_min + self.pad_left) * k,
            (box.y_min + self.pad_left) * k,
            (box.x_max + self.pad_left) * k,
            (box.y_max + self.pad_left) * k,
        )

    def inverse_box(self, box: BBox) -> BBox:
        k = self.scale
        return BBox(
            box.x_min / k - self.pad_left,
            box.y_min / k - self.pad_left,
            box.x_max / k - self.pad_left,
            box.y_max / k - self.pad_left,
        )

    def covers(self, box: BBox, tol: float = 1e-9) -> bool:
        """True when the extended frame's coverage contains `box` (original coords)."""
        lo = -float(self.pad_left)
        hi = float(self.padded_dim - self.pad_left)
        return (
            box.x_min >= lo - tol
            and box.y_min >= lo - tol
            and box.x_max <= hi + tol
            and box.y_max <= hi + tol
        )

    def extend_mask(self, mask: MaskGrid) -> MaskGrid:
        """Carry any same-frame mask through the identical pad-and-resize."""
        if mask.bits.shape != (self.orig_dim, self.orig_dim):
            raise ValueError("mask does not match the original frame")
        pad = self._pads()
        padded = np.pad(mask.bits, pad, constant_values=False)
        return resample_mask(MaskGrid(padded), self.orig_dim, self.orig_dim)

    def restore_image(self, img: ImageGrid) -> ImageGrid:
        """Map an extended-frame image back to the original frame."""
        if img.values.shape != (self.orig_dim, self.orig_dim):
            raise ValueError("image does not match the working frame")
        up = resample(img, self.padded_dim, self.padded_dim, mode="bilinear")
        lo = self.pad_left
        hi = lo + self.orig_dim
        return ImageGrid(up.values[lo:hi, lo:hi], spacing=img.spacing / self.ratio)

    def _pads(self) -> tuple[tuple[int, int], tuple[int, int]]:
        total = self.padded_dim - self.orig_dim
        left = self.pad_left
        return ((left, total - left), (left, total - left))


def extend_border(
    img: ImageGrid, fov: MaskGrid, ratio: float, fill: float
) -> ExtensionResult:
    """Symmetrically pad image and FOV mask by the ratio, resize back.

    Each side gets ceil(dim*(ratio-1)/2) pixels, so the pad is exactly
    symmetric and the realized margin never falls short of the request
    on either side (a frame extended by the exact ratio of a box always
    covers that box). The image resamples bilinearly with `fill` in the
    new margin, the mask with nearest-neighbor and false margins;
    physical pixel spacing grows by the realized ratio so physical
    measurements are preserved. ratio = 1 is the identity.
    """
    if ratio < 1.0:
        raise ValueError(f"extension ratio must be >= 1, got {ratio}")
    h, w = img.values.shape
    if h != w:
        raise ValueError("border extension expects a square frame")
    if img.values.shape != fov.bits.shape:
        raise ValueError("image and FOV mask must share a shape")

    dim = w
    # 1e-9 slack absorbs float noise in exact-margin requests; covers()
    # grants the same tolerance, so the guarantee is consistent
    left = int(math.ceil(dim * (ratio - 1.0) / 2.0 - 1e-9))
    padded_dim = dim + 2 * left
    total = padded_dim - dim
    realized = padded_dim / dim

    if total == 0:
        return ExtensionResult(
            extended_image=img,
            extended_fov=fov,
            ratio=1.0,
            new_spacing=img.spacing,
            requested_ratio=ratio,
            orig_dim=dim,
            padded_dim=dim,
            pad_left=0,
        )

    pad = ((left, total - left), (left, total - left))
    img_padded = np.pad(img.values, pad, constant_values=fill)
    fov_padded = np.pad(fov.bits, pad, constant_values=False)
    ext_vals = resample(ImageGrid(img_padded, img.spacing), dim, dim, mode="bilinear").values
    ext_fov = resample_mask(MaskGrid(fov_padded), dim, dim)
    new_spacing = img.spacing * realized
    return ExtensionResult(
        extended_image=ImageGrid(ext_vals, spacing=new_spacing),
        extended_fov=ext_fov,
        ratio=realized,
        new_spacing=new_spacing,
        requested_ratio=ratio,
        orig_dim=dim,
        padded_dim=padded_dim,
        pad_left=left,
    )
