"""Body-composition measurement and the statistics used to compare series.

Covers tissue classification by HU range, area/attenuation
measurement, anthropometric fat-free-mass estimates, Bland-Altman
agreement, Spearman rank correlation with Fisher-z intervals, and
significance tests for two dependent correlations (overlapping and
nonoverlapping designs, both using the backtransformed-average
Fisher-z covariance treatment).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import NamedTuple, Sequence

import numpy as np
from scipy.stats import rankdata

from .raster import ImageGrid, MaskGrid

__all__ = [
    "TISSUE_MIN_HU",
    "SAT_MAX_HU",
    "BCMeasurement",
    "Anthro",
    "AnthroResult",
    "BlandAltman",
    "SpearmanResult",
    "CorrReport",
    "classify_tissues",
    "measure",
    "anthro_ffm_fm",
    "bland_altman",
    "spearman",
    "compare_correlations",
    "bootstrap_mean_ci",
]

TISSUE_MIN_HU = -140.0  # below this: air/lung, not soft tissue
SAT_MAX_HU = -30.0  # adipose sits in (TISSUE_MIN_HU, SAT_MAX_HU]


def classify_tissues(img: ImageGrid, body: MaskGrid) -> tuple[MaskGrid, MaskGrid]:
    """Split a body region into (SAT, muscle) masks by HU range.

    SAT = body pixels in (-140, -30]; muscle = body pixels above -30.
    Pixels at or below -140 (air, lung) belong to neither.
    """
    if img.values.shape != body.bits.shape:
        raise ValueError("image and body mask must share a shape")
    v = img.values
    sat = body.bits & (v > TISSUE_MIN_HU) & (v <= SAT_MAX_HU)
    muscle = body.bits & (v > SAT_MAX_HU)
    return MaskGrid(sat), MaskGrid(muscle)


@dataclass(frozen=True)
class BCMeasurement:
    """Cross-sectional tissue areas (cm^2) and mean attenuations (HU)."""

    sat_area: float
    muscle_area: float
    sat_atten: float | None
    muscle_atten: float | None
    spacing_used: float


def measure(
    seg_sat: MaskGrid, seg_muscle: MaskGrid, img: ImageGrid, strict: bool = True
) -> BCMeasurement:
    """Areas in cm^2 (pixel count times (spacing/10)^2) and mean HU per tissue.

    An empty tissue mask has no defined attenuation: strict mode raises,
    otherwise the attenuation is reported as None (area 0 either way).
    """
    if seg_sat.bits.shape != img.values.shape or seg_muscle.bits.shape != img.values.shape:
        raise ValueError("masks and image must share a shape")
    px_cm2 = (img.spacing / 10.0) ** 2

    def _atten(mask: MaskGrid, name: str) -> float | None:
        if mask.count() == 0:
            if strict:
                raise ValueError(f"{name} mask is empty; attenuation undefined")
            return None
        return float(img.values[mask.bits].mean())

    return BCMeasurement(
        sat_area=seg_sat.count() * px_cm2,
        muscle_area=seg_muscle.count() * px_cm2,
        sat_atten=_atten(seg_sat, "SAT"),
        muscle_atten=_atten(seg_muscle, "muscle"),
        spacing_used=img.spacing,
    )


@dataclass(frozen=True)
class Anthro:
    """Height (m), weight (kg), and sex for whole-body mass estimates."""

    height: float
    weight: float
    sex: str

    def __post_init__(self) -> None:
        if not (0.5 < self.height < 2.5):
            raise ValueError(f"height must lie in (0.5, 2.5) m, got {self.height}")
        if not (20.0 < self.weight < 300.0):
            raise ValueError(f"weight must lie in (20, 300) kg, got {self.weight}")
        if self.sex not in ("male", "female"):
            raise ValueError(f"sex must be 'male' or 'female', got {self.sex!r}")


class AnthroResult(NamedTuple):
    ffm: float
    fm: float
    ffm_index: float
    fm_index: float


def anthro_ffm_fm(a: Anthro) -> AnthroResult:
    """Sex-specific fat-free mass power law, fat mass, and height-squared indices.

    Men: FFM = 5.1 * H^1.14 * W^0.41; women: FFM = 5.34 * H^1.47 * W^0.33.
    FM = weight - FFM. Indices divide by height^2, so
    fm_index + ffm_index equals BMI up to float rounding.
    """
    if a.sex == "male":
        ffm = 5.1 * a.height**1.14 * a.weight**0.41
    else:
        ffm = 5.34 * a.height**1.47 * a.weight**0.33
    fm = a.weight - ffm
    h2 = a.height * a.height
    return AnthroResult(ffm=ffm, fm=fm, ffm_index=ffm / h2, fm_index=fm / h2)


class BlandAltman(NamedTuple):
    bias: float
    sd: float
    loa_low: float
    loa_high: float


def bland_altman(pairs: Sequence[tuple[float, float]]) -> BlandAltman:
    """Agreement of (measure, reference) pairs: bias, sample SD, 95% limits.

    bias = mean(measure - reference); limits = bias +/- 1.96 * SD.
    """
    if len(pairs) < 2:
        raise ValueError(f"need at least 2 pairs, got {len(pairs)}")
    diffs = np.asarray([float(m) - float(r) for m, r in pairs])
    if not np.all(np.isfinite(diffs)):
        raise ValueError("pairs must be finite")
    bias = float(diffs.mean())
    sd = float(diffs.std(ddof=1))
    return BlandAltman(bias, sd, bias - 1.96 * sd, bias + 1.96 * sd)


class SpearmanResult(NamedTuple):
    rho: float
    ci95: tuple[float, float]


def _check_corr_column(v: np.ndarray, name: str) -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-D")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    if np.ptp(arr) == 0.0:
        raise ValueError(f"{name} is constant; rank correlation undefined")
    return arr


def _fisher_ci(r: float, n: int) -> tuple[float, float]:
    # degenerate |r| = 1 collapses the interval at r
    z = math.atanh(max(-1.0 + 1e-16, min(1.0 - 1e-16, r))) if abs(r) < 1 else math.inf * np.sign(r)
    half = 1.96 / math.sqrt(n - 3)
    return (math.tanh(z - half), math.tanh(z + half))


def spearman(x: Sequence[float], y: Sequence[float]) -> SpearmanResult:
    """Rank correlation (average ranks for ties) with a Fisher-z 95% CI.

    Without ties the exact classical form 1 - 6*sum(d^2)/(n(n^2-1)) is
    evaluated in rational arithmetic and rounded once; with ties the
    coefficient is the Pearson correlation of the average ranks.
    """
    xa = np.asarray(x, dtype=np.float64)
    ya = np.asarray(y, dtype=np.float64)
    if xa.shape != ya.shape:
        raise ValueError(f"length mismatch: {xa.shape} vs {ya.shape}")
    n = xa.size
    if n < 4:
        raise ValueError(f"need at least 4 observations, got {n}")
    xa = _check_corr_column(xa, "x")
    ya = _check_corr_column(ya, "y")

    rx = rankdata(xa, method="average")
    ry = rankdata(ya, method="average")
    no_ties = np.unique(xa).size == n and np.unique(ya).size == n
    if no_ties:
        d = rx.astype(np.int64) - ry.astype(np.int64)
        sum_d2 = int(np.sum(d * d))
        rho = float(1 - Fraction(6 * sum_d2, n * (n * n - 1)))
    else:
        rho = float(np.corrcoef(rx, ry)[0, 1])
    return SpearmanResult(rho=rho, ci95=_fisher_ci(rho, n))


def _rank_pearson(x: np.ndarray, y: np.ndarray) -> float:
    rx = rankdata(x, method="average")
    ry = rankdata(y, method="average")
    return float(np.corrcoef(rx, ry)[0, 1])


def _two_sided_p(z: float) -> float:
    return math.erfc(abs(z) / math.sqrt(2.0))


def _clip_r(r: float) -> float:
    return max(-1.0 + 1e-15, min(1.0 - 1e-15, r))


@dataclass(frozen=True)
class CorrReport:
    """Two dependent rank correlations and the significance of their difference."""

    r1: float
    r2: float
    ci1: tuple[float, float]
    ci2: tuple[float, float]
    p_value: float
    n: int
    test_kind: str
    z_stat: float


def _dependent_z(z1: float, z2: float, c: float, n: int) -> float:
    if z1 == z2:
        return 0.0
    denom = 2.0 - 2.0 * c
    if denom <= 0.0:
        return math.copysign(math.inf, z1 - z2)
    return (z1 - z2) * math.sqrt((n - 3) / denom)


def compare_correlations(kind: str, *columns: Sequence[float]) -> CorrReport:
    """Test whether two dependent rank correlations differ.

    kind "overlapping" takes (shared, a, b) and compares
    corr(shared, a) with corr(shared, b); kind "nonoverlapping" takes
    (x1, y1, x2, y2) and compares corr(x1, y1) with corr(x2, y2), all
    measured on the same subjects. Both use Fisher z statistics whose
    covariance is evaluated at the backtransformed average of the two
    coefficients; p-values are two-sided normal.
    """
    if kind not in ("overlapping", "nonoverlapping"):
        raise ValueError(f"kind must be 'overlapping' or 'nonoverlapping', got {kind!r}")
    want = 3 if kind == "overlapping" else 4
    if len(columns) != want:
        raise ValueError(f"{kind} comparison takes {want} columns, got {len(columns)}")
    cols = [np.asarray(c, dtype=np.float64) for c in columns]
    n = cols[0].size
    if any(c.shape != (n,) for c in cols):
        raise ValueError("all columns must share one length")
    if n < 10:
        raise ValueError(f"need at least 10 observations, got {n}")
    names = ("shared", "a", "b") if kind == "overlapping" else ("x1", "y1", "x2", "y2")
    cols = [_check_corr_column(c, name) for c, name in zip(cols, names)]
    ranks = [rankdata(c, method="average") for c in cols]

    def rr(i: int, j: int) -> float:
        return float(np.corrcoef(ranks[i], ranks[j])[0, 1])

    if kind == "overlapping":
        r1, r2, rkh = rr(0, 1), rr(0, 2), rr(1, 2)
        z1, z2 = math.atanh(_clip_r(r1)), math.atanh(_clip_r(r2))
        rbar = math.tanh((z1 + z2) / 2.0)
        rb2 = rbar * rbar
        num = rkh * (1.0 - 2.0 * rb2) - 0.5 * rb2 * (1.0 - 2.0 * rb2 - rkh * rkh)
        c = num / ((1.0 - rb2) ** 2)
    else:
        r1, r2 = rr(0, 1), rr(2, 3)
        rjh, rjm = rr(0, 2), rr(0, 3)
        rkh, rkm = rr(1, 2), rr(1, 3)
        z1, z2 = math.atanh(_clip_r(r1)), math.atanh(_clip_r(r2))
        rbar = math.tanh((z1 + z2) / 2.0)
        rb2 = rbar * rbar
        kbar = (
            0.5 * rb2 * (rjh * rjh + rjm * rjm + rkh * rkh + rkm * rkm)
            + rjh * rkm
            + rjm * rkh
            - rbar * (rjh * rjm + rkh * rkm + rjh * rkh + rjm * rkm)
        )
        c = kbar / ((1.0 - rb2) ** 2)

    z = _dependent_z(z1, z2, c, n)
    return CorrReport(
        r1=r1,
        r2=r2,
        ci1=_fisher_ci(r1, n),
        ci2=_fisher_ci(r2, n),
        p_value=_two_sided_p(z),
        n=n,
        test_kind=kind,
        z_stat=z,
    )


def bootstrap_mean_ci(
    values: Sequence[float],
    rng: np.random.Generator,
    n_boot: int = 1000,
    alpha: float = 0.05,
) -> tuple[float, float]:
    """Percentile bootstrap CI for the mean (count configurable, default 1000)."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size < 1:
        raise ValueError("need at least one value")
    if not (0 < alpha < 1):
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if n_boot < 1:
        raise ValueError(f"n_boot must be >= 1, got {n_boot}")
    idx = rng.integers(0, arr.size, size=(n_boot, arr.size))
    means = arr[idx].mean(axis=1)
    lo, hi = np.quantile(means, [alpha / 2.0, 1.0 - alpha / 2.0])
    return (float(lo), float(hi))
