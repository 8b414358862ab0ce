"""Full-reference quality metrics with declared orientations.

Ships a pluggable quartet {psnr, ssim, ms_ssim, gms_deviation} plus the
calibrated 0-100 quality scale (quality100) used for distortion-level
targeting. Metric ids travel with every score so exact replicas of other
FR methods can be swapped in behind the same descriptor interface.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import cv2
import numpy as np
from scipy.ndimage import correlate1d

from .pixels import DimensionError, channel_count, downsample2x, to_luma

HIGHER_BETTER = "higher_better"
LOWER_BETTER = "lower_better"

PSNR_CAP_DB = 100.0

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2

# Five-scale exponents from the classic multi-scale SSIM construction.
MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)

# Gradient-similarity stabilizer, the cited work's 170/255^2 rescaled to [0,1].
GMS_C = 0.0026


class MetricError(ValueError):
    """Metric evaluated on inputs it cannot score."""


@dataclass(frozen=True)
class FrMetricDescriptor:
    """A full-reference metric with its orientation and nominal range."""

    id: str
    orientation: str
    range: tuple[float, float]
    fn: Optional[Callable[[np.ndarray, np.ndarray], float]] = field(default=None, compare=False)

    def __post_init__(self):
        if self.orientation not in (HIGHER_BETTER, LOWER_BETTER):
            raise ValueError(f"bad orientation {self.orientation!r}")

    def score(self, ref: np.ndarray, dist: np.ndarray) -> float:
        if self.fn is None:
            raise MetricError(f"metric {self.id!r} has no local implementation")
        return self.fn(ref, dist)


def _check_pair(ref: np.ndarray, dist: np.ndarray) -> None:
    if ref.shape != dist.shape:
        raise DimensionError(f"shape mismatch: ref {ref.shape} vs dist {dist.shape}")
    channel_count(ref)


def psnr(ref: np.ndarray, dist: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB over the [0, 1] domain, capped at 100."""
    _check_pair(ref, dist)
    mse = float(np.mean((ref - dist) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(10.0 * np.log10(1.0 / mse), PSNR_CAP_DB)


def _gaussian_win1d(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    k = np.exp(-(x**2) / (2.0 * sigma**2))
    return k / k.sum()


def _win_filter(x: np.ndarray, k: np.ndarray) -> np.ndarray:
    # Separable windowed sum, cropped to the fully-covered (valid) region.
    y = cv2.sepFilter2D(x, -1, k, k, borderType=cv2.BORDER_CONSTANT)
    r = len(k) // 2
    return y[r:-r, r:-r]


def _as_luma(img: np.ndarray) -> np.ndarray:
    return to_luma(img) if channel_count(img) == 3 else np.asarray(img, dtype=np.float64)


def _ssim_stats(x: np.ndarray, y: np.ndarray, k: np.ndarray):
    mu_x = _win_filter(x, k)
    mu_y = _win_filter(y, k)
    var_x = _win_filter(x * x, k) - mu_x**2
    var_y = _win_filter(y * y, k) - mu_y**2
    cov = _win_filter(x * y, k) - mu_x * mu_y
    return mu_x, mu_y, var_x, var_y, cov


def ssim(ref: np.ndarray, dist: np.ndarray) -> float:
    """Mean structural similarity over 11x11 Gaussian (sigma 1.5) windows."""
    _check_pair(ref, dist)
    x, y = _as_luma(ref), _as_luma(dist)
    if min(x.shape) < SSIM_WINDOW:
        raise DimensionError(f"image {x.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    k = _gaussian_win1d()
    mu_x, mu_y, var_x, var_y, cov = _ssim_stats(x, y, k)
    num = (2.0 * mu_x * mu_y + SSIM_C1) * (2.0 * cov + SSIM_C2)
    den = (mu_x**2 + mu_y**2 + SSIM_C1) * (var_x + var_y + SSIM_C2)
    return float(np.mean(num / den))


def _ssim_cs(x: np.ndarray, y: np.ndarray, k: np.ndarray) -> tuple[float, float]:
    mu_x, mu_y, var_x, var_y, cov = _ssim_stats(x, y, k)
    lum = np.mean((2.0 * mu_x * mu_y + SSIM_C1) / (mu_x**2 + mu_y**2 + SSIM_C1))
    cs = np.mean((2.0 * cov + SSIM_C2) / (var_x + var_y + SSIM_C2))
    return float(lum), float(cs)


def ms_ssim(ref: np.ndarray, dist: np.ndarray) -> float:
    """Five-scale SSIM product; luminance enters at the coarsest scale only.

    Images too small for all five scales use the scales that fit, with the
    exponents renormalized to sum 1. Negative terms are clamped at 0, so
    the result stays in [0, 1].
    """
    _check_pair(ref, dist)
    x, y = _as_luma(ref), _as_luma(dist)
    if min(x.shape) < SSIM_WINDOW:
        raise DimensionError(f"image {x.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    k = _gaussian_win1d()

    scales = [(x, y)]
    while len(scales) < len(MS_SSIM_WEIGHTS):
        px, py = scales[-1]
        if min(px.shape) // 2 < SSIM_WINDOW:
            break
        scales.append((downsample2x(px), downsample2x(py)))
    weights = np.asarray(MS_SSIM_WEIGHTS[: len(scales)])
    weights = weights / weights.sum()

    value = 1.0
    for i, (px, py) in enumerate(scales):
        lum, cs = _ssim_cs(px, py, k)
        term = lum * cs if i == len(scales) - 1 else cs
        # terms are <= 1 exactly; float cancellation can overshoot by an eps
        value *= min(max(term, 0.0), 1.0) ** weights[i]
    return float(value)


def _prewitt_magnitude(x: np.ndarray) -> np.ndarray:
    smooth = np.array([1.0, 1.0, 1.0]) / 3.0
    diff = np.array([1.0, 0.0, -1.0])
    gx = correlate1d(correlate1d(x, smooth, axis=0, mode="nearest"), diff, axis=1, mode="nearest")
    gy = correlate1d(correlate1d(x, smooth, axis=1, mode="nearest"), diff, axis=0, mode="nearest")
    return np.hypot(gx, gy)


def gms_deviation(ref: np.ndarray, dist: np.ndarray) -> float:
    """Standard deviation of the gradient-magnitude similarity map (lower = better)."""
    _check_pair(ref, dist)
    x, y = _as_luma(ref), _as_luma(dist)
    if min(x.shape) < 3:
        raise DimensionError(f"image {x.shape} smaller than the 3x3 gradient support")
    g1, g2 = _prewitt_magnitude(x), _prewitt_magnitude(y)
    sim = (2.0 * g1 * g2 + GMS_C) / (g1**2 + g2**2 + GMS_C)
    return float(np.std(sim))


def quality_scale(m: float) -> float:
    """Monotone map from a [0, 1] similarity to the 0-100 quality scale."""
    m = min(max(m, 0.0), 1.0)
    return 100.0 * (1.0 - (1.0 - m) ** 0.7)


def quality100(ref: np.ndarray, dist: np.ndarray) -> float:
    """Calibrated 0-100 quality scale: 100 * (1 - (1 - m)^0.7), m = ms_ssim.

    Strictly monotone in ms_ssim; exactly 100 for identical images. The
    0.7 exponent expands the high-quality end where ms_ssim saturates.
    """
    return quality_scale(ms_ssim(ref, dist))


def score_pairs(
    metric: FrMetricDescriptor,
    pairs: Sequence[tuple[np.ndarray, np.ndarray]],
    workers: int = 1,
) -> np.ndarray:
    """Score (ref, dist) pairs in input order; order is worker-count invariant."""

    def one(indexed):
        i, (ref, dist) = indexed
        try:
            return metric.score(ref, dist)
        except Exception as exc:
            raise MetricError(f"metric {metric.id!r} failed on pair {i}: {exc}") from exc

    items = list(enumerate(pairs))
    if workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            scores = list(pool.map(one, items))
    else:
        scores = [one(item) for item in items]
    return np.asarray(scores, dtype=np.float64)


DEFAULT_METRICS: tuple[FrMetricDescriptor, ...] = (
    FrMetricDescriptor("psnr", HIGHER_BETTER, (0.0, PSNR_CAP_DB), psnr),
    FrMetricDescriptor("ssim", HIGHER_BETTER, (-1.0, 1.0), ssim),
    FrMetricDescriptor("ms_ssim", HIGHER_BETTER, (0.0, 1.0), ms_ssim),
    FrMetricDescriptor("gms_deviation", LOWER_BETTER, (0.0, 1.0), gms_deviation),
)


def metric_by_id(metric_id: str) -> FrMetricDescriptor:
    for m in DEFAULT_METRICS:
        if m.id == metric_id:
            return m
    raise KeyError(f"unknown metric id {metric_id!r}")
