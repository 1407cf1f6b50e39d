"""Image quality metrics (PSNR, SSIM) and mean/std aggregation.

PSNR of identical images is the +inf sentinel: it is rendered as the string
"inf" in reports, counted in n, included in the mean (which is then +inf),
and excluded from the standard deviation.  SSIM is the windowed formulation
with Gaussian-weighted local moments over valid (fully interior) window
centers and is reported as a percentage.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, ShapeError


def mse(pred, truth) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ShapeError(f"image shapes differ: {pred.shape} vs {truth.shape}")
    diff = pred - truth
    return float(np.mean(diff * diff))


def mse_to_psnr(value: float, max_val: float = 1.0) -> float:
    """PSNR in dB for a known mean squared error."""
    if max_val <= 0:
        raise ContractError(f"max_val must be positive, got {max_val}")
    if value < 0:
        raise ContractError(f"MSE cannot be negative, got {value}")
    if value == 0.0:
        return math.inf
    return 10.0 * math.log10(max_val * max_val / value)


def psnr(pred, truth, max_val: float = 1.0) -> float:
    """Peak signal-to-noise ratio; +inf sentinel when the images agree
    exactly."""
    return mse_to_psnr(mse(pred, truth), max_val)


def gaussian_window(size: int = 7, sigma: float = 1.5) -> np.ndarray:
    """Normalized separable Gaussian weighting window."""
    if size < 1 or size % 2 == 0:
        raise ContractError(f"window size must be odd and positive, got {size}")
    center = (size - 1) / 2.0
    coords = np.arange(size, dtype=np.float64) - center
    g = np.exp(-(coords ** 2) / (2.0 * sigma ** 2))
    window = np.outer(g, g)
    return window / window.sum()


def ssim(pred, truth, window_size: int = 7, sigma: float = 1.5,
         k1: float = 0.01, k2: float = 0.03, data_range: float = 1.0) -> float:
    """Structural similarity in [-1, 1].

    Local means, variances, and covariance are Gaussian-weighted over every
    window fully inside the image (no padding); the SSIM map is averaged
    over those window centers.
    """
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ShapeError(f"image shapes differ: {pred.shape} vs {truth.shape}")
    if pred.ndim != 2:
        raise ShapeError(f"ssim expects 2-D images, got shape {pred.shape}")
    if min(pred.shape) < window_size:
        raise ContractError(
            f"image {pred.shape} smaller than the {window_size}x{window_size} window"
        )
    if data_range <= 0:
        raise ContractError(f"data_range must be positive, got {data_range}")
    window = gaussian_window(window_size, sigma)
    shape = (window_size, window_size)
    px = np.lib.stride_tricks.sliding_window_view(pred, shape)
    py = np.lib.stride_tricks.sliding_window_view(truth, shape)
    axes = ((2, 3), (0, 1))
    mu_x = np.tensordot(px, window, axes=axes)
    mu_y = np.tensordot(py, window, axes=axes)
    e_xx = np.tensordot(px * px, window, axes=axes)
    e_yy = np.tensordot(py * py, window, axes=axes)
    e_xy = np.tensordot(px * py, window, axes=axes)
    var_x = e_xx - mu_x * mu_x
    var_y = e_yy - mu_y * mu_y
    cov = e_xy - mu_x * mu_y
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    return float(np.mean(num / den))


def ssim_percent(pred, truth, **kwargs) -> float:
    return 100.0 * ssim(pred, truth, **kwargs)


@dataclass
class AggregateStats:
    """Mean and unbiased std of a metric column.

    ``flagged`` is True when the std is not estimable (fewer than two finite
    values); the std is then reported as 0.
    """

    mean: float
    std: float
    n: int
    flagged: bool

    def to_json_dict(self) -> dict:
        return {"mean": self.mean, "std": self.std, "n": self.n,
                "flagged": self.flagged}


def aggregate(values) -> AggregateStats:
    """Mean over all values (+inf sentinels dominate); std over the finite
    subset with the n-1 denominator."""
    values = [float(v) for v in values]
    if not values:
        raise ContractError("aggregate needs at least one value")
    n = len(values)
    finite = [v for v in values if math.isfinite(v)]
    if any(math.isinf(v) for v in values):
        mean = math.inf
    else:
        mean = sum(values) / n
    if len(finite) >= 2:
        fmean = sum(finite) / len(finite)
        std = math.sqrt(sum((v - fmean) ** 2 for v in finite) / (len(finite) - 1))
        flagged = False
    else:
        std = 0.0
        flagged = True
    return AggregateStats(mean=mean, std=std, n=n, flagged=flagged)


@dataclass
class MetricReport:
    """Per-sample metric rows and their aggregates for one (task, method)."""

    task: str
    method: str
    per_sample: list = field(default_factory=list)
    psnr: AggregateStats = None
    ssim: AggregateStats = None

    def to_json_dict(self) -> dict:
        return {
            "task": self.task,
            "method": self.method,
            "per_sample": self.per_sample,
            "aggregate": {
                "psnr_mean": self.psnr.mean, "psnr_std": self.psnr.std,
                "ssim_mean": self.ssim.mean, "ssim_std": self.ssim.std,
                "n": self.psnr.n, "psnr_flagged": self.psnr.flagged,
                "ssim_flagged": self.ssim.flagged,
            },
        }


def build_report(task: str, method: str, samples) -> MetricReport:
    """Assemble a MetricReport from per-sample rows of
    {study_id, modality, psnr_db, ssim_percent}."""
    samples = list(samples)
    if not samples:
        raise ContractError("cannot build a report from zero samples")
    return MetricReport(
        task=task, method=method, per_sample=samples,
        psnr=aggregate([s["psnr_db"] for s in samples]),
        ssim=aggregate([s["ssim_percent"] for s in samples]),
    )
