"""Fidelity metrics for comparing sparse runs against dense references.

At desk scale there is no perceptual model to call, so reports use plain
MSE, PSNR, and SSIM between a scheduled run and the dense run on the same
noise draw.  PSNR saturates at 99 dB so "numerically identical" reads as
a finite score.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import convolve1d

from .core import LatentGrid, RegionMap
from .errors import ParameterError

__all__ = ["MetricReport", "mse", "psnr", "ssim", "metric_report", "PSNR_CAP_DB"]

PSNR_CAP_DB = 99.0
_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5
_SSIM_K1 = 0.01
_SSIM_K2 = 0.03


@dataclass(frozen=True)
class MetricReport:
    mse: float
    psnr: float
    ssim: float
    per_region_mse: tuple[float, ...] | None = None

    def to_dict(self) -> dict:
        out = {"mse": self.mse, "psnr": self.psnr, "ssim": self.ssim}
        if self.per_region_mse is not None:
            out["per_region_mse"] = list(self.per_region_mse)
        return out


def _check_pair(a: LatentGrid, b: LatentGrid):
    if a.shape != b.shape:
        raise ParameterError(f"grids disagree in shape: {a.shape} vs {b.shape}")


def mse(a: LatentGrid, b: LatentGrid) -> float:
    _check_pair(a, b)
    d = a.data - b.data
    return float(np.mean(d * d))


def psnr(a: LatentGrid, b: LatentGrid, data_range: float = 1.0) -> float:
    """10*log10(range^2 / mse), saturated at 99 dB for near-zero error."""
    if not math.isfinite(data_range) or data_range <= 0:
        raise ParameterError(f"data_range must be > 0, got {data_range}")
    err = mse(a, b)
    floor = data_range * data_range * 10.0 ** (-PSNR_CAP_DB / 10.0)
    if err < floor:
        return PSNR_CAP_DB
    return 10.0 * math.log10(data_range * data_range / err)


def _gaussian_kernel() -> np.ndarray:
    half = _SSIM_WINDOW // 2
    xs = np.arange(-half, half + 1, dtype=np.float64)
    k = np.exp(-(xs**2) / (2.0 * _SSIM_SIGMA**2))
    return k / k.sum()


def _windowed(arr: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Separable window means; only the fully valid interior is returned."""
    half = _SSIM_WINDOW // 2
    out = convolve1d(arr, kernel, axis=0, mode="constant")
    out = convolve1d(out, kernel, axis=1, mode="constant")
    return out[half:-half, half:-half]


def ssim(a: LatentGrid, b: LatentGrid, data_range: float = 1.0) -> float:
    """Mean local SSIM over valid 11x11 Gaussian windows, channel-averaged.

    Gaussian window sigma 1.5, stabilizers C1 = (0.01*range)^2 and
    C2 = (0.03*range)^2.  Grids smaller than the window are rejected.
    """
    _check_pair(a, b)
    if not math.isfinite(data_range) or data_range <= 0:
        raise ParameterError(f"data_range must be > 0, got {data_range}")
    if a.height < _SSIM_WINDOW or a.width < _SSIM_WINDOW:
        raise ParameterError(
            f"ssim needs grids of at least {_SSIM_WINDOW}x{_SSIM_WINDOW}, got {a.height}x{a.width}"
        )
    c1 = (_SSIM_K1 * data_range) ** 2
    c2 = (_SSIM_K2 * data_range) ** 2
    kernel = _gaussian_kernel()
    vals = []
    for c in range(a.channels):
        x = a.data[:, :, c]
        y = b.data[:, :, c]
        mx = _windowed(x, kernel)
        my = _windowed(y, kernel)
        mxx = _windowed(x * x, kernel)
        myy = _windowed(y * y, kernel)
        mxy = _windowed(x * y, kernel)
        vx = mxx - mx * mx
        vy = myy - my * my
        cov = mxy - mx * my
        score = ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / (
            (mx * mx + my * my + c1) * (vx + vy + c2)
        )
        vals.append(float(score.mean()))
    return float(np.mean(vals))


def metric_report(
    a: LatentGrid,
    b: LatentGrid,
    data_range: float = 1.0,
    regions: RegionMap | None = None,
) -> MetricReport:
    """Bundle the three metrics; optionally break MSE down per region."""
    per_region = None
    if regions is not None:
        if regions.labels.shape != (a.height, a.width):
            raise ParameterError("region map does not match the grids")
        d = ((a.data - b.data) ** 2).mean(axis=2).ravel()
        sums = np.bincount(regions.labels.ravel(), weights=d, minlength=regions.region_count)
        counts = regions.sizes()
        per_region = tuple((sums / counts).tolist())
    return MetricReport(
        mse=mse(a, b),
        psnr=psnr(a, b, data_range),
        ssim=ssim(a, b, data_range),
        per_region_mse=per_region,
    )
