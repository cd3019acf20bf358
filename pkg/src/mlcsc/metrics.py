"""Reconstruction quality measures."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

__all__ = ["MetricReport", "rmse_psnr", "ssim", "nrmse", "PSNR_CAP"]

PSNR_CAP = 300.0


@dataclass(frozen=True)
class MetricReport:
    rmse: float
    psnr: float = float("nan")
    ssim: float = float("nan")
    nrmse: float = float("nan")


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def rmse_psnr(a, b, peak: float = 1.0):
    """Root mean squared error and PSNR in dB (capped at 300 dB for identical inputs)."""
    a, b = _pair(a, b)
    rmse = float(np.sqrt(np.mean((a - b) ** 2)))
    if rmse == 0.0:
        return rmse, PSNR_CAP
    return rmse, min(PSNR_CAP, 20.0 * np.log10(peak / rmse))


def _gaussian_taps(size=11, sigma=1.5):
    x = np.arange(size) - size // 2
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def _filter_valid(img, taps):
    r = len(taps) // 2
    out = correlate1d(correlate1d(img, taps, axis=-1, mode="constant"), taps, axis=-2,
                      mode="constant")
    return out[..., r:-r, r:-r]


def ssim(a, b, data_range: float = 1.0) -> float:
    """Mean single-scale SSIM with an 11x11 Gaussian window (sigma 1.5).

    Accepts ``(H, W)`` or ``(C, H, W)``; multi-channel inputs are averaged
    over channels. Only fully covered window positions are used.
    """
    a, b = _pair(a, b)
    if a.ndim == 2:
        a, b = a[None], b[None]
    if a.ndim != 3:
        raise ValueError(f"ssim expects (H, W) or (C, H, W), got {a.shape}")
    if min(a.shape[-2:]) < 11:
        raise ValueError(f"image {a.shape[-2:]} smaller than the 11x11 window")
    taps = _gaussian_taps()
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    mu_a, mu_b = _filter_valid(a, taps), _filter_valid(b, taps)
    var_a = _filter_valid(a * a, taps) - mu_a ** 2
    var_b = _filter_valid(b * b, taps) - mu_b ** 2
    cov = _filter_valid(a * b, taps) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.clip(np.mean(num / den), -1.0, 1.0))


def nrmse(pred, truth) -> float:
    """Frobenius-relative error ``||pred - truth|| / ||truth||``."""
    pred, truth = _pair(pred, truth)
    denom = np.linalg.norm(truth)
    if denom == 0.0:
        raise ValueError("nrmse is undefined for an all-zero ground truth")
    return float(np.linalg.norm(pred - truth) / denom)
