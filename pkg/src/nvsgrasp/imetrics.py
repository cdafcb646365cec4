"""Reconstruction quality metrics: PSNR, MS-SSIM and depth L1."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.signal import convolve2d

from .geometry import InputShapeError

PSNR_CAP = 100.0
MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
WINDOW = 11
WINDOW_SIGMA = 1.5
K1, K2 = 0.01, 0.03


class UndefinedMetricError(ValueError):
    pass


@dataclass
class MetricResult:
    psnr: float
    ms_ssim: float
    depth_l1: float
    valid_pixel_fraction: float
    ms_ssim_scales: int = 5

    def to_dict(self) -> dict:
        return asdict(self)


def _same_shape(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise InputShapeError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b, cap: float = PSNR_CAP) -> float:
    """Peak signal-to-noise ratio in dB for images with unit peak."""
    a, b = _same_shape(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return cap
    return min(cap, 10.0 * np.log10(1.0 / mse))


def gaussian_window(size: int = WINDOW, sigma: float = WINDOW_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-x ** 2 / (2 * sigma ** 2))
    g /= g.sum()
    return np.outer(g, g)


def _ssim_terms(x: np.ndarray, y: np.ndarray, win: np.ndarray):
    """Mean SSIM and mean contrast-structure over the 'valid' window positions."""
    c1 = K1 ** 2
    c2 = K2 ** 2
    f = lambda img: convolve2d(img, win, mode="valid")
    mx, my = f(x), f(y)
    sxx = f(x * x) - mx * mx
    syy = f(y * y) - my * my
    sxy = f(x * y) - mx * my
    cs = (2 * sxy + c2) / (sxx + syy + c2)
    lum = (2 * mx * my + c1) / (mx * mx + my * my + c1)
    return float(np.mean(lum * cs)), float(np.mean(cs))


def _downsample(img: np.ndarray) -> np.ndarray:
    h, w = img.shape
    h2, w2 = h // 2 * 2, w // 2 * 2
    x = img[:h2, :w2]
    return 0.25 * (x[0::2, 0::2] + x[1::2, 0::2] + x[0::2, 1::2] + x[1::2, 1::2])


def ms_ssim_scales(height: int, width: int, max_scales: int = len(MS_SSIM_WEIGHTS)) -> int:
    """Number of dyadic scales whose coarsest level still fits the 11x11 window."""
    m = min(height, width)
    k = 0
    while k < max_scales and m >= WINDOW:
        k += 1
        m //= 2
    return k


def ms_ssim(a, b, scales: int = None, return_scales: bool = False):
    """Multi-scale SSIM at unit dynamic range.

    Contrast-structure terms at each scale, luminance only at the coarsest,
    combined with the standard exponents. Images smaller than 176 px use as
    many scales as fit, with the exponents renormalized to sum to one.
    Color images are scored per channel and averaged.
    """
    a, b = _same_shape(a, b)
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    H, W = a.shape[:2]
    k = ms_ssim_scales(H, W) if scales is None else scales
    if k < 1:
        raise UndefinedMetricError("image smaller than the SSIM window")
    weights = np.asarray(MS_SSIM_WEIGHTS[:k])
    weights = weights / weights.sum()
    win = gaussian_window()
    vals = []
    for ch in range(a.shape[2]):
        x, y = a[..., ch], b[..., ch]
        value = 1.0
        for s in range(k):
            ssim_s, cs_s = _ssim_terms(x, y, win)
            term = ssim_s if s == k - 1 else cs_s
            value *= max(term, 0.0) ** weights[s]
            x, y = _downsample(x), _downsample(y)
        vals.append(value)
    out = float(np.mean(vals))
    return (out, k) if return_scales else out


def depth_l1(a, b, return_fraction: bool = False):
    """Mean absolute depth difference over pixels valid (> 0) in both images."""
    a, b = _same_shape(a, b)
    valid = (a > 0) & (b > 0)
    n = int(valid.sum())
    if n == 0:
        raise UndefinedMetricError("no pixel has valid depth in both images")
    val = float(np.abs(a - b)[valid].mean())
    return (val, n / valid.size) if return_fraction else val


def evaluate_frame(color, color_gt, depth, depth_gt) -> MetricResult:
    ms, k = ms_ssim(color, color_gt, return_scales=True)
    dl1, frac = depth_l1(depth, depth_gt, return_fraction=True)
    return MetricResult(psnr(color, color_gt), ms, dl1, frac, k)
