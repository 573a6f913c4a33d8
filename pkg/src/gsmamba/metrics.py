"""PSNR / SSIM on the luminance channel."""

from __future__ import annotations

import numpy as np

from .errors import ShapeError

PSNR_CAP_DB = 100.0
BT601 = np.array([0.299, 0.587, 0.114])


def luminance(img: np.ndarray) -> np.ndarray:
    """(3, H, W) RGB -> (H, W) BT.601 luma; (H, W) or (1, H, W) pass through."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img
    if img.ndim == 3 and img.shape[0] == 1:
        return img[0]
    if img.ndim == 3 and img.shape[0] == 3:
        return np.tensordot(BT601, img, axes=(0, 0))
    raise ShapeError(f"expected (3,H,W), (1,H,W) or (H,W), got {img.shape}")


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    if a.shape != b.shape:
        raise ShapeError(f"psnr operands differ in shape: {a.shape} vs {b.shape}")
    if peak <= 0:
        raise ValueError(f"peak must be positive, got {peak}")
    mse = float(np.mean((np.asarray(a, dtype=np.float64) - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return float(10.0 * np.log10(peak * peak / mse))


def gaussian_window(size: int = 7, sigma: float = 1.5) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r**2) / (2.0 * sigma**2))
    g /= g.sum()
    return g


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    k = g.size
    rows = np.lib.stride_tricks.sliding_window_view(img, k, axis=0) @ g
    return np.lib.stride_tricks.sliding_window_view(rows, k, axis=1) @ g


def ssim(a: np.ndarray, b: np.ndarray, peak: float = 1.0, window: int = 7, sigma: float = 1.5) -> float:
    """Mean SSIM over valid window positions of two (H, W) images."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise ShapeError(f"ssim needs two equal (H, W) images, got {a.shape} and {b.shape}")
    if min(a.shape) < window:
        raise ShapeError(f"image {a.shape} is smaller than the {window}x{window} window")
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    g = gaussian_window(window, sigma)
    mu_a = _filter_valid(a, g)
    mu_b = _filter_valid(b, g)
    # variances from centered moments keep constant images at exactly zero
    var_a = np.maximum(_filter_valid(a * a, g) - mu_a * mu_a, 0.0)
    var_b = np.maximum(_filter_valid(b * b, g) - mu_b * mu_b, 0.0)
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def frame_metrics(sr: np.ndarray, hr: np.ndarray, peak: float = 1.0) -> tuple[float, float]:
    """Mean luminance PSNR and SSIM over a (T, C, H, W) clip."""
    p = [psnr(luminance(s), luminance(h), peak) for s, h in zip(sr, hr)]
    s = [ssim(luminance(x), luminance(y), peak) for x, y in zip(sr, hr)]
    return float(np.mean(p)), float(np.mean(s))
