"""PSNR and SSIM on float images in [0, peak]."""

from __future__ import annotations

import numpy as np

from .errors import ShapeError

PSNR_CAP = 99.0


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """``10 log10(peak^2 / MSE)`` in dB, capped at 99 for near-zero error.

    The cap engages when ``MSE < peak^2 * 10^-9.9``, which is exactly where
    the formula would exceed 99 dB, so the function stays continuous.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"psnr: shapes {a.shape} and {b.shape} differ")
    mse = float(np.mean((a - b) ** 2))
    if mse < peak * peak * 10.0 ** (-PSNR_CAP / 10.0):
        return PSNR_CAP
    return 10.0 * np.log10(peak * peak / mse)


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    g = np.exp(-((np.arange(size) - half) ** 2) / (2.0 * sigma * sigma))
    g /= g.sum()
    return np.outer(g, g)


def _windowed(x: np.ndarray, win: np.ndarray) -> np.ndarray:
    view = np.lib.stride_tricks.sliding_window_view(x, win.shape)
    return np.tensordot(view, win, axes=([2, 3], [0, 1]))


def ssim(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """Structural similarity with an 11x11 Gaussian window (sigma 1.5),
    k1 = 0.01, k2 = 0.03; channels are scored independently and averaged.
    The window shrinks to fit images smaller than 11 pixels."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"ssim: shapes {a.shape} and {b.shape} differ")
    if a.ndim == 2:
        a, b = a[:, :, None], b[:, :, None]
    h, w, channels = a.shape
    size = min(11, h, w)
    if size % 2 == 0:
        size -= 1
    win = _gaussian_window(size, 1.5)
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    scores = []
    for ch in range(channels):
        x, y = a[:, :, ch], b[:, :, ch]
        mx, my = _windowed(x, win), _windowed(y, win)
        sxx = _windowed(x * x, win) - mx * mx
        syy = _windowed(y * y, win) - my * my
        sxy = _windowed(x * y, win) - mx * my
        num = (2 * mx * my + c1) * (2 * sxy + c2)
        den = (mx * mx + my * my + c1) * (sxx + syy + c2)
        scores.append(np.mean(num / den))
    return float(np.mean(scores))
