"""Image-quality metrics for images in [0, 1]."""

from __future__ import annotations

import numpy as np

from ..errors import ContractError

PSNR_CAP = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


def _as_images(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 4:
        if a.shape[1] != 1:
            raise ContractError(f"metrics expect single-channel images, got shape {a.shape}")
        a = a[:, 0]
    elif a.ndim == 2:
        a = a[None]
    if a.ndim != 3 or a.shape[0] == 0:
        raise ContractError(f"metrics need a non-empty stack of 2-D images, got shape {a.shape}")
    return a


def mae(pred, target) -> float:
    p, t = _as_images(pred), _as_images(target)
    return float(np.abs(p - t).mean())


def mse(pred, target) -> float:
    p, t = _as_images(pred), _as_images(target)
    return float(((p - t) ** 2).mean())


def rmse(pred, target) -> float:
    return float(np.sqrt(mse(pred, target)))


def psnr_from_mse(m: float) -> float:
    """``10 log10(1 / MSE)``; an exact match reports the 99 dB cap."""
    if m <= 0.0:
        return PSNR_CAP
    return float(min(10.0 * np.log10(1.0 / m), PSNR_CAP))


def psnr(pred, target) -> float:
    return psnr_from_mse(mse(pred, target))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x**2) / (2.0 * sigma**2))
    return g / g.sum()


def _valid_filter_matrix(n: int, taps: np.ndarray) -> np.ndarray:
    k = taps.size
    m = np.zeros((n - k + 1, n))
    for i in range(n - k + 1):
        m[i, i : i + k] = taps
    return m


def ssim_map(pred, target, data_range: float = 1.0) -> np.ndarray:
    """Per-pixel SSIM over the valid region of each image (Gaussian 11x11, sigma 1.5)."""
    p, t = _as_images(pred), _as_images(target)
    if p.shape != t.shape:
        raise ContractError(f"ssim: shapes {p.shape} and {t.shape} differ")
    _, h, w = p.shape
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise ContractError(f"ssim: images must be at least {SSIM_WINDOW}x{SSIM_WINDOW}")
    g = gaussian_window()
    gh, gw = _valid_filter_matrix(h, g), _valid_filter_matrix(w, g)

    def filt(a):
        return np.matmul(np.matmul(gh, a), gw.T)

    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    mu_p, mu_t = filt(p), filt(t)
    s_pp = filt(p * p) - mu_p**2
    s_tt = filt(t * t) - mu_t**2
    s_pt = filt(p * t) - mu_p * mu_t
    num = (2 * mu_p * mu_t + c1) * (2 * s_pt + c2)
    den = (mu_p**2 + mu_t**2 + c1) * (s_pp + s_tt + c2)
    return num / den


def ssim(pred, target) -> float:
    """Mean SSIM, averaged per image and then over images."""
    return float(ssim_map(pred, target).mean(axis=(1, 2)).mean())
