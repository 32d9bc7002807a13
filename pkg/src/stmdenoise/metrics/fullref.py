"""Full-reference metrics on the 8-bit scale."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

PEAK = 255.0


@dataclass(frozen=True)
class SsimConfig:
    c1: float = (0.01 * PEAK) ** 2
    c2: float = (0.03 * PEAK) ** 2
    window: int = 11
    sigma: float = 1.5

    def __post_init__(self):
        if self.c1 <= 0 or self.c2 <= 0:
            raise ValueError("SSIM constants must be positive")
        if self.window < 1 or self.window % 2 == 0:
            raise ValueError("window must be a positive odd size")


def quantize(img01: np.ndarray) -> np.ndarray:
    """Map [0, 1] values to the 0..255 scale by rounding."""
    return np.round(np.clip(np.asarray(img01, dtype=np.float64), 0.0, 1.0) * PEAK)


def _check_pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def mse(a, b) -> float:
    a, b = _check_pair(a, b)
    return float(np.mean((a - b) ** 2))


def psnr(mse_value: float) -> float:
    """10 log10(255^2 / mse) in dB; ``inf`` when mse is 0."""
    if mse_value < 0 or math.isnan(mse_value):
        raise ValueError(f"mse must be >= 0, got {mse_value}")
    if mse_value == 0:
        return math.inf
    return 10.0 * math.log10(PEAK**2 / mse_value)


def psnr_images(a01, b01) -> float:
    """PSNR between two [0, 1] images after 8-bit quantization."""
    return psnr(mse(quantize(a01), quantize(b01)))


def gaussian_window(size: int, sigma: float) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


def _local_mean(a: np.ndarray, w1: np.ndarray) -> np.ndarray:
    # Separable weighted mean, then keep only windows fully inside the image.
    r = len(w1) // 2
    out = ndimage.correlate1d(a, w1, axis=0, mode="constant")
    out = ndimage.correlate1d(out, w1, axis=1, mode="constant")
    return out[r : a.shape[0] - r, r : a.shape[1] - r]


def ssim_map(a, b, cfg: SsimConfig = SsimConfig()) -> np.ndarray:
    a, b = _check_pair(a, b)
    if a.ndim != 2 or min(a.shape) < cfg.window:
        raise ValueError(f"image {a.shape} smaller than the {cfg.window}x{cfg.window} window")
    w1 = gaussian_window(cfg.window, cfg.sigma)
    mu_a, mu_b = _local_mean(a, w1), _local_mean(b, w1)
    var_a = _local_mean(a * a, w1) - mu_a**2
    var_b = _local_mean(b * b, w1) - mu_b**2
    cov = _local_mean(a * b, w1) - mu_a * mu_b
    num = (2 * mu_a * mu_b + cfg.c1) * (2 * cov + cfg.c2)
    den = (mu_a**2 + mu_b**2 + cfg.c1) * (var_a + var_b + cfg.c2)
    return num / den


def ssim(a, b, cfg: SsimConfig = SsimConfig()) -> float:
    """Mean SSIM over all windows lying fully inside the image."""
    return float(np.clip(ssim_map(a, b, cfg).mean(), -1.0, 1.0))
