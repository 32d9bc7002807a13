"""Perception-based Image Quality Evaluator (blind, block-wise).

Scores lie in [0, 100]; lower is better. Uniform images score 100.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage


@dataclass(frozen=True)
class PiqeConfig:
    block: int = 16
    activity_threshold: float = 0.1
    impaired_threshold: float = 0.1
    segment: int = 6
    stabilizer: float = 1.0


def gaussian_kernel_2d(size: int, sigma: float) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x**2) / (2 * sigma**2))
    k = np.outer(g, g)
    return k / k.sum()


def mscn(img255: np.ndarray, padding: str = "nearest") -> np.ndarray:
    """Mean-subtracted contrast-normalized coefficients, 7x7 Gaussian (sigma 7/6)."""
    k = gaussian_kernel_2d(7, 7 / 6)
    mu = ndimage.correlate(img255, k, mode=padding)
    var = ndimage.correlate(img255 * img255, k, mode=padding) - mu * mu
    return (img255 - mu) / (np.sqrt(np.abs(var)) + 1.0)


def _edge_segments(edge: np.ndarray, length: int) -> np.ndarray:
    return np.lib.stride_tricks.sliding_window_view(edge, length)


def _noticeable_artifact(block: np.ndarray, cfg: PiqeConfig) -> bool:
    edges = (block[0, :], block[:, -1], block[-1, :], block[:, 0])
    for edge in edges:
        if np.any(_edge_segments(edge, cfg.segment).std(axis=1, ddof=1) < cfg.impaired_threshold):
            return True
    return False


def _center_surround_deviation(block: np.ndarray) -> float:
    n = block.shape[1]
    c1 = n // 2 - 1
    center = block[:, c1 : c1 + 2].ravel()
    surround = np.delete(block, [c1, c1 + 1], axis=1)
    s = surround.std(ddof=1)
    if s == 0:
        return 0.0
    return float(center.std(ddof=1) / s)


def _noisy(block: np.ndarray, var: float) -> bool:
    sigma = np.sqrt(var)
    csd = _center_surround_deviation(block)
    denom = max(sigma, csd)
    beta = abs(sigma - csd) / denom if denom > 0 else 0.0
    return bool(sigma > 2 * beta)


def piqe(img01, cfg: PiqeConfig = PiqeConfig()) -> float:
    """PIQE score of a grayscale image with values in [0, 1]."""
    a = np.asarray(img01, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError("PIQE expects a 2D grayscale image")
    if not np.all(np.isfinite(a)):
        raise ValueError("image contains non-finite values")
    b = cfg.block
    h, w = a.shape
    n_blocks = -(-h // b) * -(-w // b)
    if min(h, w) < b or n_blocks < 2:
        raise ValueError(f"image {a.shape} too small for {b}x{b} PIQE blocks")
    pad_h, pad_w = (-h) % b, (-w) % b
    if pad_h or pad_w:
        a = np.pad(a, ((0, pad_h), (0, pad_w)), mode="symmetric")
    img255 = np.round(np.clip(a, 0.0, 1.0) * 255.0)
    norm = mscn(img255)

    total = 0.0
    active = 0
    for i in range(0, norm.shape[0], b):
        for j in range(0, norm.shape[1], b):
            block = norm[i : i + b, j : j + b]
            var = float(block.var(ddof=1))
            if var <= cfg.activity_threshold:
                continue
            active += 1
            if _noticeable_artifact(block, cfg):
                total += 1.0 - var
            if _noisy(block, var):
                total += var
    score = (total + cfg.stabilizer) / (active + cfg.stabilizer) * 100.0
    return float(np.clip(score, 0.0, 100.0))
