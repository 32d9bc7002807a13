"""Synthetic STM acquisition artifacts applied to clean images in [0, 1].

Order follows the acquisition chain: drift shear, tip/vibration blur,
per-scan-line offsets, white electronic noise, then clipping.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace

import numpy as np
from scipy import ndimage

from .physics import ScalarField2D


@dataclass(frozen=True)
class DegradationConfig:
    """Amplitudes of each artifact. Noise amplitudes are fractions of the value range."""

    blur_sigma: float = 1.5
    noise_sigma: float = 0.03
    line_amp: float = 0.05
    drift_shear: float = 2.0
    seed: int = 0

    def __post_init__(self):
        for name in ("blur_sigma", "noise_sigma", "line_amp", "drift_shear"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {v}")

    @property
    def is_identity(self) -> bool:
        return not (self.blur_sigma or self.noise_sigma or self.line_amp or self.drift_shear)

    def scaled(self, factor: float) -> "DegradationConfig":
        return replace(
            self,
            blur_sigma=self.blur_sigma * factor,
            noise_sigma=self.noise_sigma * factor,
            line_amp=self.line_amp * factor,
            drift_shear=self.drift_shear * factor,
        )

    def as_dict(self) -> dict:
        return asdict(self)


#: Deliberately different artifact mix standing in for real experimental scans.
PSEUDO_EXPERIMENTAL = DegradationConfig(blur_sigma=2.0, noise_sigma=0.06, line_amp=0.08, drift_shear=3.0)


def _value_range(a: np.ndarray) -> float:
    r = float(a.max() - a.min())
    return r if r > 0 else 1.0


def gaussian_blur(img: ScalarField2D, sigma: float) -> ScalarField2D:
    """Separable Gaussian blur with reflect padding; sigma in pixels."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0:
        return img.with_values(img.values.copy())
    out = ndimage.gaussian_filter(img.values.astype(np.float64), sigma, mode="reflect")
    return img.with_values(out.astype(img.values.dtype))


def scan_line_noise(img: ScalarField2D, amp: float, seed, value_range: float | None = None) -> ScalarField2D:
    """Add one uniform offset in [-amp, amp] * range to each row.

    ``value_range`` defaults to the image's peak-to-peak (1 for flat images).
    """
    if amp < 0:
        raise ValueError("amp must be >= 0")
    if amp == 0:
        return img.with_values(img.values.copy())
    rng = np.random.default_rng(seed)
    a = img.values.astype(np.float64)
    offsets = rng.uniform(-amp, amp, size=a.shape[0]) * (value_range or _value_range(a))
    return img.with_values((a + offsets[:, None]).astype(img.values.dtype))


def drift_shear(img: ScalarField2D, max_shear: float, seed) -> ScalarField2D:
    """Shift row ``i`` horizontally by ``s * i / (H - 1)`` pixels, s ~ U[-max, max]."""
    if max_shear < 0:
        raise ValueError("max_shear must be >= 0")
    if max_shear == 0:
        return img.with_values(img.values.copy())
    rng = np.random.default_rng(seed)
    s = rng.uniform(-max_shear, max_shear)
    a = img.values.astype(np.float64)
    h, w = a.shape
    rows, cols = np.mgrid[0:h, 0:w].astype(np.float64)
    cols = cols - s * rows / (h - 1)
    out = ndimage.map_coordinates(a, [rows, cols], order=1, mode="reflect")
    return img.with_values(out.astype(img.values.dtype))


def white_noise(img: ScalarField2D, sigma: float, seed, value_range: float | None = None) -> ScalarField2D:
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0:
        return img.with_values(img.values.copy())
    rng = np.random.default_rng(seed)
    a = img.values.astype(np.float64)
    out = a + rng.normal(0.0, sigma * (value_range or _value_range(a)), size=a.shape)
    return img.with_values(out.astype(img.values.dtype))


def degrade(img: ScalarField2D, cfg: DegradationConfig, index: int = 0) -> ScalarField2D:
    """Full artifact pipeline, deterministic in (img, cfg.seed, index)."""
    if cfg.is_identity:
        return img.with_values(img.values.copy())
    s_shear, s_line, s_noise = np.random.SeedSequence(cfg.seed, spawn_key=(index,)).spawn(3)
    # Noise amplitudes refer to the clean image's range, not the blurred one's.
    value_range = _value_range(img.values.astype(np.float64))
    work = img.with_values(img.values.astype(np.float64))
    work = drift_shear(work, cfg.drift_shear, s_shear)
    work = gaussian_blur(work, cfg.blur_sigma)
    work = scan_line_noise(work, cfg.line_amp, s_line, value_range)
    work = white_noise(work, cfg.noise_sigma, s_noise, value_range)
    out = np.clip(work.values, 0.0, 1.0).astype(img.values.dtype)
    return img.with_values(out, degradation=cfg.as_dict(), degradation_index=index)
