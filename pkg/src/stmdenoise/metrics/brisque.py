"""BRISQUE: natural-scene-statistics features plus an RBF support-vector regressor.

Model file layout (all little-endian)::

    magic      4s   b"BRSQ"
    version    u32  1
    n_features u32  36
    n_sv       u32
    gamma      f64  RBF kernel width
    rho        f64  decision offset (score = sum coef*K - rho)
    lower      f64  feature scaling target range
    upper      f64
    ranges     n_features x (f64 min, f64 max)
    vectors    n_sv x (f64 coef, n_features x f64)

Scores are only comparable between runs that use the same model file.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import cv2
import numpy as np
from scipy.special import gamma as gamma_fn

from .piqe import gaussian_kernel_2d

log = logging.getLogger(__name__)

MAGIC = b"BRSQ"
VERSION = 1
N_FEATURES = 36
_HEAD = struct.Struct("<4sIII4d")

_ALPHA_GRID = np.arange(0.2, 10.0 + 1e-9, 0.001)
_GGD_RATIO = gamma_fn(1 / _ALPHA_GRID) * gamma_fn(3 / _ALPHA_GRID) / gamma_fn(2 / _ALPHA_GRID) ** 2
_AGGD_RATIO = gamma_fn(2 / _ALPHA_GRID) ** 2 / (gamma_fn(1 / _ALPHA_GRID) * gamma_fn(3 / _ALPHA_GRID))
_SHIFTS = ((0, 1), (1, 0), (1, 1), (-1, 1))
_EPS = 1e-12


class BrisqueModelError(ValueError):
    """Missing or unreadable model file."""


@dataclass(frozen=True)
class BrisqueModel:
    gamma: float
    rho: float
    lower: float
    upper: float
    ranges: np.ndarray  # (36, 2) feature min/max
    coefs: np.ndarray  # (n_sv,)
    vectors: np.ndarray  # (n_sv, 36), already in scaled feature space

    def scale(self, features: np.ndarray) -> np.ndarray:
        lo, hi = self.ranges[:, 0], self.ranges[:, 1]
        span = np.where(hi > lo, hi - lo, 1.0)
        return self.lower + (self.upper - self.lower) * (features - lo) / span

    def predict(self, features: np.ndarray) -> float:
        x = self.scale(np.asarray(features, dtype=np.float64))
        d2 = np.sum((self.vectors - x) ** 2, axis=1)
        return float(self.coefs @ np.exp(-self.gamma * d2) - self.rho)

    def to_bytes(self) -> bytes:
        head = _HEAD.pack(MAGIC, VERSION, N_FEATURES, len(self.coefs), self.gamma, self.rho, self.lower, self.upper)
        body = np.column_stack([self.coefs, self.vectors]).astype("<f8").tobytes()
        return head + self.ranges.astype("<f8").tobytes() + body

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def from_bytes(cls, data: bytes) -> "BrisqueModel":
        if len(data) < _HEAD.size:
            raise BrisqueModelError("model file truncated")
        magic, version, n_feat, n_sv, gam, rho, lower, upper = _HEAD.unpack_from(data)
        if magic != MAGIC or version != VERSION or n_feat != N_FEATURES:
            raise BrisqueModelError(f"unsupported model header {magic!r} v{version} ({n_feat} features)")
        expected = _HEAD.size + 8 * (2 * n_feat + n_sv * (n_feat + 1))
        if len(data) != expected:
            raise BrisqueModelError(f"model file has {len(data)} bytes, expected {expected}")
        arr = np.frombuffer(data, dtype="<f8", offset=_HEAD.size)
        ranges = arr[: 2 * n_feat].reshape(n_feat, 2).copy()
        sv = arr[2 * n_feat :].reshape(n_sv, n_feat + 1)
        if not (np.all(np.isfinite(arr)) and np.isfinite(gam) and np.isfinite(rho)):
            raise BrisqueModelError("model file contains non-finite values")
        return cls(gam, rho, lower, upper, ranges, sv[:, 0].copy(), sv[:, 1:].copy())

    @classmethod
    def load(cls, path) -> "BrisqueModel":
        try:
            data = Path(path).read_bytes()
        except OSError as exc:
            raise BrisqueModelError(f"cannot read BRISQUE model {path}: {exc}") from exc
        return cls.from_bytes(data)


def default_model_path() -> Path:
    return Path(str(resources.files("stmdenoise.metrics") / "brisque_live.bin"))


def load_default_model() -> BrisqueModel:
    return BrisqueModel.load(default_model_path())


def fit_ggd(x: np.ndarray) -> tuple[float, float]:
    """Moment-matching fit of a zero-mean generalized Gaussian: (shape, variance)."""
    x = np.asarray(x, dtype=np.float64).ravel()
    var = float(np.mean(x**2))
    e_abs = float(np.mean(np.abs(x)))
    if var < _EPS or e_abs < _EPS:
        return float(_ALPHA_GRID[-1]), var
    rho = var / e_abs**2
    return float(_ALPHA_GRID[np.argmin(np.abs(rho - _GGD_RATIO))]), var


def fit_aggd(x: np.ndarray) -> tuple[float, float, float]:
    """Asymmetric generalized Gaussian fit: (shape, left std, right std)."""
    x = np.asarray(x, dtype=np.float64).ravel()
    left = x[x < 0]
    right = x[x > 0]
    sl = float(np.sqrt(np.mean(left**2))) if left.size else 0.0
    sr = float(np.sqrt(np.mean(right**2))) if right.size else 0.0
    m2 = float(np.mean(x**2))
    if sl < _EPS or sr < _EPS or m2 < _EPS:
        # Degenerate (one-sided or constant) input: fall back to the widest shape.
        return float(_ALPHA_GRID[-1]), sl, sr
    g = sl / sr
    r_hat = float(np.mean(np.abs(x))) ** 2 / m2
    r_norm = r_hat * (g**3 + 1) * (g + 1) / (g**2 + 1) ** 2
    return float(_ALPHA_GRID[np.argmin((_AGGD_RATIO - r_norm) ** 2)]), sl, sr


def _mscn_zero_padded(img255: np.ndarray) -> np.ndarray:
    from scipy import ndimage

    k = gaussian_kernel_2d(7, 7 / 6)
    mu = ndimage.correlate(img255, k, mode="constant")
    var = ndimage.correlate(img255 * img255, k, mode="constant") - mu * mu
    return (img255 - mu) / (np.sqrt(np.abs(var)) + 1.0)


def brisque_features(img01) -> np.ndarray:
    """The 36 BRISQUE features of a grayscale [0, 1] image, two scales."""
    a = np.asarray(img01, dtype=np.float64)
    if a.ndim != 2 or min(a.shape) < 8:
        raise ValueError(f"BRISQUE needs a 2D image of at least 8x8, got {a.shape}")
    img = np.round(np.clip(a, 0.0, 1.0) * 255.0)
    feats: list[float] = []
    for scale in range(2):
        m = _mscn_zero_padded(img)
        alpha, var = fit_ggd(m)
        feats += [alpha, var]
        for dy, dx in _SHIFTS:
            pair = m * np.roll(m, (dy, dx), axis=(0, 1))
            shape, sl, sr = fit_aggd(pair)
            const = np.sqrt(gamma_fn(1 / shape) / gamma_fn(3 / shape))
            mean = (sr - sl) * gamma_fn(2 / shape) / gamma_fn(1 / shape) * const
            feats += [shape, float(mean), sl**2, sr**2]
        if scale == 0:
            img = cv2.resize(img, (img.shape[1] // 2, img.shape[0] // 2), interpolation=cv2.INTER_CUBIC)
    return np.asarray(feats)


@dataclass(frozen=True)
class BrisqueResult:
    features: np.ndarray
    score: float | None


def brisque(img01, model: BrisqueModel | None) -> BrisqueResult:
    """Features and score; with ``model=None`` only features are produced."""
    f = brisque_features(img01)
    return BrisqueResult(f, None if model is None else model.predict(f))


def brisque_score(img01, model: BrisqueModel | None = None) -> float:
    model = model or load_default_model()
    return brisque(img01, model).score
