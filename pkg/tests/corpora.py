"""Seeded image corpora shared by the metric tests and the acceptance suite."""

from functools import lru_cache

import numpy as np

from stmdenoise.scenes import SceneConfig, generate_clear_dataset

NOISE_LEVELS = (0.02, 0.05, 0.1, 0.2)


@lru_cache(maxsize=4)
def clean_corpus(n=50, grid=256, seed=2024):
    return tuple(img.values.astype(np.float64) for img in generate_clear_dataset(n, SceneConfig(grid=grid), seed=seed))


def noisy_versions(img, levels=NOISE_LEVELS, seed=0):
    """The same unit-variance noise field scaled to each level, then clipped."""
    noise = np.random.default_rng(seed).normal(size=img.shape)
    return [np.clip(img + s * noise, 0.0, 1.0) for s in levels]


def monotone_fraction(scores):
    scores = np.asarray(scores)
    return float(np.all(np.diff(scores, axis=1) >= 0, axis=1).mean())
