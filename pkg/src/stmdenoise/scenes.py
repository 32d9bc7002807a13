"""Random impurity scenes and seeded generation of clean LDOS images."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np

from .physics import (
    Grid,
    ImpuritySet,
    PhysicsError,
    ScalarField2D,
    SingularMatrixError,
    SurfaceModel,
    ldos_map,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SceneConfig:
    """Statistics of a random scene. Counts are inclusive; |strength| is uniform."""

    fov_nm: float = 20.0
    grid: int = 256
    n_min: int = 3
    n_max: int = 12
    v_min: float = 1.0
    v_max: float = 4.0
    model: SurfaceModel = SurfaceModel()

    def __post_init__(self):
        if self.fov_nm <= 0:
            raise PhysicsError("fov_nm must be positive")
        if self.grid < 2:
            raise PhysicsError("grid must be at least 2")
        if not 0 <= self.n_min <= self.n_max:
            raise PhysicsError("need 0 <= n_min <= n_max")
        if not 0 < self.v_min <= self.v_max:
            raise PhysicsError("need 0 < v_min <= v_max")

    @property
    def raster(self) -> Grid:
        return Grid.square(self.grid, self.fov_nm)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["model"] = self.model.as_dict()
        return d


def image_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for image ``index`` of a run seeded with ``seed``.

    Streams depend only on (seed, index), never on processing order.
    """
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


def sample_impurities(cfg: SceneConfig, rng: np.random.Generator) -> ImpuritySet:
    n = int(rng.integers(cfg.n_min, cfg.n_max + 1))
    pos = rng.uniform(0.0, cfg.fov_nm, size=(n, 2))
    mag = rng.uniform(cfg.v_min, cfg.v_max, size=n)
    sign = rng.choice([-1.0, 1.0], size=n)
    return ImpuritySet(pos, sign * mag, bounds=(0.0, 0.0, cfg.fov_nm, cfg.fov_nm))


def ldos_to_image(field: ScalarField2D) -> ScalarField2D:
    """Clip the LDOS at 0 and min-max normalize to [0, 1].

    A flat map becomes all zeros. Raw extrema are kept in the metadata.
    """
    a = np.clip(field.values, 0.0, None)
    lo, hi = float(a.min()), float(a.max())
    img = (a - lo) / (hi - lo) if hi > lo else np.zeros_like(a)
    return field.with_values(img, ldos_min=float(field.values.min()), ldos_max=float(field.values.max()))


def simulate_scene(cfg: SceneConfig, seed: int, index: int) -> ScalarField2D:
    """One normalized clean image with its provenance metadata."""
    rng = image_rng(seed, index)
    imps = sample_impurities(cfg, rng)
    field = ldos_map(cfg.raster, imps, cfg.model)
    img = ldos_to_image(field)
    img.values = img.values.astype(np.float32)
    img.meta.update(
        seed=seed,
        index=index,
        impurities=[(float(x), float(y), float(v)) for (x, y), v in zip(imps.positions, imps.strengths)],
        model=cfg.model.as_dict(),
    )
    return img


def generate_clear_dataset(count: int, cfg: SceneConfig, seed: int) -> list[ScalarField2D]:
    """``count`` clean images; scenes whose solve fails are skipped and replaced."""
    if count < 1:
        raise ValueError("count must be >= 1")
    out: list[ScalarField2D] = []
    index = 0
    while len(out) < count:
        try:
            out.append(simulate_scene(cfg, seed, index))
        except SingularMatrixError as exc:
            log.warning("skipping scene %d of seed %d: %s", index, seed, exc)
        index += 1
    return out
