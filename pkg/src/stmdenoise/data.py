"""Dataset assembly, augmentation, normalization and unpaired batch sampling.

Three image domains are kept apart on disk and in memory: clean simulations,
degraded ("blurry") simulations and experimental scans. Without real scans a
pseudo-experimental domain is synthesized from separate, larger scenes with a
different artifact mix and cut down to size by augmentation.

Workspace layout::

    manifest.jsonl                       one {id, path, domain, split[, source]} per line
    images/<domain>/<split>/<id>.ldos    raster files
"""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
import torch

from .degradation import PSEUDO_EXPERIMENTAL, DegradationConfig, degrade
from .physics import ScalarField2D
from .rasters import read_raster, write_raster
from .scenes import SceneConfig, generate_clear_dataset


class DataConfigError(ValueError):
    """Invalid data configuration or an unusable dataset."""


class DomainTag(str, enum.Enum):
    SIM_CLEAR = "sim_clear"
    SIM_BLUR = "sim_blur"
    EXP = "exp"

    @property
    def code(self) -> int:
        return list(DomainTag).index(self)


# --- normalization ---------------------------------------------------------


def normalize(img) -> torch.Tensor:
    """Map [0, 1] values affinely to [-1, 1] as a float32 tensor of the same shape."""
    a = img.values if isinstance(img, ScalarField2D) else np.asarray(img)
    a = a.astype(np.float64)
    if a.size and (a.min() < 0.0 or a.max() > 1.0 or not np.all(np.isfinite(a))):
        raise DataConfigError(f"image values must lie in [0, 1], got [{a.min()}, {a.max()}]")
    return torch.from_numpy((2.0 * a - 1.0).astype(np.float32))


def denormalize(t: torch.Tensor, like: ScalarField2D | None = None) -> ScalarField2D:
    """Inverse of :func:`normalize` for one H x W image, clipped to [0, 1]."""
    a = t.detach().cpu().double().numpy()
    a = np.squeeze(a)
    if a.ndim != 2:
        raise DataConfigError(f"expected a single image, got shape {tuple(t.shape)}")
    out = np.clip((a + 1.0) / 2.0, 0.0, 1.0).astype(np.float32)
    if like is None:
        return ScalarField2D(out)
    return like.with_values(out)


@dataclass(frozen=True)
class ImageBatch:
    tensor: torch.Tensor  # B x 1 x H x W in [-1, 1]
    domain: DomainTag
    ids: tuple[str, ...]

    def __post_init__(self):
        t = self.tensor
        if t.ndim != 4 or t.shape[1] != 1:
            raise DataConfigError(f"batch tensor must be B x 1 x H x W, got {tuple(t.shape)}")
        if t.shape[0] != len(self.ids):
            raise DataConfigError("one id per batch member is required")
        if t.numel() and (float(t.detach().min()) < -1.0 or float(t.detach().max()) > 1.0):
            raise DataConfigError("batch values must lie in [-1, 1]")


# --- augmentation ----------------------------------------------------------


@dataclass(frozen=True)
class AugmentSpec:
    """Which dihedral views to produce and how many random crops per view.

    ``crop=None`` keeps the full image (one output per view).
    """

    hflip: bool = False
    vflip: bool = False
    rotations: bool = False
    crop: int | None = None
    crops_per_view: int = 1

    def __post_init__(self):
        if self.crop is not None and self.crop < 2:
            raise DataConfigError("crop must be at least 2 pixels")
        if self.crops_per_view < 1:
            raise DataConfigError("crops_per_view must be >= 1")

    @classmethod
    def full(cls, crop: int | None = None, crops_per_view: int = 1) -> "AugmentSpec":
        return cls(True, True, True, crop, crops_per_view)

    def views(self) -> list[tuple[int, bool, bool]]:
        """Distinct (k90, hflip, vflip) transforms, identity first."""
        probe = np.arange(6).reshape(2, 3)
        seen, out = set(), []
        for k in range(4 if self.rotations else 1):
            for h in (False, True) if self.hflip else (False,):
                for v in (False, True) if self.vflip else (False,):
                    key = _dihedral(probe, k, h, v)
                    sig = (key.shape, key.tobytes())
                    if sig not in seen:
                        seen.add(sig)
                        out.append((k, h, v))
        return out

    @property
    def count(self) -> int:
        return len(self.views()) * (self.crops_per_view if self.crop is not None else 1)


def _dihedral(a: np.ndarray, k: int, h: bool, v: bool) -> np.ndarray:
    if h:
        a = a[:, ::-1]
    if v:
        a = a[::-1, :]
    return np.rot90(a, k)


def hflip(img: ScalarField2D) -> ScalarField2D:
    return img.with_values(np.ascontiguousarray(img.values[:, ::-1]))


def vflip(img: ScalarField2D) -> ScalarField2D:
    return img.with_values(np.ascontiguousarray(img.values[::-1, :]))


def rot90(img: ScalarField2D, k: int = 1) -> ScalarField2D:
    out = np.ascontiguousarray(np.rot90(img.values, k))
    extent = img.extent if k % 2 == 0 else img.extent[::-1]
    return ScalarField2D(out, tuple(extent), img.origin, dict(img.meta))


def crop(img: ScalarField2D, top: int, left: int, size: int) -> ScalarField2D:
    h, w = img.shape
    if size > min(h, w):
        raise DataConfigError(f"crop {size} larger than image {img.shape}")
    if not (0 <= top <= h - size and 0 <= left <= w - size):
        raise DataConfigError("crop window outside the image")
    px, py = img.extent[0] / w, img.extent[1] / h
    values = np.ascontiguousarray(img.values[top : top + size, left : left + size])
    origin = (img.origin[0] + left * px, img.origin[1] + top * py)
    return ScalarField2D(values, (size * px, size * py), origin, dict(img.meta))


def augment(img: ScalarField2D, spec: AugmentSpec, seed) -> list[ScalarField2D]:
    """Deterministic expansion of one image into ``spec.count`` views."""
    if spec.crop is not None and spec.crop > min(img.shape):
        raise DataConfigError(f"crop {spec.crop} larger than image {img.shape}")
    rng = np.random.default_rng(seed)
    out = []
    for k, h, v in spec.views():
        view = img
        if h:
            view = hflip(view)
        if v:
            view = vflip(view)
        if k:
            view = rot90(view, k)
        if spec.crop is None:
            out.append(view if view is not img else img.with_values(img.values.copy()))
            continue
        for _ in range(spec.crops_per_view):
            top = int(rng.integers(0, view.shape[0] - spec.crop + 1))
            left = int(rng.integers(0, view.shape[1] - spec.crop + 1))
            out.append(crop(view, top, left, spec.crop))
    return out


# --- unpaired sampling -----------------------------------------------------


class UnpairedLoader:
    """Epoch-wise shuffled batches from one domain.

    Permutations derive from (seed, domain, epoch), so two domains never share
    an ordering and results do not depend on iteration history. Incomplete
    trailing batches are dropped.
    """

    def __init__(self, images: np.ndarray, ids: Sequence[str], domain: DomainTag, batch: int, seed: int):
        images = np.asarray(images)
        if images.ndim != 3 or len(images) == 0:
            raise DataConfigError(f"domain {domain.value}: need a nonempty N x H x W stack")
        if len(ids) != len(images):
            raise DataConfigError("one id per image is required")
        if batch < 1:
            raise DataConfigError("batch must be >= 1")
        if batch > len(images):
            raise DataConfigError(f"batch {batch} exceeds the {len(images)} images of domain {domain.value}")
        self.tensor = normalize(images).unsqueeze(1)
        self.ids = tuple(ids)
        self.domain = domain
        self.batch = batch
        self.seed = seed

    def __len__(self) -> int:
        return len(self.ids) // self.batch

    def permutation(self, epoch: int) -> np.ndarray:
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.domain.code, epoch))
        return np.random.default_rng(ss).permutation(len(self.ids))

    def batches(self, epoch: int, start: int = 0) -> Iterator[ImageBatch]:
        """Batches of ``epoch``, beginning at batch number ``start``."""
        perm = self.permutation(epoch)
        for b in range(start, len(self)):
            idx = perm[b * self.batch : (b + 1) * self.batch]
            yield ImageBatch(self.tensor[torch.from_numpy(idx)], self.domain, tuple(self.ids[i] for i in idx))


def unpaired_loader(workspace, domain: DomainTag, batch: int, seed: int, split: str = "train") -> UnpairedLoader:
    images, ids = load_split(workspace, domain, split)
    return UnpairedLoader(images, ids, domain, batch, seed)


# --- workspace assembly ----------------------------------------------------


@dataclass(frozen=True)
class DataConfig:
    resolution: int = 256
    per_domain: int = 3600
    exp_sources: int = 50
    exp_crops_per_view: int = 9
    exp_margin: float = 0.25  # pseudo-experimental sources are this much wider before cropping
    test_blur: int = 200
    test_exp: int = 200
    seed: int = 0
    scene: SceneConfig = field(default_factory=SceneConfig)
    degradation: DegradationConfig = field(default_factory=DegradationConfig)
    exp_degradation: DegradationConfig = PSEUDO_EXPERIMENTAL

    def __post_init__(self):
        if self.resolution < 16:
            raise DataConfigError("resolution must be >= 16")
        for name in ("per_domain", "exp_sources", "exp_crops_per_view", "test_blur", "test_exp"):
            if getattr(self, name) < 1:
                raise DataConfigError(f"{name} must be >= 1")
        if self.exp_margin < 0:
            raise DataConfigError("exp_margin must be >= 0")
        if self.exp_sources * 8 * self.exp_crops_per_view < self.per_domain:
            raise DataConfigError(
                f"{self.exp_sources} sources x 8 views x {self.exp_crops_per_view} crops cannot fill {self.per_domain} images"
            )

    @property
    def train_scene(self) -> SceneConfig:
        """Scene statistics at the training resolution (pixel size follows the field of view)."""
        return replace(self.scene, grid=self.resolution)

    @property
    def exp_scene(self) -> SceneConfig:
        grid = self.resolution + int(round(self.resolution * self.exp_margin))
        return replace(self.scene, grid=grid, fov_nm=self.scene.fov_nm * grid / self.resolution)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["scene"] = self.scene.as_dict()
        return d


# Pools of clean scenes that must never overlap get separate seed streams.
_POOLS = {"clear_train": 1, "blur_train": 2, "blur_test": 3, "exp_train": 4, "exp_test": 5}


def pool_seed(seed: int, pool: str) -> int:
    return int(np.random.SeedSequence([seed, _POOLS[pool]]).generate_state(1)[0])


@dataclass(frozen=True)
class Record:
    id: str
    path: str
    domain: DomainTag
    split: str
    source: str | None = None  # clean reference id for degraded test images

    def to_json(self) -> str:
        d = {"id": self.id, "path": self.path, "domain": self.domain.value, "split": self.split}
        if self.source is not None:
            d["source"] = self.source
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "Record":
        d = json.loads(line)
        try:
            return cls(d["id"], d["path"], DomainTag(d["domain"]), d["split"], d.get("source"))
        except (KeyError, ValueError) as exc:
            raise DataConfigError(f"bad manifest record {line.strip()!r}: {exc}") from exc


MANIFEST = "manifest.jsonl"


def read_manifest(workspace) -> list[Record]:
    path = Path(workspace) / MANIFEST
    if not path.exists():
        raise DataConfigError(f"no dataset manifest at {path}")
    return [Record.from_json(line) for line in path.read_text().splitlines() if line.strip()]


def write_manifest(workspace, records: Sequence[Record]) -> None:
    ids = [r.id for r in records]
    if len(set(ids)) != len(ids):
        raise DataConfigError("duplicate ids in manifest")
    (Path(workspace) / MANIFEST).write_text("".join(r.to_json() + "\n" for r in records))


def manifest_hash(workspace) -> str:
    """SHA-256 over the manifest and every referenced file, in manifest order."""
    root = Path(workspace)
    h = hashlib.sha256((root / MANIFEST).read_bytes())
    for r in read_manifest(root):
        h.update((root / r.path).read_bytes())
    return h.hexdigest()


def load_split(workspace, domain: DomainTag, split: str) -> tuple[np.ndarray, list[str]]:
    root = Path(workspace)
    recs = [r for r in read_manifest(root) if r.domain == domain and r.split == split]
    if not recs:
        raise DataConfigError(f"no {domain.value}/{split} images in {root}")
    return np.stack([read_raster(root / r.path) for r in recs]), [r.id for r in recs]


def load_test_pairs(workspace) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """Degraded simulated test images with their clean references."""
    root = Path(workspace)
    recs = read_manifest(root)
    by_id = {r.id: r for r in recs}
    blur = [r for r in recs if r.domain == DomainTag.SIM_BLUR and r.split == "test"]
    if not blur:
        raise DataConfigError(f"no simulated test images in {root}")
    x = np.stack([read_raster(root / r.path) for r in blur])
    y = np.stack([read_raster(root / by_id[r.source].path) for r in blur])
    return x, y, [r.id for r in blur]


def _store(root: Path, domain: DomainTag, split: str, name: str, values: np.ndarray, source=None) -> Record:
    rel = Path("images") / domain.value / split / f"{name}.ldos"
    (root / rel).parent.mkdir(parents=True, exist_ok=True)
    write_raster(root / rel, values)
    return Record(name, rel.as_posix(), domain, split, source)


def _center_crop(img: ScalarField2D, size: int) -> ScalarField2D:
    top, left = (img.shape[0] - size) // 2, (img.shape[1] - size) // 2
    return crop(img, top, left, size)


def build_workspace(workspace, cfg: DataConfig) -> list[Record]:
    """Simulate, degrade and augment all domains; write rasters plus the manifest.

    Train pools: ``per_domain`` clean images, ``per_domain`` degraded images
    from a separate clean pool, and ``per_domain`` pseudo-experimental crops.
    Test pools: ``test_blur`` degraded images with their clean references and
    ``test_exp`` pseudo-experimental images, all from their own scene streams.
    """
    root = Path(workspace)
    root.mkdir(parents=True, exist_ok=True)
    records: list[Record] = []
    scene, deg = cfg.train_scene, cfg.degradation

    for i, img in enumerate(generate_clear_dataset(cfg.per_domain, scene, pool_seed(cfg.seed, "clear_train"))):
        records.append(_store(root, DomainTag.SIM_CLEAR, "train", f"sc{i:05d}", img.values))

    for i, img in enumerate(generate_clear_dataset(cfg.per_domain, scene, pool_seed(cfg.seed, "blur_train"))):
        records.append(_store(root, DomainTag.SIM_BLUR, "train", f"sb{i:05d}", degrade(img, deg, index=i).values))

    deg_test = replace(deg, seed=pool_seed(deg.seed, "blur_test"))
    test_clean = generate_clear_dataset(cfg.test_blur, scene, pool_seed(cfg.seed, "blur_test"))
    for i, img in enumerate(test_clean):
        ref = _store(root, DomainTag.SIM_CLEAR, "test", f"tc{i:05d}", img.values)
        records.append(ref)
        records.append(_store(root, DomainTag.SIM_BLUR, "test", f"tb{i:05d}", degrade(img, deg_test, i).values, ref.id))

    spec = AugmentSpec.full(crop=cfg.resolution, crops_per_view=cfg.exp_crops_per_view)
    sources = generate_clear_dataset(cfg.exp_sources, cfg.exp_scene, pool_seed(cfg.seed, "exp_train"))
    n = 0
    for s, src in enumerate(sources):
        scan = degrade(src, cfg.exp_degradation, index=s)
        for view in augment(scan, spec, np.random.SeedSequence(cfg.seed, spawn_key=(_POOLS["exp_train"], s))):
            if n == cfg.per_domain:
                break
            records.append(_store(root, DomainTag.EXP, "train", f"ex{n:05d}", view.values))
            n += 1

    exp_test_deg = replace(cfg.exp_degradation, seed=pool_seed(cfg.exp_degradation.seed, "exp_test"))
    for i, src in enumerate(generate_clear_dataset(cfg.test_exp, cfg.exp_scene, pool_seed(cfg.seed, "exp_test"))):
        scan = _center_crop(degrade(src, exp_test_deg, index=i), cfg.resolution)
        records.append(_store(root, DomainTag.EXP, "test", f"te{i:05d}", scan.values))

    write_manifest(root, records)
    return records

