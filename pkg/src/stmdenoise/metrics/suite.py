"""Batch evaluation producing the full-reference or blind quality report."""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .brisque import BrisqueModel, BrisqueModelError, brisque, default_model_path
from .fullref import SsimConfig, mse, psnr, quantize, ssim
from .piqe import PiqeConfig, piqe

log = logging.getLogger(__name__)

FULL_REFERENCE = ("mse", "psnr", "ssim")
NO_REFERENCE = ("brisque", "piqe")
_AGGREGATES = {"mean": np.mean, "median": np.median}


@dataclass(frozen=True)
class MetricConfig:
    ssim: SsimConfig = field(default_factory=SsimConfig)
    piqe: PiqeConfig = field(default_factory=PiqeConfig)
    brisque_model: str | None = None  # None selects the bundled model
    aggregate: str = "mean"

    def __post_init__(self):
        if self.aggregate not in _AGGREGATES:
            raise ValueError(f"aggregate must be one of {sorted(_AGGREGATES)}, got {self.aggregate!r}")

    def as_dict(self) -> dict:
        return asdict(self)


def _json_value(v):
    if isinstance(v, float) and math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return v


@dataclass
class MetricReport:
    kind: str  # "full_reference" or "no_reference"
    columns: tuple[str, ...]
    records: list[dict]
    aggregate: dict
    count: int
    config: dict

    def to_records(self) -> list[dict]:
        return [{k: _json_value(v) for k, v in r.items()} for r in self.records]

    def to_json(self) -> str:
        payload = {
            "kind": self.kind,
            "columns": list(self.columns),
            "count": self.count,
            "aggregate": {k: _json_value(v) for k, v in self.aggregate.items()},
            "records": self.to_records(),
            "config": self.config,
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    def to_table(self, label: str = "aggregate") -> str:
        header = f"{'':<24}" + "".join(f"{c:>12}" for c in self.columns)
        row = f"{label:<24}" + "".join(_fmt(self.aggregate[c]) for c in self.columns)
        return f"{header}\n{row}\n(n = {self.count}, {self.config['aggregate']})"

    def write(self, directory) -> None:
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(self.to_json() + "\n")
        (out / "report.txt").write_text(self.to_table() + "\n")


def _fmt(v) -> str:
    if v is None:
        return f"{'n/a':>12}"
    if math.isinf(v):
        return f"{'inf':>12}"
    return f"{v:>12.4f}"


def _model_hash(path: Path) -> str | None:
    try:
        return hashlib.sha256(path.read_bytes()).hexdigest()
    except OSError:
        return None


def _load_model(cfg: MetricConfig) -> tuple[BrisqueModel | None, dict]:
    path = Path(cfg.brisque_model) if cfg.brisque_model else default_model_path()
    info = {"brisque_model": str(path.name if cfg.brisque_model is None else path), "brisque_model_sha256": _model_hash(path)}
    try:
        return BrisqueModel.load(path), info
    except BrisqueModelError as exc:
        log.warning("%s; BRISQUE runs in feature-only mode", exc)
        return None, info


def evaluate_suite(
    denoised: Sequence[np.ndarray],
    references: Sequence[np.ndarray] | None = None,
    cfg: MetricConfig = MetricConfig(),
    ids: Sequence[str] | None = None,
) -> MetricReport:
    """Score a set of [0, 1] images, against references when given, blind otherwise."""
    n = len(denoised)
    if n == 0:
        raise ValueError("no images to evaluate")
    if references is not None and len(references) != n:
        raise ValueError(f"{n} denoised images but {len(references)} references")
    ids = list(ids) if ids is not None else [f"{i:05d}" for i in range(n)]
    if len(ids) != n:
        raise ValueError("ids must match the number of images")

    config = cfg.as_dict()
    records = []
    if references is not None:
        kind, columns = "full_reference", FULL_REFERENCE
        for name, d, r in zip(ids, denoised, references):
            a, b = quantize(d), quantize(r)
            m = mse(a, b)
            records.append({"id": name, "mse": m, "psnr": psnr(m), "ssim": ssim(a, b, cfg.ssim)})
    else:
        kind, columns = "no_reference", NO_REFERENCE
        model, info = _load_model(cfg)
        config.update(info)
        for name, d in zip(ids, denoised):
            records.append({"id": name, "brisque": brisque(d, model).score, "piqe": piqe(d, cfg.piqe)})

    reduce = _AGGREGATES[cfg.aggregate]
    aggregate = {}
    for c in columns:
        vals = [r[c] for r in records]
        aggregate[c] = None if any(v is None for v in vals) else float(reduce(vals))
    return MetricReport(kind, columns, records, aggregate, n, config)
