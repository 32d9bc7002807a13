"""Adversarial, cycle-consistency and feature-alignment losses.

Discriminators emit logits. Every log-probability is evaluated with
``logsigmoid`` (``log(1 - sigmoid(x)) == logsigmoid(-x)``), so no term can hit
``log(0)``. Score maps are averaged over batch and patch positions.

Discriminator objectives are returned as the quantity the discriminator
*ascends*; generator terms are returned as quantities to *descend*.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields, replace
from typing import Mapping

import torch
import torch.nn.functional as F

from .data import ImageBatch

MODES = ("saturating", "non_saturating")


class NumericError(ArithmeticError):
    """A loss input or output is NaN or infinite."""


def _check(name: str, *tensors: torch.Tensor) -> None:
    for t in tensors:
        if not torch.isfinite(t).all():
            raise NumericError(f"non-finite values in {name}")


def _tensor(x) -> torch.Tensor:
    return x.tensor if isinstance(x, ImageBatch) else x


def adv_discriminator_loss(score_real: torch.Tensor, score_fake: torch.Tensor) -> torch.Tensor:
    """E[log D(real)] + E[log(1 - D(fake))] with D = sigmoid(logit)."""
    _check("discriminator scores", score_real, score_fake)
    return F.logsigmoid(score_real).mean() + F.logsigmoid(-score_fake).mean()


def adv_generator_loss(score_fake: torch.Tensor, mode: str = "non_saturating") -> torch.Tensor:
    """Generator term: E[log(1 - D(fake))] (saturating) or -E[log D(fake)] (non-saturating)."""
    _check("generator scores", score_fake)
    if mode == "saturating":
        return F.logsigmoid(-score_fake).mean()
    if mode == "non_saturating":
        return -F.logsigmoid(score_fake).mean()
    raise ValueError(f"mode must be one of {MODES}, got {mode!r}")


def cycle_loss(x, x_reconstructed) -> torch.Tensor:
    """Mean absolute reconstruction error."""
    a, b = _tensor(x), _tensor(x_reconstructed)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    _check("cycle inputs", a, b)
    return (a - b).abs().mean()


def feature_alignment_loss(score_exp_features: torch.Tensor, score_sim_features: torch.Tensor) -> torch.Tensor:
    """Feature classifier objective: experimental features are labeled real, simulated ones fake.

    Argument order is the role contract; swapping the arguments swaps the labels.
    """
    _check("feature classifier scores", score_exp_features, score_sim_features)
    return F.logsigmoid(score_exp_features).mean() + F.logsigmoid(-score_sim_features).mean()


def fa_generator_term(score_exp_features: torch.Tensor, score_sim_features: torch.Tensor, mode: str = "non_saturating") -> torch.Tensor:
    """What the two encoders descend to make their features indistinguishable.

    Saturating mode descends the classifier objective itself; non-saturating
    mode descends the negated objective with the labels exchanged.
    """
    if mode == "saturating":
        return feature_alignment_loss(score_exp_features, score_sim_features)
    if mode == "non_saturating":
        return -feature_alignment_loss(score_sim_features, score_exp_features)
    raise ValueError(f"mode must be one of {MODES}, got {mode!r}")


@dataclass(frozen=True)
class LossWeights:
    lambda_D: float = 1.0
    lambda_B: float = 1.0
    lambda_cyc: float = 1.0
    lambda_DA: float = 1.0
    lambda_FA: float = 0.1

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"{f.name} must be finite and >= 0, got {v}")

    def scaled(self, factor: float) -> "LossWeights":
        return replace(self, **{f.name: getattr(self, f.name) * factor for f in fields(self)})

    def as_dict(self) -> dict:
        return asdict(self)


PART_NAMES = ("d_D", "d_B", "d_DA", "d_FA", "g_D", "g_B", "g_DA", "g_FA", "cyc_f", "cyc_b")


@dataclass(frozen=True)
class LossReport:
    """Scalar losses of one step. ``g_FA`` is the encoders' feature-alignment term."""

    d_D: float = 0.0
    d_B: float = 0.0
    d_DA: float = 0.0
    d_FA: float = 0.0
    g_D: float = 0.0
    g_B: float = 0.0
    g_DA: float = 0.0
    g_FA: float = 0.0
    cyc_f: float = 0.0
    cyc_b: float = 0.0
    total_D: float = 0.0
    total_G: float = 0.0
    mode: str = "non_saturating"

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name != "mode" and not math.isfinite(v):
                raise NumericError(f"{f.name} is not finite")
        if self.cyc_f < 0 or self.cyc_b < 0:
            raise NumericError("cycle losses must be nonnegative")

    def __getitem__(self, name: str) -> float:
        return getattr(self, name)

    def as_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_parts(cls, parts: Mapping[str, torch.Tensor | float], w: LossWeights, mode: str) -> "LossReport":
        values = {k: float(parts.get(k, 0.0)) for k in PART_NAMES}
        total_d, total_g = total_losses(values, w)
        return cls(**values, total_D=float(total_d), total_G=float(total_g), mode=mode)


def total_losses(parts, w: LossWeights):
    """(discriminator aggregate to ascend, generator aggregate to descend).

    The feature-alignment term enters both: its classifier objective on the
    discriminator side and the encoders' term on the generator side.
    """

    def get(name):
        try:
            return parts[name]
        except (KeyError, TypeError):
            return getattr(parts, name, 0.0)

    total_d = w.lambda_D * get("d_D") + w.lambda_B * get("d_B") + w.lambda_DA * get("d_DA") + w.lambda_FA * get("d_FA")
    total_g = (
        w.lambda_D * get("g_D")
        + w.lambda_B * get("g_B")
        + w.lambda_DA * get("g_DA")
        + w.lambda_cyc * (get("cyc_f") + get("cyc_b"))
        + w.lambda_FA * get("g_FA")
    )
    return total_d, total_g
