"""Alternating adversarial training of the denoising model.

Every step first updates all discriminators against generator outputs that
are detached from the generator graph, then updates all generators against the
freshly updated discriminators. Each side owns one Adam optimizer over its
unique parameters, so the shared up stage is stepped exactly once with the
sum of its gradients from both generators.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np
import torch

from .data import DataConfigError, DomainTag, ImageBatch, UnpairedLoader, load_split, normalize
from .networks import NetworkSet
from .objectives import (
    MODES,
    LossReport,
    LossWeights,
    NumericError,
    adv_discriminator_loss,
    adv_generator_loss,
    cycle_loss,
    fa_generator_term,
    feature_alignment_loss,
    total_losses,
)

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "stmdenoise-checkpoint"
CHECKPOINT_VERSION = 1


class TrainConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 200
    batch: int = 4
    channels_base: int = 64
    ndf: int = 64
    weights: LossWeights = field(default_factory=LossWeights)
    mode: str = "non_saturating"
    share_up: bool = True
    seed: int = 0
    device: str = "cpu"
    checkpoint_every: int = 0  # steps between checkpoints; 0 saves at epoch ends only
    patience: int = 10
    min_improvement: float = 0.01

    def __post_init__(self):
        if not self.lr > 0:
            raise TrainConfigError("lr must be > 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise TrainConfigError("betas must lie in [0, 1)")
        if self.eps <= 0:
            raise TrainConfigError("eps must be > 0")
        if self.epochs < 0 or self.batch < 1:
            raise TrainConfigError("need epochs >= 0 and batch >= 1")
        if self.mode not in MODES:
            raise TrainConfigError(f"mode must be one of {MODES}")
        if self.device not in ("cpu", "cuda", "auto"):
            raise TrainConfigError("device must be cpu, cuda or auto")
        if self.checkpoint_every < 0 or self.patience < 1 or self.min_improvement < 0:
            raise TrainConfigError("invalid checkpoint or convergence settings")

    def torch_device(self) -> torch.device:
        if self.device == "auto":
            return torch.device("cuda" if torch.cuda.is_available() else "cpu")
        if self.device == "cuda" and not torch.cuda.is_available():
            raise TrainConfigError("device cuda requested but not available")
        return torch.device(self.device)

    def as_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["weights"] = LossWeights(**d.get("weights", {}))
        return cls(**d)


#: The four ablation variants: loss weights switched off plus the up-stage sharing switch.
VARIANTS = {
    "cycle": (("lambda_DA", "lambda_FA"), False),
    "cycle_da": (("lambda_FA",), False),
    "cycle_da_ws": (("lambda_FA",), True),
    "full": ((), True),
}


def variant_config(cfg: TrainConfig, name: str) -> TrainConfig:
    try:
        zeroed, share = VARIANTS[name]
    except KeyError:
        raise TrainConfigError(f"unknown variant {name!r}; choose from {sorted(VARIANTS)}") from None
    return replace(cfg, weights=replace(cfg.weights, **{k: 0.0 for k in zeroed}), share_up=share)


@dataclass
class StepAudit:
    """Largest parameter change on the frozen side of each phase, and the up-stage gap."""

    generator_delta_phase1: float
    discriminator_delta_phase2: float
    up_gap: float


@dataclass
class TrainState:
    nets: NetworkSet
    opt_G: torch.optim.Adam
    opt_D: torch.optim.Adam
    epoch: int = 0
    step_in_epoch: int = 0
    global_step: int = 0
    history: list[dict] = field(default_factory=list)
    epoch_means: list[float] = field(default_factory=list)
    stale_epochs: int = 0
    converged: bool = False
    last_audit: StepAudit | None = None


def init_state(cfg: TrainConfig) -> TrainState:
    nets = NetworkSet(cfg.channels_base, cfg.seed, cfg.share_up, cfg.ndf).to(cfg.torch_device())
    adam = dict(lr=cfg.lr, betas=(cfg.beta1, cfg.beta2), eps=cfg.eps)
    return TrainState(nets, torch.optim.Adam(nets.generator_parameters(), **adam), torch.optim.Adam(nets.discriminator_parameters(), **adam))


def _snapshot(params) -> list[torch.Tensor]:
    return [p.detach().clone() for p in params]


def _max_delta(params, before) -> float:
    return max((float((p.detach() - b).abs().max()) for p, b in zip(params, before)), default=0.0)


def _set_requires_grad(params, flag: bool) -> None:
    for p in params:
        p.requires_grad_(flag)


def train_step(state: TrainState, batches: dict[DomainTag, ImageBatch], cfg: TrainConfig, audit: bool = False) -> LossReport:
    """One discriminator update followed by one generator update."""
    missing = {DomainTag.SIM_BLUR, DomainTag.SIM_CLEAR, DomainTag.EXP} - set(batches)
    if missing:
        raise DataConfigError(f"missing batches for {sorted(d.value for d in missing)}")
    shapes = {tuple(b.tensor.shape) for b in batches.values()}
    if len(shapes) != 1:
        raise DataConfigError(f"domain batches differ in shape: {sorted(shapes)}")
    n, w = state.nets, cfg.weights
    dev = next(n.parameters()).device
    blur = batches[DomainTag.SIM_BLUR].tensor.to(dev)
    clear = batches[DomainTag.SIM_CLEAR].tensor.to(dev)
    exp = batches[DomainTag.EXP].tensor.to(dev)
    use_da = w.lambda_DA > 0
    use_fa = w.lambda_FA > 0
    g_params, d_params = n.generator_parameters(), n.discriminator_parameters()

    # Synthetic batches; the graph is kept for the generator phase.
    theta_d, fake_clear = n.G_D(blur)
    _, fake_blur = n.G_B(clear)
    theta_da, exp_clear = n.G_DA(exp) if (use_da or use_fa) else (None, None)
    _, rec_blur = n.G_B(fake_clear)
    _, rec_clear = n.G_D(fake_blur)

    # Phase 1: discriminators ascend their objective; generator outputs are detached.
    g_before = _snapshot(g_params) if audit else None
    parts: dict[str, torch.Tensor] = {}
    parts["d_D"] = adv_discriminator_loss(n.D_D(clear), n.D_D(fake_clear.detach()))
    parts["d_B"] = adv_discriminator_loss(n.D_B(blur), n.D_B(fake_blur.detach()))
    if use_da:
        parts["d_DA"] = adv_discriminator_loss(n.D_DA(clear), n.D_DA(exp_clear.detach()))
    if use_fa:
        parts["d_FA"] = feature_alignment_loss(n.D_FA(theta_da.detach()), n.D_FA(theta_d.detach()))
    total_d, _ = total_losses(parts, w)
    if not torch.isfinite(total_d):
        raise NumericError(f"non-finite discriminator objective at step {state.global_step}")
    state.opt_D.zero_grad(set_to_none=True)
    (-total_d).backward()
    state.opt_D.step()
    g_delta = _max_delta(g_params, g_before) if audit else 0.0

    # Phase 2: generators descend against the updated, frozen discriminators.
    d_before = _snapshot(d_params) if audit else None
    _set_requires_grad(d_params, False)
    try:
        parts["g_D"] = adv_generator_loss(n.D_D(fake_clear), cfg.mode)
        parts["g_B"] = adv_generator_loss(n.D_B(fake_blur), cfg.mode)
        if use_da:
            parts["g_DA"] = adv_generator_loss(n.D_DA(exp_clear), cfg.mode)
        if use_fa:
            parts["g_FA"] = fa_generator_term(n.D_FA(theta_da), n.D_FA(theta_d), cfg.mode)
        parts["cyc_f"] = cycle_loss(blur, rec_blur)
        parts["cyc_b"] = cycle_loss(clear, rec_clear)
        _, total_g = total_losses(parts, w)
        if not torch.isfinite(total_g):
            raise NumericError(f"non-finite generator objective at step {state.global_step}")
        state.opt_G.zero_grad(set_to_none=True)
        total_g.backward()
        state.opt_G.step()
    finally:
        _set_requires_grad(d_params, True)
    if audit:
        state.last_audit = StepAudit(g_delta, _max_delta(d_params, d_before), n.up_sharing_gap())
    return LossReport.from_parts({k: v.detach() for k, v in parts.items()}, w, cfg.mode)


# --- checkpoints -----------------------------------------------------------


def save_checkpoint(path, state: TrainState, cfg: TrainConfig, resolution: int) -> None:
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": cfg.as_dict(),
        "resolution": resolution,
        "networks": state.nets.checkpoint_state(),
        "opt_G": state.opt_G.state_dict(),
        "opt_D": state.opt_D.state_dict(),
        "counters": {
            "epoch": state.epoch,
            "step_in_epoch": state.step_in_epoch,
            "global_step": state.global_step,
            "stale_epochs": state.stale_epochs,
            "converged": state.converged,
        },
        "history": state.history,
        "epoch_means": state.epoch_means,
    }
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    tmp.replace(path)


def load_checkpoint(path) -> tuple[TrainState, TrainConfig, int]:
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except (OSError, RuntimeError) as exc:
        raise TrainConfigError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise TrainConfigError(f"{path} is not a training checkpoint")
    cfg = TrainConfig.from_dict(payload["config"])
    state = init_state(cfg)
    state.nets.load_checkpoint_state(payload["networks"])
    state.opt_G.load_state_dict(payload["opt_G"])
    state.opt_D.load_state_dict(payload["opt_D"])
    for k, v in payload["counters"].items():
        setattr(state, k, v)
    state.history = list(payload["history"])
    state.epoch_means = list(payload["epoch_means"])
    return state, cfg, int(payload["resolution"])


# --- training loop ---------------------------------------------------------


@dataclass
class TrainResult:
    state: TrainState
    history: list[dict]
    epoch_means: list[dict]

    @property
    def G_D(self):
        return self.state.nets.G_D

    @property
    def G_DA(self):
        return self.state.nets.G_DA


def make_loaders(workspace, cfg: TrainConfig) -> dict[DomainTag, UnpairedLoader]:
    loaders = {}
    for domain in (DomainTag.SIM_BLUR, DomainTag.SIM_CLEAR, DomainTag.EXP):
        images, ids = load_split(workspace, domain, "train")
        loaders[domain] = UnpairedLoader(images, ids, domain, cfg.batch, cfg.seed)
    return loaders


def _epoch_means(history: list[dict], epoch: int) -> dict:
    rows = [h for h in history if h["epoch"] == epoch]
    keys = [k for k in rows[0] if k not in ("epoch", "step", "global_step", "mode")]
    return {"epoch": epoch, **{k: float(np.mean([r[k] for r in rows])) for k in keys}}


def _update_convergence(state: TrainState, cfg: TrainConfig, total_g: float) -> None:
    previous = state.epoch_means[:-1]
    if previous:
        best = min(previous)
        improvement = (best - total_g) / max(abs(best), 1e-12)
        state.stale_epochs = state.stale_epochs + 1 if improvement < cfg.min_improvement else 0
    state.converged = state.stale_epochs >= cfg.patience


def train(
    cfg: TrainConfig,
    loaders: dict[DomainTag, UnpairedLoader],
    out_dir=None,
    state: TrainState | None = None,
    on_step: Callable[[TrainState, LossReport], None] | None = None,
    audit: bool = False,
    max_steps: int | None = None,
) -> TrainResult:
    """Run epochs of :func:`train_step` until ``cfg.epochs`` or convergence.

    With ``out_dir`` set, a step log (``train_log.jsonl``, with wall times) and
    ``checkpoint.pt`` are written. ``state`` resumes an interrupted run.
    ``max_steps`` stops early after that many steps in this call, leaving a
    resumable state.
    """
    shapes = {tuple(l.tensor.shape[1:]) for l in loaders.values()}
    if len(loaders) != 3 or len(shapes) != 1:
        raise DataConfigError("need train images of one common size in all three domains")
    resolution = int(next(iter(shapes))[-1])
    steps_per_epoch = min(len(l) for l in loaders.values())
    state = state or init_state(cfg)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    log_file = open(out / "train_log.jsonl", "a") if out is not None else None
    t0 = time.perf_counter()
    done = 0
    try:
        while state.epoch < cfg.epochs and not state.converged:
            streams = [loaders[d].batches(state.epoch, state.step_in_epoch) for d in (DomainTag.SIM_BLUR, DomainTag.SIM_CLEAR, DomainTag.EXP)]
            for blur, clear, exp in zip(*streams):
                if state.step_in_epoch >= steps_per_epoch:
                    break
                report = train_step(state, {blur.domain: blur, clear.domain: clear, exp.domain: exp}, cfg, audit=audit)
                record = {"epoch": state.epoch, "step": state.step_in_epoch, "global_step": state.global_step, **report.as_dict()}
                state.history.append(record)
                state.step_in_epoch += 1
                state.global_step += 1
                done += 1
                if log_file is not None:
                    log_file.write(json.dumps({**record, "wall_time": round(time.perf_counter() - t0, 3)}) + "\n")
                    log_file.flush()
                if on_step is not None:
                    on_step(state, report)
                if out is not None and cfg.checkpoint_every and state.global_step % cfg.checkpoint_every == 0:
                    save_checkpoint(out / "checkpoint.pt", state, cfg, resolution)
                if max_steps is not None and done >= max_steps:
                    if out is not None:
                        save_checkpoint(out / "checkpoint.pt", state, cfg, resolution)
                    return TrainResult(state, state.history, _all_epoch_means(state))
            means = _epoch_means(state.history, state.epoch)
            state.epoch_means.append(means["total_G"])
            _update_convergence(state, cfg, means["total_G"])
            log.info("epoch %d: %s", state.epoch, {k: round(v, 4) for k, v in means.items() if k != "epoch"})
            state.epoch += 1
            state.step_in_epoch = 0
            if out is not None:
                save_checkpoint(out / "checkpoint.pt", state, cfg, resolution)
    finally:
        if log_file is not None:
            log_file.close()
    if out is not None:
        (out / "history.jsonl").write_text("".join(json.dumps(h, sort_keys=True) + "\n" for h in state.history))
    return TrainResult(state, state.history, _all_epoch_means(state))


def _all_epoch_means(state: TrainState) -> list[dict]:
    epochs = sorted({h["epoch"] for h in state.history})
    return [_epoch_means(state.history, e) for e in epochs]


# --- inference -------------------------------------------------------------


@torch.no_grad()
def denoise(generator, images: np.ndarray, batch: int = 16, resolution: int | None = None) -> np.ndarray:
    """Apply a trained generator to N x H x W images in [0, 1]; returns float32 in [0, 1]."""
    x = np.asarray(images)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3:
        raise DataConfigError(f"expected N x H x W images, got shape {x.shape}")
    if resolution is not None and x.shape[1:] != (resolution, resolution):
        raise DataConfigError(f"images are {x.shape[1]}x{x.shape[2]} but the model was trained at {resolution}x{resolution}")
    if x.shape[1] % 4 or x.shape[2] % 4:
        raise DataConfigError("image sides must be divisible by 4")
    dev = next(generator.parameters()).device
    t = normalize(x).unsqueeze(1)
    out = []
    for i in range(0, len(t), batch):
        _, y = generator(t[i : i + batch].to(dev))
        out.append(y.cpu())
    y = torch.cat(out).squeeze(1).double().numpy()
    return np.clip((y + 1.0) / 2.0, 0.0, 1.0).astype(np.float32)
