"""Generators, PatchGAN discriminators and the feature-domain classifier.

Each generator is split into an encoder ``phi`` (down stage followed by the
residual stage) and an ``up`` stage. The deblurring generator and the
domain-adaptation generator can be built around a single ``UpStage``
instance; the two networks then hold the very same parameter tensors, so any
optimizer step moves both identically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .data import DataConfigError, DomainTag, ImageBatch

INIT_STD = 0.02
N_RESBLOCKS = 9


class NetworkError(ValueError):
    """Incompatible network construction or input shapes."""


class ResBlock(nn.Module):
    def __init__(self, ch: int):
        super().__init__()
        self.body = nn.Sequential(
            nn.ReflectionPad2d(1),
            nn.Conv2d(ch, ch, 3),
            nn.InstanceNorm2d(ch),
            nn.ReLU(inplace=True),
            nn.ReflectionPad2d(1),
            nn.Conv2d(ch, ch, 3),
            nn.InstanceNorm2d(ch),
        )

    def forward(self, x):
        return x + self.body(x)


def down_stage(c: int) -> nn.Sequential:
    return nn.Sequential(
        nn.ReflectionPad2d(3),
        nn.Conv2d(1, c, 7),
        nn.InstanceNorm2d(c),
        nn.ReLU(inplace=True),
        nn.Conv2d(c, 2 * c, 3, stride=2, padding=1),
        nn.InstanceNorm2d(2 * c),
        nn.ReLU(inplace=True),
        nn.Conv2d(2 * c, 4 * c, 3, stride=2, padding=1),
        nn.InstanceNorm2d(4 * c),
        nn.ReLU(inplace=True),
    )


class UpStage(nn.Sequential):
    """Two stride-2 transposed convolutions and a 7x7 output convolution with tanh."""

    def __init__(self, c: int):
        super().__init__(
            nn.ConvTranspose2d(4 * c, 2 * c, 3, stride=2, padding=1, output_padding=1),
            nn.InstanceNorm2d(2 * c),
            nn.ReLU(inplace=True),
            nn.ConvTranspose2d(2 * c, c, 3, stride=2, padding=1, output_padding=1),
            nn.InstanceNorm2d(c),
            nn.ReLU(inplace=True),
            nn.ReflectionPad2d(3),
            nn.Conv2d(c, 1, 7),
            nn.Tanh(),
        )
        self.channels_base = c

    @property
    def final_conv(self) -> nn.Conv2d:
        return self[7]


@dataclass(frozen=True)
class SharedUpHandle:
    """The single up stage bound into every generator built with this handle."""

    module: UpStage

    @property
    def channels_base(self) -> int:
        return self.module.channels_base


def init_weights(module: nn.Module, generator: torch.Generator) -> None:
    """N(0, 0.02) conv weights and zero biases, drawn in module order."""
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
            with torch.no_grad():
                m.weight.copy_(torch.randn(m.weight.shape, generator=generator, dtype=m.weight.dtype) * INIT_STD)
                if m.bias is not None:
                    m.bias.zero_()


def _torch_rng(seed: int, stream: int) -> torch.Generator:
    g = torch.Generator()
    g.manual_seed(int(np.random.SeedSequence(seed, spawn_key=(stream,)).generate_state(1, dtype=np.uint64)[0] >> 1))
    return g


def make_shared_up(channels_base: int, seed: int) -> SharedUpHandle:
    up = UpStage(channels_base)
    init_weights(up, _torch_rng(seed, 1))
    return SharedUpHandle(up)


class GeneratorNet(nn.Module):
    def __init__(self, channels_base: int, up: UpStage):
        super().__init__()
        self.channels_base = channels_base
        self.down = down_stage(channels_base)
        self.resnet = nn.Sequential(*[ResBlock(4 * channels_base) for _ in range(N_RESBLOCKS)])
        self.up = up

    def phi(self, x: torch.Tensor) -> torch.Tensor:
        """Encoder features at 1/4 of the input resolution."""
        return self.resnet(self.down(x))

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        theta = self.phi(x)
        return theta, self.up(theta)

    def encoder_parameters(self):
        return list(self.down.parameters()) + list(self.resnet.parameters())


def build_generator(channels_base: int = 64, shared_up: SharedUpHandle | None = None, seed: int = 0) -> GeneratorNet:
    if channels_base < 8:
        raise NetworkError("channels_base must be >= 8")
    if shared_up is not None and shared_up.channels_base != channels_base:
        raise NetworkError(f"shared up stage was built for {shared_up.channels_base} base channels, not {channels_base}")
    up = shared_up.module if shared_up is not None else UpStage(channels_base)
    net = GeneratorNet(channels_base, up)
    g = _torch_rng(seed, 0)
    init_weights(net.down, g)
    init_weights(net.resnet, g)
    if shared_up is None:
        init_weights(net.up, _torch_rng(seed, 1))
    return net


def generator_forward(net: GeneratorNet, batch: ImageBatch, out_domain: DomainTag | None = None):
    """Encoder features and the translated batch."""
    x = batch.tensor
    if x.shape[-1] % 4 or x.shape[-2] % 4:
        raise NetworkError(f"spatial size {tuple(x.shape[-2:])} must be divisible by 4")
    theta, y = net(x)
    try:
        out = ImageBatch(y, out_domain or batch.domain, batch.ids)
    except DataConfigError as exc:
        raise NetworkError(str(exc)) from exc
    return theta, out


class DiscriminatorNet(nn.Module):
    def __init__(self, body: nn.Sequential):
        super().__init__()
        self.body = body

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.body(x)


def build_patchgan(seed: int = 0, in_channels: int = 1, ndf: int = 64) -> DiscriminatorNet:
    """70x70 PatchGAN: three stride-2 4x4 convolutions, one stride-1, then a 1-channel map."""
    layers: list[nn.Module] = [nn.Conv2d(in_channels, ndf, 4, stride=2, padding=1), nn.LeakyReLU(0.2, inplace=True)]
    ch = ndf
    for _ in range(2):
        layers += [nn.Conv2d(ch, 2 * ch, 4, stride=2, padding=1), nn.InstanceNorm2d(2 * ch), nn.LeakyReLU(0.2, inplace=True)]
        ch *= 2
    layers += [nn.Conv2d(ch, 2 * ch, 4, stride=1, padding=1), nn.InstanceNorm2d(2 * ch), nn.LeakyReLU(0.2, inplace=True)]
    layers += [nn.Conv2d(2 * ch, 1, 4, stride=1, padding=1)]
    net = DiscriminatorNet(nn.Sequential(*layers))
    init_weights(net, _torch_rng(seed, 2))
    return net


def build_feature_classifier(feature_channels: int, seed: int = 0, width: int | None = None) -> DiscriminatorNet:
    """Three 3x3 stride-1 convolutions over encoder features, then a 1-channel score map."""
    if feature_channels < 1:
        raise NetworkError("feature_channels must be positive")
    w = width or feature_channels
    layers: list[nn.Module] = []
    ch = feature_channels
    for i in range(3):
        layers.append(nn.Conv2d(ch, w, 3, padding=1))
        if i:
            layers.append(nn.InstanceNorm2d(w))
        layers.append(nn.LeakyReLU(0.2, inplace=True))
        ch = w
    layers.append(nn.Conv2d(w, 1, 3, padding=1))
    net = DiscriminatorNet(nn.Sequential(*layers))
    init_weights(net, _torch_rng(seed, 3))
    return net


def parameter_count(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


GENERATORS = ("G_D", "G_B", "G_DA")
DISCRIMINATORS = ("D_D", "D_B", "D_DA", "D_FA")


class NetworkSet(nn.Module):
    """All seven networks of one model, optionally sharing the up stage of G_D and G_DA."""

    def __init__(self, channels_base: int = 64, seed: int = 0, share_up: bool = True, ndf: int = 64):
        super().__init__()
        self.channels_base = channels_base
        self.share_up = share_up
        seeds = np.random.SeedSequence(seed).generate_state(8)
        shared = make_shared_up(channels_base, int(seeds[7])) if share_up else None
        self.G_D = build_generator(channels_base, shared, int(seeds[0]))
        self.G_B = build_generator(channels_base, None, int(seeds[1]))
        self.G_DA = build_generator(channels_base, shared, int(seeds[2]))
        self.D_D = build_patchgan(int(seeds[3]), ndf=ndf)
        self.D_B = build_patchgan(int(seeds[4]), ndf=ndf)
        self.D_DA = build_patchgan(int(seeds[5]), ndf=ndf)
        self.D_FA = build_feature_classifier(4 * channels_base, int(seeds[6]))

    def generators(self) -> dict[str, GeneratorNet]:
        return {n: getattr(self, n) for n in GENERATORS}

    def discriminators(self) -> dict[str, DiscriminatorNet]:
        return {n: getattr(self, n) for n in DISCRIMINATORS}

    def generator_parameters(self) -> list[nn.Parameter]:
        return _unique(p for g in self.generators().values() for p in g.parameters())

    def discriminator_parameters(self) -> list[nn.Parameter]:
        return _unique(p for d in self.discriminators().values() for p in d.parameters())

    def up_sharing_gap(self) -> float:
        """Largest absolute difference between the up stages of G_D and G_DA."""
        gaps = [float((a.detach() - b.detach()).abs().max()) for a, b in zip(self.G_D.up.parameters(), self.G_DA.up.parameters())]
        return max(gaps, default=0.0)

    def checkpoint_state(self) -> dict:
        """Parameters keyed ``<network>/<layer path>``; a shared up stage is stored once."""
        params = {}
        for name, net in {**self.generators(), **self.discriminators()}.items():
            for key, t in net.state_dict().items():
                if self.share_up and name == "G_DA" and key.startswith("up."):
                    continue
                params[f"{name}/{key}"] = t.detach().clone()
        sharing = {"G_DA/up": "G_D/up"} if self.share_up else {}
        return {"params": params, "sharing": sharing, "channels_base": self.channels_base}

    def load_checkpoint_state(self, state: dict) -> None:
        sharing = state.get("sharing", {})
        if bool(sharing) != self.share_up or state.get("channels_base") != self.channels_base:
            raise NetworkError("checkpoint architecture does not match this network set")
        params = state["params"]
        for name, net in {**self.generators(), **self.discriminators()}.items():
            own = {}
            for key in net.state_dict():
                full = f"{name}/{key}"
                if self.share_up and name == "G_DA" and key.startswith("up."):
                    full = "G_D/" + key
                if full not in params:
                    raise NetworkError(f"checkpoint lacks {full}")
                own[key] = params[full]
            net.load_state_dict(own)


def _unique(params) -> list[nn.Parameter]:
    seen, out = set(), []
    for p in params:
        if id(p) not in seen:
            seen.add(id(p))
            out.append(p)
    return out
