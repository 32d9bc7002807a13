"""Layered run configuration: defaults < preset < INI file < ``--set`` overrides.

Every key lives in one of the sections ``physics``, ``degrade``, ``data``,
``train`` and ``metrics``. Values are parsed with the type of their default
and the assembled objects are validated before any command does work.
"""

from __future__ import annotations

import configparser
import hashlib
import io
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .data import DataConfig
from .degradation import PSEUDO_EXPERIMENTAL, DegradationConfig
from .metrics import MetricConfig, PiqeConfig, SsimConfig
from .objectives import LossWeights
from .physics import SurfaceModel
from .scenes import SceneConfig
from .trainer import TrainConfig


class ConfigError(ValueError):
    """Unknown key, unparsable value or a value rejected by validation."""


_SCENE_KEYS = ("fov_nm", "n_min", "n_max", "v_min", "v_max")
_DEG_KEYS = ("blur_sigma", "noise_sigma", "line_amp", "drift_shear")
_DATA_KEYS = ("resolution", "per_domain", "exp_sources", "exp_crops_per_view", "exp_margin", "test_blur", "test_exp", "seed")
_TRAIN_SKIP = ("weights",)


def _defaults() -> dict[str, dict]:
    scene, deg, data, train = SceneConfig(), DegradationConfig(), DataConfig(), TrainConfig()
    ssim, piqe, metrics = SsimConfig(), PiqeConfig(), MetricConfig()
    return {
        "physics": {**SurfaceModel().as_dict(), **{k: getattr(scene, k) for k in _SCENE_KEYS}},
        "degrade": {
            **{k: getattr(deg, k) for k in _DEG_KEYS},
            "seed": deg.seed,
            **{f"exp_{k}": getattr(PSEUDO_EXPERIMENTAL, k) for k in _DEG_KEYS},
        },
        "data": {k: getattr(data, k) for k in _DATA_KEYS},
        "train": {
            **{f.name: getattr(train, f.name) for f in fields(train) if f.name not in _TRAIN_SKIP},
            **train.weights.as_dict(),
        },
        "metrics": {
            "ssim_c1": ssim.c1,
            "ssim_c2": ssim.c2,
            "ssim_window": ssim.window,
            "ssim_sigma": ssim.sigma,
            **{f"piqe_{f.name}": getattr(piqe, f.name) for f in fields(piqe)},
            "brisque_model": "",
            "aggregate": metrics.aggregate,
        },
    }


DEFAULTS = _defaults()

PRESETS = {
    "desk": {
        "data.resolution": 64,
        "data.per_domain": 200,
        "data.exp_sources": 25,
        "data.exp_crops_per_view": 1,
        "data.seed": 0,
        "degrade.seed": 0,
        "train.epochs": 5,
        "train.channels_base": 32,
        "train.batch": 8,
        "train.seed": 0,
    },
}


def _parse(section: str, key: str, raw):
    if section not in DEFAULTS:
        raise ConfigError(f"unknown config section [{section}]")
    if key not in DEFAULTS[section]:
        raise ConfigError(f"unknown config key {section}.{key}")
    default = DEFAULTS[section][key]
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError:
        raise ConfigError(f"{section}.{key}: cannot parse {raw!r} as {type(default).__name__}") from None
    return text


@dataclass(frozen=True)
class RunConfig:
    values: dict  # section -> key -> typed value
    surface: SurfaceModel
    scene: SceneConfig
    degradation: DegradationConfig
    exp_degradation: DegradationConfig
    data: DataConfig
    train: TrainConfig
    metrics: MetricConfig

    @classmethod
    def build(cls, config_file=None, overrides=(), preset: str | None = None) -> "RunConfig":
        values = {s: dict(v) for s, v in DEFAULTS.items()}
        changed: dict[str, set] = {s: set() for s in DEFAULTS}

        def put(dotted: str, raw):
            section, sep, key = dotted.partition(".")
            if not sep:
                raise ConfigError(f"expected section.key, got {dotted!r}")
            parsed = _parse(section, key, raw)
            values[section][key] = parsed
            changed[section].add(key)

        if preset is not None:
            if preset not in PRESETS:
                raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
            for k, v in PRESETS[preset].items():
                put(k, v)
        if config_file is not None:
            parser = _parser()
            try:
                with open(config_file) as f:
                    parser.read_file(f)
            except (OSError, configparser.Error) as exc:
                raise ConfigError(f"cannot read config file {config_file}: {exc}") from exc
            for section in parser.sections():
                for key, raw in parser.items(section):
                    put(f"{section}.{key}", raw)
        for item in overrides:
            dotted, sep, raw = item.partition("=")
            if not sep:
                raise ConfigError(f"--set expects section.key=value, got {item!r}")
            put(dotted.strip(), raw)
        return cls._assemble(values, changed)

    @classmethod
    def _assemble(cls, values: dict, changed: dict) -> "RunConfig":
        def section(name, make):
            try:
                return make(values[name])
            except ConfigError:
                raise
            except (ValueError, TypeError) as exc:
                keys = ", ".join(f"{name}.{k}={values[name][k]!r}" for k in sorted(changed[name])) or f"[{name}] defaults"
                raise ConfigError(f"invalid {keys}: {exc}") from exc

        surface = section("physics", lambda v: SurfaceModel(**{k: v[k] for k in SurfaceModel().as_dict()}))
        scene = section("physics", lambda v: SceneConfig(model=surface, **{k: v[k] for k in _SCENE_KEYS}))
        deg = section("degrade", lambda v: DegradationConfig(seed=v["seed"], **{k: v[k] for k in _DEG_KEYS}))
        exp_deg = section("degrade", lambda v: DegradationConfig(seed=v["seed"], **{k: v[f"exp_{k}"] for k in _DEG_KEYS}))
        data = section("data", lambda v: DataConfig(scene=scene, degradation=deg, exp_degradation=exp_deg, **v))
        weight_keys = set(LossWeights().as_dict())
        train = section(
            "train",
            lambda v: TrainConfig(
                weights=LossWeights(**{k: v[k] for k in weight_keys}), **{k: x for k, x in v.items() if k not in weight_keys}
            ),
        )
        metrics = section(
            "metrics",
            lambda v: MetricConfig(
                ssim=SsimConfig(v["ssim_c1"], v["ssim_c2"], v["ssim_window"], v["ssim_sigma"]),
                piqe=PiqeConfig(**{f.name: v[f"piqe_{f.name}"] for f in fields(PiqeConfig)}),
                brisque_model=v["brisque_model"] or None,
                aggregate=v["aggregate"],
            ),
        )
        return cls(values, surface, scene, deg, exp_deg, data, train, metrics)

    def with_train(self, train: TrainConfig) -> "RunConfig":
        values = {s: dict(v) for s, v in self.values.items()}
        values["train"].update({k: v for k, v in train.as_dict().items() if k != "weights"})
        values["train"].update(train.weights.as_dict())
        return replace(self, values=values, train=train)

    def to_ini(self) -> str:
        parser = _parser()
        for name in DEFAULTS:
            parser[name] = {k: _format(self.values[name][k]) for k in sorted(self.values[name])}
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()

    def sha256(self) -> str:
        return hashlib.sha256(self.to_ini().encode()).hexdigest()

    def write_echo(self, directory) -> Path:
        path = Path(directory) / "config.ini"
        path.write_text(self.to_ini())
        return path


def _parser() -> configparser.ConfigParser:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # keys are case-sensitive (lambda_FA)
    return parser


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)

