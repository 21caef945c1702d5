"""Declarative experiment configuration with strict, versioned JSON I/O.

Parsing is strict: unknown keys and type mismatches raise ConfigError with
the offending key path. Serialization is canonical (sorted keys) so a
config round-trips bit-exactly.
"""

from __future__ import annotations

import dataclasses
import json
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .autoencoder import ReconLossWeights
from .data import SyntheticShapesSpec
from .latents import LatentSpec, default_channel_grid

CONFIG_VERSION = 1


class ConfigError(ValueError):
    def __init__(self, message: str, path: str = ""):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


@dataclass(frozen=True)
class DataConfig:
    kind: str = "shapes"  # "shapes" or "directory"
    shapes: SyntheticShapesSpec = field(default_factory=SyntheticShapesSpec)
    directory: str | None = None
    resolution: int | None = None
    heldout_fraction: float = 0.125


@dataclass(frozen=True)
class AETrainConfig:
    base_width: int = 64
    steps: int = 2000
    batch_size: int = 32
    lr: float = 1e-4
    lr_decay: str = "none"  # "none" or "cosine"
    structured: bool = True
    grid_weights: tuple[float, ...] | None = None


@dataclass(frozen=True)
class ExtractorConfig:
    width: int = 32
    steps: int = 400
    batch_size: int = 64
    lr: float = 1e-3


@dataclass(frozen=True)
class DiffusionTrainConfig:
    width: int = 256
    depth: int = 6
    heads: int = 8
    mlp_ratio: int = 4
    steps: int = 3000
    batch_size: int = 64
    lr: float = 1e-4
    lr_decay: str = "none"  # "none" or "cosine"
    augmented: bool = True
    loss_normalization: str = "all"  # "all" or "active"
    time_epsilon: float = 1e-3
    schedule: str = "vp-trig"
    ema_decay: float = 0.995  # 0 disables; sampling/eval use EMA weights


@dataclass(frozen=True)
class SamplingConfig:
    steps: int = 24
    eps_clip: float = 1e-2


@dataclass(frozen=True)
class EvalConfig:
    cadence: int = 500
    n_fid_samples: int = 2048
    prefix_fraction: float = 0.25
    finetune_steps: int = 300
    finetune_lr: float = 1e-4
    checkpoint_every: int = 500
    log_every: int = 50
    sample_grid: int = 64
    prefix_curve: bool = False
    throughput_steps: int = 5


@dataclass(frozen=True)
class ReuseConfig:
    """Paths of checkpoints to copy into the run instead of training."""

    extractor: str | None = None
    autoencoder: str | None = None


def _default_latent_spec() -> LatentSpec:
    return LatentSpec(spatial_ratio=8, channels=16, channel_grid=default_channel_grid(16))


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "run"
    config_version: int = CONFIG_VERSION
    seed: int = 0
    deterministic: bool = True
    out_root: str = "runs"
    data: DataConfig = field(default_factory=DataConfig)
    latent: LatentSpec = field(default_factory=_default_latent_spec)
    recon: ReconLossWeights = field(default_factory=ReconLossWeights)
    ae: AETrainConfig = field(default_factory=AETrainConfig)
    extractor: ExtractorConfig = field(default_factory=ExtractorConfig)
    diffusion: DiffusionTrainConfig = field(default_factory=DiffusionTrainConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    reuse: ReuseConfig = field(default_factory=ReuseConfig)

    def __post_init__(self):
        if self.config_version != CONFIG_VERSION:
            raise ConfigError(
                f"unsupported config_version {self.config_version}, expected {CONFIG_VERSION}",
                "config_version",
            )


def desk_config(name: str = "run", seed: int = 0) -> ExperimentConfig:
    """Desk-scale defaults: 32x32 synthetic shapes, a 16-channel f8 latent."""
    return ExperimentConfig(name=name, seed=seed)


def _join(path: str, key: str) -> str:
    return f"{path}.{key}" if path else key


def _decode_value(tp, value, path: str):
    origin = typing.get_origin(tp)
    if tp is type(None):
        if value is not None:
            raise ConfigError(f"expected null, got {value!r}", path)
        return None
    if origin is typing.Union or isinstance(tp, types.UnionType):
        args = typing.get_args(tp)
        if value is None:
            if type(None) in args:
                return None
            raise ConfigError("null is not allowed here", path)
        errors = []
        for arg in args:
            if arg is type(None):
                continue
            try:
                return _decode_value(arg, value, path)
            except ConfigError as exc:
                errors.append(str(exc))
        raise ConfigError(f"no union member matched: {errors}", path)
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            raise ConfigError(f"expected an object for {tp.__name__}, got {type(value).__name__}", path)
        return _decode_dataclass(tp, value, path)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"expected a list, got {type(value).__name__}", path)
        args = typing.get_args(tp)
        elem_tp = args[0] if args else typing.Any
        return tuple(
            _decode_value(elem_tp, v, f"{path}[{i}]") for i, v in enumerate(value)
        )
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"expected a boolean, got {value!r}", path)
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"expected an integer, got {value!r}", path)
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"expected a number, got {value!r}", path)
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"expected a string, got {value!r}", path)
        return value
    raise ConfigError(f"unsupported config field type {tp!r}", path)


def _decode_dataclass(cls, data: dict, path: str = ""):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in names:
            raise ConfigError("unknown key", _join(path, key))
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name in data:
            kwargs[f.name] = _decode_value(hints[f.name], data[f.name], _join(path, f.name))
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), path) from exc


def config_to_dict(config: ExperimentConfig) -> dict:
    return dataclasses.asdict(config)


def config_from_dict(data: dict) -> ExperimentConfig:
    return _decode_dataclass(ExperimentConfig, data)


def to_json(config: ExperimentConfig) -> str:
    return json.dumps(config_to_dict(config), indent=2, sort_keys=True) + "\n"


def from_json(text: str) -> ExperimentConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config root must be an object")
    return config_from_dict(data)


def save_config(config: ExperimentConfig, path: str | Path) -> None:
    Path(path).write_text(to_json(config))


def load_config(path: str | Path) -> ExperimentConfig:
    return from_json(Path(path).read_text())


def apply_overrides(config: ExperimentConfig, overrides: list[str]) -> ExperimentConfig:
    """Apply `key.path=value` overrides; values parse as JSON, else strings."""
    data = config_to_dict(config)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like key.path=value")
        key_path, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = data
        parts = key_path.split(".")
        for i, part in enumerate(parts[:-1]):
            if not isinstance(node, dict) or part not in node:
                raise ConfigError("unknown key", ".".join(parts[: i + 1]))
            node = node[part]
        if not isinstance(node, dict) or parts[-1] not in node:
            raise ConfigError("unknown key", key_path)
        node[parts[-1]] = value
    return config_from_dict(data)
