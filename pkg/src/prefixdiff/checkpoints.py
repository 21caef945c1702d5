"""Self-describing checkpoint containers and the standardized-latent cache."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np
import torch

from .autoencoder import AutoencoderModel, LatentStats
from .diffusion import DenoiserModel
from .latents import LatentSpec
from .metrics import FeatureExtractor

CHECKPOINT_FORMAT_VERSION = 1
CACHE_FORMAT_VERSION = 1


class CacheMismatchError(RuntimeError):
    """Cached latents no longer match the autoencoder checkpoint."""


def file_sha256(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _spec_to_dict(spec: LatentSpec) -> dict:
    return {
        "spatial_ratio": spec.spatial_ratio,
        "channels": spec.channels,
        "channel_grid": list(spec.channel_grid),
    }


def _spec_from_dict(data: dict) -> LatentSpec:
    return LatentSpec(
        spatial_ratio=data["spatial_ratio"],
        channels=data["channels"],
        channel_grid=tuple(data["channel_grid"]),
    )


def _load(path: str | Path, expected_kind: str) -> dict:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    version = payload.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format_version {version}")
    if payload.get("kind") != expected_kind:
        raise ValueError(f"expected a {expected_kind} checkpoint, got {payload.get('kind')!r}")
    return payload


def save_autoencoder_checkpoint(
    path: str | Path,
    model: AutoencoderModel,
    step: int,
    optimizer: torch.optim.Optimizer | None = None,
    numpy_rng_state: dict | None = None,
    torch_rng_state: torch.Tensor | None = None,
) -> None:
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "kind": "autoencoder",
        "arch": {
            "spec": _spec_to_dict(model.spec),
            "base_width": model.base_width,
            "in_channels": model.in_channels,
        },
        "state": model.state_dict(),
        "latent_stats": (
            {"mean": model.latent_stats.mean, "std": model.latent_stats.std}
            if model.latent_stats is not None
            else None
        ),
        "channel_grid": list(model.spec.channel_grid),
        "step": step,
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
        "numpy_rng": numpy_rng_state,
        "torch_rng": torch_rng_state,
    }
    torch.save(payload, path)


def load_autoencoder_checkpoint(path: str | Path) -> tuple[AutoencoderModel, dict]:
    payload = _load(path, "autoencoder")
    arch = payload["arch"]
    model = AutoencoderModel(
        spec=_spec_from_dict(arch["spec"]),
        base_width=arch["base_width"],
        in_channels=arch["in_channels"],
    )
    model.load_state_dict(payload["state"])
    if payload["latent_stats"] is not None:
        model.latent_stats = LatentStats(
            mean=payload["latent_stats"]["mean"], std=payload["latent_stats"]["std"]
        )
    return model, payload


def save_diffusion_checkpoint(
    path: str | Path,
    model: DenoiserModel,
    step: int,
    schedule_kind: str,
    optimizer: torch.optim.Optimizer | None = None,
    numpy_rng_state: dict | None = None,
    torch_rng_state: torch.Tensor | None = None,
) -> None:
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "kind": "diffusion",
        "arch": {
            "spec": _spec_to_dict(model.spec),
            "latent_size": list(model.latent_size),
            "n_classes": model.n_classes,
            "width": model.width,
            "depth": len(model.blocks),
            "heads": model.blocks[0].heads,
            "mlp_ratio": model.blocks[0].mlp[0].out_features // model.width,
        },
        "state": model.state_dict(),
        "channel_grid": list(model.spec.channel_grid),
        "schedule_kind": schedule_kind,
        "step": step,
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
        "numpy_rng": numpy_rng_state,
        "torch_rng": torch_rng_state,
    }
    torch.save(payload, path)


def load_diffusion_checkpoint(path: str | Path) -> tuple[DenoiserModel, dict]:
    payload = _load(path, "diffusion")
    arch = payload["arch"]
    model = DenoiserModel(
        spec=_spec_from_dict(arch["spec"]),
        latent_size=tuple(arch["latent_size"]),
        n_classes=arch["n_classes"],
        width=arch["width"],
        depth=arch["depth"],
        heads=arch["heads"],
        mlp_ratio=arch["mlp_ratio"],
    )
    model.load_state_dict(payload["state"])
    return model, payload


def save_extractor_checkpoint(path: str | Path, net: FeatureExtractor) -> None:
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "kind": "feature_extractor",
        "arch": {
            "n_classes": net.n_classes,
            "width": net.width,
            "in_channels": net.block1[0].in_channels,
        },
        "state": net.state_dict(),
        "param_hash": net.param_hash(),
    }
    torch.save(payload, path)


def load_extractor_checkpoint(path: str | Path) -> FeatureExtractor:
    payload = _load(path, "feature_extractor")
    arch = payload["arch"]
    net = FeatureExtractor(
        n_classes=arch["n_classes"], width=arch["width"], in_channels=arch["in_channels"]
    )
    net.load_state_dict(payload["state"])
    net.freeze()
    if net.param_hash() != payload["param_hash"]:
        raise ValueError("feature extractor parameter hash mismatch after load")
    return net


def save_latent_cache(
    cache_dir: str | Path,
    latents: np.ndarray,
    labels: np.ndarray,
    spec: LatentSpec,
    latent_stats_hash: str,
    ae_checkpoint_hash: str,
) -> None:
    cache = Path(cache_dir)
    cache.mkdir(parents=True, exist_ok=True)
    np.save(cache / "latents.npy", np.asarray(latents, dtype=np.float32))
    np.save(cache / "labels.npy", np.asarray(labels, dtype=np.int64))
    header = {
        "format_version": CACHE_FORMAT_VERSION,
        "latent_spec": _spec_to_dict(spec),
        "latent_stats_hash": latent_stats_hash,
        "ae_checkpoint_hash": ae_checkpoint_hash,
        "standardized": True,
        "n": int(len(latents)),
    }
    (cache / "header.json").write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")


def load_latent_cache(
    cache_dir: str | Path,
    expected_stats_hash: str | None = None,
    expected_ae_hash: str | None = None,
) -> tuple[np.ndarray, np.ndarray, dict]:
    """Load cached standardized latents, verifying provenance hashes.

    Raises CacheMismatchError when the cache was built from a different
    autoencoder checkpoint or latent stats; re-run latent caching to fix.
    """
    cache = Path(cache_dir)
    header_path = cache / "header.json"
    if not header_path.exists():
        raise FileNotFoundError(f"no latent cache at {cache}")
    header = json.loads(header_path.read_text())
    if header.get("format_version") != CACHE_FORMAT_VERSION:
        raise ValueError(f"unsupported cache format_version {header.get('format_version')}")
    if expected_stats_hash is not None and header["latent_stats_hash"] != expected_stats_hash:
        raise CacheMismatchError(
            "cached latents were standardized with different latent stats; "
            "re-run latent caching (cache-latents --force) before training"
        )
    if expected_ae_hash is not None and header["ae_checkpoint_hash"] != expected_ae_hash:
        raise CacheMismatchError(
            "cached latents come from a different autoencoder checkpoint; "
            "re-run latent caching (cache-latents --force) before training"
        )
    latents = np.load(cache / "latents.npy")
    labels = np.load(cache / "labels.npy")
    if len(latents) != header["n"]:
        raise CacheMismatchError("cache header count does not match stored latents")
    return latents, labels, header
