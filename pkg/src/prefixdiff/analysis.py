"""Latent-space diagnostics: channel-average maps, per-channel statistics
with a spectral low-frequency split, prefix reconstruction curves, and the
structure-separation score."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .autoencoder import (
    AutoencoderModel,
    ReconLossWeights,
    finetune_decoder_for_prefix,
    masked_reconstruction_error,
)
from .latents import LatentBatch
from .metrics import FeatureExtractor, psnr_from_mse


@dataclass
class ChannelStats:
    """Per-channel dataset moments plus the fraction of spectral energy
    below the radial cutoff (the object-vs-detail proxy)."""

    mean: np.ndarray
    variance: np.ndarray
    energy: np.ndarray
    low_freq_fraction: np.ndarray
    n_samples: int
    height: int
    width: int
    cutoff: float
    # Spectral energy sums kept so shard results can be pooled exactly.
    spectral_low: np.ndarray | None = None
    spectral_total: np.ndarray | None = None

    def __post_init__(self):
        for name in ("mean", "variance", "energy", "low_freq_fraction"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        if (self.variance < -1e-9).any():
            raise ValueError("variance must be nonnegative")
        if (self.energy - self.variance < -1e-6 * np.maximum(self.energy, 1.0)).any():
            raise ValueError("energy must be >= variance (energy = variance + mean^2)")
        frac = self.low_freq_fraction
        if (frac < -1e-9).any() or (frac > 1 + 1e-9).any():
            raise ValueError("low-frequency fractions must lie in [0, 1]")

    @property
    def channels(self) -> int:
        return len(self.mean)

    def merge(self, other: "ChannelStats") -> "ChannelStats":
        """Exact pooling of stats computed on disjoint dataset shards."""
        if self.channels != other.channels or (self.height, self.width) != (other.height, other.width):
            raise ValueError("cannot merge stats over different latent geometries")
        if self.spectral_low is None or other.spectral_low is None:
            raise ValueError("merge requires stats that kept their spectral sums")
        n_a = self.n_samples * self.height * self.width
        n_b = other.n_samples * other.height * other.width
        n = n_a + n_b
        mean = (n_a * self.mean + n_b * other.mean) / n
        energy = (n_a * self.energy + n_b * other.energy) / n
        variance = np.maximum(energy - mean**2, 0.0)
        low = self.spectral_low + other.spectral_low
        total = self.spectral_total + other.spectral_total
        frac = np.where(total > 0, low / np.where(total > 0, total, 1.0), 1.0)
        return ChannelStats(
            mean=mean, variance=variance, energy=energy, low_freq_fraction=frac,
            n_samples=self.n_samples + other.n_samples,
            height=self.height, width=self.width, cutoff=self.cutoff,
            spectral_low=low, spectral_total=total,
        )


def channel_average_map(z: LatentBatch) -> np.ndarray:
    """Mean over the channel axis, one [h, w] map per sample."""
    return z.data.mean(axis=-1)


def _low_freq_mask(height: int, width: int, cutoff: float) -> np.ndarray:
    fy = np.minimum(np.arange(height), height - np.arange(height)).astype(np.float64)
    fx = np.minimum(np.arange(width), width - np.arange(width)).astype(np.float64)
    radius = np.sqrt(fy[:, None] ** 2 + fx[None, :] ** 2)
    return radius <= cutoff


def per_channel_stats(
    latents: Iterable[LatentBatch] | LatentBatch, cutoff: float | None = None
) -> ChannelStats:
    """Streaming per-channel moments and spectral low-frequency fractions.

    The cutoff defaults to min(h, w) / 4 in discrete-frequency units; an
    all-zero channel gets low-frequency fraction 1 by convention.
    """
    batches = [latents] if isinstance(latents, LatentBatch) else list(latents)
    if not batches:
        raise ValueError("dataset is empty")
    c = batches[0].spec.channels
    _, h, w, _ = batches[0].data.shape
    k_c = cutoff if cutoff is not None else min(h, w) / 4.0
    mask = _low_freq_mask(h, w, k_c)

    total = np.zeros(c, dtype=np.float64)
    total_sq = np.zeros(c, dtype=np.float64)
    spec_low = np.zeros(c, dtype=np.float64)
    spec_total = np.zeros(c, dtype=np.float64)
    count = 0
    n_samples = 0
    for batch in batches:
        data = batch.data.astype(np.float64)
        if data.shape[1:] != (h, w, c):
            raise ValueError("all batches must share one latent geometry")
        total += data.sum(axis=(0, 1, 2))
        total_sq += (data**2).sum(axis=(0, 1, 2))
        power = np.abs(np.fft.fft2(data, axes=(1, 2))) ** 2
        spec_low += (power * mask[None, :, :, None]).sum(axis=(0, 1, 2))
        spec_total += power.sum(axis=(0, 1, 2))
        count += data.shape[0] * h * w
        n_samples += data.shape[0]

    mean = total / count
    energy = total_sq / count
    variance = np.maximum(energy - mean**2, 0.0)
    frac = np.where(spec_total > 0, spec_low / np.where(spec_total > 0, spec_total, 1.0), 1.0)
    return ChannelStats(
        mean=mean, variance=variance, energy=energy, low_freq_fraction=frac,
        n_samples=n_samples, height=h, width=w, cutoff=k_c,
        spectral_low=spec_low, spectral_total=spec_total,
    )


def structure_separation_score(stats: ChannelStats, prefix_fraction: float = 0.25) -> float:
    """Mean low-frequency fraction of the channel prefix minus the suffix.

    Positive means coarse (low-frequency) content concentrates in the
    leading channels; bounded in [-1, 1].
    """
    if not (0.0 < prefix_fraction < 1.0):
        raise ValueError(f"prefix_fraction must lie in (0, 1), got {prefix_fraction}")
    c = stats.channels
    k = math.ceil(prefix_fraction * c)
    if k >= c:
        raise ValueError(f"prefix_fraction {prefix_fraction} leaves no suffix channels (c={c})")
    frac = stats.low_freq_fraction
    return float(frac[:k].mean() - frac[k:].mean())


@dataclass
class PrefixCurvePoint:
    channel_count: int
    mse: float
    psnr: float


@dataclass
class PrefixCurve:
    """Reconstruction error as a function of the decoded channel prefix."""

    points: list[PrefixCurvePoint]
    finetuned: bool
    finetune_steps: int

    def __post_init__(self):
        counts = [p.channel_count for p in self.points]
        if any(b <= a for a, b in zip(counts, counts[1:])):
            raise ValueError("curve points must be sorted by increasing channel count")

    def mses(self) -> list[float]:
        return [p.mse for p in self.points]


def prefix_reconstruction_curve(
    model: AutoencoderModel,
    train_images: np.ndarray,
    eval_images: np.ndarray,
    grid: tuple[int, ...] | None = None,
    finetune_steps: int = 0,
    finetune_lr: float = 1e-4,
    finetune_batch_size: int = 32,
    seed: int = 0,
    weights: ReconLossWeights | None = None,
    feature_net: FeatureExtractor | None = None,
) -> PrefixCurve:
    """Measure held-out masked-reconstruction error over the channel grid,
    optionally fine-tuning a fresh decoder copy per channel count."""
    grid = tuple(grid) if grid is not None else model.spec.channel_grid
    if any(g > model.spec.channels or g < 1 for g in grid):
        raise ValueError(f"grid entries must lie in [1, {model.spec.channels}], got {grid}")
    points = []
    for c_prime in sorted(grid):
        decoder = None
        if finetune_steps > 0:
            decoder = finetune_decoder_for_prefix(
                model, c_prime, train_images, steps=finetune_steps,
                batch_size=finetune_batch_size, lr=finetune_lr, seed=seed,
                weights=weights, feature_net=feature_net,
            )
        mse = masked_reconstruction_error(model, eval_images, c_prime, decoder=decoder)
        points.append(PrefixCurvePoint(channel_count=c_prime, mse=mse, psnr=psnr_from_mse(mse)))
    return PrefixCurve(points=points, finetuned=finetune_steps > 0, finetune_steps=finetune_steps)


def render_image_grid(images: np.ndarray, n_cols: int = 8, pad: int = 1) -> np.ndarray:
    """Tile [-1, 1] images into one uint8 grid image."""
    images = np.asarray(images)
    n, h, w, ch = images.shape
    n_cols = min(n_cols, n)
    n_rows = (n + n_cols - 1) // n_cols
    grid = np.ones((n_rows * (h + pad) + pad, n_cols * (w + pad) + pad, ch), dtype=np.uint8) * 32
    for i in range(n):
        r, col = divmod(i, n_cols)
        tile = np.clip((images[i] + 1.0) * 127.5, 0, 255).astype(np.uint8)
        y0 = pad + r * (h + pad)
        x0 = pad + col * (w + pad)
        grid[y0 : y0 + h, x0 : x0 + w] = tile
    return grid


def render_channel_maps(maps: np.ndarray, n_cols: int = 8, pad: int = 1) -> tuple[np.ndarray, list[dict]]:
    """Tile scalar maps into a grid, min-max normalizing each map to [0, 1].

    Returns the uint8 grid and per-map normalization metadata.
    """
    maps = np.asarray(maps, dtype=np.float64)
    meta = []
    normalized = np.empty_like(maps)
    for i, m in enumerate(maps):
        lo, hi = float(m.min()), float(m.max())
        span = hi - lo if hi > lo else 1.0
        normalized[i] = (m - lo) / span
        meta.append({"index": i, "min": lo, "max": hi, "normalization": "minmax"})
    tiles = (normalized * 2.0 - 1.0)[..., None].repeat(3, axis=-1)
    return render_image_grid(tiles, n_cols=n_cols, pad=pad), meta
