"""Convolutional encoder/decoder pair with composite reconstruction loss and
the structured training loop that masks a random channel prefix each step."""

from __future__ import annotations

import copy
import hashlib
import math
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .latents import (
    ChannelMask,
    LatentBatch,
    LatentSpec,
    make_prefix_mask,
    sample_channel_count,
)
from .metrics import FeatureExtractor


class TrainingDiverged(RuntimeError):
    """Raised when a training step produces a non-finite loss."""

    def __init__(self, message: str, diagnostics: dict):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass
class ImageBatch:
    """Rank-4 channels-last array [N, H, W, 3] with values in [-1, 1]."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 4 or data.shape[-1] != 3:
            raise ValueError(f"image data must be [N, H, W, 3], got shape {data.shape}")
        lo, hi = float(data.min()), float(data.max())
        if lo < -1.0 - 1e-5 or hi > 1.0 + 1e-5:
            raise ValueError(f"image values must lie in [-1, 1], got range [{lo}, {hi}]")
        self.data = data

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape


@dataclass(frozen=True)
class ReconLossWeights:
    """Weights of the composite reconstruction loss."""

    w_l1: float = 1.0
    w_perceptual: float = 0.1
    w_adversarial: float = 0.0

    def __post_init__(self):
        if self.w_l1 < 0 or self.w_perceptual < 0 or self.w_adversarial < 0:
            raise ValueError("loss weights must be nonnegative")
        if self.w_l1 == 0 and self.w_perceptual == 0 and self.w_adversarial == 0:
            raise ValueError("at least one loss weight must be positive")


@dataclass
class LatentStats:
    """Per-channel latent mean/std used to standardize diffusion inputs."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.asarray(self.std, dtype=np.float64)
        if self.mean.shape != self.std.shape or self.mean.ndim != 1:
            raise ValueError("mean and std must be equal-length vectors")
        if (self.std <= 0).any():
            raise ValueError("std entries must be positive")

    def hash(self) -> str:
        digest = hashlib.sha256()
        digest.update(self.mean.tobytes())
        digest.update(self.std.tobytes())
        return digest.hexdigest()


def _norm(width: int) -> nn.GroupNorm:
    for groups in (8, 4, 2, 1):
        if width % groups == 0:
            return nn.GroupNorm(groups, width)
    return nn.GroupNorm(1, width)


class ResidualBlock(nn.Module):
    def __init__(self, width: int):
        super().__init__()
        self.body = nn.Sequential(
            _norm(width),
            nn.SiLU(),
            nn.Conv2d(width, width, 3, padding=1),
            _norm(width),
            nn.SiLU(),
            nn.Conv2d(width, width, 3, padding=1),
        )

    def forward(self, x):
        return x + self.body(x)


def _stage_widths(base_width: int, n_stages: int) -> list[int]:
    return [base_width * min(2**i, 4) for i in range(n_stages + 1)]


class Encoder(nn.Module):
    def __init__(self, spatial_ratio: int, channels: int, base_width: int, in_channels: int = 3):
        super().__init__()
        n_stages = int(math.log2(spatial_ratio))
        if 2**n_stages != spatial_ratio:
            raise ValueError(f"spatial_ratio must be a power of two, got {spatial_ratio}")
        widths = _stage_widths(base_width, n_stages)
        layers: list[nn.Module] = [nn.Conv2d(in_channels, widths[0], 3, padding=1)]
        for i in range(n_stages):
            layers.append(ResidualBlock(widths[i]))
            layers.append(nn.Conv2d(widths[i], widths[i + 1], 3, stride=2, padding=1))
        layers += [ResidualBlock(widths[-1]), _norm(widths[-1]), nn.SiLU(),
                   nn.Conv2d(widths[-1], channels, 3, padding=1)]
        self.net = nn.Sequential(*layers)

    def forward(self, x):
        return self.net(x)


class Decoder(nn.Module):
    def __init__(self, spatial_ratio: int, channels: int, base_width: int, out_channels: int = 3):
        super().__init__()
        n_stages = int(math.log2(spatial_ratio))
        if 2**n_stages != spatial_ratio:
            raise ValueError(f"spatial_ratio must be a power of two, got {spatial_ratio}")
        widths = _stage_widths(base_width, n_stages)
        layers: list[nn.Module] = [nn.Conv2d(channels, widths[-1], 3, padding=1),
                                   ResidualBlock(widths[-1])]
        for i in reversed(range(n_stages)):
            layers.append(nn.Upsample(scale_factor=2, mode="nearest"))
            layers.append(nn.Conv2d(widths[i + 1], widths[i], 3, padding=1))
            layers.append(ResidualBlock(widths[i]))
        layers += [_norm(widths[0]), nn.SiLU(),
                   nn.Conv2d(widths[0], out_channels, 3, padding=1), nn.Tanh()]
        self.net = nn.Sequential(*layers)

    def forward(self, z):
        return self.net(z)


class PatchDiscriminator(nn.Module):
    """Small strided-conv discriminator for the optional adversarial term."""

    def __init__(self, width: int = 32, in_channels: int = 3):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(in_channels, width, 4, stride=2, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(width, 2 * width, 4, stride=2, padding=1),
            _norm(2 * width),
            nn.LeakyReLU(0.2),
            nn.Conv2d(2 * width, 1, 3, padding=1),
        )

    def forward(self, x):
        return self.net(x)


class AutoencoderModel(nn.Module):
    """Deterministic encoder/decoder pair tied to a LatentSpec."""

    def __init__(self, spec: LatentSpec, base_width: int = 64, in_channels: int = 3):
        super().__init__()
        self.spec = spec
        self.base_width = base_width
        self.in_channels = in_channels
        self.encoder = Encoder(spec.spatial_ratio, spec.channels, base_width, in_channels)
        self.decoder = Decoder(spec.spatial_ratio, spec.channels, base_width, in_channels)
        self.latent_stats: LatentStats | None = None


def images_to_tensor(images: np.ndarray | ImageBatch) -> torch.Tensor:
    data = images.data if isinstance(images, ImageBatch) else np.asarray(images)
    return torch.from_numpy(np.ascontiguousarray(data)).float().permute(0, 3, 1, 2).contiguous()


def tensor_to_images(x: torch.Tensor) -> np.ndarray:
    return x.detach().permute(0, 2, 3, 1).contiguous().numpy()


def latents_to_tensor(z: LatentBatch | np.ndarray) -> torch.Tensor:
    data = z.data if isinstance(z, LatentBatch) else np.asarray(z)
    return torch.from_numpy(np.ascontiguousarray(data)).float().permute(0, 3, 1, 2).contiguous()


def tensor_to_latents(z: torch.Tensor, spec: LatentSpec) -> LatentBatch:
    return LatentBatch(data=z.detach().permute(0, 2, 3, 1).contiguous().numpy(), spec=spec)


def encode(model: AutoencoderModel, x: ImageBatch | np.ndarray, batch_size: int = 256) -> LatentBatch:
    """Deterministic encoding to a channels-last LatentBatch."""
    data = x.data if isinstance(x, ImageBatch) else np.asarray(x)
    f = model.spec.spatial_ratio
    if data.shape[1] % f != 0 or data.shape[2] % f != 0:
        raise ValueError(
            f"image resolution {data.shape[1]}x{data.shape[2]} not divisible by spatial ratio {f}"
        )
    was_training = model.training
    model.eval()
    chunks = []
    with torch.no_grad():
        for start in range(0, len(data), batch_size):
            t = images_to_tensor(data[start : start + batch_size])
            chunks.append(model.encoder(t))
    model.train(was_training)
    return tensor_to_latents(torch.cat(chunks, dim=0), model.spec)


def decode(model: AutoencoderModel, z: LatentBatch, batch_size: int = 256) -> ImageBatch:
    """Decode latents back to [-1, 1] images."""
    if z.spec.channels != model.spec.channels or z.spec.spatial_ratio != model.spec.spatial_ratio:
        raise ValueError("latent batch spec does not match the model spec")
    was_training = model.training
    model.eval()
    chunks = []
    with torch.no_grad():
        for start in range(0, len(z.data), batch_size):
            t = latents_to_tensor(z.data[start : start + batch_size])
            chunks.append(model.decoder(t))
    model.train(was_training)
    return ImageBatch(data=tensor_to_images(torch.cat(chunks, dim=0)))


def recon_loss_terms(
    x: torch.Tensor,
    y: torch.Tensor,
    weights: ReconLossWeights,
    feature_net: FeatureExtractor | None = None,
    discriminator: PatchDiscriminator | None = None,
) -> tuple[torch.Tensor, dict[str, torch.Tensor]]:
    """Differentiable composite loss on NCHW tensors; terms are pre-weighted
    so they sum to the total."""
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {tuple(x.shape)} vs {tuple(y.shape)}")
    terms: dict[str, torch.Tensor] = {}
    total = x.new_zeros(())
    terms["l1"] = weights.w_l1 * (x - y).abs().mean()
    total = total + terms["l1"]
    if weights.w_perceptual > 0:
        if feature_net is None:
            raise ValueError("perceptual weight > 0 requires a feature extractor")
        terms["perceptual"] = weights.w_perceptual * feature_net.perceptual_distance(x, y)
    else:
        terms["perceptual"] = x.new_zeros(())
    total = total + terms["perceptual"]
    if weights.w_adversarial > 0:
        if discriminator is None:
            raise ValueError("adversarial weight > 0 requires a discriminator")
        terms["adversarial"] = weights.w_adversarial * nn.functional.softplus(
            -discriminator(y)
        ).mean()
    else:
        terms["adversarial"] = x.new_zeros(())
    total = total + terms["adversarial"]
    return total, terms


def reconstruction_loss(
    x: ImageBatch | np.ndarray,
    y: ImageBatch | np.ndarray,
    weights: ReconLossWeights,
    feature_net: FeatureExtractor | None = None,
    discriminator: PatchDiscriminator | None = None,
) -> tuple[float, dict[str, float]]:
    """Composite reconstruction loss with per-term breakdown."""
    xt, yt = images_to_tensor(x), images_to_tensor(y)
    with torch.no_grad():
        total, terms = recon_loss_terms(xt, yt, weights, feature_net, discriminator)
    return float(total), {k: float(v) for k, v in terms.items()}


@dataclass
class AEStepReport:
    step: int
    channel_count: int
    total: float
    terms: dict[str, float] = field(default_factory=dict)


class AutoencoderTrainer:
    """Owns the model, optimizer, and random sources for one training run.

    With `structured=True` each step samples a partial channel count from
    the spec grid and zeroes the latent suffix before decoding; with a
    single-entry grid or `structured=False` this is conventional training.
    """

    def __init__(
        self,
        model: AutoencoderModel,
        weights: ReconLossWeights,
        feature_net: FeatureExtractor | None = None,
        lr: float = 1e-4,
        structured: bool = True,
        seed: int = 0,
        grid_weights: tuple[float, ...] | None = None,
        discriminator: PatchDiscriminator | None = None,
        disc_lr: float = 1e-4,
        lr_decay: str = "none",
        total_steps: int | None = None,
    ):
        if weights.w_perceptual > 0 and feature_net is None:
            raise ValueError("perceptual weight > 0 requires a feature extractor")
        if weights.w_adversarial > 0 and discriminator is None:
            raise ValueError("adversarial weight > 0 requires a discriminator")
        if lr_decay not in ("none", "cosine"):
            raise ValueError(f"lr_decay must be 'none' or 'cosine', got {lr_decay!r}")
        if lr_decay == "cosine" and not total_steps:
            raise ValueError("cosine lr decay requires total_steps")
        self.model = model
        self.weights = weights
        self.feature_net = feature_net
        self.discriminator = discriminator
        self.structured = structured
        self.grid_weights = grid_weights
        self.base_lr = lr
        self.lr_decay = lr_decay
        self.total_steps = total_steps
        self.optimizer = torch.optim.Adam(model.parameters(), lr=lr)
        self.disc_optimizer = (
            torch.optim.Adam(discriminator.parameters(), lr=disc_lr) if discriminator else None
        )
        self.rng = np.random.default_rng(seed)
        self.step_count = 0

    def _apply_lr(self) -> None:
        if self.lr_decay == "cosine":
            frac = min(self.step_count / self.total_steps, 1.0)
            lr = self.base_lr * 0.5 * (1.0 + math.cos(math.pi * frac))
            for group in self.optimizer.param_groups:
                group["lr"] = lr

    def _mask_tensor(self, mask: ChannelMask) -> torch.Tensor:
        return torch.from_numpy(mask.bits).view(1, -1, 1, 1)

    def step(self, batch: np.ndarray | ImageBatch) -> AEStepReport:
        """One gradient update on the (optionally prefix-masked) reconstruction."""
        x = images_to_tensor(batch)
        spec = self.model.spec
        if self.structured:
            c_prime = sample_channel_count(spec, self.rng, self.grid_weights)
            mask = make_prefix_mask(spec.channels, c_prime)
        else:
            c_prime = spec.channels
            mask = None

        z = self.model.encoder(x)
        z_in = z * self._mask_tensor(mask) if mask is not None else z
        y = self.model.decoder(z_in)
        total, terms = recon_loss_terms(
            x, y, self.weights, self.feature_net, self.discriminator
        )
        if not torch.isfinite(total):
            raise TrainingDiverged(
                "non-finite reconstruction loss",
                {
                    "step": self.step_count,
                    "channel_count": c_prime,
                    "terms": {k: float(v.detach()) for k, v in terms.items()},
                },
            )
        self._apply_lr()
        self.optimizer.zero_grad()
        total.backward()
        self.optimizer.step()

        if self.discriminator is not None and self.weights.w_adversarial > 0:
            self._discriminator_step(x, y.detach())

        self.step_count += 1
        return AEStepReport(
            step=self.step_count,
            channel_count=c_prime,
            total=float(total.detach()),
            terms={k: float(v.detach()) for k, v in terms.items()},
        )

    def _discriminator_step(self, real: torch.Tensor, fake: torch.Tensor) -> None:
        logits_real = self.discriminator(real)
        logits_fake = self.discriminator(fake)
        loss = (
            nn.functional.softplus(-logits_real).mean()
            + nn.functional.softplus(logits_fake).mean()
        )
        self.disc_optimizer.zero_grad()
        loss.backward()
        self.disc_optimizer.step()


def masked_reconstruction_error(
    model: AutoencoderModel,
    images: np.ndarray,
    c_prime: int,
    decoder: Decoder | None = None,
    batch_size: int = 256,
) -> float:
    """Mean squared reconstruction error when decoding only the first
    `c_prime` latent channels (optionally with a replacement decoder)."""
    dec = decoder if decoder is not None else model.decoder
    mask = make_prefix_mask(model.spec.channels, c_prime)
    bits = torch.from_numpy(mask.bits).view(1, -1, 1, 1)
    was_training = model.training
    model.eval()
    dec_training = dec.training
    dec.eval()
    total, count = 0.0, 0
    with torch.no_grad():
        for start in range(0, len(images), batch_size):
            x = images_to_tensor(images[start : start + batch_size])
            y = dec(model.encoder(x) * bits)
            total += float((x - y).square().sum())
            count += x.numel()
    model.train(was_training)
    dec.train(dec_training)
    return total / count


def finetune_decoder_for_prefix(
    model: AutoencoderModel,
    c_prime: int,
    images: np.ndarray,
    steps: int,
    batch_size: int = 32,
    lr: float = 1e-4,
    seed: int = 0,
    weights: ReconLossWeights | None = None,
    feature_net: FeatureExtractor | None = None,
) -> Decoder:
    """Fine-tune a decoder copy on latents always masked to `c_prime`.

    The encoder is frozen and the original model is left untouched; this is
    an evaluation tool for revealing what a channel prefix encodes.
    """
    if not (0 < c_prime <= model.spec.channels):
        raise ValueError(f"c_prime must lie in (0, {model.spec.channels}], got {c_prime}")
    weights = weights or ReconLossWeights(w_l1=1.0, w_perceptual=0.0)
    if weights.w_perceptual > 0 and feature_net is None:
        raise ValueError("perceptual weight > 0 requires a feature extractor")
    decoder = copy.deepcopy(model.decoder)
    decoder.train()
    opt = torch.optim.Adam(decoder.parameters(), lr=lr)
    rng = np.random.default_rng(seed)
    bits = torch.from_numpy(make_prefix_mask(model.spec.channels, c_prime).bits).view(1, -1, 1, 1)
    for _ in range(steps):
        idx = rng.integers(0, len(images), size=min(batch_size, len(images)))
        x = images_to_tensor(images[idx])
        with torch.no_grad():
            z = model.encoder(x) * bits
        y = decoder(z)
        total, _ = recon_loss_terms(x, y, weights, feature_net)
        if not torch.isfinite(total):
            raise TrainingDiverged("non-finite fine-tuning loss", {"c_prime": c_prime})
        opt.zero_grad()
        total.backward()
        opt.step()
    decoder.eval()
    return decoder


def compute_latent_stats(
    model: AutoencoderModel,
    images: np.ndarray,
    batch_size: int = 256,
    std_floor: float = 1e-6,
) -> LatentStats:
    """Per-channel latent mean/std over a dataset.

    Variance is taken across samples at each latent position and then
    averaged over positions, so a dataset of identical images yields the
    std floor exactly.
    """
    if len(images) == 0:
        raise ValueError("dataset is empty")
    total = None
    total_sq = None
    count = 0
    was_training = model.training
    model.eval()
    with torch.no_grad():
        for start in range(0, len(images), batch_size):
            z = model.encoder(images_to_tensor(images[start : start + batch_size])).double()
            if total is None:
                total = z.sum(dim=0).numpy()
                total_sq = z.square().sum(dim=0).numpy()
            else:
                total += z.sum(dim=0).numpy()
                total_sq += z.square().sum(dim=0).numpy()
            count += z.shape[0]
    model.train(was_training)
    mean_map = total / count                                   # [c, h, w]
    var_map = np.maximum(total_sq / count - mean_map**2, 0.0)  # across samples
    mean = mean_map.mean(axis=(1, 2))
    std = np.maximum(np.sqrt(var_map.mean(axis=(1, 2))), std_floor)
    return LatentStats(mean=mean, std=std)


def standardize_latents(z: LatentBatch, stats: LatentStats) -> LatentBatch:
    data = (z.data - stats.mean.astype(z.data.dtype)) / stats.std.astype(z.data.dtype)
    return LatentBatch(data=data.astype(np.float32), spec=z.spec)


def destandardize_latents(z: LatentBatch, stats: LatentStats) -> LatentBatch:
    data = z.data * stats.std.astype(z.data.dtype) + stats.mean.astype(z.data.dtype)
    return LatentBatch(data=data.astype(np.float32), spec=z.spec)
