"""Noise schedule, transformer denoiser over latent tokens, standard and
prefix-masked training objectives, and a deterministic ODE sampler."""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .autoencoder import TrainingDiverged
from .latents import ChannelMask, LatentBatch, LatentSpec, make_prefix_mask, sample_channel_count


@dataclass(frozen=True)
class NoiseSchedule:
    """alpha/beta coefficients of the forward corruption x_t = alpha_t x0 + beta_t noise."""

    kind: str
    alpha: Callable
    beta: Callable
    alpha_dot: Callable
    beta_dot: Callable

    def __post_init__(self):
        ts = np.linspace(0.0, 1.0, 257)
        a, b = np.asarray(self.alpha(ts), dtype=np.float64), np.asarray(self.beta(ts), dtype=np.float64)
        if abs(a[0] - 1.0) > 1e-9 or abs(b[0]) > 1e-9:
            raise ValueError("schedule must satisfy alpha(0)=1, beta(0)=0")
        if abs(a[-1]) > 1e-6 or abs(b[-1] - 1.0) > 1e-9:
            raise ValueError("schedule must satisfy alpha(1)~0, beta(1)=1")
        if (np.diff(a) > 1e-12).any() or (np.diff(b) < -1e-12).any():
            raise ValueError("alpha must be nonincreasing and beta nondecreasing")
        if self.kind.startswith("vp"):
            err = np.abs(a**2 + b**2 - 1.0).max()
            if err > 1e-9:
                raise ValueError(f"variance-preserving identity violated by {err:.3e}")


def vp_trig_schedule() -> NoiseSchedule:
    """Variance-preserving trigonometric schedule: alpha=cos(pi t/2), beta=sin(pi t/2)."""
    half_pi = np.pi / 2.0
    return NoiseSchedule(
        kind="vp-trig",
        alpha=lambda t: np.cos(half_pi * np.asarray(t, dtype=np.float64)),
        beta=lambda t: np.sin(half_pi * np.asarray(t, dtype=np.float64)),
        alpha_dot=lambda t: -half_pi * np.sin(half_pi * np.asarray(t, dtype=np.float64)),
        beta_dot=lambda t: half_pi * np.cos(half_pi * np.asarray(t, dtype=np.float64)),
    )


def schedule_from_name(name: str) -> NoiseSchedule:
    if name == "vp-trig":
        return vp_trig_schedule()
    raise ValueError(f"unknown noise schedule {name!r}")


@dataclass
class DiffusionBatchState:
    """One sampled training state: clean latents, noise, times, and the mix."""

    x0: LatentBatch
    eps: np.ndarray
    t: np.ndarray
    xt: np.ndarray


def forward_diffuse(
    x0: LatentBatch, t: np.ndarray, eps: np.ndarray, schedule: NoiseSchedule
) -> DiffusionBatchState:
    """Mix clean latents with noise at per-sample times t in (0, 1)."""
    t = np.asarray(t, dtype=np.float64)
    eps = np.asarray(eps)
    if eps.shape != x0.data.shape:
        raise ValueError(f"eps shape {eps.shape} must match latents {x0.data.shape}")
    if t.shape != (x0.data.shape[0],):
        raise ValueError(f"t must have shape ({x0.data.shape[0]},), got {t.shape}")
    if (t <= 0).any() or (t >= 1).any():
        raise ValueError("t must lie strictly inside (0, 1)")
    a = np.asarray(schedule.alpha(t))[:, None, None, None]
    b = np.asarray(schedule.beta(t))[:, None, None, None]
    xt = a * x0.data + b * eps
    return DiffusionBatchState(x0=x0, eps=eps, t=t, xt=xt)


class _TimeEmbedding(nn.Module):
    def __init__(self, width: int):
        super().__init__()
        self.width = width
        self.mlp = nn.Sequential(nn.Linear(width, width), nn.SiLU(), nn.Linear(width, width))

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        half = self.width // 2
        freqs = torch.exp(
            -math.log(10000.0) * torch.arange(half, dtype=torch.float32) / half
        )
        args = 1000.0 * t.float()[:, None] * freqs[None, :]
        emb = torch.cat([torch.cos(args), torch.sin(args)], dim=-1)
        if self.width % 2:
            emb = F.pad(emb, (0, 1))
        return self.mlp(emb)


class _Block(nn.Module):
    """Pre-norm transformer block with adaptive shift/scale/gate conditioning."""

    def __init__(self, width: int, heads: int, mlp_ratio: int = 4):
        super().__init__()
        if width % heads != 0:
            raise ValueError(f"width {width} not divisible by heads {heads}")
        self.heads = heads
        self.norm1 = nn.LayerNorm(width, elementwise_affine=False)
        self.qkv = nn.Linear(width, 3 * width)
        self.proj = nn.Linear(width, width)
        self.norm2 = nn.LayerNorm(width, elementwise_affine=False)
        self.mlp = nn.Sequential(
            nn.Linear(width, mlp_ratio * width), nn.SiLU(), nn.Linear(mlp_ratio * width, width)
        )
        self.modulation = nn.Linear(width, 6 * width)
        nn.init.zeros_(self.modulation.weight)
        nn.init.zeros_(self.modulation.bias)

    def forward(self, x: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        n, tokens, width = x.shape
        sh1, sc1, g1, sh2, sc2, g2 = self.modulation(cond)[:, None, :].chunk(6, dim=-1)
        h = self.norm1(x) * (1 + sc1) + sh1
        qkv = self.qkv(h).reshape(n, tokens, 3, self.heads, width // self.heads)
        q, k, v = qkv.permute(2, 0, 3, 1, 4).unbind(0)
        attn = F.scaled_dot_product_attention(q, k, v)
        attn = attn.transpose(1, 2).reshape(n, tokens, width)
        x = x + g1 * self.proj(attn)
        h = self.norm2(x) * (1 + sc2) + sh2
        return x + g2 * self.mlp(h)


class DenoiserModel(nn.Module):
    """Noise-prediction transformer over (h*w) latent tokens of dimension c
    (one token per latent pixel), with time and class conditioning."""

    def __init__(
        self,
        spec: LatentSpec,
        latent_size: tuple[int, int],
        n_classes: int,
        width: int = 256,
        depth: int = 6,
        heads: int = 8,
        mlp_ratio: int = 4,
    ):
        super().__init__()
        self.spec = spec
        self.latent_size = tuple(latent_size)
        self.n_classes = n_classes
        self.width = width
        tokens = latent_size[0] * latent_size[1]
        self.in_proj = nn.Linear(spec.channels, width)
        self.pos_emb = nn.Parameter(torch.zeros(1, tokens, width))
        nn.init.normal_(self.pos_emb, std=0.02)
        self.time_emb = _TimeEmbedding(width)
        # Final index is the null (unconditional) class.
        self.label_emb = nn.Embedding(n_classes + 1, width)
        self.blocks = nn.ModuleList(_Block(width, heads, mlp_ratio) for _ in range(depth))
        self.final_norm = nn.LayerNorm(width, elementwise_affine=False)
        self.final_mod = nn.Linear(width, 2 * width)
        nn.init.zeros_(self.final_mod.weight)
        nn.init.zeros_(self.final_mod.bias)
        self.out_proj = nn.Linear(width, spec.channels)
        nn.init.zeros_(self.out_proj.weight)
        nn.init.zeros_(self.out_proj.bias)

    @property
    def null_label(self) -> int:
        return self.n_classes

    def forward(
        self, x: torch.Tensor, t: torch.Tensor, labels: torch.Tensor | None = None
    ) -> torch.Tensor:
        n, h, w, c = x.shape
        if (h, w) != self.latent_size or c != self.spec.channels:
            raise ValueError(
                f"latent shape {(h, w, c)} does not match model "
                f"{(*self.latent_size, self.spec.channels)}"
            )
        x = x.to(self.in_proj.weight.dtype)
        if labels is None:
            labels = torch.full((n,), self.null_label, dtype=torch.long)
        tokens = self.in_proj(x.reshape(n, h * w, c)) + self.pos_emb
        cond = self.time_emb(t) + self.label_emb(labels)
        for block in self.blocks:
            tokens = block(tokens, cond)
        shift, scale = self.final_mod(cond)[:, None, :].chunk(2, dim=-1)
        tokens = self.final_norm(tokens) * (1 + scale) + shift
        return self.out_proj(tokens).reshape(n, h, w, c)


def denoising_loss_t(
    model, xt: torch.Tensor, t: torch.Tensor, eps: torch.Tensor,
    labels: torch.Tensor | None = None,
) -> torch.Tensor:
    """Mean squared error between injected and predicted noise."""
    pred = model(xt, t, labels)
    if not torch.isfinite(pred).all():
        raise TrainingDiverged("denoiser produced non-finite prediction",
                               {"t_min": float(t.min()), "t_max": float(t.max())})
    return (eps - pred).square().mean()


def augmented_denoising_loss_t(
    model, xt: torch.Tensor, t: torch.Tensor, eps: torch.Tensor,
    mask: ChannelMask, labels: torch.Tensor | None = None,
    normalization: str = "all",
) -> torch.Tensor:
    """Masked noise-prediction objective: the model sees the prefix-masked
    input and the error is taken on masked target vs masked prediction.

    `normalization="all"` averages over every element (zeroed channels
    included), matching the unmasked loss's denominator; "active" divides by
    the unmasked element count only.
    """
    if mask.channels != xt.shape[-1]:
        raise ValueError(f"mask has {mask.channels} channels, latents have {xt.shape[-1]}")
    if normalization not in ("all", "active"):
        raise ValueError(f"normalization must be 'all' or 'active', got {normalization!r}")
    bits = torch.from_numpy(mask.bits).view(1, 1, 1, -1)
    pred = model(xt * bits, t, labels)
    if not torch.isfinite(pred).all():
        raise TrainingDiverged("denoiser produced non-finite prediction",
                               {"channel_count": mask.active})
    sq = ((eps - pred) * bits).square()
    if normalization == "all":
        return sq.mean()
    return sq.sum() / (sq.numel() / mask.channels * mask.active)


def _state_tensors(state: DiffusionBatchState):
    # Dtypes are preserved so float64 states stay float64 end to end;
    # DenoiserModel casts its own input to the parameter dtype.
    xt = torch.from_numpy(np.ascontiguousarray(state.xt))
    eps = torch.from_numpy(np.ascontiguousarray(state.eps))
    t = torch.from_numpy(np.ascontiguousarray(state.t))
    return xt, eps, t


def _label_tensor(labels) -> torch.Tensor | None:
    if labels is None:
        return None
    return torch.from_numpy(np.asarray(labels)).long()


def denoising_loss(model, state: DiffusionBatchState, labels=None) -> float:
    xt, eps, t = _state_tensors(state)
    with torch.no_grad():
        return float(denoising_loss_t(model, xt, t, eps, _label_tensor(labels)))


def augmented_denoising_loss(
    model, state: DiffusionBatchState, labels=None, mask: ChannelMask | None = None,
    normalization: str = "all",
) -> float:
    if mask is None:
        raise ValueError("a channel mask is required")
    xt, eps, t = _state_tensors(state)
    with torch.no_grad():
        return float(
            augmented_denoising_loss_t(model, xt, t, eps, mask, _label_tensor(labels), normalization)
        )


@dataclass
class DiffusionStepReport:
    step: int
    loss: float
    channel_count: int | None
    t_mean: float
    t_min: float
    t_max: float


class DiffusionTrainer:
    """Owns the denoiser, optimizer, and random sources for one training run."""

    def __init__(
        self,
        model: DenoiserModel,
        schedule: NoiseSchedule,
        lr: float = 1e-4,
        augmented: bool = True,
        loss_normalization: str = "all",
        time_epsilon: float = 1e-3,
        seed: int = 0,
        grid_weights: tuple[float, ...] | None = None,
        lr_decay: str = "none",
        total_steps: int | None = None,
        ema_decay: float = 0.0,
    ):
        if loss_normalization not in ("all", "active"):
            raise ValueError(f"loss_normalization must be 'all' or 'active'")
        if lr_decay not in ("none", "cosine"):
            raise ValueError(f"lr_decay must be 'none' or 'cosine', got {lr_decay!r}")
        if lr_decay == "cosine" and not total_steps:
            raise ValueError("cosine lr decay requires total_steps")
        if not (0.0 <= ema_decay < 1.0):
            raise ValueError(f"ema_decay must lie in [0, 1), got {ema_decay}")
        self.model = model
        self.schedule = schedule
        self.augmented = augmented
        self.loss_normalization = loss_normalization
        self.time_epsilon = time_epsilon
        self.grid_weights = grid_weights
        self.base_lr = lr
        self.lr_decay = lr_decay
        self.total_steps = total_steps
        self.ema_decay = ema_decay
        self.ema_model = None
        if ema_decay > 0.0:
            self.ema_model = copy.deepcopy(model)
            self.ema_model.requires_grad_(False)
            self.ema_model.eval()
        self.optimizer = torch.optim.Adam(model.parameters(), lr=lr)
        self.np_rng = np.random.default_rng(seed)
        self.torch_gen = torch.Generator().manual_seed(seed)
        self.step_count = 0

    @property
    def eval_model(self) -> DenoiserModel:
        """The model to sample/evaluate with (EMA weights when enabled)."""
        return self.ema_model if self.ema_model is not None else self.model

    def _update_ema(self) -> None:
        if self.ema_model is None:
            return
        with torch.no_grad():
            for p_ema, p in zip(self.ema_model.parameters(), self.model.parameters()):
                p_ema.mul_(self.ema_decay).add_(p, alpha=1.0 - self.ema_decay)

    def _apply_lr(self) -> None:
        if self.lr_decay == "cosine":
            frac = min(self.step_count / self.total_steps, 1.0)
            lr = self.base_lr * 0.5 * (1.0 + math.cos(math.pi * frac))
            for group in self.optimizer.param_groups:
                group["lr"] = lr

    def step(self, x0: torch.Tensor, labels: torch.Tensor | None = None) -> DiffusionStepReport:
        """One optimizer update on a batch of standardized clean latents [B, h, w, c]."""
        n = x0.shape[0]
        lo = self.time_epsilon
        t = lo + (1.0 - 2.0 * lo) * torch.rand(n, generator=self.torch_gen)
        eps = torch.randn(x0.shape, generator=self.torch_gen)
        t_np = t.double().numpy()
        a = torch.from_numpy(np.asarray(self.schedule.alpha(t_np))).float().view(n, 1, 1, 1)
        b = torch.from_numpy(np.asarray(self.schedule.beta(t_np))).float().view(n, 1, 1, 1)
        xt = a * x0 + b * eps

        channel_count = None
        if self.augmented:
            channel_count = sample_channel_count(self.model.spec, self.np_rng, self.grid_weights)
            mask = make_prefix_mask(self.model.spec.channels, channel_count)
            loss = augmented_denoising_loss_t(
                self.model, xt, t, eps, mask, labels, self.loss_normalization
            )
        else:
            loss = denoising_loss_t(self.model, xt, t, eps, labels)
        if not torch.isfinite(loss):
            raise TrainingDiverged(
                "non-finite diffusion loss",
                {"step": self.step_count, "channel_count": channel_count,
                 "t_min": float(t.min()), "t_max": float(t.max())},
            )
        self._apply_lr()
        self.optimizer.zero_grad()
        loss.backward()
        self.optimizer.step()
        self._update_ema()
        self.step_count += 1
        return DiffusionStepReport(
            step=self.step_count,
            loss=float(loss.detach()),
            channel_count=channel_count,
            t_mean=float(t.mean()),
            t_min=float(t.min()),
            t_max=float(t.max()),
        )


def sample_latents(
    model: DenoiserModel,
    schedule: NoiseSchedule,
    n: int,
    labels=None,
    steps: int = 24,
    rng: np.random.Generator | None = None,
    eps_clip: float = 1e-2,
    chunk_size: int = 1024,
) -> LatentBatch:
    """Deterministic Euler integration of the probability-flow direction from
    t=1 noise down to t=0; returns full-channel standardized latents.

    Prefix masking is a training-time augmentation only; generation always
    runs with all channels.
    """
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    rng = rng if rng is not None else np.random.default_rng(0)
    h, w = model.latent_size
    c = model.spec.channels
    noise = rng.standard_normal((n, h, w, c)).astype(np.float32)
    label_t = _label_tensor(labels)
    ts = np.linspace(1.0 - eps_clip, 0.0, steps + 1)
    out = np.empty((n, h, w, c), dtype=np.float32)
    was_training = model.training
    model.eval()
    with torch.no_grad():
        for start in range(0, n, chunk_size):
            x = torch.from_numpy(noise[start : start + chunk_size]).clone()
            chunk_labels = label_t[start : start + chunk_size] if label_t is not None else None
            for k in range(steps):
                t_k = float(ts[k])
                a = float(schedule.alpha(t_k))
                b = float(schedule.beta(t_k))
                a_dot = float(schedule.alpha_dot(t_k))
                b_dot = float(schedule.beta_dot(t_k))
                t_vec = torch.full((x.shape[0],), t_k)
                pred = model(x, t_vec, chunk_labels)
                x0_hat = (x - b * pred) / a
                drift = a_dot * x0_hat + b_dot * pred
                x = x + float(ts[k + 1] - ts[k]) * drift
            out[start : start + x.shape[0]] = x.numpy()
    model.train(was_training)
    return LatentBatch(data=out, spec=model.spec)
