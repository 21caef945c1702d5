"""Latent-space geometry: channel grids, prefix masks, and mask application."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def default_channel_grid(channels: int) -> tuple[int, ...]:
    """Grid of partial channel counts ending at `channels`.

    Starts at channels // 4 with stride channels // 8 (both floored at 1),
    so a 16-channel latent gets (4, 6, 8, 10, 12, 14, 16).
    """
    if channels < 1:
        raise ValueError(f"channels must be positive, got {channels}")
    start = max(1, channels // 4)
    step = max(1, channels // 8)
    grid = list(range(start, channels, step))
    if not grid or grid[-1] != channels:
        grid.append(channels)
    return tuple(grid)


@dataclass(frozen=True)
class LatentSpec:
    """Geometry of a latent space: spatial ratio, channel count, and the grid
    of partial channel counts that masking may select from."""

    spatial_ratio: int
    channels: int
    channel_grid: tuple[int, ...]

    def __post_init__(self):
        if self.spatial_ratio < 1:
            raise ValueError(f"spatial_ratio must be positive, got {self.spatial_ratio}")
        if self.channels < 1:
            raise ValueError(f"channels must be positive, got {self.channels}")
        grid = tuple(int(g) for g in self.channel_grid)
        object.__setattr__(self, "channel_grid", grid)
        if len(grid) == 0:
            raise ValueError("channel_grid must be nonempty")
        if any(g <= 0 or g > self.channels for g in grid):
            raise ValueError(f"channel_grid entries must lie in (0, {self.channels}], got {grid}")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ValueError(f"channel_grid must be strictly increasing, got {grid}")
        if grid[-1] != self.channels:
            raise ValueError(
                f"channel_grid must end at channels={self.channels}, got {grid}"
            )


@dataclass(frozen=True, eq=False)
class ChannelMask:
    """Binary prefix mask over latent channels: `active` leading ones, zeros after."""

    channels: int
    active: int
    bits: np.ndarray = field(repr=False)

    def __post_init__(self):
        if not (0 < self.active <= self.channels):
            raise ValueError(
                f"active must lie in (0, {self.channels}], got {self.active}"
            )
        bits = np.asarray(self.bits, dtype=np.float32)
        if bits.shape != (self.channels,):
            raise ValueError(f"bits must have shape ({self.channels},), got {bits.shape}")
        expected = np.zeros(self.channels, dtype=np.float32)
        expected[: self.active] = 1.0
        if not np.array_equal(bits, expected):
            raise ValueError("bits must be a prefix mask: `active` ones then zeros")
        object.__setattr__(self, "bits", bits)

    @property
    def is_full(self) -> bool:
        return self.active == self.channels


def make_prefix_mask(channels: int, active: int) -> ChannelMask:
    """Mask with exactly `active` leading ones followed by zeros."""
    if not (0 < active <= channels):
        raise ValueError(f"active must lie in (0, {channels}], got {active}")
    bits = np.zeros(channels, dtype=np.float32)
    bits[:active] = 1.0
    return ChannelMask(channels=channels, active=active, bits=bits)


@dataclass
class LatentBatch:
    """Rank-4 channels-last array [batch, height, width, channels] of latents."""

    data: np.ndarray
    spec: LatentSpec

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 4:
            raise ValueError(f"latent data must be rank 4 [N, h, w, c], got shape {data.shape}")
        if data.shape[-1] != self.spec.channels:
            raise ValueError(
                f"channel axis has length {data.shape[-1]}, spec expects {self.spec.channels}"
            )
        if not np.isfinite(data).all():
            raise ValueError("latent data contains non-finite entries")
        self.data = data

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape


def sample_channel_count(
    spec: LatentSpec,
    rng: np.random.Generator,
    weights: tuple[float, ...] | None = None,
) -> int:
    """Draw a partial channel count from the spec's grid.

    Uniform over the grid by default; `weights` selects an alternative
    sampling policy (normalized internally).
    """
    grid = spec.channel_grid
    if len(grid) == 0:
        raise ValueError("channel grid is empty")
    if weights is None:
        idx = int(rng.integers(0, len(grid)))
    else:
        if len(weights) != len(grid):
            raise ValueError(
                f"weights length {len(weights)} does not match grid length {len(grid)}"
            )
        p = np.asarray(weights, dtype=np.float64)
        if (p < 0).any() or p.sum() <= 0:
            raise ValueError("weights must be nonnegative and sum to a positive value")
        idx = int(rng.choice(len(grid), p=p / p.sum()))
    return int(grid[idx])


def apply_channel_mask(z: LatentBatch, mask: ChannelMask) -> LatentBatch:
    """Multiply each channel of `z` by the corresponding mask bit."""
    if mask.channels != z.spec.channels:
        raise ValueError(
            f"mask has {mask.channels} channels, latent batch has {z.spec.channels}"
        )
    out = z.data * mask.bits.astype(z.data.dtype)
    return LatentBatch(data=out, spec=z.spec)
