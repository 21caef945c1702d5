"""Quality metrics: Fréchet feature distance with a locally trained
extractor, PSNR, and training-throughput measurement."""

from __future__ import annotations

import hashlib
import time
import warnings
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn


def _to_nchw(images: np.ndarray | torch.Tensor) -> torch.Tensor:
    if isinstance(images, torch.Tensor):
        t = images.float()
    else:
        t = torch.from_numpy(np.ascontiguousarray(images)).float()
    if t.ndim != 4 or t.shape[-1] != 3:
        raise ValueError(f"expected [N, H, W, 3] images, got {tuple(t.shape)}")
    return t.permute(0, 3, 1, 2).contiguous()


class FeatureExtractor(nn.Module):
    """Small frozen convolutional classifier used for perceptual distance and
    Fréchet statistics. Train once per dataset via `train_feature_extractor`."""

    def __init__(self, n_classes: int, width: int = 32, in_channels: int = 3):
        super().__init__()
        if 2 * width < 16:
            raise ValueError(f"feature dimension 2*width must be >= 16, got {2 * width}")
        self.width = width
        self.n_classes = n_classes
        self.block1 = nn.Sequential(
            nn.Conv2d(in_channels, width, 3, padding=1),
            nn.GroupNorm(min(8, width), width),
            nn.SiLU(),
        )
        self.block2 = nn.Sequential(
            nn.Conv2d(width, 2 * width, 3, stride=2, padding=1),
            nn.GroupNorm(min(8, 2 * width), 2 * width),
            nn.SiLU(),
        )
        self.block3 = nn.Sequential(
            nn.Conv2d(2 * width, 2 * width, 3, stride=2, padding=1),
            nn.GroupNorm(min(8, 2 * width), 2 * width),
            nn.SiLU(),
        )
        self.head = nn.Linear(2 * width, n_classes)
        self._frozen = False

    @property
    def feature_dim(self) -> int:
        return 2 * self.width

    def stages(self, x: torch.Tensor) -> list[torch.Tensor]:
        h1 = self.block1(x)
        h2 = self.block2(h1)
        h3 = self.block3(h2)
        return [h1, h2, h3]

    def features_t(self, x: torch.Tensor) -> torch.Tensor:
        return self.stages(x)[-1].mean(dim=(2, 3))

    def logits(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.features_t(x))

    def perceptual_distance(self, x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
        """Mean squared distance across intermediate feature maps."""
        dist = x.new_zeros(())
        fx, fy = self.stages(x), self.stages(y)
        for a, b in zip(fx, fy):
            dist = dist + (a - b).square().mean()
        return dist / len(fx)

    def freeze(self) -> "FeatureExtractor":
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()
        self._frozen = True
        return self

    @property
    def frozen(self) -> bool:
        return self._frozen

    def param_hash(self) -> str:
        digest = hashlib.sha256()
        for name, tensor in sorted(self.state_dict().items()):
            digest.update(name.encode())
            digest.update(tensor.detach().cpu().numpy().tobytes())
        return digest.hexdigest()


def train_feature_extractor(
    images: np.ndarray,
    labels: np.ndarray,
    n_classes: int,
    width: int = 32,
    steps: int = 400,
    batch_size: int = 64,
    lr: float = 1e-3,
    seed: int = 0,
) -> FeatureExtractor:
    """Train the classifier on dataset labels, then freeze it."""
    torch.manual_seed(seed)
    net = FeatureExtractor(n_classes=n_classes, width=width, in_channels=images.shape[-1])
    opt = torch.optim.Adam(net.parameters(), lr=lr)
    rng = np.random.default_rng(seed)
    x_all = _to_nchw(images)
    y_all = torch.from_numpy(np.asarray(labels)).long()
    net.train()
    for _ in range(steps):
        idx = rng.integers(0, len(x_all), size=min(batch_size, len(x_all)))
        logits = net.logits(x_all[idx])
        loss = nn.functional.cross_entropy(logits, y_all[idx])
        opt.zero_grad()
        loss.backward()
        opt.step()
    return net.freeze()


def extract_features(net: FeatureExtractor, images: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Deterministic [N, d] features from the frozen extractor."""
    if not net.frozen:
        raise ValueError("feature extractor must be frozen before extraction")
    x = _to_nchw(images)
    out = []
    with torch.no_grad():
        for start in range(0, len(x), batch_size):
            out.append(net.features_t(x[start : start + batch_size]).numpy())
    return np.concatenate(out, axis=0).astype(np.float64)


@dataclass
class FrechetStats:
    """Sufficient statistics (mean, covariance, count) of a feature set."""

    mean: np.ndarray
    cov: np.ndarray
    n: int

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.cov = np.asarray(self.cov, dtype=np.float64)
        d = self.mean.shape[0]
        if self.cov.shape != (d, d):
            raise ValueError(f"cov must be ({d}, {d}), got {self.cov.shape}")
        if not np.allclose(self.cov, self.cov.T, atol=1e-10):
            raise ValueError("covariance must be symmetric")
        eigmin = float(np.linalg.eigvalsh(self.cov).min())
        if eigmin < -1e-8:
            raise ValueError(f"covariance not PSD: min eigenvalue {eigmin:.3e}")
        if self.n < d:
            warnings.warn(
                f"only {self.n} samples for {d}-dim features; covariance may be unstable",
                stacklevel=2,
            )

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @classmethod
    def from_features(cls, features: np.ndarray) -> "FrechetStats":
        feats = np.asarray(features, dtype=np.float64)
        if feats.ndim != 2:
            raise ValueError(f"features must be [N, d], got {feats.shape}")
        if len(feats) < 2:
            raise ValueError("need at least 2 samples for covariance")
        mean = feats.mean(axis=0)
        cov = np.cov(feats, rowvar=False)
        cov = (cov + cov.T) / 2.0
        return cls(mean=mean, cov=cov, n=len(feats))

    def merge(self, other: "FrechetStats") -> "FrechetStats":
        """Exact moment pooling of two disjoint sample sets."""
        if self.dim != other.dim:
            raise ValueError("dimension mismatch")
        n = self.n + other.n
        mean = (self.n * self.mean + other.n * other.mean) / n
        # Recover sums of squares from each (unbiased) covariance, pool, re-center.
        s_self = (self.n - 1) * self.cov + self.n * np.outer(self.mean, self.mean)
        s_other = (other.n - 1) * other.cov + other.n * np.outer(other.mean, other.mean)
        cov = (s_self + s_other - n * np.outer(mean, mean)) / (n - 1)
        cov = (cov + cov.T) / 2.0
        return FrechetStats(mean=mean, cov=cov, n=n)


def _sqrt_psd(mat: np.ndarray, clip_tol: float = -1e-6) -> np.ndarray:
    sym = (mat + mat.T) / 2.0
    vals, vecs = np.linalg.eigh(sym)
    if vals.min() < clip_tol:
        raise ValueError(
            f"matrix is not PSD within tolerance: eigenvalues {np.sort(vals)[:4]}"
        )
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def frechet_distance(a: FrechetStats, b: FrechetStats) -> float:
    """||mu_a - mu_b||^2 + tr(S_a + S_b - 2 (S_a S_b)^{1/2}).

    The matrix square root is taken by eigendecomposition of the
    symmetrized product, with small negative eigenvalues clipped.
    """
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")
    root_a = _sqrt_psd(a.cov)
    inner = root_a @ b.cov @ root_a
    sym = (inner + inner.T) / 2.0
    vals = np.linalg.eigvalsh(sym)
    if vals.min() < -1e-6:
        raise ValueError(
            f"product matrix not PSD within tolerance: eigenvalues {np.sort(vals)[:4]}"
        )
    trace_sqrt = float(np.sqrt(np.clip(vals, 0.0, None)).sum())
    diff = a.mean - b.mean
    dist = float(diff @ diff + np.trace(a.cov) + np.trace(b.cov) - 2.0 * trace_sqrt)
    return max(dist, 0.0)


PSNR_PEAK = 2.0
PSNR_CAP_DB = 99.0


def psnr(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Per-sample PSNR in dB for [-1, 1] images (peak 2.0), capped at 99 dB."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    mse = ((x - y) ** 2).reshape(len(x), -1).mean(axis=1)
    out = np.full(len(x), PSNR_CAP_DB)
    ok = mse >= 1e-12
    out[ok] = 10.0 * np.log10(PSNR_PEAK**2 / mse[ok])
    return np.minimum(out, PSNR_CAP_DB)


def psnr_from_mse(mse: float) -> float:
    if mse < 1e-12:
        return PSNR_CAP_DB
    return min(10.0 * np.log10(PSNR_PEAK**2 / mse), PSNR_CAP_DB)


@dataclass
class ThroughputReport:
    images_per_second: float
    std: float
    step_times: tuple[float, ...]


def measure_throughput(step_fn, warmup: int, measured: int, images_per_step: int) -> ThroughputReport:
    """Wall-clock images/second of `step_fn` over `measured` calls after warmup."""
    if measured < 1:
        raise ValueError(f"measured must be >= 1, got {measured}")
    if warmup < 0:
        raise ValueError(f"warmup must be >= 0, got {warmup}")
    for _ in range(warmup):
        step_fn()
    times = []
    for _ in range(measured):
        start = time.perf_counter()
        step_fn()
        times.append(time.perf_counter() - start)
    rates = np.array([images_per_step / t for t in times])
    return ThroughputReport(
        images_per_second=float(rates.mean()),
        std=float(rates.std()),
        step_times=tuple(times),
    )
