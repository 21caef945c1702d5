"""Datasets: synthetic shapes generator and raster-directory ingestion.

The shapes generator provides a controllable split between coarse object
structure (shape, color, position, scale) and fine detail (per-pixel
texture noise), which is what the latent-space diagnostics measure.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

SHAPE_NAMES = ("square", "circle", "triangle")

# Sub-saturated palette so additive texture noise survives clipping.
COLOR_VALUES = (
    (0.85, 0.25, 0.25),
    (0.25, 0.80, 0.30),
    (0.30, 0.40, 0.85),
    (0.85, 0.75, 0.25),
    (0.70, 0.30, 0.80),
    (0.25, 0.75, 0.75),
)


@dataclass(frozen=True)
class SyntheticShapesSpec:
    """Parameters of the synthetic shapes dataset.

    Classes are the cross product of shape type and color; the first
    (primary) object in each image determines the label and is drawn last
    and largest, so the label is recoverable from pixels.
    """

    image_size: int = 32
    n_shape_types: int = 3
    n_colors: int = 3
    objects_min: int = 1
    objects_max: int = 3
    texture_amplitude: float = 0.15
    texture_kind: str = "noise"  # "noise" (per-pixel) or "grating" (parametric)
    size: int = 2048
    seed: int = 0

    def __post_init__(self):
        if self.image_size < 8:
            raise ValueError(f"image_size must be >= 8, got {self.image_size}")
        if not (1 <= self.n_shape_types <= len(SHAPE_NAMES)):
            raise ValueError(f"n_shape_types must be in [1, {len(SHAPE_NAMES)}]")
        if not (1 <= self.n_colors <= len(COLOR_VALUES)):
            raise ValueError(f"n_colors must be in [1, {len(COLOR_VALUES)}]")
        if not (1 <= self.objects_min <= self.objects_max):
            raise ValueError("need 1 <= objects_min <= objects_max")
        if self.texture_amplitude < 0:
            raise ValueError("texture_amplitude must be nonnegative")
        if self.texture_kind not in ("noise", "grating"):
            raise ValueError(f"texture_kind must be 'noise' or 'grating', got {self.texture_kind!r}")
        if self.size < 1:
            raise ValueError(f"dataset size must be positive, got {self.size}")

    @property
    def n_classes(self) -> int:
        return self.n_shape_types * self.n_colors

    def class_name(self, label: int) -> str:
        shape = SHAPE_NAMES[label // self.n_colors]
        return f"{shape}_c{label % self.n_colors}"


@dataclass
class ImageDataset:
    """Images in [-1, 1] channels-last float32, with integer class labels."""

    images: np.ndarray
    labels: np.ndarray
    n_classes: int
    class_names: tuple[str, ...] = ()
    primary: list = field(default_factory=list)

    def __post_init__(self):
        if self.images.ndim != 4 or self.images.shape[-1] != 3:
            raise ValueError(f"images must be [N, H, W, 3], got {self.images.shape}")
        if len(self.labels) != len(self.images):
            raise ValueError("labels length must match images")

    def __len__(self) -> int:
        return len(self.images)

    def split(self, heldout_fraction: float) -> tuple["ImageDataset", "ImageDataset"]:
        """Deterministic tail split into (train, heldout)."""
        if not (0.0 < heldout_fraction < 1.0):
            raise ValueError(f"heldout_fraction must be in (0, 1), got {heldout_fraction}")
        n_held = max(1, int(round(len(self) * heldout_fraction)))
        n_train = len(self) - n_held
        if n_train < 1:
            raise ValueError("heldout_fraction leaves no training images")
        return self._take(slice(0, n_train)), self._take(slice(n_train, len(self)))

    def _take(self, sl: slice) -> "ImageDataset":
        return ImageDataset(
            images=self.images[sl],
            labels=self.labels[sl],
            n_classes=self.n_classes,
            class_names=self.class_names,
            primary=self.primary[sl] if self.primary else [],
        )


def _shape_mask(shape: str, size: int, cx: float, cy: float, scale: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    if shape == "square":
        return (np.abs(xx - cx) <= scale) & (np.abs(yy - cy) <= scale)
    if shape == "circle":
        return (xx - cx) ** 2 + (yy - cy) ** 2 <= scale**2
    if shape == "triangle":
        return (
            (yy >= cy - scale)
            & (yy <= cy + scale)
            & (np.abs(xx - cx) <= 0.6 * (yy - (cy - scale)))
        )
    raise ValueError(f"unknown shape {shape!r}")


def _texture(spec: SyntheticShapesSpec, rng: np.random.Generator) -> np.ndarray:
    """High-frequency detail at the given amplitude.

    "noise" is per-pixel uniform noise (unpredictable pixel detail);
    "grating" draws from a small discrete catalog (frequency pair, sign,
    quantized phase) plus faint broadband noise, so the detail content is
    fully encodable by a small latent.
    """
    s = spec.image_size
    if spec.texture_kind == "noise":
        return spec.texture_amplitude * rng.uniform(-1.0, 1.0, size=(s, s))
    yy, xx = np.mgrid[0:s, 0:s].astype(np.float64)
    freqs = (s // 4, (3 * s) // 8)
    fx = float(freqs[rng.integers(0, 2)]) * float(rng.choice([-1.0, 1.0]))
    fy = float(freqs[rng.integers(0, 2)])
    phase = np.pi / 4 + float(rng.integers(0, 4)) * np.pi / 2
    tex = spec.texture_amplitude * np.sin(2.0 * np.pi * (fx * xx + fy * yy) / s + phase)
    tex += 0.2 * spec.texture_amplitude * rng.uniform(-1.0, 1.0, size=(s, s))
    return tex


def _render_image(spec: SyntheticShapesSpec, rng: np.random.Generator) -> tuple[np.ndarray, int, dict]:
    s = spec.image_size
    background = 0.18 + 0.14 * rng.random()
    img = np.full((s, s, 3), background, dtype=np.float64)

    n_objects = int(rng.integers(spec.objects_min, spec.objects_max + 1))
    label = int(rng.integers(0, spec.n_classes))

    # Distractors first (small, behind), primary last (large, on top).
    for _ in range(n_objects - 1):
        d_label = int(rng.integers(0, spec.n_classes))
        d_scale = (0.08 + 0.06 * rng.random()) * s
        d_cx = rng.uniform(0.2 * s, 0.8 * s)
        d_cy = rng.uniform(0.2 * s, 0.8 * s)
        mask = _shape_mask(SHAPE_NAMES[d_label // spec.n_colors], s, d_cx, d_cy, d_scale)
        img[mask] = COLOR_VALUES[d_label % spec.n_colors]

    scale = (0.18 + 0.12 * rng.random()) * s
    cx = rng.uniform(0.3 * s, 0.7 * s)
    cy = rng.uniform(0.3 * s, 0.7 * s)
    mask = _shape_mask(SHAPE_NAMES[label // spec.n_colors], s, cx, cy, scale)
    img[mask] = COLOR_VALUES[label % spec.n_colors]

    if spec.texture_amplitude > 0:
        img += _texture(spec, rng)[..., None]

    img = np.clip(img, 0.0, 1.0) * 2.0 - 1.0
    geometry = {
        "cx": float(cx),
        "cy": float(cy),
        "scale": float(scale),
        "shape": SHAPE_NAMES[label // spec.n_colors],
        "color": int(label % spec.n_colors),
        "n_objects": n_objects,
    }
    return img.astype(np.float32), label, geometry


def generate_shapes_dataset(
    spec: SyntheticShapesSpec, out_dir: str | Path | None = None
) -> ImageDataset:
    """Render the dataset deterministically from the spec's seed.

    When `out_dir` is given, also writes PNGs plus index.csv (label and
    primary-object geometry per image) and metadata.json (the spec).
    """
    rng = np.random.default_rng(spec.seed)
    images = np.empty((spec.size, spec.image_size, spec.image_size, 3), dtype=np.float32)
    labels = np.empty(spec.size, dtype=np.int64)
    primary = []
    for i in range(spec.size):
        images[i], labels[i], geom = _render_image(spec, rng)
        primary.append(geom)

    dataset = ImageDataset(
        images=images,
        labels=labels,
        n_classes=spec.n_classes,
        class_names=tuple(spec.class_name(k) for k in range(spec.n_classes)),
        primary=primary,
    )

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "metadata.json", "w") as fh:
            json.dump({"format_version": 1, "spec": spec.__dict__}, fh, indent=2, sort_keys=True)
        with open(out / "index.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["filename", "label", "class_name", "shape", "color", "cx", "cy", "scale", "n_objects"]
            )
            for i in range(spec.size):
                name = f"img_{i:06d}.png"
                g = primary[i]
                writer.writerow(
                    [name, int(labels[i]), spec.class_name(int(labels[i])),
                     g["shape"], g["color"], f"{g['cx']:.4f}", f"{g['cy']:.4f}",
                     f"{g['scale']:.4f}", g["n_objects"]]
                )
                save_image(images[i], out / name)
    return dataset


def save_image(image: np.ndarray, path: str | Path) -> None:
    """Write a single [-1, 1] float image as 8-bit PNG."""
    arr = np.clip((np.asarray(image) + 1.0) * 127.5, 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path)


def load_image_directory(path: str | Path, resolution: int) -> ImageDataset:
    """Load a directory of raster images, center-cropped and resized.

    Labels come from index.csv (filename,label columns) when present,
    otherwise every image gets label 0.
    """
    root = Path(path)
    if not root.is_dir():
        raise ValueError(f"{root} is not a directory")
    label_map: dict[str, int] = {}
    index = root / "index.csv"
    if index.exists():
        with open(index, newline="") as fh:
            for row in csv.DictReader(fh):
                label_map[row["filename"]] = int(row["label"])
    files = sorted(
        p for p in root.iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg", ".bmp")
    )
    if not files:
        raise ValueError(f"no raster images found in {root}")
    images = np.empty((len(files), resolution, resolution, 3), dtype=np.float32)
    labels = np.zeros(len(files), dtype=np.int64)
    for i, p in enumerate(files):
        img = Image.open(p).convert("RGB")
        side = min(img.size)
        left = (img.width - side) // 2
        top = (img.height - side) // 2
        img = img.crop((left, top, left + side, top + side)).resize(
            (resolution, resolution), Image.BILINEAR
        )
        images[i] = np.asarray(img, dtype=np.float32) / 127.5 - 1.0
        labels[i] = label_map.get(p.name, 0)
    n_classes = int(labels.max()) + 1
    return ImageDataset(images=images, labels=labels, n_classes=n_classes)


def batch_indices(rng: np.random.Generator, n: int, batch_size: int) -> np.ndarray:
    """Sample a with-replacement batch of indices; rng state is the cursor."""
    return rng.integers(0, n, size=min(batch_size, n))
