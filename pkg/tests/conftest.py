import numpy as np
import pytest
import torch

import prefixdiff as pd
from prefixdiff.data import batch_indices
from prefixdiff.latents import LatentSpec, default_channel_grid


@pytest.fixture(scope="session")
def shapes_small():
    """512 small images with labels, split into train/heldout."""
    ds = pd.generate_shapes_dataset(pd.SyntheticShapesSpec(
        image_size=16, n_shape_types=3, n_colors=3, objects_min=1, objects_max=2,
        texture_amplitude=0.15, size=512, seed=0))
    train, heldout = ds.split(0.125)
    return ds, train, heldout


@pytest.fixture(scope="session")
def tiny_extractor(shapes_small):
    _, train, _ = shapes_small
    return pd.train_feature_extractor(
        train.images, train.labels, train.n_classes,
        width=8, steps=80, batch_size=32, lr=1e-3, seed=0,
    )


@pytest.fixture(scope="session")
def tiny_trained_ae(shapes_small, tiny_extractor):
    """A briefly trained structured autoencoder (enough to be non-degenerate)."""
    _, train, _ = shapes_small
    spec = LatentSpec(4, 16, default_channel_grid(16))
    torch.manual_seed(0)
    model = pd.AutoencoderModel(spec, base_width=16)
    trainer = pd.AutoencoderTrainer(
        model, pd.ReconLossWeights(1.0, 0.1), tiny_extractor,
        lr=1e-3, structured=True, seed=0,
    )
    rng = np.random.default_rng(0)
    for _ in range(250):
        trainer.step(train.images[batch_indices(rng, len(train), 16)])
    model.latent_stats = pd.compute_latent_stats(model, train.images)
    return model
