"""Prefix-channel-masked autoencoder latents, augmented diffusion training,
and the latent-space diagnostics that go with them."""

from .latents import (
    ChannelMask,
    LatentBatch,
    LatentSpec,
    apply_channel_mask,
    default_channel_grid,
    make_prefix_mask,
    sample_channel_count,
)
from .autoencoder import (
    AutoencoderModel,
    AutoencoderTrainer,
    ImageBatch,
    LatentStats,
    ReconLossWeights,
    TrainingDiverged,
    compute_latent_stats,
    decode,
    encode,
    finetune_decoder_for_prefix,
    reconstruction_loss,
)
from .diffusion import (
    DenoiserModel,
    DiffusionBatchState,
    DiffusionTrainer,
    NoiseSchedule,
    augmented_denoising_loss,
    denoising_loss,
    forward_diffuse,
    sample_latents,
    vp_trig_schedule,
)
from .analysis import (
    ChannelStats,
    PrefixCurve,
    channel_average_map,
    per_channel_stats,
    prefix_reconstruction_curve,
    structure_separation_score,
)
from .metrics import (
    FeatureExtractor,
    FrechetStats,
    extract_features,
    frechet_distance,
    measure_throughput,
    psnr,
    train_feature_extractor,
)
from .config import ExperimentConfig, desk_config, from_json, load_config, save_config, to_json
from .data import ImageDataset, SyntheticShapesSpec, generate_shapes_dataset
from .runner import run_experiment

__version__ = "0.1.0"

__all__ = [
    "AutoencoderModel",
    "AutoencoderTrainer",
    "ChannelMask",
    "ChannelStats",
    "DenoiserModel",
    "DiffusionBatchState",
    "DiffusionTrainer",
    "ExperimentConfig",
    "FeatureExtractor",
    "FrechetStats",
    "ImageBatch",
    "ImageDataset",
    "LatentBatch",
    "LatentSpec",
    "LatentStats",
    "NoiseSchedule",
    "PrefixCurve",
    "ReconLossWeights",
    "SyntheticShapesSpec",
    "TrainingDiverged",
    "apply_channel_mask",
    "augmented_denoising_loss",
    "channel_average_map",
    "compute_latent_stats",
    "decode",
    "default_channel_grid",
    "denoising_loss",
    "desk_config",
    "encode",
    "extract_features",
    "finetune_decoder_for_prefix",
    "forward_diffuse",
    "frechet_distance",
    "from_json",
    "generate_shapes_dataset",
    "load_config",
    "make_prefix_mask",
    "measure_throughput",
    "per_channel_stats",
    "prefix_reconstruction_curve",
    "psnr",
    "reconstruction_loss",
    "run_experiment",
    "sample_channel_count",
    "sample_latents",
    "save_config",
    "structure_separation_score",
    "to_json",
    "train_feature_extractor",
    "vp_trig_schedule",
]
