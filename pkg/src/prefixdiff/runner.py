"""Experiment runner: stage pipeline, run directories, checkpoint/resume,
metrics logging, and the run-directory audit."""

from __future__ import annotations

import copy
import csv
import json
import shutil
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import analysis
from .autoencoder import (
    AutoencoderModel,
    AutoencoderTrainer,
    compute_latent_stats,
    decode,
    destandardize_latents,
    encode,
    masked_reconstruction_error,
    standardize_latents,
)
from .checkpoints import (
    CacheMismatchError,
    file_sha256,
    load_autoencoder_checkpoint,
    load_diffusion_checkpoint,
    load_extractor_checkpoint,
    load_latent_cache,
    save_autoencoder_checkpoint,
    save_diffusion_checkpoint,
    save_extractor_checkpoint,
    save_latent_cache,
)
from .config import ConfigError, ExperimentConfig, load_config, save_config, to_json
from .data import ImageDataset, batch_indices, generate_shapes_dataset, load_image_directory
from .diffusion import DenoiserModel, DiffusionTrainer, sample_latents, schedule_from_name
from .latents import LatentBatch
from .metrics import (
    FrechetStats,
    ThroughputReport,
    extract_features,
    frechet_distance,
    measure_throughput,
    psnr_from_mse,
    train_feature_extractor,
)

STAGES = ("data", "extractor", "ae", "cache", "diffusion", "sample", "eval")
MANIFEST_FORMAT_VERSION = 1
METRICS_HEADER = ["run_id", "step", "metric_name", "value", "n_samples", "extractor_hash"]


class AuditError(RuntimeError):
    """A run directory failed its completeness audit."""


@dataclass
class RunResult:
    run_dir: Path
    status: str  # "complete" or "paused"
    summary: dict


def resolve_out_root(config: ExperimentConfig) -> Path:
    import os

    return Path(os.environ.get("PREFIXDIFF_OUT_ROOT", config.out_root))


class _Run:
    """Filesystem handle for one run directory."""

    def __init__(self, config: ExperimentConfig, resume: bool):
        self.config = config
        self.dir = resolve_out_root(config) / config.name
        self.dir.mkdir(parents=True, exist_ok=True)
        (self.dir / "checkpoints").mkdir(exist_ok=True)
        (self.dir / "samples").mkdir(exist_ok=True)
        (self.dir / "analysis").mkdir(exist_ok=True)
        config_path = self.dir / "config.json"
        text = to_json(config)
        if config_path.exists():
            if config_path.read_text() != text:
                if resume:
                    raise ConfigError(
                        f"existing run at {self.dir} was created with a different config; "
                        "use a fresh run name or delete the directory"
                    )
                config_path.write_text(text)
        else:
            config_path.write_text(text)
        self.metrics_path = self.dir / "metrics.csv"
        if not self.metrics_path.exists():
            with open(self.metrics_path, "w", newline="") as fh:
                csv.writer(fh).writerow(METRICS_HEADER)

    def ckpt(self, name: str) -> Path:
        return self.dir / "checkpoints" / name

    def log_metric(self, step: int, name: str, value: float, n_samples: int | str = "",
                   extractor_hash: str = "") -> None:
        with open(self.metrics_path, "a", newline="") as fh:
            csv.writer(fh).writerow(
                [self.config.name, step, name, f"{value:.10g}", n_samples, extractor_hash]
            )

    def truncate_metrics(self, prefixes: tuple[str, ...], max_step: int) -> None:
        """Drop rows of the given metric families past the resume point."""
        with open(self.metrics_path, newline="") as fh:
            rows = list(csv.reader(fh))
        kept = [rows[0]]
        for row in rows[1:]:
            if row[2].startswith(prefixes) and int(row[1]) > max_step:
                continue
            kept.append(row)
        with open(self.metrics_path, "w", newline="") as fh:
            csv.writer(fh).writerows(kept)

    def read_metric(self, name: str) -> list[tuple[int, float]]:
        out = []
        with open(self.metrics_path, newline="") as fh:
            for row in csv.DictReader(fh):
                if row["metric_name"] == name:
                    out.append((int(row["step"]), float(row["value"])))
        return out

    def update_manifest(self) -> None:
        ckpt_dir = self.dir / "checkpoints"
        hashes = {
            p.name: file_sha256(p) for p in sorted(ckpt_dir.glob("*.pt"))
        }
        cache_header = ckpt_dir / "latent_cache" / "header.json"
        if cache_header.exists():
            hashes["latent_cache/header.json"] = file_sha256(cache_header)
        manifest = {
            "format_version": MANIFEST_FORMAT_VERSION,
            "run_id": self.config.name,
            "seed": self.config.seed,
            "config_hash": file_sha256(self.dir / "config.json"),
            "checkpoints": hashes,
        }
        (self.dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def build_dataset(config: ExperimentConfig) -> ImageDataset:
    if config.data.kind == "shapes":
        return generate_shapes_dataset(config.data.shapes)
    if config.data.kind == "directory":
        if not config.data.directory or not config.data.resolution:
            raise ConfigError("directory datasets need data.directory and data.resolution")
        return load_image_directory(config.data.directory, config.data.resolution)
    raise ConfigError(f"unknown dataset kind {config.data.kind!r}", "data.kind")


def _seed_everything(seed: int) -> None:
    torch.manual_seed(seed)
    np.random.seed(seed % 2**32)


def _eval_rng(seed: int, step: int, salt: int) -> np.random.Generator:
    return np.random.default_rng([seed, step, salt])


class _Budget:
    def __init__(self, limit: int | None):
        self.remaining = limit

    def take(self, n: int) -> int:
        """Claim up to n steps; 0 means the session budget is spent."""
        if self.remaining is None:
            return n
        granted = min(n, self.remaining)
        self.remaining -= granted
        return granted

    @property
    def exhausted(self) -> bool:
        return self.remaining is not None and self.remaining <= 0


def _stage_extractor(run: _Run, train: ImageDataset):
    path = run.ckpt("extractor.pt")
    cfg = run.config
    if cfg.reuse.extractor:
        src = Path(cfg.reuse.extractor)
        if not path.exists():
            shutil.copyfile(src, path)
    if path.exists():
        return load_extractor_checkpoint(path)
    net = train_feature_extractor(
        train.images, train.labels, train.n_classes,
        width=cfg.extractor.width, steps=cfg.extractor.steps,
        batch_size=cfg.extractor.batch_size, lr=cfg.extractor.lr, seed=cfg.seed,
    )
    save_extractor_checkpoint(path, net)
    run.update_manifest()
    return net


def _make_ae_trainer(cfg: ExperimentConfig, model: AutoencoderModel, extractor) -> AutoencoderTrainer:
    return AutoencoderTrainer(
        model, cfg.recon, extractor, lr=cfg.ae.lr,
        structured=cfg.ae.structured, seed=cfg.seed, grid_weights=cfg.ae.grid_weights,
        lr_decay=cfg.ae.lr_decay, total_steps=cfg.ae.steps,
    )


def _stage_ae(run: _Run, train: ImageDataset, extractor, budget: _Budget) -> AutoencoderModel | None:
    cfg = run.config
    path = run.ckpt("ae.pt")
    if cfg.reuse.autoencoder and not path.exists():
        shutil.copyfile(Path(cfg.reuse.autoencoder), path)
        run.update_manifest()

    data_rng = np.random.default_rng([cfg.seed, 11])
    if path.exists():
        model, payload = load_autoencoder_checkpoint(path)
        step = payload["step"]
        if step >= cfg.ae.steps and model.latent_stats is not None:
            return model
        trainer = _make_ae_trainer(cfg, model, extractor)
        if payload["optimizer"] is not None:
            trainer.optimizer.load_state_dict(payload["optimizer"])
        if payload["numpy_rng"] is not None:
            trainer.rng.bit_generator.state = payload["numpy_rng"]["trainer"]
            data_rng.bit_generator.state = payload["numpy_rng"]["data"]
        trainer.step_count = step
        run.truncate_metrics(("ae/",), step)
    else:
        _seed_everything(cfg.seed)
        model = AutoencoderModel(cfg.latent, base_width=cfg.ae.base_width)
        trainer = _make_ae_trainer(cfg, model, extractor)

    def save(step: int) -> None:
        save_autoencoder_checkpoint(
            path, model, step, trainer.optimizer,
            numpy_rng_state={
                "trainer": trainer.rng.bit_generator.state,
                "data": data_rng.bit_generator.state,
            },
        )
        run.update_manifest()

    while trainer.step_count < cfg.ae.steps:
        chunk = min(cfg.eval.checkpoint_every, cfg.ae.steps - trainer.step_count)
        granted = budget.take(chunk)
        if granted == 0:
            save(trainer.step_count)
            return None
        for _ in range(granted):
            idx = batch_indices(data_rng, len(train), cfg.ae.batch_size)
            report = trainer.step(train.images[idx])
            if report.step % cfg.eval.log_every == 0 or report.step == cfg.ae.steps:
                run.log_metric(report.step, "ae/total", report.total)
                for term, value in report.terms.items():
                    run.log_metric(report.step, f"ae/{term}", value)
        save(trainer.step_count)
        if granted < chunk:
            return None

    if model.latent_stats is None:
        model.latent_stats = compute_latent_stats(model, train.images)
        save(trainer.step_count)
    return model


def _stage_cache(run: _Run, model: AutoencoderModel, train: ImageDataset) -> tuple[np.ndarray, np.ndarray]:
    cache_dir = run.ckpt("latent_cache")
    ae_hash = file_sha256(run.ckpt("ae.pt"))
    stats_hash = model.latent_stats.hash()
    if (cache_dir / "header.json").exists():
        latents, labels, _ = load_latent_cache(cache_dir, stats_hash, ae_hash)
        return latents, labels
    z = encode(model, train.images)
    z_std = standardize_latents(z, model.latent_stats)
    save_latent_cache(cache_dir, z_std.data, train.labels, model.spec,
                      latent_stats_hash=stats_hash, ae_checkpoint_hash=ae_hash)
    run.update_manifest()
    return z_std.data, train.labels


def _real_feature_stats(run: _Run, extractor, train: ImageDataset) -> FrechetStats:
    path = run.ckpt("real_features.npz")
    if path.exists():
        blob = np.load(path)
        if str(blob["extractor_hash"]) == extractor.param_hash():
            return FrechetStats(mean=blob["mean"], cov=blob["cov"], n=int(blob["n"]))
    feats = extract_features(extractor, train.images)
    stats = FrechetStats.from_features(feats)
    np.savez(path, mean=stats.mean, cov=stats.cov, n=stats.n,
             extractor_hash=extractor.param_hash())
    return stats


def _fid_eval(
    run: _Run, step: int, model: DenoiserModel, schedule, ae: AutoencoderModel,
    extractor, real_stats: FrechetStats, n_classes: int,
) -> float:
    cfg = run.config
    n = cfg.eval.n_fid_samples
    rng = _eval_rng(cfg.seed, step, 23)
    labels = rng.integers(0, n_classes, size=n)
    z = sample_latents(
        model, schedule, n, labels=labels, steps=cfg.sampling.steps,
        rng=rng, eps_clip=cfg.sampling.eps_clip,
    )
    images = decode(ae, destandardize_latents(z, ae.latent_stats))
    feats = extract_features(extractor, images.data)
    fd = frechet_distance(FrechetStats.from_features(feats), real_stats)
    run.log_metric(step, "fid_proxy", fd, n_samples=n, extractor_hash=extractor.param_hash())
    return fd


def _stage_diffusion(
    run: _Run, latents: np.ndarray, labels: np.ndarray, n_classes: int,
    ae: AutoencoderModel, extractor, budget: _Budget,
) -> DenoiserModel | None:
    cfg = run.config
    schedule = schedule_from_name(cfg.diffusion.schedule)
    real_stats = _real_feature_stats(run, extractor, _train_view(run))
    path = run.ckpt("diffusion.pt")
    latent_size = (latents.shape[1], latents.shape[2])
    data_rng = np.random.default_rng([cfg.seed, 13])

    if path.exists():
        model, payload = load_diffusion_checkpoint(path)
        step = payload["step"]
        trainer = _make_diffusion_trainer(cfg, model, schedule)
        if payload["optimizer"] is not None:
            trainer.optimizer.load_state_dict(payload["optimizer"])
        if payload["numpy_rng"] is not None:
            trainer.np_rng.bit_generator.state = payload["numpy_rng"]["trainer"]
            data_rng.bit_generator.state = payload["numpy_rng"]["data"]
        if payload["torch_rng"] is not None:
            trainer.torch_gen.set_state(payload["torch_rng"])
        trainer.step_count = step
        if step >= cfg.diffusion.steps:
            return model
        run.truncate_metrics(("diffusion/", "fid_proxy"), step)
    else:
        _seed_everything(cfg.seed)
        model = DenoiserModel(
            spec=cfg.latent, latent_size=latent_size, n_classes=n_classes,
            width=cfg.diffusion.width, depth=cfg.diffusion.depth,
            heads=cfg.diffusion.heads, mlp_ratio=cfg.diffusion.mlp_ratio,
        )
        trainer = _make_diffusion_trainer(cfg, model, schedule)

    latents_t = torch.from_numpy(latents)
    labels_t = torch.from_numpy(labels).long()

    def save(step: int) -> None:
        save_diffusion_checkpoint(
            path, model, step, cfg.diffusion.schedule, trainer.optimizer,
            numpy_rng_state={
                "trainer": trainer.np_rng.bit_generator.state,
                "data": data_rng.bit_generator.state,
            },
            torch_rng_state=trainer.torch_gen.get_state(),
        )
        run.update_manifest()

    eval_points = _eval_points(cfg.diffusion.steps, cfg.eval.cadence)
    while trainer.step_count < cfg.diffusion.steps:
        boundary = min(
            trainer.step_count + cfg.eval.checkpoint_every,
            cfg.diffusion.steps,
            min((p for p in eval_points if p > trainer.step_count), default=cfg.diffusion.steps),
        )
        chunk = boundary - trainer.step_count
        granted = budget.take(chunk)
        if granted == 0:
            save(trainer.step_count)
            return None
        for _ in range(granted):
            idx = batch_indices(data_rng, len(latents_t), cfg.diffusion.batch_size)
            report = trainer.step(latents_t[idx], labels_t[idx])
            if report.step % cfg.eval.log_every == 0 or report.step == cfg.diffusion.steps:
                run.log_metric(report.step, "diffusion/loss", report.loss)
                if report.channel_count is not None:
                    run.log_metric(report.step, "diffusion/channel_count", report.channel_count)
        if trainer.step_count in eval_points:
            _fid_eval(run, trainer.step_count, model, schedule, ae, extractor,
                      real_stats, n_classes)
        save(trainer.step_count)
        if granted < chunk:
            return None
    return model


def _train_view(run: _Run) -> ImageDataset:
    # Rebuild the deterministic dataset split; datasets are cheap to rebuild.
    dataset = build_dataset(run.config)
    train, _ = dataset.split(run.config.data.heldout_fraction)
    return train


def _eval_points(total_steps: int, cadence: int) -> list[int]:
    points = sorted(set(list(range(cadence, total_steps + 1, cadence)) + [total_steps]))
    return [p for p in points if p > 0]


def _make_diffusion_trainer(cfg: ExperimentConfig, model: DenoiserModel, schedule) -> DiffusionTrainer:
    return DiffusionTrainer(
        model, schedule, lr=cfg.diffusion.lr, augmented=cfg.diffusion.augmented,
        loss_normalization=cfg.diffusion.loss_normalization,
        time_epsilon=cfg.diffusion.time_epsilon, seed=cfg.seed,
        lr_decay=cfg.diffusion.lr_decay, total_steps=cfg.diffusion.steps,
    )


def _stage_sample(run: _Run, model: DenoiserModel, ae: AutoencoderModel, n_classes: int) -> None:
    cfg = run.config
    schedule = schedule_from_name(cfg.diffusion.schedule)
    rng = _eval_rng(cfg.seed, cfg.diffusion.steps, 31)
    n = cfg.eval.sample_grid
    labels = rng.integers(0, n_classes, size=n)
    z = sample_latents(model, schedule, n, labels=labels, steps=cfg.sampling.steps,
                       rng=rng, eps_clip=cfg.sampling.eps_clip)
    images = decode(ae, destandardize_latents(z, ae.latent_stats))
    _save_png(analysis.render_image_grid(images.data), run.dir / "samples" / "final_grid.png")


def _save_png(grid: np.ndarray, path: Path) -> None:
    from PIL import Image

    Image.fromarray(grid).save(path)


def _plot_metric(run: _Run, name: str, out_name: str) -> None:
    rows = run.read_metric(name)
    if not rows:
        return
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    steps, values = zip(*rows)
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(steps, values)
    ax.set_xlabel("step")
    ax.set_ylabel(name)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(run.dir / "analysis" / out_name, dpi=120)
    plt.close(fig)


def _stage_eval(
    run: _Run, ae: AutoencoderModel, extractor, heldout: ImageDataset,
    train: ImageDataset, diffusion_model: DenoiserModel | None,
) -> dict:
    cfg = run.config
    summary: dict = {
        "run_id": cfg.name,
        "seed": cfg.seed,
        "structured": cfg.ae.structured,
        "augmented": cfg.diffusion.augmented,
        "extractor_hash": extractor.param_hash(),
    }

    full_mse = masked_reconstruction_error(ae, heldout.images, ae.spec.channels)
    summary["ae_heldout_mse"] = full_mse
    summary["ae_heldout_psnr"] = psnr_from_mse(full_mse)
    run.log_metric(cfg.ae.steps, "ae/heldout_mse", full_mse, n_samples=len(heldout))

    z_held = encode(ae, heldout.images)
    stats = analysis.per_channel_stats(z_held)
    score = analysis.structure_separation_score(stats, cfg.eval.prefix_fraction)
    summary["separation_score"] = score
    summary["separation_prefix_fraction"] = cfg.eval.prefix_fraction
    summary["low_freq_cutoff"] = stats.cutoff
    run.log_metric(cfg.ae.steps, "separation_score", score, n_samples=len(heldout))

    maps = analysis.channel_average_map(
        LatentBatch(data=z_held.data[: min(16, len(z_held.data))], spec=ae.spec)
    )
    grid, meta = analysis.render_channel_maps(maps)
    _save_png(grid, run.dir / "analysis" / "channel_average_maps.png")
    (run.dir / "analysis" / "channel_average_maps_meta.json").write_text(
        json.dumps(meta, indent=2) + "\n"
    )

    if cfg.eval.prefix_curve:
        curve = analysis.prefix_reconstruction_curve(
            ae, train.images, heldout.images, grid=ae.spec.channel_grid,
            finetune_steps=cfg.eval.finetune_steps, finetune_lr=cfg.eval.finetune_lr,
            seed=cfg.seed,
        )
        with open(run.dir / "analysis" / "prefix_curve.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["channel_count", "mse", "psnr", "finetuned", "finetune_steps"])
            for p in curve.points:
                writer.writerow([p.channel_count, f"{p.mse:.10g}", f"{p.psnr:.6g}",
                                 curve.finetuned, curve.finetune_steps])
        summary["prefix_curve"] = [
            {"channel_count": p.channel_count, "mse": p.mse, "psnr": p.psnr}
            for p in curve.points
        ]
        for p in curve.points:
            run.log_metric(cfg.ae.steps, f"prefix_mse_c{p.channel_count}", p.mse,
                           n_samples=len(heldout))
        _render_prefix_grids(run, ae, heldout)

    if diffusion_model is not None:
        fid_rows = run.read_metric("fid_proxy")
        if fid_rows:
            summary["final_fid_proxy"] = fid_rows[-1][1]
            summary["best_fid_proxy"] = min(v for _, v in fid_rows)
            summary["fid_curve"] = [{"step": s, "value": v} for s, v in fid_rows]
        summary["diffusion_steps"] = cfg.diffusion.steps
        throughput = _measure_diffusion_throughput(run, diffusion_model)
        summary["throughput_img_per_s"] = throughput.images_per_second
        run.log_metric(cfg.diffusion.steps, "throughput_img_per_s",
                       throughput.images_per_second)
        _plot_metric(run, "fid_proxy", "fid_proxy.png")
    _plot_metric(run, "ae/total", "ae_loss.png")
    _plot_metric(run, "diffusion/loss", "diffusion_loss.png")
    return summary


def _render_prefix_grids(run: _Run, ae: AutoencoderModel, heldout: ImageDataset) -> None:
    from .latents import make_prefix_mask, apply_channel_mask

    n_show = min(8, len(heldout))
    sample = heldout.images[:n_show]
    z = encode(ae, sample)
    _save_png(analysis.render_image_grid(sample, n_cols=n_show),
              run.dir / "samples" / "recon_reference.png")
    for c_prime in ae.spec.channel_grid:
        masked = apply_channel_mask(z, make_prefix_mask(ae.spec.channels, c_prime))
        recon = decode(ae, masked)
        _save_png(analysis.render_image_grid(recon.data, n_cols=n_show),
                  run.dir / "samples" / f"recon_c{c_prime}.png")


def _measure_diffusion_throughput(run: _Run, model: DenoiserModel) -> ThroughputReport:
    cfg = run.config
    probe = copy.deepcopy(model)
    trainer = _make_diffusion_trainer(cfg, probe, schedule_from_name(cfg.diffusion.schedule))
    h, w = probe.latent_size
    batch = torch.randn(cfg.diffusion.batch_size, h, w, probe.spec.channels,
                        generator=torch.Generator().manual_seed(0))
    labels = torch.zeros(cfg.diffusion.batch_size, dtype=torch.long)
    return measure_throughput(
        lambda: trainer.step(batch, labels), warmup=1,
        measured=cfg.eval.throughput_steps, images_per_step=cfg.diffusion.batch_size,
    )


def run_experiment(
    config: ExperimentConfig,
    through_stage: str = "eval",
    session_step_budget: int | None = None,
    resume: bool = True,
) -> RunResult:
    """Execute the pipeline (dataset, extractor, AE, latent cache, diffusion,
    sampling, eval) into a run directory, resuming from checkpoints.

    `session_step_budget` caps the number of training steps executed in this
    call; the run pauses at a checkpoint boundary when the budget runs out.
    """
    if through_stage not in STAGES:
        raise ConfigError(f"unknown stage {through_stage!r}, expected one of {STAGES}")
    run = _Run(config, resume=resume)
    budget = _Budget(session_step_budget)
    stage_index = STAGES.index(through_stage)

    dataset = build_dataset(config)
    train, heldout = dataset.split(config.data.heldout_fraction)
    summary: dict = {"run_id": config.name, "seed": config.seed, "status": "complete"}
    diffusion_model = None

    if stage_index >= STAGES.index("extractor"):
        extractor = _stage_extractor(run, train)
    if stage_index >= STAGES.index("ae"):
        ae = _stage_ae(run, train, extractor, budget)
        if ae is None:
            return _paused(run)
    if stage_index >= STAGES.index("cache"):
        latents, labels = _stage_cache(run, ae, train)
    run_diffusion = config.diffusion.steps > 0
    if stage_index >= STAGES.index("diffusion") and run_diffusion:
        diffusion_model = _stage_diffusion(run, latents, labels, dataset.n_classes,
                                           ae, extractor, budget)
        if diffusion_model is None:
            return _paused(run)
    if stage_index >= STAGES.index("sample") and diffusion_model is not None:
        _stage_sample(run, diffusion_model, ae, dataset.n_classes)
    if stage_index >= STAGES.index("eval"):
        summary.update(_stage_eval(run, ae, extractor, heldout, train, diffusion_model))
    elif stage_index >= STAGES.index("ae"):
        # Partial pipelines still record the cheap AE-side summary numbers.
        mse = masked_reconstruction_error(ae, heldout.images, ae.spec.channels)
        summary["ae_heldout_mse"] = mse
        summary["ae_heldout_psnr"] = psnr_from_mse(mse)

    summary["status"] = "complete"
    summary["through_stage"] = through_stage
    (run.dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    run.update_manifest()
    return RunResult(run_dir=run.dir, status="complete", summary=summary)


def _paused(run: _Run) -> RunResult:
    summary = {"run_id": run.config.name, "status": "paused"}
    (run.dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return RunResult(run_dir=run.dir, status="paused", summary=summary)


def audit_run_dir(run_dir: str | Path) -> list[str]:
    """Completeness audit: resolved config, seed, format versions, and
    checkpoint hashes must all be present and consistent."""
    run_dir = Path(run_dir)
    problems = []
    config_path = run_dir / "config.json"
    if not config_path.exists():
        return [f"missing config.json in {run_dir}"]
    try:
        config = load_config(config_path)
    except ConfigError as exc:
        return [f"config.json does not parse: {exc}"]
    manifest_path = run_dir / "manifest.json"
    if not manifest_path.exists():
        return ["missing manifest.json"]
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format_version") != MANIFEST_FORMAT_VERSION:
        problems.append(f"unsupported manifest format_version {manifest.get('format_version')}")
    if manifest.get("seed") != config.seed:
        problems.append("manifest seed does not match config seed")
    if manifest.get("config_hash") != file_sha256(config_path):
        problems.append("config.json hash does not match manifest")
    if not (run_dir / "metrics.csv").exists():
        problems.append("missing metrics.csv")
    for name, expected in manifest.get("checkpoints", {}).items():
        path = run_dir / "checkpoints" / name
        if not path.exists():
            problems.append(f"manifest references missing checkpoint {name}")
        elif file_sha256(path) != expected:
            problems.append(f"checkpoint {name} hash mismatch")
    return problems


def evaluate_run_dir(run_dir: str | Path) -> dict:
    """Audit a run directory and return its summary; refuses incomplete runs."""
    problems = audit_run_dir(run_dir)
    if problems:
        raise AuditError("; ".join(problems))
    summary_path = Path(run_dir) / "summary.json"
    if not summary_path.exists():
        raise AuditError("run has no summary.json (did it finish?)")
    return json.loads(summary_path.read_text())


def measure_config_throughput(config: ExperimentConfig, warmup: int = 1, measured: int = 5) -> dict:
    """Images/second of one AE step and one diffusion step for this config,
    on freshly initialized models."""
    dataset = build_dataset(config)
    train, _ = dataset.split(config.data.heldout_fraction)
    _seed_everything(config.seed)
    extractor = train_feature_extractor(
        train.images[:256], train.labels[:256], train.n_classes,
        width=config.extractor.width, steps=1, batch_size=16, seed=config.seed,
    )
    ae = AutoencoderModel(config.latent, base_width=config.ae.base_width)
    ae_trainer = AutoencoderTrainer(ae, config.recon, extractor, lr=config.ae.lr,
                                    structured=config.ae.structured, seed=config.seed)
    batch = train.images[: config.ae.batch_size]
    ae_report = measure_throughput(lambda: ae_trainer.step(batch), warmup, measured,
                                   images_per_step=len(batch))

    h = train.images.shape[1] // config.latent.spatial_ratio
    w = train.images.shape[2] // config.latent.spatial_ratio
    model = DenoiserModel(
        spec=config.latent, latent_size=(h, w), n_classes=dataset.n_classes,
        width=config.diffusion.width, depth=config.diffusion.depth,
        heads=config.diffusion.heads, mlp_ratio=config.diffusion.mlp_ratio,
    )
    trainer = _make_diffusion_trainer(config, model, schedule_from_name(config.diffusion.schedule))
    z = torch.randn(config.diffusion.batch_size, h, w, config.latent.channels,
                    generator=torch.Generator().manual_seed(config.seed))
    labels = torch.zeros(config.diffusion.batch_size, dtype=torch.long)
    diff_report = measure_throughput(lambda: trainer.step(z, labels), warmup, measured,
                                     images_per_step=config.diffusion.batch_size)
    return {
        "ae_img_per_s": ae_report.images_per_second,
        "ae_img_per_s_std": ae_report.std,
        "diffusion_img_per_s": diff_report.images_per_second,
        "diffusion_img_per_s_std": diff_report.std,
    }
