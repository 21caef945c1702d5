"""Command-line interface.

Every subcommand takes --config plus targeted overrides and writes into a
run directory; inputs are never mutated. Exit codes: 0 success, 2 usage or
config error, 3 audit/cache error, 4 training divergence, 1 other failure.
"""

from __future__ import annotations

import argparse
import json
import os
import shutil
import sys
from pathlib import Path

import numpy as np

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_AUDIT = 3
EXIT_DIVERGED = 4


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="prefixdiff",
        description="Structured-latent autoencoder and augmented diffusion training at desk scale.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", type=str, default=None, help="path to a config JSON file")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY.PATH=VALUE", help="override a config value")
        p.add_argument("--name", type=str, default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out-root", type=str, default=None)

    add_common(sub.add_parser("gen-data", help="render the synthetic dataset to disk"))
    add_common(sub.add_parser("train-extractor", help="train the frozen feature extractor"))
    add_common(sub.add_parser("train-ae", help="train the autoencoder"))
    p = sub.add_parser("cache-latents", help="encode and cache standardized latents")
    add_common(p)
    p.add_argument("--force", action="store_true", help="rebuild the cache")
    add_common(sub.add_parser("train-diffusion", help="train the latent diffusion model"))
    p = sub.add_parser("sample", help="sample images from a trained run")
    add_common(p)
    p.add_argument("--n", type=int, default=64)
    p = sub.add_parser("reconstruct", help="reconstruct held-out images from a channel prefix")
    add_common(p)
    p.add_argument("--channels", type=int, required=True)
    p = sub.add_parser("analyze", help="latent-space diagnostics for a run")
    add_common(p)
    p.add_argument("--untrained", action="store_true",
                   help="analyze a freshly initialized autoencoder instead of a trained one")
    p = sub.add_parser("eval", help="audit a run directory and print its summary")
    add_common(p)
    p.add_argument("--run-dir", type=str, default=None)
    p = sub.add_parser("run-recipe", help="run a scripted experiment recipe")
    p.add_argument("recipe", type=str)
    add_common(p)
    p.add_argument("--seeds", type=str, default="0,1,2", help="comma-separated seeds")
    p.add_argument("--reuse-ae-from", type=str, default=None,
                   help="parity recipe directory with reusable autoencoder checkpoints")
    add_common(sub.add_parser("throughput", help="measure step throughput for a config"))
    p = sub.add_parser("run", help="run the full pipeline for a config")
    add_common(p)
    p.add_argument("--step-budget", type=int, default=None,
                   help="pause after this many training steps (resumable)")
    return parser


def _load_config(args):
    from .config import apply_overrides, desk_config, load_config

    config = load_config(args.config) if args.config else desk_config()
    shortcuts = []
    if args.name is not None:
        shortcuts.append(f"name={json.dumps(args.name)}")
    if args.seed is not None:
        shortcuts.append(f"seed={args.seed}")
    if args.out_root is not None:
        shortcuts.append(f"out_root={json.dumps(args.out_root)}")
    return apply_overrides(config, shortcuts + list(args.overrides))


def _run_dir(config) -> Path:
    from .runner import resolve_out_root

    return resolve_out_root(config) / config.name


def _dispatch(args) -> int:
    from .config import ConfigError
    from .runner import run_experiment

    command = args.command
    if command == "eval":
        from .runner import evaluate_run_dir

        run_dir = Path(args.run_dir) if args.run_dir else _run_dir(_load_config(args))
        summary = evaluate_run_dir(run_dir)
        print(json.dumps(summary, indent=2, sort_keys=True))
        return EXIT_OK

    config = _load_config(args)

    if command == "gen-data":
        from .data import generate_shapes_dataset

        if config.data.kind != "shapes":
            raise ConfigError("gen-data only applies to synthetic shapes configs", "data.kind")
        out = _run_dir(config) / "dataset"
        generate_shapes_dataset(config.data.shapes, out_dir=out)
        print(f"wrote {config.data.shapes.size} images to {out}")
        return EXIT_OK

    if command == "train-extractor":
        run_experiment(config, through_stage="extractor")
        print(f"extractor ready in {_run_dir(config)}")
        return EXIT_OK

    if command == "train-ae":
        run_experiment(config, through_stage="ae")
        print(f"autoencoder trained in {_run_dir(config)}")
        return EXIT_OK

    if command == "cache-latents":
        if args.force:
            cache = _run_dir(config) / "checkpoints" / "latent_cache"
            if cache.exists():
                shutil.rmtree(cache)
        run_experiment(config, through_stage="cache")
        print(f"latent cache ready in {_run_dir(config)}")
        return EXIT_OK

    if command == "train-diffusion":
        run_experiment(config, through_stage="diffusion")
        print(f"diffusion model trained in {_run_dir(config)}")
        return EXIT_OK

    if command == "run":
        result = run_experiment(config, session_step_budget=args.step_budget)
        print(f"run {result.status} in {result.run_dir}")
        return EXIT_OK

    if command == "sample":
        return _cmd_sample(config, args.n)
    if command == "reconstruct":
        return _cmd_reconstruct(config, args.channels)
    if command == "analyze":
        return _cmd_analyze(config, args.untrained)
    if command == "run-recipe":
        from .recipes import run_recipe

        seeds = tuple(int(s) for s in args.seeds.split(",") if s != "")
        if args.recipe == "ablation-2x2" and args.reuse_ae_from:
            from .recipes import recipe_ablation_2x2

            summary = recipe_ablation_2x2(config, seeds=seeds, reuse_ae_from=args.reuse_ae_from)
        else:
            summary = run_recipe(args.recipe, config, seeds=seeds)
        print(json.dumps({k: v for k, v in summary.items() if k != "rows"},
                         indent=2, sort_keys=True, default=str))
        return EXIT_OK

    if command == "throughput":
        from .runner import measure_config_throughput

        report = measure_config_throughput(config)
        print(json.dumps(report, indent=2, sort_keys=True))
        return EXIT_OK

    raise ConfigError(f"unknown command {command!r}")


def _cmd_sample(config, n: int) -> int:
    from .analysis import render_image_grid
    from .autoencoder import decode, destandardize_latents
    from .checkpoints import load_autoencoder_checkpoint, load_diffusion_checkpoint
    from .data import save_image
    from .diffusion import sample_latents, schedule_from_name
    from .runner import build_dataset

    run_dir = _run_dir(config)
    model, payload = load_diffusion_checkpoint(run_dir / "checkpoints" / "diffusion.pt")
    ae, _ = load_autoencoder_checkpoint(run_dir / "checkpoints" / "ae.pt")
    dataset = build_dataset(config)
    rng = np.random.default_rng(config.seed)
    labels = rng.integers(0, dataset.n_classes, size=n)
    z = sample_latents(model, schedule_from_name(payload["schedule_kind"]), n, labels=labels,
                       steps=config.sampling.steps, rng=rng, eps_clip=config.sampling.eps_clip)
    images = decode(ae, destandardize_latents(z, ae.latent_stats))
    out = run_dir / "samples" / f"cli_samples_step{payload['step']}.png"
    from PIL import Image

    Image.fromarray(render_image_grid(images.data)).save(out)
    print(f"wrote {out}")
    return EXIT_OK


def _cmd_reconstruct(config, channels: int) -> int:
    from PIL import Image

    from .analysis import render_image_grid
    from .autoencoder import decode, encode
    from .checkpoints import load_autoencoder_checkpoint
    from .latents import apply_channel_mask, make_prefix_mask
    from .runner import build_dataset

    run_dir = _run_dir(config)
    ae, _ = load_autoencoder_checkpoint(run_dir / "checkpoints" / "ae.pt")
    mask = make_prefix_mask(ae.spec.channels, channels)
    dataset = build_dataset(config)
    _, heldout = dataset.split(config.data.heldout_fraction)
    sample = heldout.images[: min(16, len(heldout))]
    recon = decode(ae, apply_channel_mask(encode(ae, sample), mask))
    out = run_dir / "samples" / f"reconstruct_c{channels}.png"
    out.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(render_image_grid(np.concatenate([sample, recon.data]), n_cols=len(sample))).save(out)
    print(f"wrote {out}")
    return EXIT_OK


def _cmd_analyze(config, untrained: bool) -> int:
    import torch
    from PIL import Image

    from . import analysis
    from .autoencoder import AutoencoderModel, encode
    from .checkpoints import load_autoencoder_checkpoint
    from .runner import build_dataset

    run_dir = _run_dir(config)
    if untrained:
        torch.manual_seed(config.seed)
        ae = AutoencoderModel(config.latent, base_width=config.ae.base_width)
    else:
        ae, _ = load_autoencoder_checkpoint(run_dir / "checkpoints" / "ae.pt")
    dataset = build_dataset(config)
    _, heldout = dataset.split(config.data.heldout_fraction)
    z = encode(ae, heldout.images)
    stats = analysis.per_channel_stats(z)
    score = analysis.structure_separation_score(stats, config.eval.prefix_fraction)
    out_dir = run_dir / "analysis"
    out_dir.mkdir(parents=True, exist_ok=True)
    maps = analysis.channel_average_map(z)
    grid, meta = analysis.render_channel_maps(maps[: min(16, len(maps))])
    Image.fromarray(grid).save(out_dir / "channel_average_maps.png")
    (out_dir / "channel_average_maps_meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    report = {
        "separation_score": score,
        "prefix_fraction": config.eval.prefix_fraction,
        "low_freq_cutoff": stats.cutoff,
        "untrained": untrained,
        "per_channel_low_freq_fraction": stats.low_freq_fraction.tolist(),
    }
    (out_dir / "channel_stats.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    print(json.dumps({"separation_score": score, "untrained": untrained}, indent=2))
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    threads = os.environ.get("PREFIXDIFF_THREADS")
    if threads:
        import torch

        torch.set_num_threads(int(threads))
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    from .autoencoder import TrainingDiverged
    from .checkpoints import CacheMismatchError
    from .config import ConfigError
    from .runner import AuditError

    try:
        return _dispatch(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (AuditError, CacheMismatchError) as exc:
        print(f"audit error: {exc}", file=sys.stderr)
        return EXIT_AUDIT
    except TrainingDiverged as exc:
        print(f"training diverged: {exc} ({exc.diagnostics})", file=sys.stderr)
        return EXIT_DIVERGED
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
