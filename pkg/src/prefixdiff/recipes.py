"""Scripted experiment recipes: reconstruction parity, prefix-curve,
convergence comparison, and the 2x2 structured/augmented ablation grid.

Each recipe writes member run directories plus a recipe-level summary.csv
and summary.json under <out_root>/<config.name>/. Recipes are resumable:
rerunning picks up member runs from their checkpoints.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from . import analysis
from .autoencoder import finetune_decoder_for_prefix, masked_reconstruction_error, encode
from .checkpoints import load_autoencoder_checkpoint
from .config import ConfigError, ExperimentConfig, apply_overrides
from .runner import build_dataset, resolve_out_root, run_experiment


def _override(config: ExperimentConfig, **pairs) -> ExperimentConfig:
    return apply_overrides(config, [f"{k}={json.dumps(v)}" for k, v in pairs.items()])


def _member(config: ExperimentConfig, recipe_dir: Path, name: str, seed: int, **pairs):
    return _override(config, **{"name": name, "seed": seed, "out_root": str(recipe_dir), **pairs})


def _write_summary(recipe_dir: Path, rows: list[dict], extra: dict) -> dict:
    recipe_dir.mkdir(parents=True, exist_ok=True)
    if rows:
        keys = sorted({k for row in rows for k in row})
        with open(recipe_dir / "summary.csv", "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=keys)
            writer.writeheader()
            writer.writerows(rows)
    summary = {"rows": rows, **extra}
    (recipe_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def _train_ae_pair(config: ExperimentConfig, recipe_dir: Path, seed: int) -> dict[bool, Path]:
    """Train structured and baseline autoencoders with identical budget and seed."""
    paths = {}
    for structured in (False, True):
        tag = "structured" if structured else "baseline"
        cfg = _member(config, recipe_dir, f"s{seed}-ae-{tag}", seed,
                      **{"ae.structured": structured, "diffusion.steps": 0})
        result = run_experiment(cfg, through_stage="cache")
        paths[structured] = result.run_dir / "checkpoints" / "ae.pt"
    return paths


def recipe_parity(config: ExperimentConfig, seeds: tuple[int, ...] = (0, 1, 2)) -> dict:
    """Structured vs conventional autoencoder under one budget per seed:
    full-channel held-out error, smallest-prefix error after equal decoder
    fine-tuning, and the structure-separation score."""
    recipe_dir = resolve_out_root(config) / config.name
    dataset = build_dataset(config)
    train, heldout = dataset.split(config.data.heldout_fraction)
    c_small = config.latent.channel_grid[0]

    rows = []
    for seed in seeds:
        ae_paths = _train_ae_pair(config, recipe_dir, seed)
        for structured, path in ae_paths.items():
            model, _ = load_autoencoder_checkpoint(path)
            full_mse = masked_reconstruction_error(model, heldout.images, model.spec.channels)
            decoder = finetune_decoder_for_prefix(
                model, c_small, train.images, steps=config.eval.finetune_steps,
                lr=config.eval.finetune_lr, seed=seed,
            )
            masked_mse = masked_reconstruction_error(model, heldout.images, c_small, decoder)
            stats = analysis.per_channel_stats(encode(model, heldout.images))
            score = analysis.structure_separation_score(stats, config.eval.prefix_fraction)
            rows.append({
                "seed": seed,
                "structured": structured,
                "full_mse": full_mse,
                f"masked_mse_c{c_small}": masked_mse,
                "separation_score": score,
            })

    per_seed = []
    for seed in seeds:
        base = next(r for r in rows if r["seed"] == seed and not r["structured"])
        struct = next(r for r in rows if r["seed"] == seed and r["structured"])
        per_seed.append({
            "seed": seed,
            "full_mse_ratio": struct["full_mse"] / base["full_mse"],
            "masked_mse_ratio": struct[f"masked_mse_c{c_small}"] / base[f"masked_mse_c{c_small}"],
            "score_structured": struct["separation_score"],
            "score_baseline": base["separation_score"],
        })
    return _write_summary(recipe_dir, rows, {
        "recipe": "parity",
        "smallest_channel_count": c_small,
        "per_seed": per_seed,
    })


def recipe_prefix_curve(config: ExperimentConfig) -> dict:
    """One structured autoencoder run plus the fine-tuned prefix
    reconstruction curve and per-prefix reconstruction grids."""
    cfg = _override(config, **{
        "ae.structured": True,
        "diffusion.steps": 0,
        "eval.prefix_curve": True,
    })
    result = run_experiment(cfg, through_stage="eval")
    curve = result.summary.get("prefix_curve", [])
    mses = [p["mse"] for p in curve]
    monotone = all(b <= a * 1.05 for a, b in zip(mses, mses[1:]))
    summary = {
        "recipe": "prefix-curve",
        "run_dir": str(result.run_dir),
        "prefix_curve": curve,
        "monotone_within_5pct": monotone,
        "separation_score": result.summary.get("separation_score"),
    }
    (result.run_dir / "recipe_summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n"
    )
    return summary


def recipe_convergence(config: ExperimentConfig, seeds: tuple[int, ...] = (0, 1, 2)) -> dict:
    """Augmented vs standard diffusion training on one shared structured
    autoencoder per seed; reports steps needed to reach the standard run's
    final quality."""
    recipe_dir = resolve_out_root(config) / config.name
    rows = []
    for seed in seeds:
        ae_cfg = _member(config, recipe_dir, f"s{seed}-ae", seed,
                         **{"ae.structured": True, "diffusion.steps": 0})
        ae_run = run_experiment(ae_cfg, through_stage="cache")
        ae_path = str(ae_run.run_dir / "checkpoints" / "ae.pt")

        results = {}
        for augmented in (False, True):
            tag = "augmented" if augmented else "standard"
            cell = _member(config, recipe_dir, f"s{seed}-{tag}", seed,
                           **{"ae.structured": True, "diffusion.augmented": augmented,
                              "reuse.autoencoder": ae_path})
            results[augmented] = run_experiment(cell)
        baseline_final = results[False].summary["final_fid_proxy"]
        curve = results[True].summary.get("fid_curve", [])
        reached = next((p["step"] for p in curve if p["value"] <= baseline_final), None)
        rows.append({
            "seed": seed,
            "baseline_final_fid": baseline_final,
            "augmented_final_fid": results[True].summary["final_fid_proxy"],
            "baseline_steps": config.diffusion.steps,
            "steps_to_reach_baseline_final": reached,
            "step_ratio": (reached / config.diffusion.steps) if reached else None,
        })
    return _write_summary(recipe_dir, rows, {"recipe": "convergence"})


def recipe_ablation_2x2(
    config: ExperimentConfig,
    seeds: tuple[int, ...] = (0, 1, 2),
    reuse_ae_from: str | Path | None = None,
) -> dict:
    """Table-style 2x2 grid: structured latent space on/off x augmented
    diffusion training on/off, one summary row per cell and seed.

    `reuse_ae_from` points at a parity recipe directory whose autoencoder
    checkpoints (s<seed>-ae-<structured|baseline>) are reused.
    """
    recipe_dir = resolve_out_root(config) / config.name
    rows = []
    for seed in seeds:
        if reuse_ae_from is not None:
            root = Path(reuse_ae_from)
            ae_paths = {
                False: root / f"s{seed}-ae-baseline" / "checkpoints" / "ae.pt",
                True: root / f"s{seed}-ae-structured" / "checkpoints" / "ae.pt",
            }
            for path in ae_paths.values():
                if not path.exists():
                    raise FileNotFoundError(f"no reusable autoencoder checkpoint at {path}")
        else:
            ae_paths = _train_ae_pair(config, recipe_dir, seed)

        for structured in (False, True):
            for augmented in (False, True):
                name = f"s{seed}-struct{'On' if structured else 'Off'}-aug{'On' if augmented else 'Off'}"
                cell = _member(config, recipe_dir, name, seed,
                               **{"ae.structured": structured,
                                  "diffusion.augmented": augmented,
                                  "reuse.autoencoder": str(ae_paths[structured])})
                result = run_experiment(cell)
                rows.append({
                    "seed": seed,
                    "structured": structured,
                    "augmented": augmented,
                    "final_fid_proxy": result.summary["final_fid_proxy"],
                    "best_fid_proxy": result.summary["best_fid_proxy"],
                    "run_dir": str(result.run_dir),
                })

    winners = []
    for seed in seeds:
        cells = [r for r in rows if r["seed"] == seed]
        best = min(cells, key=lambda r: r["final_fid_proxy"])
        winners.append({
            "seed": seed,
            "winner": {"structured": best["structured"], "augmented": best["augmented"]},
        })
    return _write_summary(recipe_dir, rows, {"recipe": "ablation-2x2", "winners": winners})


RECIPES = {
    "parity": recipe_parity,
    "prefix-curve": recipe_prefix_curve,
    "convergence": recipe_convergence,
    "ablation-2x2": recipe_ablation_2x2,
}


def run_recipe(name: str, config: ExperimentConfig, seeds: tuple[int, ...] = (0, 1, 2)) -> dict:
    if name not in RECIPES:
        raise ConfigError(f"unknown recipe {name!r}; available: {sorted(RECIPES)}")
    if name == "prefix-curve":
        return recipe_prefix_curve(config)
    return RECIPES[name](config, seeds=seeds)
