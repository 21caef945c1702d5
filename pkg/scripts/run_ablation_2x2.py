#!/usr/bin/env python3
"""2x2 ablation grid: structured latent space on/off x augmented diffusion
training on/off, with one full diffusion run per cell and seed."""

import argparse
import json

from prefixdiff.config import apply_overrides, desk_config, load_config
from prefixdiff.recipes import recipe_ablation_2x2


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", default=None)
    parser.add_argument("--name", default="ablation-2x2")
    parser.add_argument("--out-root", default="runs")
    parser.add_argument("--seeds", default="0,1,2")
    parser.add_argument("--reuse-ae-from", default=None,
                        help="parity recipe directory with reusable autoencoder checkpoints")
    parser.add_argument("--set", dest="overrides", action="append", default=[])
    args = parser.parse_args()

    config = load_config(args.config) if args.config else desk_config()
    config = apply_overrides(
        config,
        [f"name={json.dumps(args.name)}", f"out_root={json.dumps(args.out_root)}"]
        + args.overrides,
    )
    seeds = tuple(int(s) for s in args.seeds.split(","))
    summary = recipe_ablation_2x2(config, seeds=seeds, reuse_ae_from=args.reuse_ae_from)
    print(json.dumps({"rows": summary["rows"], "winners": summary["winners"]}, indent=2))


if __name__ == "__main__":
    main()
