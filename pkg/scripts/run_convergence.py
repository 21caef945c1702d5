#!/usr/bin/env python3
"""Augmented vs standard diffusion training on a shared structured
autoencoder: quality-curve comparison and steps-to-parity."""

import argparse
import json

from prefixdiff.config import apply_overrides, desk_config, load_config
from prefixdiff.recipes import recipe_convergence


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", default=None)
    parser.add_argument("--name", default="convergence")
    parser.add_argument("--out-root", default="runs")
    parser.add_argument("--seeds", default="0,1,2")
    parser.add_argument("--set", dest="overrides", action="append", default=[])
    args = parser.parse_args()

    config = load_config(args.config) if args.config else desk_config()
    config = apply_overrides(
        config,
        [f"name={json.dumps(args.name)}", f"out_root={json.dumps(args.out_root)}"]
        + args.overrides,
    )
    seeds = tuple(int(s) for s in args.seeds.split(","))
    summary = recipe_convergence(config, seeds=seeds)
    print(json.dumps(summary["rows"], indent=2))


if __name__ == "__main__":
    main()
