#!/usr/bin/env python3
"""Structured vs conventional autoencoder comparison (reconstruction parity,
smallest-prefix error after equal decoder fine-tuning, separation scores)."""

import argparse
import json

from prefixdiff.config import apply_overrides, desk_config, load_config
from prefixdiff.recipes import recipe_parity


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", default=None, help="config JSON (desk defaults if omitted)")
    parser.add_argument("--name", default="parity")
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
    summary = recipe_parity(config, seeds=seeds)
    print(json.dumps(summary["per_seed"], indent=2))


if __name__ == "__main__":
    main()
