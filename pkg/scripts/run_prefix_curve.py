#!/usr/bin/env python3
"""Train a structured autoencoder and measure the fine-tuned prefix
reconstruction curve, with per-prefix reconstruction grids."""

import argparse
import json

from prefixdiff.config import apply_overrides, desk_config, load_config
from prefixdiff.recipes import recipe_prefix_curve


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", default=None)
    parser.add_argument("--name", default="prefix-curve")
    parser.add_argument("--out-root", default="runs")
    parser.add_argument("--set", dest="overrides", action="append", default=[])
    args = parser.parse_args()

    config = load_config(args.config) if args.config else desk_config()
    config = apply_overrides(
        config,
        [f"name={json.dumps(args.name)}", f"out_root={json.dumps(args.out_root)}"]
        + args.overrides,
    )
    summary = recipe_prefix_curve(config)
    print(json.dumps(summary, indent=2))


if __name__ == "__main__":
    main()
