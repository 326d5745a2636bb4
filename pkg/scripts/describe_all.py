#!/usr/bin/env python3
"""Print parameter and FLOP budgets for all 24 pipeline combinations.

Usage:
    python3 scripts/describe_all.py [--scale 1.0]
"""

import argparse
import warnings

from strforge.arch import BUILDERS
from strforge.pipeline import all_combinations, assemble


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scale", type=float, default=1.0, help="channel scale")
    args = ap.parse_args()

    print(f"{'#':>2}  {'combination':<26} {'params':>12} {'feat FLOPs':>14}")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for i, cfg in enumerate(all_combinations(scale=args.scale), start=1):
            model = assemble(cfg, initialize=False)
            flops = BUILDERS[cfg.feat.lower()](scale=args.scale).flop_count()
            print(f"{i:>2}  {cfg.name:<26} {model.param_element_count():>12,} "
                  f"{flops:>14,}")


if __name__ == "__main__":
    main()
