#!/usr/bin/env python3
"""Emit the accuracy-cost frontier and module-marginal report.

Writes report.json, marginals.csv, and plot_data.json from the bundled
24-combination results fixture (or a CSV supplied via --results), then
prints the frontier memberships and a marginal summary table.

Usage:
    python3 scripts/frontier_report.py [--results my.csv] [--out runs/frontier]
"""

import argparse
import json

from strforge.tradeoff import all_marginals, emit_report, load_fixture


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--results", default=None, help="results CSV "
                    "(default: bundled fixture)")
    ap.add_argument("--out", default="runs/frontier", help="output directory")
    args = ap.parse_args()

    rows = load_fixture(args.results)
    report = emit_report(rows, out_dir=args.out)
    data = json.loads(report["json"])
    for cost in ("time_ms", "params_m"):
        ids = data["frontiers"][cost]["pareto_ids"]
        chain = [p["name"] for p in data["frontiers"][cost]["chain"]]
        print(f"{cost}: pareto ids {ids}")
        print(f"  chain: {' -> '.join(chain)}")
    print(f"{'stage':<6} {'option':<8} {'total':>6} {'reg(w)':>7} {'irr(w)':>7}")
    for m in all_marginals(rows):
        print(f"{m['stage']:<6} {m['option']:<8} {m['total']:6.1f} "
              f"{m['regular_weighted']:7.1f} {m['irregular_weighted']:7.1f}")
    print(f"wrote report.json / marginals.csv / plot_data.json to {args.out}")


if __name__ == "__main__":
    main()
