"""CI coverage per strategy and half-width combination rule.

    python scripts/coverage.py --runs 200 --eps 0.01 --out coverage.csv
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import sys

from strataqp.bench import WORKLOADS, bench
from strataqp.engine import Strategy


def main() -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--runs", type=int, default=200)
    p.add_argument("--eps", type=float, default=0.01, help="half-width as a fraction of the exact answer")
    p.add_argument("--rows", type=int, default=10**6)
    p.add_argument("--rules", default="variance,linear")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default=None)
    args = p.parse_args()

    out = open(args.out, "w", newline="") if args.out else sys.stdout
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["dataset", "rule", "strategy", "runs", "coverage", "mean_visits"])
    for name, make in WORKLOADS.items():
        ds, template = make(rows=args.rows)
        tree = ds.tree()
        for rule in args.rules.split(","):
            spec = dataclasses.replace(template, combine_rule=rule)
            res = bench(ds, spec, list(Strategy), [args.eps], args.runs, tree=tree, workers=args.workers)
            for s in Strategy:
                cell = [r for r in res if r.strategy == s.value]
                cov = sum(r.within_ci for r in cell) / len(cell)
                visits = sum(r.node_visits for r in cell) / len(cell)
                w.writerow([name, rule, s.value, len(cell), f"{cov:.3f}", f"{visits:.0f}"])
                out.flush()
    return 0


if __name__ == "__main__":
    sys.exit(main())
