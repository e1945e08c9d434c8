"""Node visits and latency per strategy across the standard half-width levels.

Reports each strategy's mean visits relative to uniform sampling, the
desk-scale stand-in for wall-clock speedup.

    python scripts/speedup.py --dataset spike --repeats 10
"""

from __future__ import annotations

import argparse
import sys

from strataqp.bench import EPS_LEVELS, WORKLOADS, bench, summarize, write_results
from strataqp.engine import Strategy


def main() -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--dataset", choices=sorted(WORKLOADS), default="spike")
    p.add_argument("--rows", type=int, default=10**6)
    p.add_argument("--repeats", type=int, default=10)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--raw", default=None, help="also write every run to this CSV")
    args = p.parse_args()

    ds, template = WORKLOADS[args.dataset](rows=args.rows)
    res = bench(ds, template, list(Strategy), EPS_LEVELS, args.repeats, workers=args.workers)
    if args.raw:
        write_results(res, args.raw)
    cells = summarize(res)
    print("strategy,eps_frac,mean_visits,visits_vs_uniform,mean_latency_ms,coverage")
    for (s, f), c in sorted(cells.items(), key=lambda kv: (kv[0][1], kv[0][0])):
        base = cells[Strategy.UNIFORM.value, f]["visits"]
        print(f"{s},{f},{c['visits']:.0f},{c['visits'] / base:.3f},{c['latency_ns'] / 1e6:.1f},{c['coverage']:.2f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
