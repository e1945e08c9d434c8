"""Effect of the partition granularity d on CostOpt.

For each d: optimizer time on the phase-0 sample, number of strata chosen,
and mean node visits of the full query.

    python scripts/granularity.py --levels 1,3,10,30,100,300
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
import time

import numpy as np

from strataqp import stratification as strat
from strataqp.bench import WORKLOADS
from strataqp.engine import Strategy, run_query


def main() -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--dataset", choices=sorted(WORKLOADS), default="spike")
    p.add_argument("--rows", type=int, default=10**6)
    p.add_argument("--levels", default="1,3,10,30,100,300")
    p.add_argument("--eps", type=float, default=0.005)
    p.add_argument("--seeds", type=int, default=5)
    args = p.parse_args()

    ds, template = WORKLOADS[args.dataset](rows=args.rows)
    tree = ds.tree()
    exact = ds.exact(template.L, template.U, template.predicate, template.agg)
    ctx = tree.range_preprocess(template.L, template.U)
    n0 = template.initial_size(ds.ndv)
    batch = tree.sample_batch(ctx, n0, np.random.default_rng(0))
    sample = strat.PhaseZero.from_unsorted(batch.keys, batch.ht_values(template.predicate, template.agg),
                                           batch.heights, template.L, template.U, ctx.lca_height)
    print("d,candidates,optimize_ms,strata,mean_visits")
    for d in (int(x) for x in args.levels.split(",")):
        t0 = time.perf_counter()
        C = strat.candidate_boundaries(sample, d)
        s = strat.costopt(strat.build_cumulative(sample, C), template.c0, args.eps * exact, template.delta)
        ms = (time.perf_counter() - t0) * 1e3
        visits = np.mean([run_query(dataclasses.replace(template, d=d, eps_target=args.eps * exact,
                                                        strategy=Strategy.COSTOPT, seed=seed), tree).node_visits
                          for seed in range(args.seeds)])
        print(f"{d},{len(C) - 1},{ms:.2f},{s.k},{visits:.0f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
