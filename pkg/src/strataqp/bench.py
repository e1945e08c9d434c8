"""Benchmark runner: strategies x relative half-widths x seeds."""

from __future__ import annotations

import csv
import dataclasses
import io
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Sequence, TextIO

from .data import DELAY_THRESHOLD, Dataset, gen_lineitem, gen_spike
from .engine import QuerySpec, Strategy, run_query
from .index import ABTree, COUNT, SUM

EPS_LEVELS = (0.004, 0.005, 0.01, 0.02, 0.05)
FIELDS = ("strategy", "eps_frac", "eps_target", "seed", "latency_ns", "node_visits",
          "samples_total", "final_estimate", "final_ci", "exact_answer", "within_ci")


def spike_workload(rows: int = 10**6, seed: int = 1) -> tuple[Dataset, QuerySpec]:
    """Cancelled-flight count over keys [100, 900) with one spike at keys [500, 550)."""
    ds = gen_spike(rows, 0.02, [((500, 550), 0.5)], keys=1000, seed=seed)
    return ds, QuerySpec(100, 900, 1.0, agg=COUNT, predicate=ds.predicate("cancelled=1"))


def lineitem_workload(rows: int = 10**6, seed: int = 2) -> tuple[Dataset, QuerySpec]:
    """Late-delivery revenue over 2000 ship dates starting 200 days into the table."""
    ds = gen_lineitem(rows, 3, seed=seed)
    L = int(ds.keys[0]) + 200
    return ds, QuerySpec(L, L + 2000, 1.0, agg=SUM, predicate=ds.predicate(f"delay>{DELAY_THRESHOLD}"))


WORKLOADS = {"spike": spike_workload, "lineitem": lineitem_workload}


@dataclass(frozen=True)
class BenchResult:
    strategy: str
    eps_frac: float
    eps_target: float
    seed: int
    latency_ns: int
    node_visits: int
    samples_total: int
    final_estimate: float
    final_ci: float
    exact_answer: float
    within_ci: bool

    def __post_init__(self) -> None:
        assert self.within_ci == (abs(self.final_estimate - self.exact_answer) <= self.final_ci)


def _cell(tree: ABTree, spec: QuerySpec, exact: float, eps_frac: float) -> BenchResult:
    t0 = time.perf_counter_ns()
    res = run_query(spec, tree)
    dt = time.perf_counter_ns() - t0
    est = res.estimate
    return BenchResult(spec.strategy.value, eps_frac, spec.eps_target, spec.seed, dt, res.node_visits,
                       res.samples_total, est.A_hat, est.eps, exact,
                       abs(est.A_hat - exact) <= est.eps)


_TREE: ABTree | None = None


def _worker(args) -> BenchResult:
    return _cell(_TREE, *args)


def bench(dataset: Dataset, template: QuerySpec, strategies: Sequence[str | Strategy],
          eps_fracs: Sequence[float] = EPS_LEVELS, repeats: int = 10,
          seeds: Sequence[int] | None = None, tree: ABTree | None = None,
          workers: int = 1) -> list[BenchResult]:
    """Run every (strategy, relative half-width, seed) cell once.

    ``template`` fixes the range, aggregate, filter and tuning knobs; its
    ``eps_target``, ``strategy`` and ``seed`` are overridden per cell. Half-widths
    are fractions of the exact answer, computed once up front.
    """
    global _TREE
    tree = dataset.tree() if tree is None else tree
    exact = dataset.exact(template.L, template.U, template.predicate, template.agg)
    seeds = list(range(repeats)) if seeds is None else list(seeds)[:repeats]
    scale = abs(exact) if exact != 0 else 1.0
    cells = []
    for s in strategies:
        for frac in eps_fracs:
            for seed in seeds:
                spec = dataclasses.replace(template, strategy=Strategy(s), eps_target=frac * scale,
                                           seed=seed, ndv=template.ndv or dataset.ndv)
                cells.append((spec, exact, frac))
    if workers <= 1:
        return [_cell(tree, *c) for c in cells]
    _TREE = tree  # inherited by forked workers
    try:
        with ProcessPoolExecutor(workers) as pool:
            return list(pool.map(_worker, cells, chunksize=max(1, len(cells) // (4 * workers))))
    finally:
        _TREE = None


def write_results(results: Iterable[BenchResult], out: TextIO | str | None = None) -> str | None:
    """Write results as CSV with header ``FIELDS``; returns the text when ``out`` is None."""
    buf = io.StringIO() if out is None else None
    fh = buf if buf is not None else (open(out, "w", newline="") if isinstance(out, str) else out)
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FIELDS)
        for r in results:
            w.writerow([getattr(r, f) if not isinstance(getattr(r, f), float) else repr(getattr(r, f))
                        for f in FIELDS])
    finally:
        if isinstance(out, str):
            fh.close()
    return buf.getvalue() if buf is not None else None


def summarize(results: Sequence[BenchResult]) -> dict[tuple[str, float], dict[str, float]]:
    """Per (strategy, eps_frac) cell: mean visits, mean latency, coverage."""
    cells: dict[tuple[str, float], list[BenchResult]] = {}
    for r in results:
        cells.setdefault((r.strategy, r.eps_frac), []).append(r)
    return {k: {"visits": sum(r.node_visits for r in v) / len(v),
                "latency_ns": sum(r.latency_ns for r in v) / len(v),
                "coverage": sum(r.within_ci for r in v) / len(v),
                "runs": len(v)} for k, v in cells.items()}
