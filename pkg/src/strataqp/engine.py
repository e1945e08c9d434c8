"""Two-phase query executor.

Phase 0 draws a uniform sample over the query range and derives a
stratification from it. Phase 1 repeatedly samples the strata in batches sized
by the modified Neyman allocation until the combined confidence half-width
drops below the target.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from . import stratification as strat
from .allocation import MIN_PER_STRATUM, Allocation, StratumStats, equal_split, next_batch
from .errors import BudgetExhaustedError, DivergedError, EmptyRangeError, InvalidValueError
from .estimation import Estimate, EstimatorState, StrataAccumulator, combine_phases, z_value
from .index import ABTree, Agg, RangeContext, SUM, VisitCounter
from .predicate import _OPS, ACCEPT_ALL, Predicate

log = logging.getLogger(__name__)

MAX_N0 = 100_000
REVERT_FACTOR = 2.0


class Strategy(str, Enum):
    GREEDY = "greedy"
    COSTOPT = "costopt"
    SIZEOPT = "sizeopt"
    EQUAL = "equal"
    UNIFORM = "uniform"


@dataclass
class QuerySpec:
    L: int
    U: int
    eps_target: float
    agg: Agg = SUM
    predicate: Predicate = ACCEPT_ALL
    confidence: float = 0.95
    n0: int | None = None
    ndv: int | None = None
    strategy: Strategy = Strategy.COSTOPT
    step_size: float = math.inf
    seed: int = 0
    c0: float = strat.DEFAULT_C0
    d: int = strat.DEFAULT_GRANULARITY
    delta_n0: int = strat.DEFAULT_DELTA_N0
    tau: float = strat.DEFAULT_TAU
    combine_rule: str = "variance"
    revert_to_uniform: bool = False
    max_samples: int = 10**8

    def __post_init__(self) -> None:
        self.strategy = Strategy(self.strategy)
        if not self.L < self.U:
            raise InvalidValueError(f"empty interval [{self.L}, {self.U})")
        if not self.eps_target > 0:
            raise InvalidValueError("eps_target must be positive")
        if not 0 < self.confidence < 1:
            raise InvalidValueError("confidence must be in (0, 1)")
        if self.n0 is not None and self.n0 < 2:
            raise InvalidValueError("n0 must be at least 2")

    @property
    def delta(self) -> float:
        return 1.0 - self.confidence

    def initial_size(self, ndv: int) -> int:
        if self.n0 is not None:
            return self.n0
        return max(2, min(200 * ndv, MAX_N0))


@dataclass(frozen=True)
class ProgressReport:
    round: int
    samples_total: int
    node_visits: int
    estimate: float
    ci_half_width: float
    phase: int
    elapsed_ns: int
    note: str = ""

    CSV_HEADER = "round,phase,samples_total,node_visits,estimate,ci_half_width"

    def csv(self) -> str:
        return (f"{self.round},{self.phase},{self.samples_total},{self.node_visits},"
                f"{self.estimate!r},{self.ci_half_width!r}")


@dataclass
class QueryResult:
    estimate: Estimate
    reports: list[ProgressReport]
    visits: VisitCounter
    samples_total: int
    strategy: Strategy
    n_strata: int = 1
    fallback: bool = False

    @property
    def node_visits(self) -> int:
        return self.visits.total


Sink = Callable[[ProgressReport], None]


class _StrataSampler:
    """Draws blocks of samples from a fixed list of disjoint sampling contexts."""

    def __init__(self, tree: ABTree, ctxs: Sequence[RangeContext], predicate: Predicate, agg: Agg):
        self.tree = tree
        self.predicate = predicate
        self.agg = agg
        self.lo = np.array([c.lo for c in ctxs], dtype=np.int64)
        self.hi = np.array([c.hi for c in ctxs], dtype=np.int64)
        self.W = np.array([c.W for c in ctxs])
        self.base = tree.flat.cumw[self.lo]
        order = np.argsort(self.lo, kind="stable")
        assert np.all(order == np.arange(len(order))), "strata must be in key order"
        self.unit_lo = np.concatenate([c._unit_lo for c in ctxs])
        self.unit_h = np.concatenate([c._unit_h for c in ctxs])

    def draw(self, counts: np.ndarray, rng: np.random.Generator, counter: VisitCounter) -> np.ndarray:
        f = self.tree.flat
        idx = np.repeat(np.arange(len(counts)), counts)
        d = rng.random(len(idx))
        W = self.W[idx]
        if f.unit_weights:
            # floor(d * W) < W = hi - lo, so no clipping is needed
            pos = self.lo[idx] + (d * W).astype(np.int64)
        else:
            pos = np.searchsorted(f.cumw, self.base[idx] + d * W, side="right") - 1
            pos = np.clip(pos, self.lo[idx], self.hi[idx] - 1)
        heights = self.unit_h[np.searchsorted(self.unit_lo, pos, side="right") - 1]
        counter.sample_visits += int(heights.sum())
        agg = self.agg
        if agg.kind == "count":
            e = np.ones(len(pos))
        elif agg.attr is not None:
            e = f.attrs[pos, agg.attr]
        else:
            e = f.values[pos]
        y = e * W if f.unit_weights else e * (W / f.weights[pos])
        for c in self.predicate.conditions:
            y[~_OPS[c.op](f.attrs[pos, c.attr], c.value)] = 0.0
        return y


@dataclass
class _Plan:
    ctxs: list[RangeContext]
    stats: list[StratumStats]
    offset: float = 0.0
    equal: bool = False


def _projected_eps(stats: Sequence[StratumStats], alloc: Allocation, delta: float) -> float:
    v = math.fsum(s.sigma ** 2 / n for s, n in zip(stats, alloc.per_stratum) if n > 0)
    return z_value(delta) * math.sqrt(v)


def _key_range_plan(tree: ABTree, st: strat.Stratification, counter: VisitCounter) -> _Plan:
    ctxs, stats = [], []
    for (a, b), s, h in zip(zip(st.boundaries, st.boundaries[1:]), st.sigma, st.h):
        try:
            c = tree.range_preprocess(a, b, counter)
        except EmptyRangeError:
            continue  # contributes exactly zero
        if c.W > 0:
            ctxs.append(c)
            stats.append(StratumStats(s, max(h, 1.0)))
    return _Plan(ctxs, stats)


def _phase0_sample(tree: ABTree, ctx: RangeContext, n0: int, rng, counter, spec: QuerySpec):
    batch = tree.sample_batch(ctx, n0, rng, counter)
    y = batch.ht_values(spec.predicate, spec.agg)
    state = EstimatorState()
    state.push_many(y)
    sample = strat.PhaseZero.from_unsorted(batch.keys, y, batch.heights, spec.L, spec.U, ctx.lca_height)
    return state, sample


def _ndv(tree: ABTree, ctx: RangeContext) -> int:
    keys = tree.flat.keys[ctx.lo:ctx.hi]
    return int(np.count_nonzero(keys[1:] != keys[:-1])) + 1


def run_query(spec: QuerySpec, tree: ABTree, sink: Sink | None = None) -> QueryResult:
    """Answer ``spec`` over ``tree``; every progress report also goes to ``sink``."""
    t_start = time.perf_counter_ns()
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed))
    counter = VisitCounter()
    delta = spec.delta
    reports: list[ProgressReport] = []
    strategy = spec.strategy

    def emit(rnd: int, n: int, est: Estimate, phase: int, note: str = "") -> None:
        r = ProgressReport(rnd, n, counter.total, est.A_hat, est.eps, phase,
                           time.perf_counter_ns() - t_start, note)
        reports.append(r)
        if note:
            log.warning(note)
        if sink is not None:
            sink(r)

    try:
        ctx = tree.range_preprocess(spec.L, spec.U, counter)
    except EmptyRangeError:
        ctx = None
    if ctx is None or not ctx.W > 0:
        est = Estimate(0.0, 0.0, 0)
        emit(0, 0, est, 0)
        return QueryResult(est, reports, counter, 0, strategy, 0)

    n0 = spec.initial_size(spec.ndv if spec.ndv is not None else _ndv(tree, ctx))
    fallback, fallback_note = False, ""
    plan: _Plan | None = None

    # -- phase 0 -------------------------------------------------------------
    if strategy is Strategy.GREEDY:
        try:
            g = strat.greedy(tree, ctx, n0, spec.delta_n0, spec.tau, spec.c0, spec.eps_target, delta,
                             rng, counter, spec.predicate, spec.agg)
        except BudgetExhaustedError as e:
            strategy, fallback = Strategy.UNIFORM, True
            fallback_note = f"greedy fell back to uniform: {e}"
        else:
            phase0, n_phase0 = g.phase0, g.n_drawn
            s = g.stratification
            plan = _Plan([tree.unit_context(u) for u in s.units], s.stats,
                         offset=math.fsum(p[0] for p in s.exact_parts))
    if strategy is not Strategy.GREEDY:
        state, sample = _phase0_sample(tree, ctx, n0, rng, counter, spec)
        phase0, n_phase0 = state.estimate(delta), n0
    emit(0, n_phase0, phase0, 0, fallback_note)

    def done(e: Estimate) -> bool:
        return e.eps < spec.eps_target and not (e.insufficient and e.n <= 1)

    if done(phase0):
        return QueryResult(phase0, reports, counter, n_phase0, strategy,
                           len(plan.ctxs) if plan else 1, fallback)

    # -- optimisation ----------------------------------------------------------
    if plan is None:
        if strategy is Strategy.UNIFORM:
            plan = _Plan([ctx], [StratumStats(state.sigma, _mean_height(sample, ctx))])
        elif strategy is Strategy.COSTOPT:
            C = strat.candidate_boundaries(sample, spec.d)
            s = strat.costopt(strat.build_cumulative(sample, C), spec.c0, spec.eps_target, delta)
            plan = _key_range_plan(tree, s, counter)
        elif strategy is Strategy.SIZEOPT:
            plan = _key_range_plan(tree, strat.sizeopt(sample, spec.eps_target, delta), counter)
        elif strategy is Strategy.EQUAL:
            plan = _key_range_plan(tree, strat.equal(sample), counter)
            plan.equal = True
    assert plan is not None

    if not plan.ctxs:
        # everything was aggregated exactly
        est = Estimate(plan.offset, 0.0, n_phase0)
        emit(1, n_phase0, est, 1)
        return QueryResult(est, reports, counter, n_phase0, strategy, 0, fallback)

    # -- phase 1 -------------------------------------------------------------
    sampler = _StrataSampler(tree, plan.ctxs, spec.predicate, spec.agg)
    acc = StrataAccumulator(len(plan.ctxs), plan.offset)
    stats = plan.stats
    n1 = 0
    rnd = 0
    combined = phase0
    projected = math.nan
    while not done(combined):
        rnd += 1
        alloc = _allocate(plan, stats, acc, n_phase0, phase0.eps, spec, n1, combined.eps)
        if rnd == 1:
            if plan.equal:
                # equal strata carry placeholder sigmas; use the whole-range one
                projected = z_value(delta) * _eps_sigma(phase0.eps, n_phase0, delta) / math.sqrt(alloc.n_total)
            else:
                projected = _projected_eps(stats, alloc, delta)
        counts = np.asarray(alloc.per_stratum, dtype=np.int64)
        acc.push_blocks(counts, sampler.draw(counts, rng, counter))
        n1 += alloc.n_total
        phase1 = acc.combined(delta)
        combined = combine_phases(phase0, phase1, spec.combine_rule)
        note = ""
        if (rnd == 1 and spec.revert_to_uniform and strategy is not Strategy.UNIFORM
                and phase1.eps > REVERT_FACTOR * projected):
            # fold everything so far into phase 0 and continue uniformly
            note = f"realised half-width {phase1.eps:.6g} exceeds projection {projected:.6g}; reverting to uniform"
            phase0, n_phase0 = combined, n_phase0 + n1
            strategy, fallback = Strategy.UNIFORM, True
            plan = _Plan([ctx], [StratumStats(_pooled_sigma(acc, ctx.W, plan), float(ctx.lca_height))])
            sampler = _StrataSampler(tree, plan.ctxs, spec.predicate, spec.agg)
            acc = StrataAccumulator(1)
            stats = plan.stats
            n1 = 0
        emit(rnd, n_phase0 + n1, combined, 1, note)
        if n_phase0 + n1 > spec.max_samples:
            raise DivergedError(f"no convergence after {n_phase0 + n1} samples")
    return QueryResult(combined, reports, counter, n_phase0 + n1, strategy, len(plan.ctxs), fallback)


def _mean_height(sample: strat.PhaseZero, ctx: RangeContext) -> float:
    return float(sample.heights.mean()) if sample.n0 else float(ctx.lca_height)


def _pooled_sigma(acc: StrataAccumulator, W: float, plan: _Plan) -> float:
    # whole-range HT standard deviation implied by the stratum estimates
    means = acc.mean
    weights = np.array([c.W for c in plan.ctxs]) / W
    var = np.where(acc.n > 1, acc.S2 / np.maximum(acc.n - 1, 1), 0.0)
    safe = np.where(weights > 0, weights, 1)
    within = float(np.sum(var / safe))
    grand = float(np.sum(means))
    between = float(np.sum(weights * (means / safe - grand) ** 2))
    return math.sqrt(max(within + between, 0.0))


def _current_stats(stats: Sequence[StratumStats], acc: StrataAccumulator) -> list[StratumStats]:
    """Phase-0 stratum statistics, replaced by phase-1 ones once a stratum has samples."""
    sig = acc.sigma
    return [StratumStats(float(sig[i]), s.h) if acc.n[i] > 1 else s for i, s in enumerate(stats)]


def _allocate(plan: _Plan, stats, acc: StrataAccumulator, n0: int, eps0: float, spec: QuerySpec,
              n_done: int, eps_now: float) -> Allocation:
    delta = spec.delta
    # variance falls like 1/n: the samples still needed if the current mix held
    extra = n_done * ((eps_now / spec.eps_target) ** 2 - 1.0) if n_done else 0.0
    cur = _current_stats(stats, acc) if n_done else list(stats)
    k = len(cur)
    if plan.equal:
        # literal even split; the batch size solves the same equation with an
        # equal-allocation variance
        if n_done:
            sigma = math.sqrt(k * math.fsum(s.sigma ** 2 for s in cur))
        else:
            sigma = _eps_sigma(eps0, n0, delta)
        one = next_batch([StratumStats(sigma)], n0, eps0, spec.eps_target, delta,
                         spec.step_size, floor=0, n_done=n_done, min_total=extra)
        n_tot = one.n_total if one.n_total > 0 else MIN_PER_STRATUM * k
        return equal_split(n_tot, k, MIN_PER_STRATUM)
    alloc = next_batch(cur, n0, eps0, spec.eps_target, delta, spec.step_size,
                       MIN_PER_STRATUM, n_done, extra)
    if alloc.n_total == 0:
        # the projection says we are done but the bound disagrees: keep going
        return Allocation.of([MIN_PER_STRATUM] * k)
    return alloc


def _eps_sigma(eps0: float, n0: int, delta: float) -> float:
    """Per-sample standard deviation implied by a half-width over ``n0`` samples."""
    return eps0 * math.sqrt(n0) / z_value(delta)


def exact_query(spec: QuerySpec, data) -> float:
    """Exact answer by linear scan. ``data`` is an :class:`ABTree`, anything with
    ``keys``/``values``/``attrs`` arrays, or a sequence of records."""
    if isinstance(data, ABTree):
        f = data.flat
        keys, values, attrs = f.keys, f.values, f.attrs
    elif hasattr(data, "keys") and hasattr(data, "values") and hasattr(data, "attrs"):
        keys, values, attrs = np.asarray(data.keys), np.asarray(data.values), np.asarray(data.attrs)
    else:
        recs = list(data)
        if not recs:
            return 0.0
        keys = np.array([r.key for r in recs], dtype=np.int64)
        values = np.array([r.value for r in recs], dtype=float)
        attrs = np.array([list(r.attrs) for r in recs], dtype=float).reshape(len(recs), -1)
    if len(keys) == 0:
        return 0.0
    attrs = attrs.reshape(len(keys), -1)
    m = (keys >= spec.L) & (keys < spec.U)
    if not spec.predicate.is_trivial:
        m &= spec.predicate.mask(attrs)
    e = spec.agg.expression(values[m], attrs[m])
    return math.fsum(e.tolist())
