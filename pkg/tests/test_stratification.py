from __future__ import annotations

import math
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_tree
from oracles import (
    brute_force_costopt, population_sigma, sample_sd, stratum_h_direct, stratum_sigma_direct, z_oracle,
)
from strataqp.errors import BudgetExhaustedError
from strataqp.index import COUNT, UnitKind, VisitCounter
from strataqp.predicate import Predicate
from strataqp.stratification import (
    PhaseZero, Stratification, build_cumulative, candidate_boundaries, costopt, costopt_dp,
    equal, granularity_group, greedy, sizeopt, stratification_objective,
)


def _sample(rng, n=500, n_keys=60, L=0, U=100, const=False) -> PhaseZero:
    keys = rng.integers(L, U, n)
    # a high-variance band in the middle of the key space
    y = np.where((keys > 40) & (keys < 55), rng.exponential(50, n), rng.exponential(2, n))
    y = np.where(rng.random(n) < 0.3, 0.0, y)
    if const:
        y = np.full(n, 3.0)
    heights = rng.integers(1, 4, n)
    return PhaseZero.from_unsorted(keys, y * n, heights, L, U, lca_height=4)


# -- granularity ------------------------------------------------------------------------


def test_granularity_examples():
    assert granularity_group([1, 2, 3, 4, 5, 6], 3) == [1, 3, 5, 7]
    assert granularity_group([1, 2, 3, 4, 5, 6], 1) == [1, 7]
    assert granularity_group([2, 5, 9], 10, L=0, U=20) == [0, 5, 9, 20]
    with pytest.raises(ValueError):
        granularity_group([1], 0)


@given(st.sets(st.integers(-1000, 1000), min_size=1, max_size=200), st.integers(1, 250))
def test_granularity_group_sizes(keys, d):
    keys = sorted(keys)
    C = granularity_group(keys, d, keys[0] - 1, keys[-1] + 5)
    assert len(C) <= d + 1 and C[0] == keys[0] - 1 and C[-1] == keys[-1] + 5
    sizes = [sum(a <= k < b for k in keys) for a, b in zip(C, C[1:])]
    assert max(sizes) - min(sizes) <= 1 and sum(sizes) == len(keys)


# -- cumulative statistics --------------------------------------------------------------------


def test_all_pairs_match_direct_recomputation(rng):
    s = _sample(rng)
    C = candidate_boundaries(s, d=None)
    cs = build_cumulative(s, C)
    assert cs.m[-1] == s.n0 and cs.m[0] == 0
    assert np.all(np.diff(cs.m) >= 0) and np.all(np.diff(cs.hcum) >= 0)
    for a in range(cs.K):
        for b in range(a + 1, cs.K + 1):
            ref = stratum_sigma_direct(s.keys, s.y, C[a], C[b], s.n0)
            assert cs.sigma_range(a, b) == pytest.approx(ref, rel=1e-6, abs=1e-9)
            assert cs.h_range(a, b) == pytest.approx(
                stratum_h_direct(s.keys, s.heights, C[a], C[b], 4.0), rel=1e-9)


def test_whole_range_is_global_statistics(rng):
    s = _sample(rng)
    cs = build_cumulative(s, [s.L, s.U])
    assert cs.sigma_range(0, 1) == pytest.approx(sample_sd(s.y), rel=1e-9)
    assert cs.h_range(0, 1) == pytest.approx(s.heights.mean())


def test_rejecting_filter_and_empty_ranges(rng):
    s = _sample(rng)
    s = PhaseZero(s.keys, np.zeros(s.n0), s.heights, s.L, s.U, 3)
    cs = build_cumulative(s, candidate_boundaries(s, d=20))
    assert np.all(cs.S == 0) and np.all(cs.S2 == 0)
    # a range beyond the last sampled key
    s2 = PhaseZero(np.array([1, 2]), np.array([1.0, 5.0]), np.array([1.0, 2.0]), 0, 10, 3)
    cs2 = build_cumulative(s2, [0, 2, 5, 10])
    assert cs2.sigma_range(2, 3) == 0 and cs2.h_range(2, 3) == 3
    assert cs2.sigma_range(0, 2) >= 0


# -- CostOpt ------------------------------------------------------------------------


def test_identical_values_give_one_stratum(rng):
    s = _sample(rng, const=True)
    res = costopt(build_cumulative(s, candidate_boundaries(s)), eps=1.0)
    assert res.boundaries == [s.L, s.U] and res.sigma == [0.0]


def _random_instance(g):
    n = int(g.integers(20, 200))
    s = _sample(g, n=n, n_keys=40)
    K = int(g.integers(1, 13))
    C = candidate_boundaries(s, d=K)
    return s, C


@pytest.mark.parametrize("seed", range(25))
def test_costopt_matches_brute_force(seed):
    g = np.random.default_rng(seed)
    s, C = _random_instance(g)
    c0 = float(g.choice([1.0, 100.0, 1e4]))
    eps = float(g.uniform(0.05, 2.0)) * s.y.sum() / s.n0
    cs = build_cumulative(s, C)
    best, _ = brute_force_costopt(C, s.keys, s.y, s.heights, s.n0, c0, z_oracle(0.05) ** 2 / eps ** 2, 4.0)
    for stop in ("none", "bound"):
        res = costopt_dp(cs, c0, eps, 0.05, stop=stop)
        assert res.objective == pytest.approx(best, rel=1e-9)
        assert stratification_objective(cs, res.boundary_idx, c0, eps, 0.05) == pytest.approx(best, rel=1e-9)
    # the first-non-improvement stop never does better than the optimum
    assert costopt_dp(cs, c0, eps, 0.05, stop="vshape").objective >= best * (1 - 1e-9)


def test_vshape_stop_can_miss_the_optimum():
    """With sampled sigma the objective need not be V-shaped in k."""
    misses = 0
    for seed in range(100):
        g = np.random.default_rng(1000 + seed)
        s, C = _random_instance(g)
        cs = build_cumulative(s, C)
        eps = float(g.uniform(0.05, 2.0)) * s.y.sum() / s.n0
        full = costopt_dp(cs, 0.0, eps, 0.05, stop="none").objective
        misses += costopt_dp(cs, 0.0, eps, 0.05, stop="vshape").objective > full * (1 + 1e-9)
    assert misses > 0


def test_two_band_sample_isolates_band():
    g = np.random.default_rng(3)
    keys = np.sort(g.integers(0, 100, 600))
    y = np.where((keys >= 40) & (keys < 50), g.exponential(1000, 600), 1.0)
    s = PhaseZero(keys, y, np.ones(600), 0, 100, 1)
    cs = build_cumulative(s, candidate_boundaries(s, d=10))
    res = costopt(cs, c0=1.0, eps=10.0)
    assert res.boundaries == [0, 40, 50, 100]
    best, _ = brute_force_costopt(list(cs.C), keys, y, s.heights, 600, 1.0, z_oracle(0.05) ** 2 / 100, 1.0)
    assert res.objective == pytest.approx(best, rel=1e-9)


@pytest.mark.parametrize("stop", ["bound", "none"])
def test_costopt_d100_under_one_second(rng, stop):
    s = _sample(rng, n=100_000, U=10_000)
    t = time.perf_counter()
    costopt(build_cumulative(s, candidate_boundaries(s, d=100)), eps=1.0, stop=stop)
    assert time.perf_counter() - t < 1.0


def test_tie_break_is_deterministic(rng):
    s = _sample(rng)
    cs = build_cumulative(s, candidate_boundaries(s, d=30))
    a = costopt(cs, c0=10.0, eps=50.0)
    b = costopt(cs, c0=10.0, eps=50.0)
    assert a == b


# -- population statistics under merges ------------------------------------------------------


@settings(max_examples=30)
@given(st.integers(0, 2**32 - 1))
def test_merge_monotonicity(seed):
    g = np.random.default_rng(seed)
    n = int(g.integers(10, 2000))
    keys = np.sort(g.integers(0, 300, n))
    vals = g.exponential(10, n) * (g.random(n) < 0.5)
    tree = make_tree(keys, vals, fanout=int(g.integers(4, 12)))
    cuts = np.unique(np.r_[0, g.integers(1, 300, 6), 300])
    parts = [(a, b) for a, b in zip(cuts, cuts[1:]) if np.any((keys >= a) & (keys < b))]
    for (a, b), (c, d) in zip(parts, parts[1:]):
        def sig(lo, hi):
            return population_sigma(vals[(keys >= lo) & (keys < hi)])
        s1, s2, s12 = sig(a, b), sig(c, d), sig(a, d)
        assert s1 + s2 <= s12 * (1 + 1e-9) + 1e-9
        h1 = tree.range_preprocess(a, b).lca_height
        h2 = tree.range_preprocess(c, d).lca_height
        assert tree.range_preprocess(a, d).lca_height >= max(h1, h2)


# -- SizeOpt / Equal -------------------------------------------------------------------------


def test_sizeopt_construction():
    s = PhaseZero(np.array([5, 5, 5]), np.array([1.0, 2.0, 3.0]), np.ones(3), 0, 10, 2)
    r = sizeopt(s)
    assert r.k == 1 and r.boundaries == [0, 10]
    s = PhaseZero(np.array([3, 3, 6, 8, 8]), np.array([1.0, 3.0, 7.0, 2.0, 2.0]),
                  np.array([1.0, 2.0, 3.0, 1.0, 1.0]), 0, 10, 2)
    r = sizeopt(s)
    assert r.boundaries == [0, 6, 8, 10]
    assert r.sigma == pytest.approx([2 / 5 * sample_sd([1, 3]), 0.0, 0.0])
    assert r.h == pytest.approx([1.5, 3.0, 1.0])


def test_sizeopt_matches_groupby_oracle(rng):
    s = _sample(rng)
    r = sizeopt(s)
    for (a, b), sig in zip(zip(r.boundaries, r.boundaries[1:]), r.sigma):
        assert sig == pytest.approx(stratum_sigma_direct(s.keys, s.y, a, b, s.n0), rel=1e-9, abs=1e-12)


def test_equal_construction(rng):
    s = _sample(rng)
    e, z = equal(s), sizeopt(s)
    assert e.boundaries == z.boundaries and e.h == z.h and set(e.sigma) == {1.0}
    one = PhaseZero(np.array([2, 2]), np.array([1.0, 1.0]), np.ones(2), 0, 5, 1)
    assert equal(one).k == 1


def test_stratification_validation():
    with pytest.raises(AssertionError):
        Stratification([0, 5, 5], [1.0, 1.0], [1.0, 1.0])
    with pytest.raises(ValueError):
        sizeopt(PhaseZero(np.array([], dtype=int), np.array([]), np.array([]), 0, 1, 1))


# -- Greedy ------------------------------------------------------------------------------


def _spike_tree():
    g = np.random.default_rng(4)
    keys = np.repeat(np.arange(1000), 40)
    flag = (g.random(len(keys)) < np.where((keys >= 600) & (keys < 610), 0.6, 0.01)).astype(float)
    return make_tree(keys, np.ones(len(keys)), flag[:, None], fanout=16)


def test_greedy_tau_inf_zero_splits():
    tree = _spike_tree()
    ctx = tree.range_preprocess(13, 987)
    r = greedy(tree, ctx, 10**6, 100, math.inf, rng=np.random.default_rng(0),
               predicate=Predicate.parse("0=1"), agg=COUNT)
    assert r.splits == 0
    assert [u.key_range for u in r.stratification.units] == [
        u.key_range for u in ctx.decomposition if u.kind is UnitKind.SUBTREE]


def test_greedy_uniform_low_variance_no_splits():
    tree = make_tree(np.repeat(np.arange(500), 20), fanout=16)
    ctx = tree.range_preprocess(0, 500)
    r = greedy(tree, ctx, 10**6, 200, 0.004, eps=100.0, rng=np.random.default_rng(1), agg=COUNT)
    assert r.splits == 0
    assert r.phase0.eps == 0 and r.phase0.A_hat == 10_000


def test_greedy_descends_into_spike():
    tree = _spike_tree()
    ctx = tree.range_preprocess(0, 1000)
    c = VisitCounter()
    r = greedy(tree, ctx, 20_000, 200, 0.004, eps=5.0, rng=np.random.default_rng(2), counter=c,
               predicate=Predicate.parse("0=1"), agg=COUNT)
    assert r.splits >= 2
    spike_units = [u for u in r.stratification.units if u.key_range[0] < 610 and u.key_range[1] > 600]
    whole = ctx.U - ctx.L
    assert all(u.key_range[1] - u.key_range[0] < whole / 16 for u in spike_units)


@pytest.mark.parametrize("seed", range(5))
def test_greedy_budget_conservation(seed):
    tree = _spike_tree()
    ctx = tree.range_preprocess(77, 901)
    n_init = sum(u.kind is UnitKind.SUBTREE for u in ctx.decomposition)
    budget, dn0 = 5000, 100
    r = greedy(tree, ctx, budget, dn0, 0.0, eps=1.0, rng=np.random.default_rng(seed),
               predicate=Predicate.parse("0=1"), agg=COUNT)
    assert r.n_drawn <= budget + tree.fanout * dn0
    kids = sum(len(n.children) for root in r.roots for n in _walk(root))
    assert r.n_drawn == (n_init + kids) * dn0


def _walk(node):
    yield node
    for c in node.children:
        yield from _walk(c)


def test_greedy_budget_too_small():
    tree = _spike_tree()
    ctx = tree.range_preprocess(77, 901)
    with pytest.raises(BudgetExhaustedError):
        greedy(tree, ctx, 10, 100, 0.004, rng=np.random.default_rng(0))


def test_greedy_exact_leaf_runs():
    tree = make_tree(range(200), np.arange(200.0), fanout=5)
    ctx = tree.range_preprocess(3, 197)
    r = greedy(tree, ctx, 10**5, 50, math.inf, rng=np.random.default_rng(0))
    exact = sum(s for s, _ in r.stratification.exact_parts)
    leaf_units = [u for u in ctx.decomposition if u.kind is UnitKind.LEAF_RUN]
    assert exact == sum(sum(range(u.lo, u.hi)) for u in leaf_units)
