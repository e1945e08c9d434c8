from __future__ import annotations

import math

import numpy as np
import pytest

from conftest import make_tree
from strataqp.engine import ProgressReport, QuerySpec, Strategy, exact_query, run_query
from strataqp.errors import DivergedError, InvalidValueError
from strataqp.index import COUNT, SUM, ABTree, Record
from strataqp.predicate import Predicate

STRATEGIES = list(Strategy)
CANCELLED = Predicate.parse("0=1")


def test_spec_validation():
    with pytest.raises(InvalidValueError):
        QuerySpec(5, 5, 1.0)
    with pytest.raises(InvalidValueError):
        QuerySpec(0, 5, 0.0)
    with pytest.raises(InvalidValueError):
        QuerySpec(0, 5, 1.0, confidence=1.0)
    with pytest.raises(ValueError):
        QuerySpec(0, 5, 1.0, strategy="bogus")
    assert QuerySpec(0, 5, 1.0).initial_size(10) == 2000
    assert QuerySpec(0, 5, 1.0).initial_size(10**6) == 100_000
    assert QuerySpec(0, 5, 1.0, n0=77).initial_size(10) == 77


def test_report_csv_is_stable():
    r = ProgressReport(2, 300, 4100, 0.1, 2.5, 1, 123456)
    assert r.csv() == "2,1,300,4100,0.1,2.5"
    assert ProgressReport.CSV_HEADER.count(",") == r.csv().count(",")


@pytest.mark.parametrize("strategy", STRATEGIES)
def test_low_variance_skips_phase1(strategy):
    tree = make_tree(np.repeat(np.arange(200), 10), fanout=8)
    r = run_query(QuerySpec(10, 190, 1.0, agg=COUNT, strategy=strategy), tree)
    assert len(r.reports) == 1 and r.reports[0].phase == 0
    assert r.estimate.A_hat == 1800 and r.estimate.eps == 0


@pytest.mark.parametrize("strategy", STRATEGIES)
def test_infinite_target_stops_after_phase0(strategy, spike_small_tree):
    r = run_query(QuerySpec(100, 900, math.inf, agg=COUNT, predicate=CANCELLED, strategy=strategy),
                  spike_small_tree)
    assert len(r.reports) == 1


@pytest.mark.parametrize("strategy", STRATEGIES)
def test_reaches_target_and_reports(strategy, spike_small, spike_small_tree):
    exact = spike_small.exact(100, 900, CANCELLED, COUNT)
    seen = []
    spec = QuerySpec(100, 900, 0.02 * exact, agg=COUNT, predicate=CANCELLED, strategy=strategy, seed=3)
    r = run_query(spec, spike_small_tree, sink=seen.append)
    assert seen == r.reports
    assert r.estimate.eps < spec.eps_target
    assert r.reports[0].phase == 0 and all(p.phase == 1 for p in r.reports[1:])
    totals = [p.samples_total for p in r.reports]
    assert totals == sorted(totals)
    assert all(p.ci_half_width >= 0 for p in r.reports)
    assert r.samples_total == r.reports[-1].samples_total
    assert r.node_visits == r.reports[-1].node_visits


@pytest.mark.parametrize("strategy", STRATEGIES)
def test_determinism(strategy, spike_small, spike_small_tree):
    exact = spike_small.exact(100, 900, CANCELLED, COUNT)
    spec = QuerySpec(100, 900, 0.01 * exact, agg=COUNT, predicate=CANCELLED, strategy=strategy, seed=11)
    a = [r.csv() for r in run_query(spec, spike_small_tree).reports]
    b = [r.csv() for r in run_query(spec, spike_small_tree).reports]
    assert a == b


def test_different_seeds_differ(spike_small_tree):
    runs = {run_query(QuerySpec(100, 900, 50.0, agg=COUNT, predicate=CANCELLED, seed=s),
                      spike_small_tree).estimate.A_hat for s in range(4)}
    assert len(runs) > 1


@pytest.mark.parametrize("strategy", STRATEGIES)
def test_degenerate_inputs(strategy):
    tree = make_tree([1, 2, 3, 50, 51], values=[5.0, 5.0, 5.0, 5.0, 5.0],
                     attrs=np.zeros((5, 1)), fanout=4)
    empty = run_query(QuerySpec(10, 40, 1.0, strategy=strategy), tree)
    assert (empty.estimate.A_hat, empty.estimate.eps) == (0.0, 0.0) and len(empty.reports) == 1
    single = run_query(QuerySpec(2, 3, 1.0, strategy=strategy), tree)
    assert (single.estimate.A_hat, single.estimate.eps) == (5.0, 0.0)
    same = run_query(QuerySpec(0, 100, 1e-6, strategy=strategy), tree)
    assert (same.estimate.A_hat, same.estimate.eps) == (25.0, 0.0)
    none = run_query(QuerySpec(0, 100, 1e-6, predicate=Predicate.parse("0>1"), strategy=strategy), tree)
    assert (none.estimate.A_hat, none.estimate.eps) == (0.0, 0.0)


def test_step_size_caps_batches(spike_small, spike_small_tree):
    exact = spike_small.exact(100, 900, CANCELLED, COUNT)
    spec = QuerySpec(100, 900, 0.01 * exact, agg=COUNT, predicate=CANCELLED, n0=2000,
                     strategy=Strategy.UNIFORM, step_size=5000)
    r = run_query(spec, spike_small_tree)
    steps = np.diff([p.samples_total for p in r.reports])
    assert len(steps) > 1 and steps.max() <= 5000


def test_costopt_visits_fewer_nodes_than_uniform(spike_small, spike_small_tree):
    exact = spike_small.exact(100, 900, CANCELLED, COUNT)
    visits = {}
    for s in (Strategy.COSTOPT, Strategy.UNIFORM):
        visits[s] = sum(run_query(QuerySpec(100, 900, 0.005 * exact, agg=COUNT, predicate=CANCELLED,
                                            strategy=s, seed=seed), spike_small_tree).node_visits
                        for seed in range(3))
    assert visits[Strategy.COSTOPT] < visits[Strategy.UNIFORM]


def test_diverged_cap(spike_small_tree):
    spec = QuerySpec(100, 900, 1e-3, agg=COUNT, predicate=CANCELLED, n0=100, max_samples=5000,
                     strategy=Strategy.UNIFORM, step_size=1000)
    with pytest.raises(DivergedError):
        run_query(spec, spike_small_tree)


def test_greedy_budget_fallback(spike_small_tree):
    spec = QuerySpec(100, 900, 5.0, agg=COUNT, predicate=CANCELLED, n0=100, delta_n0=600,
                     strategy=Strategy.GREEDY)
    r = run_query(spec, spike_small_tree)
    assert r.fallback and r.strategy is Strategy.UNIFORM
    assert "fell back" in r.reports[0].note


def test_revert_to_uniform_flag(spike_small_tree):
    # a tiny phase 0 misjudges the variance badly enough to trigger the switch
    spec = QuerySpec(100, 900, 20.0, agg=COUNT, predicate=CANCELLED, n0=40, d=40,
                     strategy=Strategy.SIZEOPT, revert_to_uniform=True, seed=1)
    r = run_query(spec, spike_small_tree)
    assert r.fallback and r.strategy is Strategy.UNIFORM
    assert any("reverting" in p.note for p in r.reports)
    assert r.estimate.eps < spec.eps_target
    plain = run_query(QuerySpec(100, 900, 20.0, agg=COUNT, predicate=CANCELLED, n0=40, d=40,
                                strategy=Strategy.SIZEOPT, seed=1), spike_small_tree)
    assert not plain.fallback


def test_combine_rule_is_configurable(spike_small, spike_small_tree):
    exact = spike_small.exact(100, 900, CANCELLED, COUNT)
    for rule in ("variance", "linear"):
        r = run_query(QuerySpec(100, 900, 0.02 * exact, agg=COUNT, predicate=CANCELLED, combine_rule=rule),
                      spike_small_tree)
        assert r.estimate.eps < 0.02 * exact


def test_weighted_tree_estimates_weighted_sum():
    g = np.random.default_rng(0)
    keys = np.sort(g.integers(0, 100, 2000))
    vals = g.exponential(3, 2000)
    tree = ABTree.from_arrays(keys, vals, weights=vals, fanout=8)
    # weight-proportional sampling with e = weight gives a constant HT value
    r = run_query(QuerySpec(0, 100, 1e-6, agg=SUM, strategy=Strategy.UNIFORM), tree)
    assert r.estimate.A_hat == pytest.approx(vals.sum(), rel=1e-9) and r.estimate.eps < 1e-6


# -- exact answers -------------------------------------------------------------------------


def test_exact_query_examples(spike_small):
    recs = [Record(1, 2.0, (1.0,)), Record(5, 3.0, (0.0,)), Record(9, 4.0, (1.0,))]
    assert exact_query(QuerySpec(100, 200, 1.0), recs) == 0
    assert exact_query(QuerySpec(0, 6, 1.0, agg=COUNT), recs) == 2
    assert exact_query(QuerySpec(0, 10, 1.0, predicate=Predicate.parse("0=1")), recs) == 6.0
    assert exact_query(QuerySpec(0, 10, 1.0), []) == 0
    full = exact_query(QuerySpec(-10**9, 10**9, 1.0), spike_small)
    assert full == pytest.approx(spike_small.values.sum())
    tree_ans = exact_query(QuerySpec(100, 900, 1.0, agg=COUNT, predicate=CANCELLED), spike_small.tree())
    assert tree_ans == spike_small.exact(100, 900, CANCELLED, COUNT)
