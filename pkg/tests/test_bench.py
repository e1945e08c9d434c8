from __future__ import annotations

import csv
import io

import pytest

from strataqp.bench import EPS_LEVELS, FIELDS, BenchResult, bench, summarize, write_results
from strataqp.data import gen_spike
from strataqp.engine import QuerySpec, Strategy
from strataqp.index import COUNT


@pytest.fixture(scope="module")
def tiny():
    ds = gen_spike(20_000, 0.05, [((40, 45), 0.6)], keys=100, seed=3)
    return ds, QuerySpec(10, 90, 1.0, agg=COUNT, predicate=ds.predicate("cancelled=1"))


def test_cardinality_and_csv(tiny):
    ds, template = tiny
    res = bench(ds, template, list(Strategy), EPS_LEVELS, repeats=10)
    assert len(res) == 250
    text = write_results(res)
    rows = list(csv.DictReader(io.StringIO(text)))
    assert tuple(rows[0]) == FIELDS and len(rows) == 250
    exact = ds.exact(10, 90, template.predicate, COUNT)
    assert {float(r["exact_answer"]) for r in rows} == {exact}
    for r in res:
        assert r.eps_target == pytest.approx(r.eps_frac * exact)
        assert r.final_ci < r.eps_target
    cells = summarize(res)
    assert len(cells) == 25 and all(c["runs"] == 10 for c in cells.values())


def test_parallel_matches_sequential(tiny):
    ds, template = tiny
    a = bench(ds, template, ["costopt", "uniform"], [0.02], repeats=4)
    b = bench(ds, template, ["costopt", "uniform"], [0.02], repeats=4, workers=2)
    key = lambda r: (r.strategy, r.seed, r.final_estimate, r.final_ci, r.node_visits)
    assert [key(r) for r in a] == [key(r) for r in b]


def test_within_ci_consistency():
    with pytest.raises(AssertionError):
        BenchResult("uniform", 0.01, 1.0, 0, 1, 1, 1, 10.0, 1.0, 20.0, True)


def test_write_to_path(tmp_path, tiny):
    ds, template = tiny
    res = bench(ds, template, ["uniform"], [0.05], repeats=2)
    p = tmp_path / "out.csv"
    assert write_results(res, str(p)) is None
    assert p.read_text().splitlines()[0] == ",".join(FIELDS)
