from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

from strataqp.data import gen_lineitem, gen_spike  # noqa: E402
from strataqp.index import ABTree, Record  # noqa: E402

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# criterion number -> summary line, filled by test_acceptance.py
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def fig3_tree() -> ABTree:
    """Three-level tree of the aggregate B-tree figure, rebuilt from leaf keys.

    Fanout 4 packs three keys per leaf and four leaves per level-2 node, so
    the three level-2 nodes hold keys -1..10, 11..22 and 23..34.
    """
    return ABTree.build_bulk([Record(k, float(k)) for k in range(-1, 35)], fanout=4)


def make_tree(keys, values=None, attrs=None, fanout=5) -> ABTree:
    keys = np.sort(np.asarray(keys, dtype=np.int64))
    values = np.ones(len(keys)) if values is None else np.asarray(values, dtype=float)
    return ABTree.from_arrays(keys, values, attrs, fanout=fanout)


@pytest.fixture(scope="session")
def spike_small():
    return gen_spike(100_000, 0.02, [((500, 550), 0.5)], keys=1000, seed=7)


@pytest.fixture(scope="session")
def spike_small_tree(spike_small):
    return spike_small.tree()


@pytest.fixture(scope="session")
def lineitem_small():
    return gen_lineitem(100_000, 3, seed=11)
