"""Stratification optimizers.

``costopt`` searches all stratifications over a set of candidate boundaries
with dynamic programming, ``greedy`` refines the index's own range
decomposition top-down, and ``sizeopt``/``equal`` cut one stratum per distinct
sampled key.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .allocation import StratumStats, projected_cost
from .errors import BudgetExhaustedError
from .estimation import Estimate, EstimatorState, combine_strata, overlap_adjust, z_value
from .index import ABTree, Agg, DecompUnit, RangeContext, SUM, UnitKind, VisitCounter
from .predicate import ACCEPT_ALL, Predicate

DEFAULT_DELTA_N0 = 600
DEFAULT_TAU = 0.004
DEFAULT_GRANULARITY = 100
DEFAULT_C0 = 100.0


@dataclass
class Stratification:
    boundaries: list[int]
    sigma: list[float]
    h: list[float]
    exact_parts: list[tuple[float, int]] = field(default_factory=list)
    units: list[DecompUnit] | None = None
    objective: float = math.nan

    def __post_init__(self) -> None:
        assert len(self.sigma) == len(self.h)
        if self.units is None:
            # key-range strata
            assert len(self.boundaries) == len(self.sigma) + 1
            assert all(a < b for a, b in zip(self.boundaries, self.boundaries[1:]))
        else:
            # index-unit strata; zero strata when exact parts cover the range
            assert len(self.units) == len(self.sigma)

    @property
    def k(self) -> int:
        return len(self.sigma)

    @property
    def stats(self) -> list[StratumStats]:
        return [StratumStats(s, max(h, 1.0)) for s, h in zip(self.sigma, self.h)]


@dataclass
class PhaseZero:
    """Phase-0 sample laid out in key order: keys, HT values, descent heights."""

    keys: np.ndarray
    y: np.ndarray
    heights: np.ndarray
    L: int
    U: int
    lca_height: int

    @classmethod
    def from_unsorted(cls, keys, y, heights, L: int, U: int, lca_height: int) -> "PhaseZero":
        order = np.argsort(keys, kind="stable")
        return cls(np.asarray(keys)[order], np.asarray(y, dtype=float)[order],
                   np.asarray(heights, dtype=float)[order], L, U, lca_height)

    @property
    def n0(self) -> int:
        return len(self.keys)


def granularity_group(distinct_keys: Sequence[int], d: int, L: int | None = None,
                      U: int | None = None) -> list[int]:
    """Candidate boundaries from up to ``d`` groups of equally many distinct keys.

    The first group starts at ``L`` (default: the smallest key) and the last
    ends at ``U`` (default: largest key + 1).
    """
    keys = np.asarray(distinct_keys)
    if d < 1:
        raise ValueError("granularity must be at least 1")
    if len(keys) == 0:
        raise ValueError("need at least one key")
    L = int(keys[0]) if L is None else L
    U = int(keys[-1]) + 1 if U is None else U
    groups = np.array_split(keys, min(d, len(keys)))
    return [L] + [int(g[0]) for g in groups[1:]] + [U]


@dataclass
class CumulativeStats:
    """Prefix moments of the phase-0 sample at each candidate boundary.

    Index ``j`` covers samples with key ``< C[j]``: ``m`` counts them, ``S``
    sums their HT values, ``S2`` holds their pooled squared deviations and
    ``hcum`` sums their descent heights.
    """

    C: np.ndarray
    m: np.ndarray
    S: np.ndarray
    S2: np.ndarray
    hcum: np.ndarray
    changes_in: np.ndarray = field(repr=False)
    changes_at: np.ndarray = field(repr=False)
    n0: int = 0
    default_h: float = 1.0

    @property
    def K(self) -> int:
        return len(self.C) - 1

    def _segment(self, j_lo, j_hi):
        m_lo, m_hi = self.m[j_lo], self.m[j_hi]
        ms = m_hi - m_lo
        Ss = self.S[j_hi] - self.S[j_lo]
        with np.errstate(divide="ignore", invalid="ignore"):
            cross = np.where(
                (m_lo > 0) & (ms > 0),
                m_lo * ms * (self.S[j_lo] / np.where(m_lo > 0, m_lo, 1)
                             - Ss / np.where(ms > 0, ms, 1)) ** 2 / np.where(m_hi > 0, m_hi, 1),
                0.0)
        S2s = self.S2[j_hi] - self.S2[j_lo] - cross
        # a segment whose values never change has exactly zero spread
        constant = (self.changes_in[j_hi] - self.changes_at[j_lo]) <= 0
        S2s = np.where(constant, 0.0, np.maximum(S2s, 0.0))
        return ms, S2s

    def sigma_range(self, j_lo, j_hi):
        """Per-sample standard deviation of the stratum estimator for
        ``[C[j_lo], C[j_hi])``; 0 when fewer than two samples fall inside."""
        ms, S2s = self._segment(j_lo, j_hi)
        with np.errstate(divide="ignore", invalid="ignore"):
            sd = np.sqrt(S2s / np.where(ms > 1, ms - 1, 1))
            out = np.where(ms > 1, ms / self.n0 * sd, 0.0)
        return float(out) if np.ndim(out) == 0 else out

    def h_range(self, j_lo, j_hi):
        ms = self.m[j_hi] - self.m[j_lo]
        hs = self.hcum[j_hi] - self.hcum[j_lo]
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(ms > 0, hs / np.where(ms > 0, ms, 1), self.default_h)
        return float(out) if np.ndim(out) == 0 else out

    def pair_costs(self) -> np.ndarray:
        """``w[j', j] = sigma * sqrt(h)`` for every candidate pair; ``inf`` when ``j' >= j``."""
        K = self.K
        jl, jh = np.meshgrid(np.arange(K + 1), np.arange(K + 1), indexing="ij")
        valid = jl < jh
        jl_v, jh_v = np.where(valid, jl, 0), np.where(valid, jh, 0)
        w = self.sigma_range(jl_v, jh_v) * np.sqrt(self.h_range(jl_v, jh_v))
        return np.where(valid, w, np.inf)


def build_cumulative(sample: PhaseZero, C: Sequence[int]) -> CumulativeStats:
    """Prefix statistics at candidate boundaries ``C`` in O(n0 + K) time."""
    C = np.asarray(C, dtype=np.int64)
    keys, y, hts = sample.keys, sample.y, sample.heights
    n = len(keys)
    m = np.searchsorted(keys, C, side="left").astype(np.int64)
    m[-1] = n if C[-1] > (keys[-1] if n else C[-1] - 1) else m[-1]

    # per-gap moments, then Youngs-Cramer style pooling from left to right
    K = len(C) - 1
    S = np.zeros(K + 1)
    S2 = np.zeros(K + 1)
    hcum = np.zeros(K + 1)
    n_acc, mean_acc, s2_acc, h_acc = 0, 0.0, 0.0, 0.0
    for j in range(1, K + 1):
        a, b = m[j - 1], m[j]
        if b > a:
            seg = y[a:b]
            gm = float(seg.mean())
            if seg.min() == seg.max():
                gm, gs2 = float(seg[0]), 0.0
            else:
                gs2 = float(((seg - gm) ** 2).sum())
            cnt = b - a
            tot = n_acc + cnt
            d = gm - mean_acc
            s2_acc += gs2 + (d * d * n_acc * cnt / tot if n_acc else 0.0)
            mean_acc = gm if n_acc == 0 else mean_acc + d * cnt / tot
            n_acc = tot
            h_acc += float(hts[a:b].sum())
        S[j] = mean_acc * n_acc
        S2[j] = s2_acc
        hcum[j] = h_acc

    # changes[i] = number of t in [1, i) with y[t] != y[t-1]
    changes = np.zeros(n + 1, dtype=np.int64)
    if n > 1:
        changes[2:] = np.cumsum(y[1:] != y[:-1])
    changes_in = changes[m]
    changes_at = changes[np.minimum(m + 1, n)]
    return CumulativeStats(C, m, S, S2, hcum, changes_in, changes_at, n, float(sample.lca_height))


def candidate_boundaries(sample: PhaseZero, d: int | None = DEFAULT_GRANULARITY) -> list[int]:
    """Distinct sampled keys (pre-grouped by granularity ``d``) plus ``L`` and ``U``."""
    distinct = np.unique(sample.keys)
    if len(distinct) == 0:
        return [sample.L, sample.U]
    d = len(distinct) if d is None or d <= 0 else d
    return granularity_group(distinct, d, sample.L, sample.U)


@dataclass
class DPResult:
    boundary_idx: list[int]
    objective: float
    objectives: list[float]


STOP_RULES = ("bound", "vshape", "none")


def costopt_dp(stats: CumulativeStats, c0: float, eps: float, delta: float,
               stop: str = "bound") -> DPResult:
    """Minimise ``c0*k + Z^2/eps^2 * g_k^2`` over stratifications of ``stats.C``.

    ``g_k[j]`` is the smallest ``sum sigma*sqrt(h)`` over ``k`` strata covering
    ``[C_0, C_j)``. The sweep over ``k`` ends early under ``stop``:

    * ``"bound"``: once ``c0*k`` alone reaches the best objective, since no
      larger ``k`` can beat it. Always returns the global optimum.
    * ``"vshape"``: at the first ``k`` whose objective does not improve on
      ``k - 1``. Faster, but can stop in a local minimum when sigma is
      estimated from a sample.
    * ``"none"``: sweep every ``k`` up to ``K``.
    """
    if stop not in STOP_RULES:
        raise ValueError(f"unknown stop rule {stop!r}")
    K = stats.K
    z2 = z_value(delta) ** 2 / eps ** 2
    w = stats.pair_costs()
    g = w[0].copy()  # g_1[j]
    choices: list[np.ndarray] = [np.zeros(K + 1, dtype=np.int64)]
    objectives = [c0 + z2 * g[K] ** 2]
    best_k, best_f = 1, objectives[0]
    idx = np.arange(K + 1)
    for k in range(2, K + 1):
        if stop == "bound" and c0 * k >= best_f:
            break
        # g_k[j] = min_{k-1 <= j' < j} g_{k-1}[j'] + w[j', j]
        prev = np.where(idx >= k - 1, g, np.inf)
        cand = prev[:, None] + w
        arg = np.argmin(cand, axis=0)  # first minimum: smallest j' wins ties
        g = cand[arg, idx]
        choices.append(arg)
        f = c0 * k + z2 * g[K] ** 2
        objectives.append(f)
        if f < best_f:
            best_k, best_f = k, f
        elif stop == "vshape":
            break
    bounds = [K]
    j = K
    for k in range(best_k, 1, -1):
        j = int(choices[k - 1][j])
        bounds.append(j)
    bounds.append(0)
    return DPResult(bounds[::-1], best_f, objectives)


def costopt(stats: CumulativeStats, c0: float = DEFAULT_C0, eps: float = 1.0, delta: float = 0.05,
            stop: str = "bound") -> Stratification:
    res = costopt_dp(stats, c0, eps, delta, stop)
    b = res.boundary_idx
    sig = [float(stats.sigma_range(b[i], b[i + 1])) for i in range(len(b) - 1)]
    hh = [float(stats.h_range(b[i], b[i + 1])) for i in range(len(b) - 1)]
    return Stratification([int(stats.C[j]) for j in b], sig, hh, objective=res.objective)


def stratification_objective(stats: CumulativeStats, boundary_idx: Sequence[int], c0: float,
                             eps: float, delta: float) -> float:
    z2 = z_value(delta) ** 2 / eps ** 2
    s = math.fsum(stats.sigma_range(a, b) * math.sqrt(stats.h_range(a, b))
                  for a, b in zip(boundary_idx, boundary_idx[1:]))
    return c0 * (len(boundary_idx) - 1) + z2 * s * s


def _distinct_groups(sample: PhaseZero):
    keys = sample.keys
    starts = np.flatnonzero(np.r_[True, keys[1:] != keys[:-1]])
    counts = np.diff(np.r_[starts, len(keys)])
    bounds = [sample.L] + [int(k) for k in keys[starts[1:]]] + [sample.U]
    return starts, counts, bounds


def _group_sd(y: np.ndarray, starts: np.ndarray, counts: np.ndarray) -> np.ndarray:
    """Sample standard deviation of each contiguous group; exactly 0 for constant groups."""
    mean = np.add.reduceat(y, starts) / counts
    lo = np.minimum.reduceat(y, starts)
    hi = np.maximum.reduceat(y, starts)
    mean = np.where(lo == hi, lo, mean)
    dev = y - np.repeat(mean, counts)
    S2 = np.add.reduceat(dev * dev, starts)
    with np.errstate(invalid="ignore", divide="ignore"):
        var = np.where(counts > 1, S2 / np.maximum(counts - 1, 1), 0.0)
    return np.where(lo == hi, 0.0, np.sqrt(var))


def sizeopt(sample: PhaseZero, eps: float = 1.0, delta: float = 0.05) -> Stratification:
    """One stratum per distinct sampled key, sigma from one pass over the sorted sample.

    ``eps`` and ``delta`` only matter to the Neyman allocation applied later.
    """
    if sample.n0 == 0:
        raise ValueError("sizeopt needs a nonempty sample")
    starts, counts, bounds = _distinct_groups(sample)
    sig = counts / sample.n0 * _group_sd(sample.y, starts, counts)
    hh = np.add.reduceat(sample.heights, starts) / counts
    return Stratification(bounds, sig.tolist(), hh.tolist())


def equal(sample: PhaseZero) -> Stratification:
    """Same strata as :func:`sizeopt` with unit sigma (no variance estimation)."""
    if sample.n0 == 0:
        raise ValueError("equal needs a nonempty sample")
    starts, counts, bounds = _distinct_groups(sample)
    hh = np.add.reduceat(sample.heights, starts) / counts
    return Stratification(bounds, [1.0] * len(counts), hh.tolist())


# -- Greedy ----------------------------------------------------------------------


@dataclass
class _GNode:
    unit: DecompUnit
    state: EstimatorState
    splittable: bool
    children: list["_GNode"] = field(default_factory=list)
    # children kept for the estimate only; the node itself stays a stratum
    collapsed: bool = False

    def estimate(self, delta: float) -> Estimate:
        own = self.state.estimate(delta)
        if not self.children:
            return own
        return overlap_adjust(own, [c.estimate(delta) for c in self.children])

    def leaves(self):
        if not self.children or self.collapsed:
            yield self
        else:
            for c in self.children:
                yield from c.leaves()


@dataclass
class GreedyResult:
    stratification: Stratification
    phase0: Estimate
    n_drawn: int
    splits: int
    roots: list[_GNode] = field(repr=False)


def _sample_unit(tree: ABTree, unit: DecompUnit, n: int, rng, counter, predicate, agg) -> EstimatorState:
    st = EstimatorState()
    if unit.weight > 0:
        batch = tree.sample_batch(tree.unit_context(unit), n, rng, counter)
        st.push_many(batch.ht_values(predicate, agg))
    return st


def _split(tree: ABTree, unit: DecompUnit) -> list[tuple[DecompUnit, bool]]:
    """Children of ``unit``; adjacent children holding one identical key stay together."""
    kids = tree.child_subranges(unit)
    out: list[tuple[DecompUnit, bool]] = []
    i = 0
    while i < len(kids):
        j = i + 1
        if kids[i].single_key:
            while j < len(kids) and kids[j].single_key and kids[j].min_key == kids[i].min_key:
                j += 1
        if j - i > 1:
            node = unit.node
            a = unit.a + i
            b = unit.a + j
            run = DecompUnit(UnitKind.SUBTREE, node, a, b, node.level,
                             math.fsum(node.weights[a:b]), kids[i].lo, kids[j - 1].hi,
                             (kids[i].key_range[0], kids[j - 1].key_range[1]))
            out.append((run, False))
        else:
            k = kids[i]
            out.append((k, k.height > 1 and not k.single_key))
        i = j
    return out


def greedy(tree: ABTree, ctx: RangeContext, budget_n0: int, delta_n0: int = DEFAULT_DELTA_N0,
           tau: float = DEFAULT_TAU, c0: float = DEFAULT_C0, eps: float = 1.0, delta: float = 0.05,
           rng: np.random.Generator | None = None, counter: VisitCounter | None = None,
           predicate: Predicate = ACCEPT_ALL, agg: Agg = SUM) -> GreedyResult:
    """Top-down refinement of the range decomposition.

    Boundary leaf runs are aggregated exactly. Every subtree stratum gets
    ``delta_n0`` samples; the stratum with the largest estimator variance is
    replaced by its child subtrees until the projected cost improves by less
    than ``tau`` (relative) or the sample budget runs out. The final,
    insufficient split is undone for stratification purposes; its samples
    still feed the phase-0 estimate.
    """
    rng = np.random.default_rng() if rng is None else rng
    exact_parts: list[tuple[float, int]] = []
    roots: list[_GNode] = []
    for u in ctx.decomposition:
        if u.kind is UnitKind.LEAF_RUN:
            exact_parts.append(tree.exact_aggregate(u, predicate, agg))
        else:
            roots.append(_GNode(u, EstimatorState(), u.height > 1 and not u.single_key))
    if budget_n0 < delta_n0 * len(roots):
        raise BudgetExhaustedError(
            f"budget {budget_n0} cannot cover {len(roots)} initial strata at {delta_n0} samples each")
    for g in roots:
        g.state = _sample_unit(tree, g.unit, delta_n0, rng, counter, predicate, agg)
    drawn = delta_n0 * len(roots)
    budget = budget_n0 - drawn

    def leaf_stats() -> list[StratumStats]:
        return [StratumStats(l.state.sigma, l.unit.height) for r in roots for l in r.leaves()]

    splits = 0
    if roots:
        stats = leaf_stats()
        c = projected_cost(stats, len(stats), c0, eps, delta)
        while budget >= 0:
            best = None
            for r in roots:
                for leaf in r.leaves():
                    if leaf.splittable and (best is None or leaf.state.variance > best.state.variance):
                        best = leaf
            if best is None:
                break
            for unit, can_split in _split(tree, best.unit):
                st = _sample_unit(tree, unit, delta_n0, rng, counter, predicate, agg)
                best.children.append(_GNode(unit, st, can_split))
            dk = len(best.children)
            drawn += delta_n0 * dk
            budget -= delta_n0 * dk
            stats = leaf_stats()
            c_new = projected_cost(stats, len(stats), c0, eps, delta)
            if c <= 0 or not (c - c_new) / c >= tau:
                best.collapsed = True
                break
            splits += 1
            c = c_new

    leaves = [l for r in roots for l in r.leaves()]
    offset = math.fsum(p[0] for p in exact_parts)
    if roots:
        est = combine_strata([r.estimate(delta) for r in roots])
        phase0 = Estimate(est.A_hat + offset, est.eps, est.n, est.insufficient)
    else:
        phase0 = Estimate(offset, 0.0, 0)
    units = [l.unit for l in leaves]
    bounds = [ctx.L] + [u.key_range[1] for u in units[:-1]] + [ctx.U] if units else [ctx.L, ctx.U]
    strat = Stratification(bounds, [l.state.sigma for l in leaves],
                           [float(l.unit.height) for l in leaves], exact_parts, units)
    return GreedyResult(strat, phase0, drawn, splits, roots)
