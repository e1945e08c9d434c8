"""Horvitz-Thompson estimators, streaming moments and CLT confidence bounds."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from statistics import NormalDist
from typing import Sequence

import numpy as np

from .errors import InvalidProbabilityError, RangeMismatchError
from .index import Agg, Sample, SUM
from .predicate import ACCEPT_ALL, Predicate


@lru_cache(maxsize=64)
def z_value(delta: float) -> float:
    """Two-sided normal quantile ``sqrt(2) * erfinv(1 - delta)``."""
    if not 0 < delta < 1:
        raise ValueError("delta must be in (0, 1)")
    return NormalDist().inv_cdf(1.0 - delta / 2.0)


def ht_value(sample: Sample, predicate: Predicate = ACCEPT_ALL, agg: Agg = SUM) -> float:
    if not sample.p > 0:
        raise InvalidProbabilityError(f"sample probability must be positive, got {sample.p}")
    if not predicate(sample.record.attrs):
        return 0.0
    return agg.scalar(sample.record) / sample.p


@dataclass(frozen=True)
class Estimate:
    A_hat: float
    eps: float
    n: int
    insufficient: bool = False

    def __post_init__(self) -> None:
        if self.eps < 0:
            raise ValueError("eps must be nonnegative")

    def contains(self, exact: float) -> bool:
        return abs(self.A_hat - exact) <= self.eps


@dataclass
class EstimatorState:
    """Running mean and sum of squared deviations (Youngs-Cramer form)."""

    n: int = 0
    mean: float = 0.0
    S2: float = 0.0
    exact_offset: float = 0.0

    def push(self, x: float) -> None:
        self.n += 1
        d = x - self.mean
        self.mean += d / self.n
        self.S2 += d * (x - self.mean)

    def push_many(self, xs: np.ndarray) -> None:
        """Fold a whole batch in at once via the pooled-moments identity."""
        m = len(xs)
        if m == 0:
            return
        lo, hi = float(np.min(xs)), float(np.max(xs))
        if lo == hi:
            bmean, bS2 = lo, 0.0
        else:
            bmean = float(np.mean(xs))
            bS2 = float(np.sum((xs - bmean) ** 2))
        self.merge(m, bmean, bS2)

    def merge(self, m: int, mean: float, S2: float) -> None:
        if m == 0:
            return
        if self.n == 0:
            self.n, self.mean, self.S2 = m, mean, self.S2 + S2
            return
        n = self.n + m
        delta = mean - self.mean
        self.S2 += S2 + delta * delta * self.n * m / n
        self.mean += delta * m / n
        self.n = n

    @property
    def variance(self) -> float:
        return self.S2 / (self.n - 1) if self.n > 1 else 0.0

    @property
    def sigma(self) -> float:
        return math.sqrt(max(self.variance, 0.0))

    def estimate(self, delta: float) -> Estimate:
        if self.n <= 1:
            return Estimate(self.exact_offset + self.mean, 0.0, self.n, insufficient=True)
        eps = z_value(delta) * self.sigma / math.sqrt(self.n)
        return Estimate(self.exact_offset + self.mean, eps, self.n)


def push(state: EstimatorState, x: float) -> None:
    state.push(x)


def estimate(state: EstimatorState, delta: float) -> Estimate:
    return state.estimate(delta)


def combine_strata(estimates: Sequence[Estimate]) -> Estimate:
    """Sum of independent stratum estimators; half-widths add in quadrature."""
    if not estimates:
        raise ValueError("need at least one stratum estimate")
    return Estimate(
        math.fsum(e.A_hat for e in estimates),
        math.sqrt(math.fsum(e.eps * e.eps for e in estimates)),
        sum(e.n for e in estimates),
        any(e.insufficient for e in estimates),
    )


def combine_phases(phase0: Estimate, phase1: Estimate, rule: str = "linear") -> Estimate:
    """Sample-size weighted mean of the phase-0 and phase-1 estimators.

    ``rule="linear"`` uses ``(n0^2 e0 + n^2 e1) / (n0 + n)^2``.
    ``rule="variance"`` combines the half-widths as the standard error of the
    weighted mean, ``sqrt(n0^2 e0^2 + n^2 e1^2) / (n0 + n)``; this is the
    combination the batch-size projection in :func:`allocation.next_batch`
    solves for, and the engine's default.
    """
    n0, n = phase0.n, phase1.n
    if n == 0:
        return phase0
    if n0 == 0:
        return phase1
    tot = n0 + n
    a = (n0 * phase0.A_hat + n * phase1.A_hat) / tot
    if rule == "linear":
        eps = (n0 * n0 * phase0.eps + n * n * phase1.eps) / (tot * tot)
    elif rule == "variance":
        eps = math.hypot(n0 * phase0.eps, n * phase1.eps) / tot
    else:
        raise ValueError(f"unknown combination rule {rule!r}")
    return Estimate(a, eps, tot, phase0.insufficient or phase1.insufficient)


def overlap_adjust(parent: Estimate, children: Sequence[Estimate],
                   parent_range: tuple[int, int] | None = None,
                   child_ranges: Sequence[tuple[int, int]] | None = None) -> Estimate:
    """Average a parent stratum's estimator with the estimator formed by its
    ``k`` children, counting the children ``k`` times.

    Both are unbiased for the parent's range, so the weighted mean
    ``(A_p + k * A_c) / (k + 1)`` is too; its squared half-width is
    ``(e_p^2 + k^2 e_c^2) / (k + 1)^2``.
    """
    if not children:
        raise ValueError("need at least one child estimate")
    if parent_range is not None and child_ranges is not None:
        spans = sorted(child_ranges)
        ok = spans[0][0] == parent_range[0] and spans[-1][1] == parent_range[1] and all(
            spans[i][1] == spans[i + 1][0] for i in range(len(spans) - 1))
        if not ok:
            raise RangeMismatchError("children do not partition the parent range")
    joint = combine_strata(children)
    if parent.n == 0:
        return joint
    k = len(children)
    a = (parent.A_hat + k * joint.A_hat) / (k + 1)
    eps = math.sqrt(parent.eps ** 2 + (k * joint.eps) ** 2) / (k + 1)
    return Estimate(a, eps, parent.n + joint.n, parent.insufficient or joint.insufficient)


class StrataAccumulator:
    """Vectorised bank of :class:`EstimatorState`, one per stratum."""

    def __init__(self, k: int, exact_offset: float = 0.0) -> None:
        self.n = np.zeros(k, dtype=np.int64)
        self.mean = np.zeros(k)
        self.S2 = np.zeros(k)
        self.exact_offset = exact_offset

    def __len__(self) -> int:
        return len(self.n)

    def push_blocks(self, counts: np.ndarray, xs: np.ndarray) -> None:
        """Fold values into the strata; ``xs`` holds ``counts[i]`` values of
        stratum ``i`` as consecutive blocks, in stratum order."""
        counts = np.asarray(counts, dtype=np.int64)
        k = len(self.n)
        hit = counts > 0
        if not hit.any():
            return
        starts = np.concatenate(([0], np.cumsum(counts)[:-1]))[hit]
        m = counts[hit]
        s = np.add.reduceat(xs, starts)
        lo = np.minimum.reduceat(xs, starts)
        hi = np.maximum.reduceat(xs, starts)
        # constant blocks get their exact value so zero variance stays exactly zero
        bmean_hit = np.where(lo == hi, lo, s / m)
        bmean = np.zeros(k)
        bmean[hit] = bmean_hit
        dev = xs - np.repeat(bmean_hit, m)
        bS2 = np.zeros(k)
        bS2[hit] = np.add.reduceat(dev * dev, starts)
        n = self.n + counts
        delta = bmean - self.mean
        safe = np.where(n > 0, n, 1)
        self.S2 = self.S2 + bS2 + np.where(hit, delta * delta * self.n * counts / safe, 0.0)
        self.mean = np.where(hit, np.where(self.n == 0, bmean, self.mean + delta * counts / safe), self.mean)
        self.n = n

    @property
    def sigma(self) -> np.ndarray:
        var = np.where(self.n > 1, self.S2 / np.maximum(self.n - 1, 1), 0.0)
        return np.sqrt(np.maximum(var, 0.0))

    def state(self, i: int) -> EstimatorState:
        return EstimatorState(int(self.n[i]), float(self.mean[i]), float(self.S2[i]))

    def estimates(self, delta: float) -> list[Estimate]:
        return [self.state(i).estimate(delta) for i in range(len(self.n))]

    def combined(self, delta: float) -> Estimate:
        """Same result as ``combine_strata(self.estimates(delta))`` plus the exact offset."""
        z = z_value(delta)
        ok = self.n > 1
        eps = np.where(ok, z * self.sigma / np.sqrt(np.maximum(self.n, 1)), 0.0)
        return Estimate(self.exact_offset + math.fsum(self.mean.tolist()),
                        math.sqrt(math.fsum((eps * eps).tolist())),
                        int(self.n.sum()), bool((~ok).any()))
