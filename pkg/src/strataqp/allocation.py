"""Sample-size allocation across fixed strata."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .estimation import z_value

MIN_PER_STRATUM = 30


@dataclass(frozen=True)
class StratumStats:
    sigma: float
    h: float = 1.0

    def __post_init__(self) -> None:
        if not math.isfinite(self.sigma) or self.sigma < 0:
            raise ValueError(f"sigma must be finite and nonnegative, got {self.sigma}")
        if not self.h >= 1:
            raise ValueError(f"per-sample cost must be >= 1, got {self.h}")


@dataclass(frozen=True)
class Allocation:
    n_total: int
    per_stratum: tuple[int, ...]

    def __post_init__(self) -> None:
        assert self.n_total == sum(self.per_stratum)
        assert all(n >= 0 for n in self.per_stratum)

    @classmethod
    def of(cls, sizes: Sequence[int]) -> "Allocation":
        sizes = tuple(int(s) for s in sizes)
        return cls(sum(sizes), sizes)


def neyman_sizes(stats: Sequence[StratumStats], eps: float, delta: float) -> list[float]:
    """Unrounded minimum-size allocation, ``n_i = Z^2/eps^2 * sum(sigma) * sigma_i``."""
    z2 = z_value(delta) ** 2 / eps ** 2
    tot = math.fsum(s.sigma for s in stats)
    return [z2 * tot * s.sigma for s in stats]


def modified_neyman_sizes(stats: Sequence[StratumStats], eps: float, delta: float) -> list[float]:
    """Unrounded minimum-cost allocation, ``n_i ~ sigma_i / sqrt(h_i)``."""
    z2 = z_value(delta) ** 2 / eps ** 2
    tot = math.fsum(s.sigma * math.sqrt(s.h) for s in stats)
    return [z2 * tot * s.sigma / math.sqrt(s.h) for s in stats]


def neyman(stats: Sequence[StratumStats], eps: float, delta: float) -> Allocation:
    if eps <= 0:
        raise ValueError("eps must be positive")
    return Allocation.of(math.ceil(n) for n in neyman_sizes(stats, eps, delta))


def modified_neyman(stats: Sequence[StratumStats], eps: float, delta: float) -> Allocation:
    if eps <= 0:
        raise ValueError("eps must be positive")
    return Allocation.of(math.ceil(n) for n in modified_neyman_sizes(stats, eps, delta))


def next_batch(stats: Sequence[StratumStats], n0: int, eps0: float, eps: float, delta: float,
               step_size: float = math.inf, floor: int = MIN_PER_STRATUM, n_done: int = 0,
               min_total: float = 0.0) -> Allocation:
    """Size and split the next phase-1 batch.

    The batch is the number of phase-1 samples that brings the combined
    phase-0/phase-1 half-width down to ``eps``, capped at ``step_size``, split
    proportionally to ``sigma_i / sqrt(h_i)`` with at least ``floor`` samples
    per stratum. A non-positive projection (phase 0 already suffices) yields an
    empty allocation. ``n_done`` phase-1 samples already drawn are subtracted
    from the projected phase-1 total before capping; ``min_total`` is a lower
    bound applied before the cap.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    k = len(stats)
    a = math.fsum(math.sqrt(s.h) * s.sigma for s in stats)
    b = math.fsum(s.sigma / math.sqrt(s.h) for s in stats)
    sigma2 = a * b
    z = z_value(delta)
    t1 = z * z * sigma2 / (2 * eps * eps) - n0
    t2 = t1 * t1 + (n0 * n0 * (eps0 * eps0 / (eps * eps) - 1) if n0 > 0 else 0.0)
    n_tot = t1 + math.sqrt(max(t2, 0.0))
    n_tot = min(max(n_tot - n_done, min_total, 0.0), step_size)
    if n_tot <= 0:
        return Allocation.of([0] * k)
    if b > 0:
        shares = [s.sigma / math.sqrt(s.h) / b for s in stats]
    else:
        shares = [1.0 / k] * k
    return Allocation.of(max(floor, math.ceil(f * n_tot)) for f in shares)


def equal_split(n_tot: float, k: int, floor: int = MIN_PER_STRATUM) -> Allocation:
    """Even split of a batch over ``k`` strata, at least ``floor`` each."""
    each = max(floor, math.ceil(n_tot / k)) if n_tot > 0 else floor
    return Allocation.of([each] * k)


def projected_cost(stats: Sequence[StratumStats], k: int, c0: float, eps: float, delta: float) -> float:
    """``c0 * k + Z^2/eps^2 * (sum sigma_i sqrt(h_i))^2``."""
    z2 = z_value(delta) ** 2 / eps ** 2
    s = math.fsum(st.sigma * math.sqrt(st.h) for st in stats)
    return c0 * k + z2 * s * s
