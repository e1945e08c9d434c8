"""Datasets: synthetic generators and CSV ingestion."""

from __future__ import annotations

import csv
import datetime as dt
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import EmptyDatasetError, InvalidSpikesError, InvalidValueError, ParseError, SchemaError
from .index import ABTree, Agg, DEFAULT_FANOUT, Record, SUM
from .predicate import ACCEPT_ALL, Predicate

EPOCH = dt.date(1970, 1, 1)
COUNT_COLUMN = "COUNT"


def date_to_days(text: str) -> int:
    return (dt.date.fromisoformat(text) - EPOCH).days


def days_to_date(days: int) -> str:
    return (EPOCH + dt.timedelta(days=int(days))).isoformat()


@dataclass
class Dataset:
    """Key-sorted columns plus generator bookkeeping."""

    name: str
    keys: np.ndarray
    values: np.ndarray
    attrs: np.ndarray
    attr_names: tuple[str, ...] = ()
    metadata: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.keys = np.asarray(self.keys, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=np.float64)
        self.attrs = np.asarray(self.attrs, dtype=np.float64).reshape(len(self.keys), -1)
        if len(self.keys) > 1 and (np.diff(self.keys) < 0).any():
            order = np.argsort(self.keys, kind="stable")
            self.keys, self.values, self.attrs = self.keys[order], self.values[order], self.attrs[order]
        self.metadata.setdefault("ndv", int(len(np.unique(self.keys))))

    def __len__(self) -> int:
        return len(self.keys)

    @property
    def ndv(self) -> int:
        return self.metadata["ndv"]

    @property
    def records(self) -> list[Record]:
        return [Record(int(k), float(v), tuple(a)) for k, v, a in
                zip(self.keys.tolist(), self.values.tolist(), self.attrs.tolist())]

    def tree(self, fanout: int = DEFAULT_FANOUT) -> ABTree:
        tree = ABTree.from_arrays(self.keys, self.values, self.attrs, fanout=fanout)
        tree.attr_names = self.attr_names
        return tree

    def predicate(self, text: str | None) -> Predicate:
        return Predicate.parse(text, self.attr_names)

    def exact(self, L: int, U: int, predicate: Predicate = ACCEPT_ALL, agg: Agg = SUM) -> float:
        a, b = np.searchsorted(self.keys, [L, U], side="left")
        attrs = self.attrs[a:b]
        e = agg.expression(self.values[a:b], attrs)
        if not predicate.is_trivial:
            e = e[predicate.mask(attrs)]
        return math.fsum(e.tolist())


def _check_spikes(spikes, keys: int) -> list[tuple[tuple[int, int], float]]:
    out = []
    for (lo, hi), rate in spikes:
        if not 0 <= rate <= 1:
            raise InvalidValueError(f"spike rate {rate} outside [0, 1]")
        if not 0 <= lo < hi <= keys:
            raise InvalidSpikesError(f"spike key range [{lo}, {hi}) outside [0, {keys})")
        out.append(((int(lo), int(hi)), float(rate)))
    out.sort()
    for prev, cur in zip(out, out[1:]):
        if cur[0][0] < prev[0][1]:
            raise InvalidSpikesError(f"spike ranges {prev[0]} and {cur[0]} overlap")
    return out


def gen_spike(rows: int, base_rate: float, spikes: Sequence[tuple[tuple[int, int], float]] = (),
              keys: int = 1000, seed: int = 0, start_key: int = 0) -> Dataset:
    """Flight-cancellation shaped data.

    ``rows`` records spread evenly over ``keys`` consecutive keys starting at
    ``start_key``. Attribute ``cancelled`` is 1 with probability ``base_rate``,
    or the spike's rate for keys inside a spike range (given as offsets into
    the key domain). The value column holds a nonnegative delay in minutes.
    """
    if keys < 1 or rows < keys:
        raise InvalidValueError("need rows >= keys >= 1")
    if not 0 <= base_rate <= 1:
        raise InvalidValueError(f"base rate {base_rate} outside [0, 1]")
    spikes = _check_spikes(spikes, keys)
    rng = np.random.default_rng(seed)
    offsets = np.arange(rows, dtype=np.int64) * keys // rows
    rate_per_key = np.full(keys, float(base_rate))
    for (lo, hi), rate in spikes:
        rate_per_key[lo:hi] = rate
    cancelled = (rng.random(rows) < rate_per_key[offsets]).astype(np.float64)
    delay = np.round(rng.exponential(15.0, rows), 1)
    per_key = np.bincount(offsets, weights=cancelled, minlength=keys)
    meta = {
        "ndv": keys,
        "spikes": [(lo + start_key, hi + start_key, rate) for (lo, hi), rate in spikes],
        "base_rate": base_rate,
        "cancelled_prefix": np.concatenate(([0], np.cumsum(per_key))).astype(np.int64),
        "start_key": start_key,
    }
    return Dataset("spike", offsets + start_key, delay, cancelled[:, None], ("cancelled",), meta)


def spike_exact_count(ds: Dataset, L: int, U: int) -> int:
    """Cached exact ``COUNT(*) WHERE cancelled = 1`` over ``[L, U)``."""
    prefix = ds.metadata["cancelled_prefix"]
    k = len(prefix) - 1
    lo = min(max(L - ds.metadata["start_key"], 0), k)
    hi = min(max(U - ds.metadata["start_key"], 0), k)
    return int(prefix[hi] - prefix[lo]) if hi > lo else 0


LINEITEM_START = date_to_days("1992-01-02")
LINEITEM_DAYS = 2526  # through 1998-12-01
DELAY_THRESHOLD = 49
BAND_DAYS = 30


def gen_lineitem(scale_rows: int, special_ranges: int = 3, seed: int = 0,
                 base_exceed: float = 0.02, special_exceed: float = 0.5,
                 special_boost: float = 3.0) -> Dataset:
    """Skewed lineitem-like table keyed by ship date.

    Ship dates follow a smooth seasonal frequency profile; ``special_ranges``
    bands of ``BAND_DAYS`` days get ``special_boost`` times the frequency and a
    ``special_exceed`` probability that the delivery delay exceeds the
    threshold (``base_exceed`` elsewhere). The value column is the discounted
    revenue ``extendedprice * (1 - discount)``.
    """
    if scale_rows < 10_000:
        raise InvalidValueError("scale_rows must be at least 10^4")
    rng = np.random.default_rng(seed)
    days = np.arange(LINEITEM_DAYS)
    freq = 1.0 + 0.3 * np.sin(2 * np.pi * days / 365.25)
    exceed = np.full(LINEITEM_DAYS, base_exceed)
    bands = []
    if special_ranges:
        # non-overlapping bands: one random slot per equal share of the domain
        share = LINEITEM_DAYS // special_ranges
        if share < BAND_DAYS:
            raise InvalidValueError("too many special ranges for the date domain")
        for i in range(special_ranges):
            lo = i * share + int(rng.integers(0, share - BAND_DAYS + 1))
            freq[lo:lo + BAND_DAYS] *= special_boost
            exceed[lo:lo + BAND_DAYS] = special_exceed
            bands.append((LINEITEM_START + lo, LINEITEM_START + lo + BAND_DAYS))
    counts = rng.multinomial(scale_rows, freq / freq.sum())
    day = np.repeat(days, counts)
    late = rng.random(scale_rows) < exceed[day]
    delay = np.where(late, rng.integers(DELAY_THRESHOLD + 1, 91, scale_rows),
                     rng.integers(1, 31, scale_rows)).astype(np.float64)
    quantity = rng.integers(1, 51, scale_rows)
    price = np.round(quantity * rng.uniform(900.0, 2000.0, scale_rows), 2)
    discount = rng.integers(0, 11, scale_rows) / 100.0
    revenue = price * (1.0 - discount)
    attrs = np.column_stack([delay, price, discount])
    keys = LINEITEM_START + day
    meta = {"ndv": int(np.count_nonzero(counts)), "bands": bands,
            "exceed_per_day": exceed, "filter": f"delay>{DELAY_THRESHOLD}"}
    return Dataset("lineitem", keys, revenue, attrs, ("delay", "extendedprice", "discount"), meta)


def _parse_key(text: str) -> int:
    text = text.strip()
    try:
        return int(text)
    except ValueError:
        return date_to_days(text)


def load_csv(path: str | Path, key_col: str, value_col: str = COUNT_COLUMN,
             attr_cols: Sequence[str] = ()) -> Dataset:
    """Read a headed CSV; ``value_col="COUNT"`` gives every row value 1.

    Keys may be integers or ISO dates (stored as days since 1970-01-01).
    """
    path = Path(path)
    keys: list[int] = []
    values: list[float] = []
    attrs: list[list[float]] = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: missing header row") from None
        idx = {name: i for i, name in enumerate(header)}
        needed = [key_col] + ([] if value_col == COUNT_COLUMN else [value_col]) + list(attr_cols)
        missing = [c for c in needed if c not in idx]
        if missing:
            raise SchemaError(f"{path}: missing column(s) {', '.join(missing)}")
        ki = idx[key_col]
        vi = None if value_col == COUNT_COLUMN else idx[value_col]
        ai = [idx[c] for c in attr_cols]
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                k = _parse_key(row[ki])
                v = 1.0 if vi is None else float(row[vi])
                a = [float(row[i]) for i in ai]
            except (ValueError, IndexError) as e:
                raise ParseError(f"{path}:{lineno}: {e}") from None
            if not (math.isfinite(v) and all(math.isfinite(x) for x in a)):
                raise ParseError(f"{path}:{lineno}: non-finite value")
            keys.append(k)
            values.append(v)
            attrs.append(a)
    if not keys:
        raise EmptyDatasetError(f"{path}: no data rows")
    return Dataset(path.stem, np.array(keys, dtype=np.int64), np.array(values),
                   np.array(attrs, dtype=np.float64).reshape(len(keys), len(attr_cols)),
                   tuple(attr_cols))


def write_csv(ds: Dataset, path: str | Path, key_col: str = "key", value_col: str = "value") -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([key_col, value_col, *ds.attr_names])
        for k, v, a in zip(ds.keys.tolist(), ds.values.tolist(), ds.attrs.tolist()):
            w.writerow([k, repr(v), *(repr(x) for x in a)])
