"""Aggregate B-tree with weighted independent range sampling.

Leaves sit at level 1 and the root at level ``height``. Every internal node
keeps, per child, the aggregate weight of that child's subtree together with
the child's minimum and maximum key, so a range can be located with two plain
root-to-leaf descents and its total weight read off the two boundary paths.

A drawn sample costs one node visit per level it descends through. Descents
start at the root of the decomposition unit the target falls into instead of
at the tree root, so the per-sample cost is the unit's height.
"""

from __future__ import annotations

import math
from bisect import bisect_left, bisect_right
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator, Sequence

import numpy as np

from .errors import EmptyDatasetError, EmptyRangeError, InvalidValueError, LeafLevelError
from .predicate import ACCEPT_ALL, Predicate

DEFAULT_FANOUT = 64
SNAPSHOT_MAGIC = "strataqp-abtree"
SNAPSHOT_VERSION = 1


@dataclass(frozen=True)
class Record:
    key: int
    value: float
    attrs: tuple[float, ...] = ()


@dataclass(frozen=True)
class Sample:
    """One drawn record with its inclusion probability and descent cost."""

    record: Record
    p: float
    drawn_from_height: int
    stratum_id: int | None = None
    position: int = -1


@dataclass
class VisitCounter:
    preprocess_visits: int = 0
    sample_visits: int = 0

    @property
    def total(self) -> int:
        return self.preprocess_visits + self.sample_visits


class UnitKind(Enum):
    SUBTREE = "subtree"
    LEAF_RUN = "leaf_run"


class _Node:
    __slots__ = ("level", "keys", "rows", "weights", "children", "minkeys", "maxkeys", "off", "cnt")

    def __init__(self, level: int) -> None:
        self.level = level
        self.weights: list[float] = []
        # leaves
        self.keys: list[int] = []
        self.rows: list[int] = []
        # internal nodes
        self.children: list[_Node] = []
        self.minkeys: list[int] = []
        self.maxkeys: list[int] = []
        # filled in by the flat snapshot
        self.off = 0
        self.cnt = 0

    @property
    def is_leaf(self) -> bool:
        return self.level == 1

    def __len__(self) -> int:
        return len(self.keys) if self.level == 1 else len(self.children)

    def min_key(self) -> int:
        return self.keys[0] if self.level == 1 else self.minkeys[0]

    def max_key(self) -> int:
        return self.keys[-1] if self.level == 1 else self.maxkeys[-1]

    def total_weight(self) -> float:
        return math.fsum(self.weights)


@dataclass
class DecompUnit:
    """A contiguous run ``[a, b)`` of slots inside one node.

    For ``SUBTREE`` units the slots are children of ``node`` and a descent
    starts at ``node`` (``height == node.level``); a whole subtree rooted at
    ``c`` is the run ``(c, 0, len(c))``. ``LEAF_RUN`` units are runs of entries
    of a boundary leaf.
    """

    kind: UnitKind
    node: _Node = field(repr=False)
    a: int
    b: int
    height: int
    weight: float
    lo: int = 0  # global entry positions [lo, hi)
    hi: int = 0
    key_range: tuple[int, int] = (0, 0)

    @property
    def subtree_root_height(self) -> int:
        return self.height

    @property
    def min_key(self) -> int:
        n = self.node
        return n.keys[self.a] if n.is_leaf else n.minkeys[self.a]

    @property
    def max_key(self) -> int:
        n = self.node
        return n.keys[self.b - 1] if n.is_leaf else n.maxkeys[self.b - 1]

    @property
    def single_key(self) -> bool:
        return self.min_key == self.max_key


@dataclass
class RangeContext:
    L: int
    U: int
    left_path: list[_Node] = field(repr=False)
    right_path: list[_Node] = field(repr=False)
    lca_height: int
    W: float
    decomposition: list[DecompUnit] = field(repr=False)
    lo: int
    hi: int
    version: int = field(default=0, repr=False)

    def __post_init__(self) -> None:
        self._unit_lo = np.array([u.lo for u in self.decomposition], dtype=np.int64)
        self._unit_h = np.array([u.height for u in self.decomposition], dtype=np.int64)

    @property
    def n_entries(self) -> int:
        return self.hi - self.lo

    def unit_heights(self, positions: np.ndarray) -> np.ndarray:
        slot = np.searchsorted(self._unit_lo, positions, side="right") - 1
        return self._unit_h[slot]


@dataclass
class SampleBatch:
    """Column-oriented batch of samples drawn from one range."""

    positions: np.ndarray
    keys: np.ndarray
    values: np.ndarray
    attrs: np.ndarray
    weights: np.ndarray
    p: np.ndarray
    heights: np.ndarray

    def __len__(self) -> int:
        return len(self.positions)

    def ht_values(self, predicate: Predicate = ACCEPT_ALL, agg: "Agg | None" = None) -> np.ndarray:
        """Horvitz-Thompson value ``e(t) * P_f(t) / p(t)`` per sample."""
        e = self.values if agg is None else agg.expression(self.values, self.attrs)
        out = e / self.p
        if not predicate.is_trivial:
            out = np.where(predicate.mask(self.attrs), out, 0.0)
        return out

    @classmethod
    def concat(cls, batches: Sequence["SampleBatch"]) -> "SampleBatch":
        return cls(*(np.concatenate([getattr(b, f) for b in batches]) for f in cls.__dataclass_fields__))


@dataclass(frozen=True)
class Agg:
    """Aggregation expression: ``sum`` of the value column, ``count``, or ``sum`` of an attribute."""

    kind: str = "sum"
    attr: int | None = None

    def expression(self, values: np.ndarray, attrs: np.ndarray) -> np.ndarray:
        if self.kind == "count":
            return np.ones_like(values)
        if self.attr is not None:
            return attrs[:, self.attr]
        return values

    def scalar(self, record: Record) -> float:
        if self.kind == "count":
            return 1.0
        if self.attr is not None:
            return record.attrs[self.attr]
        return record.value


SUM = Agg("sum")
COUNT = Agg("count")


class _Flat:
    """Key-ordered column snapshot of the tree, rebuilt lazily after inserts."""

    def __init__(self, tree: "ABTree") -> None:
        leaves = list(tree._iter_leaves())
        rows = np.fromiter((r for lf in leaves for r in lf.rows), dtype=np.int64, count=tree.size)
        self.keys = np.fromiter((k for lf in leaves for k in lf.keys), dtype=np.int64, count=tree.size)
        self.weights = np.fromiter((w for lf in leaves for w in lf.weights), dtype=np.float64, count=tree.size)
        self.cumw = np.concatenate(([0.0], np.cumsum(self.weights)))
        self.values = tree._values[rows]
        self.attrs = tree._attrs[rows]
        self.rows = rows
        self.unit_weights = bool(np.all(self.weights == 1.0))
        _annotate(tree.root, 0)


def _annotate(node: _Node, off: int) -> int:
    node.off = off
    if node.is_leaf:
        node.cnt = len(node.keys)
    else:
        pos = off
        for c in node.children:
            pos = _annotate(c, pos)
        node.cnt = pos - off
    return off + node.cnt


def _check_finite(x: float, what: str) -> None:
    if not math.isfinite(x):
        raise InvalidValueError(f"{what} must be finite, got {x!r}")


class ABTree:
    """Weighted aggregate B-tree over integer keys.

    ``fanout`` is the maximum number of children of an internal node; a leaf
    holds at most ``fanout - 1`` entries.
    """

    def __init__(self, fanout: int = DEFAULT_FANOUT, n_attrs: int = 0) -> None:
        if fanout < 4:
            raise InvalidValueError("fanout must be at least 4")
        self.fanout = fanout
        self.n_attrs = n_attrs
        self.attr_names: tuple[str, ...] = ()
        self.root = _Node(1)
        self.size = 0
        self._values = np.empty(16, dtype=np.float64)
        self._attrs = np.empty((16, n_attrs), dtype=np.float64)
        self._version = 0
        self._flat: _Flat | None = None

    # -- construction -------------------------------------------------------

    @classmethod
    def build_bulk(cls, records: Sequence[Record], fanout: int = DEFAULT_FANOUT,
                   weights: Sequence[float] | None = None) -> "ABTree":
        if not records:
            raise EmptyDatasetError("cannot build an index over zero records")
        n_attrs = len(records[0].attrs)
        keys = np.fromiter((r.key for r in records), dtype=np.int64, count=len(records))
        values = np.fromiter((r.value for r in records), dtype=np.float64, count=len(records))
        attrs = np.array([r.attrs for r in records], dtype=np.float64).reshape(len(records), n_attrs)
        return cls.from_arrays(keys, values, attrs, weights=weights, fanout=fanout)

    @classmethod
    def from_arrays(cls, keys: np.ndarray, values: np.ndarray, attrs: np.ndarray | None = None,
                    weights: np.ndarray | Sequence[float] | None = None,
                    fanout: int = DEFAULT_FANOUT) -> "ABTree":
        """Bulk-load from key-sorted columns, packing every node full."""
        keys = np.asarray(keys, dtype=np.int64)
        n = len(keys)
        if n == 0:
            raise EmptyDatasetError("cannot build an index over zero records")
        values = np.asarray(values, dtype=np.float64)
        attrs = np.zeros((n, 0)) if attrs is None else np.asarray(attrs, dtype=np.float64).reshape(n, -1)
        w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
        if not (np.isfinite(values).all() and np.isfinite(attrs).all()):
            raise InvalidValueError("values and attributes must be finite")
        if not np.isfinite(w).all() or (w < 0).any():
            raise InvalidValueError("weights must be finite and nonnegative")
        if n > 1 and (np.diff(keys) < 0).any():
            raise InvalidValueError("records must be sorted by key")

        tree = cls(fanout, attrs.shape[1])
        tree._values = values.copy()
        tree._attrs = attrs.copy()
        tree.size = n
        cap = fanout - 1
        level: list[_Node] = []
        key_list = keys.tolist()
        w_list = w.tolist()
        for start in range(0, n, cap):
            leaf = _Node(1)
            leaf.keys = key_list[start:start + cap]
            leaf.weights = w_list[start:start + cap]
            leaf.rows = list(range(start, min(start + cap, n)))
            level.append(leaf)
        height = 1
        while len(level) > 1:
            height += 1
            parents = []
            for start in range(0, len(level), fanout):
                node = _Node(height)
                for child in level[start:start + fanout]:
                    node.children.append(child)
                    node.weights.append(child.total_weight())
                    node.minkeys.append(child.min_key())
                    node.maxkeys.append(child.max_key())
                parents.append(node)
            level = parents
        tree.root = level[0]
        return tree

    def insert(self, record: Record, weight: float = 1.0) -> None:
        _check_finite(weight, "weight")
        if weight < 0:
            raise InvalidValueError("weight must be nonnegative")
        _check_finite(record.value, "value")
        for a in record.attrs:
            _check_finite(a, "attribute")
        if self.size == 0 and self.n_attrs != len(record.attrs):
            self.n_attrs = len(record.attrs)
            self._attrs = np.empty((len(self._values), self.n_attrs))
        if len(record.attrs) != self.n_attrs:
            raise InvalidValueError(f"expected {self.n_attrs} attributes, got {len(record.attrs)}")

        row = self.size
        if row == len(self._values):
            self._values = np.resize(self._values, 2 * row)
            self._attrs = np.concatenate([self._attrs, np.empty_like(self._attrs)])
        self._values[row] = record.value
        self._attrs[row] = record.attrs
        self.size += 1

        split = self._insert(self.root, record.key, row, float(weight))
        if split is not None:
            old = self.root
            root = _Node(old.level + 1)
            for child in (old, split):
                root.children.append(child)
                root.weights.append(child.total_weight())
                root.minkeys.append(child.min_key())
                root.maxkeys.append(child.max_key())
            self.root = root
        self._version += 1
        self._flat = None

    def _insert(self, node: _Node, key: int, row: int, weight: float) -> _Node | None:
        if node.is_leaf:
            pos = bisect_right(node.keys, key)
            node.keys.insert(pos, key)
            node.rows.insert(pos, row)
            node.weights.insert(pos, weight)
            if len(node.keys) <= self.fanout - 1:
                return None
            # appending at the end leaves the old node full, as a bulk load would
            mid = len(node.keys) - 1 if pos == len(node.keys) - 1 else len(node.keys) // 2
            right = _Node(1)
            right.keys, node.keys = node.keys[mid:], node.keys[:mid]
            right.rows, node.rows = node.rows[mid:], node.rows[:mid]
            right.weights, node.weights = node.weights[mid:], node.weights[:mid]
            return right

        i = max(bisect_right(node.minkeys, key) - 1, 0)
        child = node.children[i]
        split = self._insert(child, key, row, weight)
        node.weights[i] += weight
        node.minkeys[i] = child.min_key()
        node.maxkeys[i] = child.max_key()
        if split is not None:
            node.weights[i] = child.total_weight()
            node.children.insert(i + 1, split)
            node.weights.insert(i + 1, split.total_weight())
            node.minkeys.insert(i + 1, split.min_key())
            node.maxkeys.insert(i + 1, split.max_key())
        if len(node.children) <= self.fanout:
            return None
        at_end = split is not None and i + 1 == len(node.children) - 1
        mid = len(node.children) - 1 if at_end else len(node.children) // 2
        right = _Node(node.level)
        for attr in ("children", "weights", "minkeys", "maxkeys"):
            seq = getattr(node, attr)
            setattr(right, attr, seq[mid:])
            setattr(node, attr, seq[:mid])
        return right

    # -- inspection ---------------------------------------------------------

    @property
    def height(self) -> int:
        return self.root.level

    @property
    def total_weight(self) -> float:
        return self.root.total_weight()

    @property
    def flat(self) -> _Flat:
        if self._flat is None:
            self._flat = _Flat(self)
        return self._flat

    def _iter_leaves(self) -> Iterator[_Node]:
        stack = [self.root]
        while stack:
            node = stack.pop()
            if node.is_leaf:
                if node.keys:
                    yield node
            else:
                stack.extend(reversed(node.children))

    def records(self) -> Iterator[Record]:
        for leaf in self._iter_leaves():
            for key, row in zip(leaf.keys, leaf.rows):
                yield self._record(key, row)

    def entries(self) -> list[tuple[Record, float]]:
        return [(self._record(k, r), w) for lf in self._iter_leaves()
                for k, r, w in zip(lf.keys, lf.rows, lf.weights)]

    def _record(self, key: int, row: int) -> Record:
        return Record(int(key), float(self._values[row]), tuple(self._attrs[row].tolist()))

    def record_at(self, position: int) -> Record:
        f = self.flat
        return Record(int(f.keys[position]), float(f.values[position]), tuple(f.attrs[position].tolist()))

    def child_weight_profile(self) -> list[list[float]]:
        """Per-node child aggregate weights, breadth first (for structural comparisons)."""
        out, level = [], [self.root]
        while level and not level[0].is_leaf:
            out.extend(list(n.weights) for n in level)
            level = [c for n in level for c in n.children]
        return out

    def check(self, rel_tol: float = 1e-9) -> None:
        """Raise ``AssertionError`` if any structural or weight invariant is broken."""

        def visit(node: _Node) -> tuple[float, int, int]:
            if node.is_leaf:
                assert node.keys == sorted(node.keys), "leaf keys out of order"
                assert len(node.keys) == len(node.rows) == len(node.weights)
                assert len(node.keys) <= self.fanout - 1 or node is self.root
                return node.total_weight(), node.keys[0], node.keys[-1]
            assert len(node.children) <= self.fanout
            total = 0.0
            prev_max = None
            for i, child in enumerate(node.children):
                assert child.level == node.level - 1, "unbalanced tree"
                w, lo, hi = visit(child)
                assert math.isclose(node.weights[i], w, rel_tol=rel_tol, abs_tol=1e-12), \
                    f"aggregate weight {node.weights[i]} != subtree sum {w}"
                assert node.minkeys[i] == lo and node.maxkeys[i] == hi
                assert prev_max is None or prev_max <= lo, "keys not globally ordered"
                prev_max = hi
                total += w
            return total, node.minkeys[0], node.maxkeys[-1]

        if self.size:
            visit(self.root)

    # -- range machinery ----------------------------------------------------

    def range_preprocess(self, L: int, U: int, counter: VisitCounter | None = None) -> RangeContext:
        """Locate the boundary paths of ``[L, U)`` and decompose the range.

        Raises ``EmptyRangeError`` when no entry has a key in the range.
        """
        if not L < U:
            raise InvalidValueError(f"empty interval [{L}, {U})")
        if self.size == 0:
            raise EmptyRangeError(f"no records in [{L}, {U})")
        self.flat  # builds the snapshot, which assigns node entry offsets
        visits = 0

        # left path: first entry with key >= L
        left, lidx = [], []
        node = self.root
        while True:
            visits += 1
            left.append(node)
            if node.is_leaf:
                lpos = bisect_left(node.keys, L)
                break
            i = bisect_left(node.maxkeys, L)
            if i == len(node.children):
                self._charge(counter, visits)
                raise EmptyRangeError(f"no records in [{L}, {U})")
            lidx.append(i)
            node = node.children[i]

        # right path: last entry with key < U
        right, ridx = [], []
        node = self.root
        while True:
            visits += 1
            right.append(node)
            if node.is_leaf:
                rpos = bisect_left(node.keys, U) - 1
                break
            i = bisect_left(node.minkeys, U) - 1
            if i < 0:
                self._charge(counter, visits)
                raise EmptyRangeError(f"no records in [{L}, {U})")
            ridx.append(i)
            node = node.children[i]
        self._charge(counter, visits)

        lo = left[-1].off + lpos
        hi = right[-1].off + rpos + 1
        if lpos >= len(left[-1].keys) or rpos < 0 or lo >= hi:
            raise EmptyRangeError(f"no records in [{L}, {U})")

        depth = 0
        while depth + 1 < len(left) and left[depth + 1] is right[depth + 1]:
            depth += 1
        lca = left[depth]

        units: list[DecompUnit] = []
        if lca.is_leaf:
            units.append(self._leaf_run(lca, lpos, rpos + 1))
        else:
            lleaf, rleaf = left[-1], right[-1]
            units.append(self._leaf_run(lleaf, lpos, len(lleaf.keys)))
            for d in range(len(left) - 2, depth, -1):
                units.append(self._run(left[d], lidx[d] + 1, len(left[d].children)))
            units.append(self._run(lca, lidx[depth] + 1, ridx[depth]))
            for d in range(depth + 1, len(right) - 1):
                units.append(self._run(right[d], 0, ridx[d]))
            units.append(self._leaf_run(rleaf, 0, rpos + 1))
            units = [u for u in units if u.b > u.a]
        _assign_key_ranges(units, L, U)
        W = math.fsum(u.weight for u in units)
        return RangeContext(L, U, left, right, lca.level, W, units, lo, hi, self._version)

    @staticmethod
    def _charge(counter: VisitCounter | None, visits: int) -> None:
        if counter is not None:
            counter.preprocess_visits += visits

    def _leaf_run(self, leaf: _Node, a: int, b: int) -> DecompUnit:
        w = math.fsum(leaf.weights[a:b])
        return DecompUnit(UnitKind.LEAF_RUN, leaf, a, b, 1, w, leaf.off + a, leaf.off + b)

    def _run(self, node: _Node, a: int, b: int) -> DecompUnit:
        if b <= a:
            return DecompUnit(UnitKind.SUBTREE, node, a, a, node.level, 0.0)
        w = math.fsum(node.weights[a:b])
        last = node.children[b - 1]
        return DecompUnit(UnitKind.SUBTREE, node, a, b, node.level, w,
                          node.children[a].off, last.off + last.cnt)

    def subtree_unit(self, node: _Node) -> DecompUnit:
        self.flat
        return DecompUnit(UnitKind.SUBTREE, node, 0, len(node), node.level, node.total_weight(),
                          node.off, node.off + node.cnt, (node.min_key(), node.max_key() + 1))

    def child_subranges(self, unit: DecompUnit) -> list[DecompUnit]:
        """Split a subtree unit into one unit per child subtree."""
        if unit.kind is not UnitKind.SUBTREE or unit.height <= 1:
            raise LeafLevelError("leaf-level units cannot be split further")
        self.flat
        node = unit.node
        out = []
        for i in range(unit.a, unit.b):
            c = node.children[i]
            out.append(DecompUnit(UnitKind.SUBTREE, c, 0, len(c), c.level, node.weights[i],
                                  c.off, c.off + c.cnt))
        _assign_key_ranges(out, unit.key_range[0], unit.key_range[1])
        return out

    def unit_context(self, unit: DecompUnit) -> RangeContext:
        """Treat one decomposition unit as a standalone sampling range."""
        return RangeContext(unit.key_range[0], unit.key_range[1], [], [], unit.height, unit.weight,
                            [unit], unit.lo, unit.hi, self._version)

    def run_context(self, units: Sequence[DecompUnit]) -> RangeContext:
        """Sampling context over several adjacent units (sharing no gaps)."""
        units = list(units)
        return RangeContext(units[0].key_range[0], units[-1].key_range[1], [], [],
                            max(u.height for u in units), math.fsum(u.weight for u in units),
                            units, units[0].lo, units[-1].hi, self._version)

    def unit_records(self, unit: DecompUnit) -> list[Record]:
        return [self.record_at(i) for i in range(unit.lo, unit.hi)]

    def exact_aggregate(self, unit: DecompUnit, predicate: Predicate = ACCEPT_ALL,
                        agg: Agg = SUM) -> tuple[float, int]:
        """Exact ``(sum of e(t) * P_f(t), passing count)`` over a unit's entries."""
        f = self.flat
        vals = agg.expression(f.values[unit.lo:unit.hi], f.attrs[unit.lo:unit.hi])
        mask = predicate.mask(f.attrs[unit.lo:unit.hi])
        return float(math.fsum(vals[mask])), int(mask.sum())

    # -- sampling -----------------------------------------------------------

    def sample_one(self, ctx: RangeContext, rng: np.random.Generator,
                   counter: VisitCounter | None = None) -> Sample:
        """Weight-guided descent for one sample, starting at the unit's root."""
        if not ctx.W > 0:
            raise InvalidValueError("cannot sample from a zero-weight range")
        r = rng.random() * ctx.W
        unit = ctx.decomposition[-1]
        for u in ctx.decomposition:
            if r < u.weight:
                unit = u
                break
            r -= u.weight
        r = min(r, unit.weight)

        node, a, b = unit.node, unit.a, unit.b
        visits = 0
        while True:
            visits += 1
            ws = node.weights
            pick = _last_positive(ws, a, b)
            for i in range(a, b):
                if r < ws[i]:
                    pick = i
                    break
                r -= ws[i]
            if node.is_leaf:
                break
            node = node.children[pick]
            a, b = 0, len(node)
        if counter is not None:
            counter.sample_visits += visits
        w = node.weights[pick]
        rec = self._record(node.keys[pick], node.rows[pick])
        return Sample(rec, w / ctx.W, unit.height, None, node.off + pick)

    def sample_batch(self, ctx: RangeContext, n: int, rng: np.random.Generator,
                     counter: VisitCounter | None = None) -> SampleBatch:
        """Draw ``n`` samples; the same entries and costs as ``n`` calls of
        :meth:`sample_one` with the same generator state, computed in bulk."""
        if not ctx.W > 0:
            raise InvalidValueError("cannot sample from a zero-weight range")
        f = self.flat
        d = rng.random(n)
        if f.unit_weights:
            # cumulative weights are the integers themselves
            pos = ctx.lo + np.floor(d * ctx.W).astype(np.int64)
        else:
            target = f.cumw[ctx.lo] + d * ctx.W
            pos = np.searchsorted(f.cumw, target, side="right") - 1
        np.clip(pos, ctx.lo, ctx.hi - 1, out=pos)
        heights = ctx.unit_heights(pos)
        if counter is not None:
            counter.sample_visits += int(heights.sum())
        w = f.weights[pos]
        return SampleBatch(pos, f.keys[pos], f.values[pos], f.attrs[pos], w, w / ctx.W, heights)

    # -- persistence --------------------------------------------------------

    def save(self, path) -> None:
        f = self.flat
        np.savez_compressed(
            path, magic=np.array(SNAPSHOT_MAGIC), version=np.array(SNAPSHOT_VERSION),
            fanout=np.array(self.fanout), attr_names=np.array(self.attr_names, dtype=str),
            keys=f.keys, values=f.values, attrs=f.attrs, weights=f.weights)

    @classmethod
    def load(cls, path) -> "ABTree":
        with np.load(path, allow_pickle=False) as z:
            if str(z["magic"]) != SNAPSHOT_MAGIC:
                raise InvalidValueError(f"{path} is not an index snapshot")
            if int(z["version"]) != SNAPSHOT_VERSION:
                raise InvalidValueError(f"unsupported snapshot version {int(z['version'])}")
            tree = cls.from_arrays(z["keys"], z["values"], z["attrs"], z["weights"], int(z["fanout"]))
            tree.attr_names = tuple(str(a) for a in z["attr_names"])
            return tree


def _last_positive(ws: list[float], a: int, b: int) -> int:
    for i in range(b - 1, a - 1, -1):
        if ws[i] > 0:
            return i
    return b - 1


def _assign_key_ranges(units: list[DecompUnit], L: int, U: int) -> None:
    for i, u in enumerate(units):
        lo = L if i == 0 else units[i].min_key
        hi = U if i == len(units) - 1 else units[i + 1].min_key
        u.key_range = (lo, hi)


def build_bulk(records: Sequence[Record], fanout: int = DEFAULT_FANOUT) -> ABTree:
    return ABTree.build_bulk(records, fanout)


def range_preprocess(tree: ABTree, L: int, U: int, counter: VisitCounter | None = None) -> RangeContext:
    return tree.range_preprocess(L, U, counter)


def sample_one(tree: ABTree, ctx: RangeContext, rng: np.random.Generator,
               counter: VisitCounter | None = None) -> Sample:
    return tree.sample_one(ctx, rng, counter)


def child_subranges(tree: ABTree, unit: DecompUnit) -> list[DecompUnit]:
    return tree.child_subranges(unit)


def exact_leaf_run_aggregate(tree: ABTree, unit: DecompUnit, predicate: Predicate = ACCEPT_ALL,
                             agg: Agg = SUM) -> tuple[float, int]:
    return tree.exact_aggregate(unit, predicate, agg)


def minimal_height(n: int, fanout: int) -> int:
    """Height of a fully packed tree over ``n`` entries."""
    nodes = math.ceil(n / (fanout - 1))
    h = 1
    while nodes > 1:
        nodes = math.ceil(nodes / fanout)
        h += 1
    return h
