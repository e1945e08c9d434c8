"""Conjunctive filter predicates of the form ``attr <op> constant``."""

from __future__ import annotations

import operator
import re
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ParseError, SchemaError

_OPS = {
    "<": operator.lt,
    "<=": operator.le,
    "=": operator.eq,
    "==": operator.eq,
    ">=": operator.ge,
    ">": operator.gt,
}

_TERM = re.compile(r"^\s*([A-Za-z_][A-Za-z0-9_]*|\d+)\s*(<=|>=|==|=|<|>)\s*(\S+)\s*$")


@dataclass(frozen=True)
class Condition:
    attr: int
    op: str
    value: float

    def __post_init__(self) -> None:
        if self.op not in _OPS:
            raise ParseError(f"unknown comparison operator {self.op!r}")


@dataclass(frozen=True)
class Predicate:
    """A conjunction of conditions; the empty conjunction accepts everything."""

    conditions: tuple[Condition, ...] = ()

    def __call__(self, attrs: Sequence[float]) -> bool:
        return all(_OPS[c.op](attrs[c.attr], c.value) for c in self.conditions)

    def mask(self, attrs: np.ndarray) -> np.ndarray:
        """Vectorised evaluation over an ``(n, n_attrs)`` array."""
        out = np.ones(attrs.shape[0], dtype=bool)
        for c in self.conditions:
            out &= _OPS[c.op](attrs[:, c.attr], c.value)
        return out

    @property
    def is_trivial(self) -> bool:
        return not self.conditions

    @classmethod
    def parse(cls, text: str | None, attr_names: Sequence[str] = ()) -> "Predicate":
        """Parse ``"delay>49, flag=1"``; attributes by name or column index."""
        if text is None or not text.strip():
            return cls()
        conds = []
        for term in re.split(r",|\band\b|&&", text):
            if not term.strip():
                continue
            m = _TERM.match(term)
            if m is None:
                raise ParseError(f"cannot parse filter term {term.strip()!r}")
            name, op, const = m.groups()
            if name.isdigit():
                idx = int(name)
                if attr_names and idx >= len(attr_names):
                    raise SchemaError(f"attribute index {idx} out of range")
            else:
                try:
                    idx = list(attr_names).index(name)
                except ValueError:
                    raise SchemaError(f"unknown attribute {name!r}") from None
            try:
                value = float(const)
            except ValueError:
                raise ParseError(f"non-numeric constant in {term.strip()!r}") from None
            conds.append(Condition(idx, "=" if op == "==" else op, value))
        return cls(tuple(conds))

    def describe(self, attr_names: Sequence[str] = ()) -> str:
        parts = []
        for c in self.conditions:
            name = attr_names[c.attr] if c.attr < len(attr_names) else str(c.attr)
            parts.append(f"{name}{c.op}{c.value:g}")
        return ",".join(parts)


ACCEPT_ALL = Predicate()
