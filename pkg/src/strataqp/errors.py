"""Error classes. Each carries a stable ``code`` and a CLI exit status."""

from __future__ import annotations


class StrataError(Exception):
    code = "ERROR"
    exit_status = 1


class EmptyDatasetError(StrataError):
    code = "EMPTY_DATASET"
    exit_status = 10


class InvalidValueError(StrataError, ValueError):
    code = "INVALID_VALUE"
    exit_status = 11


class EmptyRangeError(StrataError):
    code = "EMPTY_RANGE"
    exit_status = 12


class LeafLevelError(StrataError):
    code = "LEAF_LEVEL"
    exit_status = 13


class InvalidProbabilityError(StrataError, ValueError):
    code = "INVALID_PROBABILITY"
    exit_status = 14


class RangeMismatchError(StrataError, ValueError):
    code = "RANGE_MISMATCH"
    exit_status = 15


class BudgetExhaustedError(StrataError):
    code = "BUDGET_EXHAUSTED"
    exit_status = 16


class InvalidSpikesError(StrataError, ValueError):
    code = "INVALID_SPIKES"
    exit_status = 17


class ParseError(StrataError, ValueError):
    code = "PARSE_ERROR"
    exit_status = 18


class SchemaError(StrataError, KeyError):
    code = "SCHEMA_ERROR"
    exit_status = 19


class DivergedError(StrataError):
    code = "DIVERGED"
    exit_status = 20
