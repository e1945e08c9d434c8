"""Command line interface.

    python -m strataqp gen spike --rows 100000 --out spike.csv
    python -m strataqp index build --csv spike.csv --key-col key --attr-cols cancelled --out spike.npz
    python -m strataqp query --index spike.npz --range 100..900 --agg count --filter cancelled=1 --ci 50
    python -m strataqp bench --dataset spike --rows 100000 --range 100..900 --agg count --filter cancelled=1

Every tuning flag can also be set through an environment variable named
``STRATAQP_`` plus the flag name in upper case with dashes as underscores
(``--delta-n0`` -> ``STRATAQP_DELTA_N0``). Command line flags win.
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from typing import Sequence

from . import bench as bench_mod
from .data import COUNT_COLUMN, Dataset, date_to_days, gen_lineitem, gen_spike, load_csv, write_csv
from .engine import ProgressReport, QuerySpec, Strategy, exact_query, run_query
from .errors import InvalidValueError, ParseError, StrataError
from .index import ABTree, Agg, COUNT, DEFAULT_FANOUT, SUM
from .predicate import Predicate
from . import stratification as strat

log = logging.getLogger("strataqp")

ENV_PREFIX = "STRATAQP_"


def _env(flag: str, default):
    raw = os.environ.get(ENV_PREFIX + flag.upper().replace("-", "_"))
    if raw is None:
        return default
    if isinstance(default, bool):
        return raw.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(default, int) and not isinstance(default, bool):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def _key(text: str) -> int:
    text = text.strip()
    try:
        return int(text)
    except ValueError:
        try:
            return date_to_days(text)
        except ValueError:
            raise ParseError(f"cannot parse key {text!r}") from None


def parse_range(text: str) -> tuple[int, int]:
    """``L..U`` with integer or ISO-date endpoints, half-open."""
    if ".." not in text:
        raise ParseError(f"range must look like L..U, got {text!r}")
    a, b = text.split("..", 1)
    return _key(a), _key(b)


def parse_agg(text: str, attr_names: Sequence[str]) -> Agg:
    """``count``, ``sum`` (value column) or ``sum:<attribute>``."""
    t = text.strip().lower()
    if t == "count":
        return COUNT
    if t == "sum":
        return SUM
    if t.startswith("sum:"):
        name = text.split(":", 1)[1].strip()
        if name.isdigit():
            return Agg("sum", int(name))
        if name not in attr_names:
            raise ParseError(f"unknown attribute {name!r}")
        return Agg("sum", list(attr_names).index(name))
    raise ParseError(f"unknown aggregate {text!r}")


def _step(text: str) -> float:
    return math.inf if text.strip().lower() in ("inf", "infinity", "none") else float(int(text))


def _add_query_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--range", required=True, help="half-open key range L..U")
    p.add_argument("--agg", default="sum", help="count | sum | sum:<attr> (default sum)")
    p.add_argument("--filter", default=None, help='conjunction such as "delay>49, flag=1"')
    p.add_argument("--confidence", type=float, default=_env("confidence", 0.95))
    p.add_argument("--n0", type=int, default=_env("n0", 0), help="phase-0 sample size (0: min(200*NDV, 1e5))")
    p.add_argument("--ndv", type=int, default=_env("ndv", 0), help="distinct keys (0: count in range)")
    p.add_argument("--strategy", choices=[s.value for s in Strategy], default=_env("strategy", "costopt"))
    p.add_argument("--step-size", type=_step, default=_step(str(_env("step-size", "inf"))))
    p.add_argument("--seed", type=int, default=_env("seed", 0))
    p.add_argument("--c0", type=float, default=_env("c0", strat.DEFAULT_C0))
    p.add_argument("--granularity", type=int, default=_env("granularity", strat.DEFAULT_GRANULARITY))
    p.add_argument("--delta-n0", type=int, default=_env("delta-n0", strat.DEFAULT_DELTA_N0))
    p.add_argument("--tau", type=float, default=_env("tau", strat.DEFAULT_TAU))
    p.add_argument("--combine-rule", choices=["variance", "linear"], default=_env("combine-rule", "variance"))
    p.add_argument("--revert-to-uniform", action="store_true", default=_env("revert-to-uniform", False))


def _add_source_flags(p: argparse.ArgumentParser, required: bool = True) -> None:
    g = p.add_mutually_exclusive_group(required=required)
    g.add_argument("--index", help="index snapshot written by `index build`")
    g.add_argument("--csv", help="CSV file (indexed on the fly)")
    p.add_argument("--key-col", default="key")
    p.add_argument("--value-col", default="value", help=f"value column or {COUNT_COLUMN}")
    p.add_argument("--attr-cols", default="", help="comma separated filter columns")
    p.add_argument("--fanout", type=int, default=_env("fanout", DEFAULT_FANOUT))


def _cols(text: str) -> list[str]:
    return [c.strip() for c in text.split(",") if c.strip()]


def _load_csv(args) -> Dataset:
    return load_csv(args.csv, args.key_col, args.value_col, _cols(args.attr_cols))


def _load_tree(args) -> ABTree:
    if args.index:
        return ABTree.load(args.index)
    return _load_csv(args).tree(args.fanout)


def _spec(args, attr_names: Sequence[str], eps: float) -> QuerySpec:
    L, U = parse_range(args.range)
    return QuerySpec(
        L, U, eps, agg=parse_agg(args.agg, attr_names), predicate=Predicate.parse(args.filter, attr_names),
        confidence=args.confidence, n0=args.n0 or None, ndv=args.ndv or None, strategy=args.strategy,
        step_size=args.step_size, seed=args.seed, c0=args.c0, d=args.granularity,
        delta_n0=args.delta_n0, tau=args.tau, combine_rule=args.combine_rule,
        revert_to_uniform=args.revert_to_uniform)


def _parse_spikes(items: Sequence[str]) -> list[tuple[tuple[int, int], float]]:
    out = []
    for it in items:
        try:
            lo, hi, rate = it.split(":")
            out.append(((int(lo), int(hi)), float(rate)))
        except ValueError:
            raise ParseError(f"spike must look like LO:HI:RATE, got {it!r}") from None
    return out


def cmd_gen(args) -> int:
    if args.kind == "spike":
        ds = gen_spike(args.rows, args.base_rate, _parse_spikes(args.spike), args.keys, args.seed)
    else:
        ds = gen_lineitem(args.rows, args.special_ranges, args.seed)
    write_csv(ds, args.out)
    print(f"wrote {len(ds)} rows ({ds.ndv} distinct keys) to {args.out}", file=sys.stderr)
    return 0


def cmd_index(args) -> int:
    ds = _load_csv(args)
    tree = ds.tree(args.fanout)
    tree.save(args.out)
    print(f"indexed {len(ds)} records, height {tree.height}, to {args.out}", file=sys.stderr)
    return 0


def cmd_query(args) -> int:
    tree = _load_tree(args)
    spec = _spec(args, tree.attr_names, args.ci)
    out = sys.stdout
    out.write(ProgressReport.CSV_HEADER + "\n")

    def sink(r: ProgressReport) -> None:
        out.write(r.csv() + "\n")
        if args.timing:
            print(f"round {r.round}: {r.elapsed_ns} ns", file=sys.stderr)

    run_query(spec, tree, sink)
    if args.exact:
        print(f"exact answer: {exact_query(spec, tree)!r}", file=sys.stderr)
    out.flush()
    return 0


def cmd_bench(args) -> int:
    if args.csv:
        ds = _load_csv(args)
    elif args.dataset == "spike":
        ds = gen_spike(args.rows, args.base_rate, _parse_spikes(args.spike), args.keys, args.seed)
    elif args.dataset == "lineitem":
        ds = gen_lineitem(args.rows, args.special_ranges, args.seed)
    else:
        raise InvalidValueError("bench needs --csv or --dataset")
    template = _spec(args, ds.attr_names, 1.0)
    strategies = _cols(args.strategies)
    fracs = [float(x) for x in _cols(args.eps_levels)]
    seeds = range(args.seed, args.seed + args.repeats)
    results = bench_mod.bench(ds, template, strategies, fracs, args.repeats, seeds,
                              tree=ds.tree(args.fanout), workers=args.workers)
    if args.out:
        bench_mod.write_results(results, args.out)
    else:
        sys.stdout.write(bench_mod.write_results(results))
    for (s, f), cell in sorted(bench_mod.summarize(results).items()):
        print(f"{s:8s} eps={f:<6g} visits={cell['visits']:.0f} coverage={cell['coverage']:.3f}",
              file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="strataqp", description="Approximate range aggregation by "
                                "index-assisted stratified sampling.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True)

    g = sub.add_parser("gen", help="generate a synthetic dataset as CSV")
    g.add_argument("kind", choices=["spike", "lineitem"])
    g.add_argument("--rows", type=int, default=100_000)
    g.add_argument("--seed", type=int, default=_env("seed", 0))
    g.add_argument("--base-rate", type=float, default=0.02)
    g.add_argument("--spike", action="append", default=[], help="LO:HI:RATE key offsets (repeatable)")
    g.add_argument("--keys", type=int, default=1000)
    g.add_argument("--special-ranges", type=int, default=3)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    ix = sub.add_parser("index", help="index operations")
    ixs = ix.add_subparsers(dest="index_verb", required=True)
    b = ixs.add_parser("build", help="build an index snapshot from CSV")
    b.add_argument("--csv", required=True)
    b.add_argument("--key-col", default="key")
    b.add_argument("--value-col", default="value")
    b.add_argument("--attr-cols", default="")
    b.add_argument("--fanout", type=int, default=_env("fanout", DEFAULT_FANOUT))
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_index)

    q = sub.add_parser("query", help="run one approximate query, one CSV line per progress report")
    _add_source_flags(q)
    _add_query_flags(q)
    q.add_argument("--ci", type=float, required=True, help="target absolute half-width of the CI")
    q.add_argument("--exact", action="store_true", help="also print the exact answer to stderr")
    q.add_argument("--timing", action="store_true", help="print per-report elapsed time to stderr")
    q.set_defaults(func=cmd_query)

    be = sub.add_parser("bench", help="benchmark strategies; CSV results")
    _add_source_flags(be, required=False)
    be.add_argument("--dataset", choices=["spike", "lineitem"])
    be.add_argument("--rows", type=int, default=100_000)
    be.add_argument("--base-rate", type=float, default=0.02)
    be.add_argument("--spike", action="append", default=[])
    be.add_argument("--keys", type=int, default=1000)
    be.add_argument("--special-ranges", type=int, default=3)
    _add_query_flags(be)
    be.add_argument("--strategies", default=",".join(s.value for s in Strategy))
    be.add_argument("--eps-levels", default=",".join(str(x) for x in bench_mod.EPS_LEVELS),
                    help="half-widths as fractions of the exact answer")
    be.add_argument("--repeats", type=int, default=_env("repeats", 10))
    be.add_argument("--workers", type=int, default=_env("workers", 1))
    be.add_argument("--out", default=None, help="CSV path (default stdout)")
    be.set_defaults(func=cmd_bench)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except StrataError as e:
        print(f"error [{e.code}]: {e}", file=sys.stderr)
        return e.exit_status
    except FileNotFoundError as e:
        print(f"error [NOT_FOUND]: {e}", file=sys.stderr)
        return 1
