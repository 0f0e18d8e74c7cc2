"""Command-line front end: gen, run, verify, explain, bench.

Exit codes: 0 ok, 1 verification mismatch (or nondeterministic counters),
2 usage / plan errors, 3 storage and I/O errors.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
from pathlib import Path

from .engine import QueryResult, execute
from .exec_classic import PlanError
from .oracle import OracleError, oracle_execute
from .planner import (STRATEGIES, MaterializationSchedule, Strategy, build_plan, plan_signature,
                      validate)
from .storage import BufferPool, Catalog, StorageError, open_catalog
from .workload import TPCH, builtin_queries, cardinalities, generate, load_query

CSV_FIELDS = ["query", "strategy", "sf", "pool_pages", "pages_seq", "pages_rand", "bytes_read",
              "rows_pushed", "hashtable_peak", "wall_ms"]

EXIT_OK, EXIT_MISMATCH, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3


class UsageError(Exception):
    pass


class NondeterminismError(Exception):
    pass


def resolve_query(name: str, without_cname: bool = False):
    queries = builtin_queries()
    if without_cname and name == "q5mod":
        name = "q5mod_nocname"
    if name in queries:
        return queries[name]
    if Path(name).is_file():
        return load_query(name)
    raise UsageError(f"unknown query {name!r}: expected one of {sorted(queries)} or a query file")


def default_pool_pages(catalog: Catalog) -> int:
    """Pages for 10% of the largest column."""
    largest = max((c.page_count for c in catalog.columns.values()), default=1)
    return max(1, math.ceil(largest * 0.1))


def load_strategy(kind: str, schedule_path: str | None) -> Strategy:
    if schedule_path and kind != "hybrid":
        raise UsageError("--schedule only applies to the hybrid strategy")
    sched = None
    if schedule_path:
        sched = MaterializationSchedule.parse(Path(schedule_path).read_text(encoding="utf-8"))
    return Strategy(kind, sched)


def run_once(q, strategy: Strategy, catalog: Catalog, pool: BufferPool, cold: bool) -> QueryResult:
    return execute(build_plan(q, strategy, catalog), catalog, pool, cold=cold)


def csv_row(query: str, strategy: str, sf, pool_pages: int, res: QueryResult, wall_ms: float) -> dict:
    m = res.metrics
    return {"query": query, "strategy": strategy, "sf": sf, "pool_pages": pool_pages,
            "pages_seq": m.pages_seq, "pages_rand": m.pages_rand, "bytes_read": m.bytes_read,
            "rows_pushed": m.rows_pushed_total, "hashtable_peak": m.hashtable_bytes_peak,
            "wall_ms": f"{wall_ms:.3f}"}


def append_csv(path: str | Path, rows: list[dict]) -> None:
    p = Path(path)
    new = not p.exists() or p.stat().st_size == 0
    with p.open("a", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
        if new:
            w.writeheader()
        w.writerows(rows)


def _sf_of(catalog: Catalog):
    return catalog.manifest.get("sf", "")


def _print_metrics(res: QueryResult, out) -> None:
    m = res.metrics
    print(f"rows: {len(res)}", file=out)
    print(f"pages_seq={m.pages_seq} pages_rand={m.pages_rand} bytes_read={m.bytes_read} "
          f"rows_pushed={m.rows_pushed_total} hashtable_peak={m.hashtable_bytes_peak} "
          f"wall_ms={m.wall_ms:.1f}", file=out)
    for key, c in sorted(m.columns.items()):
        print(f"  {key}: seq={c.pages_seq} rand={c.pages_rand} hits={c.hits}", file=out)


# --------------------------------------------------------------------------- #
# commands
# --------------------------------------------------------------------------- #

def cmd_gen(args, out) -> int:
    if not args.sf > 0:
        raise UsageError("sf must be positive")
    generate(args.sf, args.seed, args.out)
    for table, n in cardinalities(args.sf).items():
        print(f"{table}\t{n}", file=out)
    return EXIT_OK


def cmd_run(args, out) -> int:
    catalog = open_catalog(args.data)
    q = resolve_query(args.query, args.without_cname)
    strategy = load_strategy(args.strategy, args.schedule)
    pool_pages = args.pool_pages or default_pool_pages(catalog)
    pool = BufferPool(pool_pages)
    try:
        for _ in range(args.repeat):
            res = run_once(q, strategy, catalog, pool, args.cold)
            _print_metrics(res, out)
            if args.csv:
                append_csv(args.csv, [csv_row(q.name, args.strategy, _sf_of(catalog), pool_pages,
                                              res, res.metrics.wall_ms)])
    finally:
        pool.close()
    return EXIT_OK


def cmd_verify(args, out) -> int:
    catalog = open_catalog(args.data)
    q = resolve_query(args.query, args.without_cname)
    validate(q, catalog)
    expected = oracle_execute(q, args.data)
    pool_pages = args.pool_pages or default_pool_pages(catalog)
    ok = True
    for s in STRATEGIES:
        pool = BufferPool(pool_pages)
        try:
            got = run_once(q, Strategy(s), catalog, pool, cold=True).canonical()
        finally:
            pool.close()
        if got != expected:
            ok = False
            extra = next(iter(got - expected), None)
            missing = next(iter(expected - got), None)
            print(f"{s}: MISMATCH ({sum(got.values())} rows vs oracle {sum(expected.values())})", file=out)
            if extra is not None:
                print(f"  unexpected row: {extra}", file=out)
            if missing is not None:
                print(f"  missing row: {missing}", file=out)
    if ok:
        print(f"{len(STRATEGIES)} strategies == oracle: OK ({sum(expected.values())} rows)", file=out)
        return EXIT_OK
    return EXIT_MISMATCH


def cmd_explain(args, out) -> int:
    info = open_catalog(args.data) if args.data else TPCH
    q = resolve_query(args.query, args.without_cname)
    plan = build_plan(q, load_strategy(args.strategy, args.schedule), info)
    out.write(plan_signature(plan))
    return EXIT_OK


def _parse_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def cmd_bench(args, out) -> int:
    sfs = [float(s) for s in _parse_list(args.sfs)]
    queries = _parse_list(args.queries)
    strategies = _parse_list(args.strategies)
    for s in strategies:
        if s not in STRATEGIES:
            raise UsageError(f"unknown strategy {s!r}")
    if args.repeat < 1:
        raise UsageError("--repeat must be at least 1")
    rows = []
    for sf in sfs:
        if not sf > 0:
            raise UsageError("sf must be positive")
        data = Path(args.data_root) / f"sf{sf:g}"
        if not (data / "catalog.tsv").is_file():
            generate(sf, args.seed, data)
        catalog = open_catalog(data)
        pool_pages = args.pool_pages or default_pool_pages(catalog)
        for qname in queries:
            q = resolve_query(qname)
            for s in strategies:
                plan_strategy = Strategy(s)
                counters, walls = None, []
                for _ in range(args.repeat):
                    pool = BufferPool(pool_pages)
                    try:
                        res = run_once(q, plan_strategy, catalog, pool, cold=True)
                    finally:
                        pool.close()
                    c = res.metrics.counters()
                    if counters is not None and c != counters:
                        raise NondeterminismError(
                            f"counters differ across repeats for {qname}/{s} at sf {sf:g}")
                    counters = c
                    walls.append(res.metrics.wall_ms)
                row = csv_row(q.name, s, f"{sf:g}", pool_pages, res, sum(walls) / len(walls))
                rows.append(row)
                print(",".join(str(row[f]) for f in CSV_FIELDS), file=out)
    append_csv(args.csv, rows)
    return EXIT_OK


# --------------------------------------------------------------------------- #
# argument parsing
# --------------------------------------------------------------------------- #

def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hymat", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate TPC-H subset data")
    g.add_argument("--sf", type=float, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    def query_args(sp, strategy: bool):
        sp.add_argument("--query", required=True, help="q5mod, q5mod_nocname, q9mod or a query file")
        cn = sp.add_mutually_exclusive_group()
        cn.add_argument("--with-cname", dest="without_cname", action="store_false")
        cn.add_argument("--without-cname", dest="without_cname", action="store_true")
        sp.set_defaults(without_cname=False)
        if strategy:
            sp.add_argument("--strategy", required=True, choices=STRATEGIES)
            sp.add_argument("--schedule", help="hybrid materialization schedule file")

    r = sub.add_parser("run", help="execute one query with one strategy")
    r.add_argument("--data", required=True)
    query_args(r, True)
    r.add_argument("--pool-pages", type=_positive_int)
    r.add_argument("--cold", action="store_true", help="empty the buffer pool before each run")
    r.add_argument("--repeat", type=_positive_int, default=1)
    r.add_argument("--csv")
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("verify", help="check every strategy against the oracle")
    v.add_argument("--data", required=True)
    query_args(v, False)
    v.add_argument("--pool-pages", type=_positive_int)
    v.set_defaults(func=cmd_verify)

    e = sub.add_parser("explain", help="print the plan tree")
    query_args(e, True)
    e.add_argument("--data", help="catalog to plan against (default: built-in TPC-H schema)")
    e.set_defaults(func=cmd_explain)

    b = sub.add_parser("bench", help="run a query x strategy x sf matrix into CSV")
    b.add_argument("--data-root", required=True)
    b.add_argument("--sfs", required=True, help="comma-separated scale factors")
    b.add_argument("--queries", required=True)
    b.add_argument("--strategies", required=True)
    b.add_argument("--csv", required=True)
    b.add_argument("--repeat", type=int, default=1)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--pool-pages", type=_positive_int)
    b.set_defaults(func=cmd_bench)
    return p


def main(argv: list[str] | None = None, out=None) -> int:
    out = out or sys.stdout
    args = build_parser().parse_args(argv)
    try:
        return args.func(args, out)
    except (UsageError, PlanError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except NondeterminismError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_MISMATCH
    except (StorageError, OracleError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
