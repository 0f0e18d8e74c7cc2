"""Per-query counters: page fetches per column, rows/blocks per operator, hash
table footprint.  These are the numbers the benchmark compares strategies on."""

from __future__ import annotations

import time
from dataclasses import dataclass, field, fields

from .storage import PAGE_SIZE, BufferPool, Catalog


class MetricsError(Exception):
    pass


@dataclass(frozen=True)
class ColumnIO:
    pages_seq: int = 0
    pages_rand: int = 0
    hits: int = 0

    @property
    def bytes_read(self) -> int:
        return (self.pages_seq + self.pages_rand) * PAGE_SIZE


@dataclass(frozen=True)
class OperatorStats:
    op_id: int
    name: str
    blocks_out: int
    rows_out: int


@dataclass(frozen=True)
class QueryMetrics:
    columns: dict[str, ColumnIO]
    operators: tuple[OperatorStats, ...]
    hashtable_bytes_peak: int
    wall_ms: float

    @property
    def pages_seq(self) -> int:
        return sum(c.pages_seq for c in self.columns.values())

    @property
    def pages_rand(self) -> int:
        return sum(c.pages_rand for c in self.columns.values())

    @property
    def pages_total(self) -> int:
        return self.pages_seq + self.pages_rand

    @property
    def bytes_read(self) -> int:
        return self.pages_total * PAGE_SIZE

    @property
    def rows_pushed_total(self) -> int:
        return sum(o.rows_out for o in self.operators)

    def column(self, key: str) -> ColumnIO:
        return self.columns.get(key, ColumnIO())

    def counters(self) -> dict:
        """Everything except wall time, for determinism checks."""
        return {
            "columns": {k: (v.pages_seq, v.pages_rand, v.hits) for k, v in sorted(self.columns.items())},
            "operators": [(o.name, o.blocks_out, o.rows_out) for o in self.operators],
            "hashtable_bytes_peak": self.hashtable_bytes_peak,
        }


ZERO_METRICS = QueryMetrics({}, (), 0, 0.0)


class QueryContext:
    """Execution-time state shared by the operators of one query."""

    def __init__(self, catalog: Catalog, pool: BufferPool, *, block_capacity: int = 1024,
                 hash_memory_cap: int = 1 << 30, sort_probe: bool = False):
        self.catalog = catalog
        self.pool = pool
        self.block_capacity = block_capacity
        self.hash_memory_cap = hash_memory_cap
        self.sort_probe = sort_probe
        self._ops: list[list] = []
        self._ht_current = 0
        self._ht_peak = 0
        self._start_cols = {k: (c.fetch_seq, c.fetch_rand, c.hits) for k, c in pool.per_column.items()}
        self._t0 = time.perf_counter()
        self._wall_ms: float | None = None

    # operator accounting
    def register(self, name: str) -> int:
        self._ops.append([name, 0, 0])
        return len(self._ops) - 1

    def count(self, op_id: int, rows: int) -> None:
        rec = self._ops[op_id]
        rec[1] += 1
        rec[2] += rows

    def hashtable_alloc(self, nbytes: int) -> None:
        from .exec_classic import PlanError
        if self._ht_current + nbytes > self.hash_memory_cap:
            raise PlanError(f"hash tables need {self._ht_current + nbytes} bytes, "
                            f"memory cap is {self.hash_memory_cap}")
        self._ht_current += nbytes
        self._ht_peak = max(self._ht_peak, self._ht_current)

    def hashtable_free(self, nbytes: int) -> None:
        self._ht_current -= nbytes

    def finish(self) -> None:
        if self._wall_ms is None:
            self._wall_ms = (time.perf_counter() - self._t0) * 1000.0

    @property
    def finished(self) -> bool:
        return self._wall_ms is not None

    def snapshot(self) -> QueryMetrics:
        if not self.finished:
            raise MetricsError("query still running")
        cols = {}
        for key, c in self.pool.per_column.items():
            s0, r0, h0 = self._start_cols.get(key, (0, 0, 0))
            io = ColumnIO(c.fetch_seq - s0, c.fetch_rand - r0, c.hits - h0)
            if io.pages_seq or io.pages_rand or io.hits:
                cols[key] = io
        ops = tuple(OperatorStats(i, n, b, r) for i, (n, b, r) in enumerate(self._ops))
        return QueryMetrics(cols, ops, self._ht_peak, self._wall_ms)


snapshot = QueryContext.snapshot


# --------------------------------------------------------------------------- #
# comparison
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class FieldDiff:
    a: float
    b: float
    ratio: float | None  # None when undefined (b == 0 < a)

    @property
    def undefined(self) -> bool:
        return self.ratio is None


def _ratio(a: float, b: float) -> float | None:
    if a == b:
        return 1.0
    if b == 0:
        return None
    return a / b


@dataclass(frozen=True)
class MetricsDiff:
    totals: dict[str, FieldDiff]
    columns: dict[str, dict[str, FieldDiff]] = field(default_factory=dict)

    def undefined(self) -> list[str]:
        out = [k for k, d in self.totals.items() if d.undefined]
        for col, diffs in self.columns.items():
            out += [f"{col}.{k}" for k, d in diffs.items() if d.undefined]
        return out


def compare(a: QueryMetrics, b: QueryMetrics) -> MetricsDiff:
    """Field-wise diff of two metric snapshots, ratios taken as a / b."""
    totals = {}
    for name in ("pages_seq", "pages_rand", "bytes_read", "rows_pushed_total", "hashtable_bytes_peak"):
        x, y = getattr(a, name), getattr(b, name)
        totals[name] = FieldDiff(x, y, _ratio(x, y))
    columns = {}
    for key in sorted(set(a.columns) | set(b.columns)):
        ca, cb = a.column(key), b.column(key)
        columns[key] = {
            f.name: FieldDiff(getattr(ca, f.name), getattr(cb, f.name),
                              _ratio(getattr(ca, f.name), getattr(cb, f.name)))
            for f in fields(ColumnIO)
        }
        columns[key]["bytes_read"] = FieldDiff(ca.bytes_read, cb.bytes_read,
                                               _ratio(ca.bytes_read, cb.bytes_read))
    return MetricsDiff(totals, columns)
