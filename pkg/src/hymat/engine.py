"""Run a plan to completion and collect its result rows and metrics."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from decimal import Decimal

import numpy as np

from .blocks import Schema, TupleBlock
from .exec_classic import Operator, PlanError
from .expr import is_char, scale_of
from .metrics import QueryContext, QueryMetrics
from .storage import BufferPool, Catalog


@dataclass
class QueryResult:
    schema: Schema | None
    rows: np.ndarray
    metrics: QueryMetrics

    def __len__(self) -> int:
        return len(self.rows)

    def canonical(self) -> Counter:
        return canonical_rows(self.schema, self.rows)


def _canon(value, vtype: str):
    if is_char(vtype):
        return bytes(value).rstrip(b" ").decode("ascii")
    if vtype == "bool":
        return bool(value)
    return format(Decimal(int(value)).scaleb(-scale_of(vtype)).normalize(), "f")


def canonical_rows(schema: Schema | None, rows: np.ndarray) -> Counter:
    if schema is None or not len(rows):
        return Counter()
    types = [a.value_type for a in schema.attributes]
    cols = [[_canon(v, t) for v in rows[a.name]] for a, t in zip(schema.attributes, types)]
    return Counter(zip(*cols))


def execute(plan: Operator, catalog: Catalog, pool: BufferPool, *, cold: bool = False,
            block_capacity: int = 1024, hash_memory_cap: int = 1 << 30,
            sort_probe: bool = False) -> QueryResult:
    """Open, drain and close *plan*.  With ``cold`` the pool is emptied first."""
    if cold:
        pool.clear()
    ctx = QueryContext(catalog, pool, block_capacity=block_capacity,
                       hash_memory_cap=hash_memory_cap, sort_probe=sort_probe)
    plan.open(ctx)
    blocks = []
    try:
        while (b := plan.next()) is not None:
            if not isinstance(b, TupleBlock):
                raise PlanError(f"plan root must produce tuples, got {type(b).__name__}")
            blocks.append(b)
    finally:
        plan.close()
        ctx.finish()
    schema = blocks[0].schema if blocks else None
    rows = np.concatenate([b.rows for b in blocks]) if blocks else np.empty(0)
    return QueryResult(schema, rows, ctx.snapshot())
