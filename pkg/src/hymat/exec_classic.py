"""Volcano-style operators for early, late and ultra-late plans.

Operators are pulled with ``open(ctx)`` / ``next()`` / ``close()``; ``next()``
returns a block or ``None`` at end of stream.  Positional operators read
attribute values on demand through the buffer pool.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Iterator, Mapping, Sequence

import numpy as np

from .blocks import (Attr, HybridBlock, PositionalBlock, Schema, TupleBlock, pos_array,
                     slices)
from .expr import TRUE, Col, Expr, columns_of
from .hashtable import HashTable
from .metrics import QueryContext
from .storage import read_at_positions


class PlanError(Exception):
    """Invalid plan, unresolved name, or exceeded memory budget."""


class OperatorError(Exception):
    """Operator protocol violation (e.g. next() before open())."""


@dataclass(frozen=True)
class ColumnRef:
    """A column of a table instance (``alias``) in a plan."""

    alias: str
    table: str
    column: str

    @property
    def name(self) -> str:
        return f"{self.alias}.{self.column}"

    @property
    def pos_name(self) -> str:
        return pos_column(self.alias)

    def __str__(self) -> str:
        return self.name


def pos_column(alias: str) -> str:
    return f"{alias}_id"


def resolve(expr: Expr, tables: Mapping[str, str]) -> list[ColumnRef]:
    """Distinct column refs of *expr*, in first-use order."""
    seen: dict[str, ColumnRef] = {}
    for c in columns_of(expr):
        if c.alias not in tables:
            raise PlanError(f"unknown alias {c.alias!r} in {expr}")
        seen.setdefault(c.name, ColumnRef(c.alias, tables[c.alias], c.column))
    return list(seen.values())


def read_ref(ctx: QueryContext, ref: ColumnRef, positions) -> np.ndarray:
    meta = ctx.catalog.column(ref.table, ref.column)
    return read_at_positions(ctx.pool, meta, positions, sort_probe=ctx.sort_probe)


def ref_type(ctx: QueryContext, ref: ColumnRef) -> str:
    return ctx.catalog.column_type(ref.table, ref.column)


# --------------------------------------------------------------------------- #
# operator protocol
# --------------------------------------------------------------------------- #

class Operator:
    label = "Operator"

    def __init__(self, *children: "Operator"):
        self.children: list[Operator] = list(children)
        self.state = "created"
        self.ctx: QueryContext | None = None
        self.op_id = -1

    def open(self, ctx: QueryContext) -> None:
        if self.state != "created":
            raise OperatorError(f"{self.label}: open() in state {self.state}")
        self.ctx = ctx
        self.op_id = ctx.register(self.label)
        self.state = "open"
        self._open()

    def _open(self) -> None:
        for child in self.children:
            child.open(self.ctx)

    def next(self):
        if self.state == "exhausted":
            return None
        if self.state != "open":
            raise OperatorError(f"{self.label}: next() in state {self.state}")
        while True:
            block = self._next()
            if block is None:
                self.state = "exhausted"
                return None
            if len(block):
                self.ctx.count(self.op_id, len(block))
                return block

    def _next(self):
        raise NotImplementedError

    def close(self) -> None:
        if self.state == "closed":
            return
        for child in self.children:
            child.close()
        if self.state != "created":
            self._close()
        self.state = "closed"

    def _close(self) -> None:
        pass

    def __iter__(self) -> Iterator:
        while (block := self.next()) is not None:
            yield block

    # rendering
    def describe(self) -> list[str]:
        return [self.label]

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.describe()[0]})"


class _Buffered(Operator):
    """Operator whose ``_produce`` may return several blocks per pull."""

    def _open(self) -> None:
        super()._open()
        self._out: deque = deque()

    def _next(self):
        while not self._out:
            produced = self._produce()
            if produced is None:
                return None
            self._out.extend(produced)
        return self._out.popleft()

    def _produce(self):
        raise NotImplementedError


def drain(op: Operator) -> list:
    return list(iter(op))


# --------------------------------------------------------------------------- #
# leaves and unary operators
# --------------------------------------------------------------------------- #

class DataSource(Operator):
    """Emits dense ascending positions ``0 .. row_count-1`` of one table."""

    label = "DataSource"

    def __init__(self, alias: str, table: str | None = None, capacity: int | None = None):
        super().__init__()
        self.alias = alias
        self.table = table or alias
        self.capacity = capacity

    def _open(self) -> None:
        n = self.ctx.catalog.table(self.table).row_count
        cap = self.capacity or self.ctx.block_capacity
        self._ranges = iter(list(slices(n, cap)))

    def _next(self):
        r = next(self._ranges, None)
        if r is None:
            return None
        return PositionalBlock({pos_column(self.alias): np.arange(r[0], r[1], dtype=np.int64)},
                               r[1] - r[0])

    def describe(self):
        name = self.table if self.alias == self.table else f"{self.table} AS {self.alias}"
        return [f"{self.label}({name})"]


class PosFilter(Operator):
    """Keeps positions whose row satisfies a single-table predicate."""

    label = "PosFilter"

    def __init__(self, child: Operator, predicate: Expr, tables: Mapping[str, str]):
        super().__init__(child)
        self.predicate = predicate
        self.refs = resolve(predicate, tables)
        if len({r.alias for r in self.refs}) > 1:
            raise PlanError(f"PosFilter predicate must reference one table: {predicate}")

    def _open(self):
        super()._open()
        self._types = {r.name: ref_type(self.ctx, r) for r in self.refs}

    def _next(self):
        block = self.children[0].next()
        if block is None:
            return None
        env = {}
        for r in self.refs:
            if r.pos_name not in block.pos:
                raise PlanError(f"PosFilter: no {r.pos_name} in input")
            env[r.name] = read_ref(self.ctx, r, block.pos[r.pos_name])
        mask = self.predicate.eval(env, self._types.__getitem__, block.n)
        keep = np.flatnonzero(mask)
        return PositionalBlock({k: v[keep] for k, v in block.pos.items()}, len(keep))

    def describe(self):
        return [f"{self.label}({self.predicate})"]


class Materialize(Operator):
    """Positional block in, tuple block out: fetches *refs* at each row's positions."""

    label = "Materialize"

    def __init__(self, child: Operator, refs: Sequence[ColumnRef]):
        super().__init__(child)
        self.refs = list(refs)

    def _open(self):
        super()._open()
        self.schema = Schema(tuple(Attr(r.name, ref_type(self.ctx, r)) for r in self.refs))

    def _next(self):
        block = self.children[0].next()
        if block is None:
            return None
        rows = np.empty(block.n, dtype=self.schema.dtype())
        for r in self.refs:
            if r.pos_name not in block.pos:
                raise PlanError(f"Materialize: no position column {r.pos_name} for {r.name}")
            rows[r.name] = read_ref(self.ctx, r, block.pos[r.pos_name])
        return TupleBlock(self.schema, rows)

    def describe(self):
        return [f"{self.label}({', '.join(r.name for r in self.refs)})"]


class TupleFilter(Operator):
    label = "TupleFilter"

    def __init__(self, child: Operator, predicate: Expr):
        super().__init__(child)
        self.predicate = predicate

    def _next(self):
        block = self.children[0].next()
        if block is None:
            return None
        types = {a.name: a.value_type for a in block.schema.attributes}
        env = {n: block.rows[n] for n in self.predicate.refs()}
        mask = self.predicate.eval(env, types.__getitem__, len(block))
        return TupleBlock(block.schema, block.rows[mask])

    def describe(self):
        return [f"{self.label}({self.predicate})"]


class TupleProject(Operator):
    """Computes the output list ``[(name, expr), ...]`` over tuple blocks."""

    label = "Project"

    def __init__(self, child: Operator, outputs: Sequence[tuple[str, Expr]]):
        super().__init__(child)
        self.outputs = list(outputs)

    def _next(self):
        block = self.children[0].next()
        if block is None:
            return None
        types = {a.name: a.value_type for a in block.schema.attributes}
        schema = Schema(tuple(Attr(name, e.value_type(types.__getitem__)) for name, e in self.outputs))
        rows = np.empty(len(block), dtype=schema.dtype())
        env = {n: block.rows[n] for n in block.schema.names}
        for name, e in self.outputs:
            rows[name] = e.eval(env, types.__getitem__, len(block))
        return TupleBlock(schema, rows)

    def describe(self):
        return [f"{self.label}({', '.join(n for n, _ in self.outputs)})"]


# --------------------------------------------------------------------------- #
# joins
# --------------------------------------------------------------------------- #

def _merge_rows(left: np.ndarray, right: np.ndarray) -> np.ndarray:
    names = list(left.dtype.names) + list(right.dtype.names)
    if len(set(names)) != len(names):
        raise PlanError(f"join output has duplicate attributes: {names}")
    out = np.empty(len(left), dtype=np.dtype(left.dtype.descr + right.dtype.descr))
    for n in left.dtype.names:
        out[n] = left[n]
    for n in right.dtype.names:
        out[n] = right[n]
    return out


def _chunks(n: int, cap: int):
    return slices(n, cap) if n else []


class TupleHashJoin(_Buffered):
    """Equi-join on tuples; builds on the left input, streams the right."""

    label = "TupleHashJoin"

    def __init__(self, left: Operator, right: Operator, left_keys: Sequence[str],
                 right_keys: Sequence[str]):
        super().__init__(left, right)
        self.left_keys, self.right_keys = list(left_keys), list(right_keys)
        self._ht_bytes = 0

    def _open(self):
        self._out = deque()
        left, right = self.children
        left.open(self.ctx)
        blocks = drain(left)
        self._empty = not blocks
        if self._empty:
            return
        self._rows = np.concatenate([b.rows for b in blocks])
        self._schema = blocks[0].schema
        self._table = HashTable([self._rows[k] for k in self.left_keys])
        self._ht_bytes = self._table.nbytes + self._rows.nbytes
        self.ctx.hashtable_alloc(self._ht_bytes)
        right.open(self.ctx)

    def _produce(self):
        if self._empty:
            return None
        block = self.children[1].next()
        if block is None:
            return None
        pi, bi = self._table.probe([block.rows[k] for k in self.right_keys])
        rows = _merge_rows(self._rows[bi], block.rows[pi])
        schema = self._schema + block.schema
        return [TupleBlock(schema, rows[s:e]) for s, e in _chunks(len(rows), self.ctx.block_capacity)]

    def _close(self):
        self.ctx.hashtable_free(self._ht_bytes)
        self._ht_bytes = 0

    def describe(self):
        keys = " AND ".join(f"{a} = {b}" for a, b in zip(self.left_keys, self.right_keys))
        return [f"{self.label}({keys})"]


class TupleNLJoin(_Buffered):
    """Nested-loop join on tuples; the right input is the outer loop."""

    label = "TupleNLJoin"

    def __init__(self, left: Operator, right: Operator, predicate: Expr = TRUE):
        super().__init__(left, right)
        self.predicate = predicate

    def _open(self):
        self._out = deque()
        left, right = self.children
        left.open(self.ctx)
        blocks = drain(left)
        self._empty = not blocks
        if not self._empty:
            self._rows = np.concatenate([b.rows for b in blocks])
            self._schema = blocks[0].schema
            right.open(self.ctx)

    def _produce(self):
        if self._empty:
            return None
        block = self.children[1].next()
        if block is None:
            return None
        nl = len(self._rows)
        schema = self._schema + block.schema
        types = {a.name: a.value_type for a in schema.attributes}
        out = []
        step = max(1, (1 << 20) // nl)
        for s, e in slices(len(block), step):
            ri = np.repeat(np.arange(s, e), nl)
            li = np.tile(np.arange(nl), e - s)
            rows = _merge_rows(self._rows[li], block.rows[ri])
            env = {n: rows[n] for n in self.predicate.refs()}
            rows = rows[self.predicate.eval(env, types.__getitem__, len(rows))]
            out += [TupleBlock(schema, rows[a:b]) for a, b in _chunks(len(rows), self.ctx.block_capacity)]
        return out

    def describe(self):
        return [f"{self.label}({self.predicate})"]


def _concat_pos(blocks: list[PositionalBlock]) -> dict[str, np.ndarray]:
    return {k: np.concatenate([b.pos[k] for b in blocks]) for k in blocks[0].pos}


def _join_pos(left: Mapping[str, np.ndarray], li, right: Mapping[str, np.ndarray], ri) -> dict:
    dup = set(left) & set(right)
    if dup:
        raise PlanError(f"both join inputs carry {sorted(dup)}; alias one side")
    out = {k: v[li] for k, v in left.items()}
    out.update({k: v[ri] for k, v in right.items()})
    return out


class PosHashJoin(_Buffered):
    """Equi-join on positions.  Key values are read on demand for both inputs;
    the hash table stores key values plus the build side's positions."""

    label = "PosHashJoin"

    def __init__(self, left: Operator, right: Operator, left_keys: Sequence[ColumnRef],
                 right_keys: Sequence[ColumnRef]):
        super().__init__(left, right)
        self.left_keys, self.right_keys = list(left_keys), list(right_keys)
        self._ht_bytes = 0

    def _open(self):
        self._out = deque()
        left, right = self.children
        left.open(self.ctx)
        blocks = drain(left)
        self._empty = not blocks
        if self._empty:
            return
        keys = [np.concatenate([read_ref(self.ctx, k, b.pos[k.pos_name]) for b in blocks])
                for k in self.left_keys]
        self._pos = _concat_pos(blocks)
        self._table = HashTable(keys)
        self._ht_bytes = self._table.nbytes + sum(v.nbytes for v in self._pos.values())
        self.ctx.hashtable_alloc(self._ht_bytes)
        right.open(self.ctx)

    def _produce(self):
        if self._empty:
            return None
        block = self.children[1].next()
        if block is None:
            return None
        keys = [read_ref(self.ctx, k, block.pos[k.pos_name]) for k in self.right_keys]
        pi, bi = self._table.probe(keys)
        pos = _join_pos(self._pos, bi, block.pos, pi)
        return [PositionalBlock({k: v[s:e] for k, v in pos.items()}, e - s)
                for s, e in _chunks(len(pi), self.ctx.block_capacity)]

    def _close(self):
        self.ctx.hashtable_free(self._ht_bytes)
        self._ht_bytes = 0

    def describe(self):
        keys = " AND ".join(f"{a} = {b}" for a, b in zip(self.left_keys, self.right_keys))
        return [f"{self.label}({keys})"]


class PosNLJoin(_Buffered):
    """Nested-loop join on positions.  The right input drives the outer loop, so
    output order follows right input order."""

    label = "PosNLJoin"

    def __init__(self, left: Operator, right: Operator, predicate: Expr,
                 tables: Mapping[str, str]):
        super().__init__(left, right)
        self.predicate = predicate
        self.refs = resolve(predicate, tables)

    def _open(self):
        self._out = deque()
        left, right = self.children
        left.open(self.ctx)
        blocks = drain(left)
        self._empty = not blocks
        if self._empty:
            return
        self._pos = _concat_pos(blocks)
        self._left_refs = [r for r in self.refs if r.pos_name in self._pos]
        self._right_refs = [r for r in self.refs if r.pos_name not in self._pos]
        self._vals = {r.name: read_ref(self.ctx, r, self._pos[r.pos_name]) for r in self._left_refs}
        self._types = {r.name: ref_type(self.ctx, r) for r in self.refs}
        right.open(self.ctx)

    def _produce(self):
        if self._empty:
            return None
        block = self.children[1].next()
        if block is None:
            return None
        rvals = {}
        for r in self._right_refs:
            if r.pos_name not in block.pos:
                raise PlanError(f"PosNLJoin: cannot resolve {r.name}")
            rvals[r.name] = read_ref(self.ctx, r, block.pos[r.pos_name])
        nl = len(next(iter(self._pos.values())))
        out = []
        step = max(1, (1 << 20) // nl)
        for s, e in slices(block.n, step):
            ri = np.repeat(np.arange(s, e), nl)
            li = np.tile(np.arange(nl), e - s)
            env = {k: v[li] for k, v in self._vals.items()}
            env.update({k: v[ri] for k, v in rvals.items()})
            keep = np.flatnonzero(self.predicate.eval(env, self._types.__getitem__, len(ri)))
            pos = _join_pos(self._pos, li[keep], block.pos, ri[keep])
            out += [PositionalBlock({k: v[a:b] for k, v in pos.items()}, b - a)
                    for a, b in _chunks(len(keep), self.ctx.block_capacity)]
        return out

    def describe(self):
        return [f"{self.label}({self.predicate})"]


# --------------------------------------------------------------------------- #
# strategy traits
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class StrategyTraits:
    fast_predicates: bool
    reread_predicates: bool
    preread_joins: bool
    reread_joins: bool
    out_of_order_probing: bool

    def as_row(self) -> tuple[str, ...]:
        return tuple("Yes" if v else "No" for v in (
            self.fast_predicates, self.reread_predicates, self.preread_joins,
            self.reread_joins, self.out_of_order_probing))


_TRAITS = {
    "early": StrategyTraits(False, False, True, False, False),
    "late": StrategyTraits(True, True, True, False, False),
    "ultralate": StrategyTraits(True, True, False, True, True),
}


def strategy_traits(strategy: str) -> StrategyTraits:
    if strategy == "hybrid":
        raise PlanError("per-attribute; resolved by MaterializationSchedule")
    try:
        return _TRAITS[strategy]
    except KeyError:
        raise PlanError(f"unknown strategy {strategy!r}") from None
