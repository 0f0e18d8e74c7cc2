"""Hybrid operators: each one is a Fetch -> Core -> Combine triple over hybrid blocks.

* Fetch supplies the values Core needs (and values to carry onward), aligned with
  the incoming block, from the cached tuple side or from disk via positions.
* Core is the operator algorithm (filter, hash join, nested-loop join, ...).
* Combine builds the output hybrid block from the selected input rows: which
  position columns to keep and which values to cache.

Specializations swap the Fetch/Combine pair for cheaper bookkeeping without
changing what comes out or which pages are read:

``generic``          any mix of cached and positional data
``pos_only``         positions only, every value fetched from disk
``tuple_only``       cached values only, disk access forbidden
``hashjoin_combine`` hash join storing exactly the build payload Combine emits
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .blocks import (EMPTY_SCHEMA, Attr, HybridBlock, Schema, TupleBlock, hybrid_from_positions,
                     make_rows, project_block, slices)
from .exec_classic import (ColumnRef, DataSource, Operator, OperatorError, PlanError, _Buffered,
                           drain, read_ref, ref_type)
from .expr import Expr, TRUE
from .hashtable import HashTable

SPECIALIZATIONS = ("generic", "pos_only", "tuple_only", "hashjoin_combine")
CORES = ("DataSource", "Filter", "HashJoin", "NLJoin", "Project", "Materialize", "ToTuple")


@dataclass(frozen=True)
class FetchSpec:
    """Values one input must provide.  ``sources`` (``cache``/``disk``) is the
    planner's view and is used for rendering and legality checks; at run time
    cached values always win over disk."""

    refs: tuple[ColumnRef, ...] = ()
    sources: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.sources is not None and len(self.sources) != len(self.refs):
            raise PlanError("FetchSpec sources must match refs")

    def source_of(self, i: int) -> str:
        return self.sources[i] if self.sources is not None else "auto"

    def render(self) -> str:
        if not self.refs:
            return "-"
        parts = []
        for i, r in enumerate(self.refs):
            src = self.source_of(i)
            parts.append(f"{r.name}<-{'disk(' + r.pos_name + ')' if src == 'disk' else src}")
        return ", ".join(parts)


@dataclass(frozen=True)
class CombineSpec:
    out_pos: tuple[str, ...] = ()
    out_attrs: tuple[str, ...] = ()
    exprs: tuple[tuple[str, Expr], ...] = ()

    def render(self) -> str:
        attrs = list(self.out_attrs) + [n for n, _ in self.exprs]
        return f"pos=[{', '.join(self.out_pos)}] attrs=[{', '.join(attrs)}]"


@dataclass
class HYOperatorDef:
    core: str
    children: list = field(default_factory=list)
    fetch: tuple[FetchSpec, ...] = ()
    combine: CombineSpec = field(default_factory=CombineSpec)
    specialization: str = "generic"
    params: dict = field(default_factory=dict)


def check_specialization(core: str, specialization: str, fetches: Sequence[FetchSpec],
                         combine: CombineSpec) -> None:
    if specialization not in SPECIALIZATIONS:
        raise PlanError(f"unknown specialization {specialization!r}")
    if specialization == "hashjoin_combine" and core != "HashJoin":
        raise PlanError("hashjoin_combine is only legal with a HashJoin core")
    if specialization == "pos_only":
        if combine.out_attrs or combine.exprs:
            raise PlanError("pos_only cannot carry cached attributes")
        if any(s == "cache" for f in fetches for s in (f.sources or ())):
            raise PlanError("pos_only cannot read cached values")
    if specialization == "tuple_only":
        if combine.out_pos:
            raise PlanError("tuple_only cannot carry position columns")
        for f in fetches:
            if f.refs and (f.sources is None or any(s != "cache" for s in f.sources)):
                raise PlanError("tuple_only cannot fetch from disk")


# --------------------------------------------------------------------------- #
# Fetch
# --------------------------------------------------------------------------- #

def fetch_values(ctx, spec: FetchSpec, block: HybridBlock, specialization: str) -> dict[str, np.ndarray]:
    out = {}
    for r in spec.refs:
        cached = block.has_attr(r.name)
        if specialization == "tuple_only" or (cached and specialization != "pos_only"):
            if not cached:
                raise PlanError(f"Fetch: {r.name} is not cached and disk access is forbidden")
            out[r.name] = block.rows[r.name]
        else:
            if r.pos_name not in block.pos:
                raise PlanError(f"Fetch: cannot resolve {r.name}: no cached value and no {r.pos_name}")
            out[r.name] = read_ref(ctx, r, block.pos[r.pos_name])
    return out


# --------------------------------------------------------------------------- #
# Combine
# --------------------------------------------------------------------------- #

@dataclass
class Side:
    """One input to Combine: a block (or stored build side), its fetched values,
    and the row indices selected by Core."""

    block: HybridBlock
    fetched: Mapping[str, np.ndarray]
    idx: np.ndarray


def combine_rows(spec: CombineSpec, sides: Sequence[Side], types: Mapping[str, str],
                 specialization: str) -> HybridBlock:
    n = len(sides[0].idx)
    if len(sides) == 2:
        dup = set(sides[0].block.pos) & set(sides[1].block.pos)
        if dup:
            raise PlanError(f"both join inputs carry {sorted(dup)}; alias one side")
    pos = {}
    for name in spec.out_pos:
        for s in sides:
            if name in s.block.pos:
                pos[name] = s.block.pos[name][s.idx]
                break
        else:
            raise PlanError(f"Combine: unknown position column {name!r}")
    if specialization == "pos_only":
        return HybridBlock(pos, EMPTY_SCHEMA, None, n)

    cache: dict[str, np.ndarray] = {}

    def value(name: str) -> np.ndarray:
        if name not in cache:
            for s in sides:
                if s.block.has_attr(name):
                    cache[name] = s.block.rows[name][s.idx]
                    break
                if name in s.fetched:
                    cache[name] = s.fetched[name][s.idx]
                    break
            else:
                raise PlanError(f"Combine: attribute {name!r} is not available")
        return cache[name]

    attrs, cols = [], {}
    for name in spec.out_attrs:
        cols[name] = value(name)
        attrs.append(Attr(name, types[name]))
    for name, e in spec.exprs:
        env = {r: value(r) for r in e.refs()}
        cols[name] = e.eval(env, types.__getitem__, n)
        attrs.append(Attr(name, e.value_type(types.__getitem__)))
    schema = Schema(tuple(attrs))
    rows = make_rows(schema, cols, n) if attrs else None
    return HybridBlock(pos, schema, rows, n)


def _types_for(ctx, fetches: Sequence[FetchSpec], schemas: Sequence[Schema]) -> dict[str, str]:
    types = {}
    for s in schemas:
        types.update({a.name: a.value_type for a in s.attributes})
    for f in fetches:
        for r in f.refs:
            types.setdefault(r.name, ref_type(ctx, r))
    return types


def _concat_side(blocks: list[HybridBlock], fetched: list[dict]) -> tuple[HybridBlock, dict]:
    first = blocks[0]
    pos = {k: np.concatenate([b.pos[k] for b in blocks]) for k in first.pos}
    rows = np.concatenate([b.rows for b in blocks]) if first.rows is not None else None
    n = sum(b.n for b in blocks)
    vals = {k: np.concatenate([f[k] for f in fetched]) for k in fetched[0]}
    return HybridBlock(pos, first.schema, rows, n), vals


def _side_bytes(block: HybridBlock, vals: Mapping[str, np.ndarray]) -> int:
    total = sum(v.nbytes for v in block.pos.values()) + sum(v.nbytes for v in vals.values())
    if block.rows is not None:
        total += block.rows.nbytes
    return total


# --------------------------------------------------------------------------- #
# operators
# --------------------------------------------------------------------------- #

class HYOperator(Operator):
    core = "?"

    def __init__(self, *children, fetch: Sequence[FetchSpec] = (), combine: CombineSpec = CombineSpec(),
                 specialization: str = "generic"):
        super().__init__(*children)
        self.fetch = tuple(fetch)
        self.combine = combine
        self.specialization = specialization
        check_specialization(self.core, specialization, self.fetch, combine)

    @property
    def label(self):
        return f"HY{self.core}"

    def core_text(self) -> str:
        return self.core

    def describe(self):
        head = f"{self.label} [{self.specialization}]"
        lines = [head]
        names = ["left", "right"] if len(self.fetch) == 2 else [""]
        for nm, f in zip(names, self.fetch):
            lines.append(f"Fetch{'(' + nm + ')' if nm else ''}: {f.render()}")
        lines.append(f"Core: {self.core_text()}")
        lines.append(f"Combine: {self.combine.render()}")
        return lines


class HYDataSource(Operator):
    label = "HYDataSource"

    def __init__(self, alias: str, table: str | None = None, capacity: int | None = None):
        super().__init__()
        self._src = DataSource(alias, table, capacity)
        self.alias, self.table = alias, self._src.table

    def _open(self):
        self._src.ctx = self.ctx
        self._src._open()

    def _next(self):
        b = self._src._next()
        return None if b is None else hybrid_from_positions(b)

    def describe(self):
        return ["HY" + self._src.describe()[0]]


class HYFilter(HYOperator):
    core = "Filter"

    def __init__(self, child, predicate: Expr, fetch: FetchSpec, combine: CombineSpec,
                 specialization: str = "generic"):
        super().__init__(child, fetch=[fetch], combine=combine, specialization=specialization)
        self.predicate = predicate
        missing = predicate.refs() - {r.name for r in fetch.refs}
        if missing:
            raise PlanError(f"HYFilter: Fetch does not provide {sorted(missing)}")

    def _open(self):
        super()._open()
        self._types = None

    def _next(self):
        block = self.children[0].next()
        if block is None:
            return None
        if self._types is None:
            self._types = _types_for(self.ctx, self.fetch, [block.schema])
        vals = fetch_values(self.ctx, self.fetch[0], block, self.specialization)
        mask = self.predicate.eval(vals, self._types.__getitem__, block.n)
        keep = np.flatnonzero(mask)
        return combine_rows(self.combine, [Side(block, vals, keep)], self._types, self.specialization)

    def core_text(self):
        return f"Filter({self.predicate})"


class HYMaterialize(HYOperator):
    """Fetches attributes (from cache if already there) and adds them to the cached tuples."""

    core = "Materialize"

    def __init__(self, child, refs: Sequence[ColumnRef], combine: CombineSpec | None = None,
                 specialization: str = "generic", sources: Sequence[str] | None = None):
        refs = tuple(refs)
        fetch = FetchSpec(refs, tuple(sources) if sources is not None else None)
        super().__init__(child, fetch=[fetch], combine=combine or CombineSpec(out_attrs=tuple(r.name for r in refs)),
                         specialization=specialization)
        self.refs = refs
        self._keep_input = combine is None

    def _open(self):
        super()._open()
        self._types = None

    def _next(self):
        block = self.children[0].next()
        if block is None:
            return None
        if self._types is None:
            self._types = _types_for(self.ctx, self.fetch, [block.schema])
        vals = fetch_values(self.ctx, self.fetch[0], block, self.specialization)
        spec = self.combine
        if self._keep_input:
            # default combine: keep everything, append newly materialized attributes
            new = tuple(r.name for r in self.refs if not block.has_attr(r.name))
            spec = CombineSpec(tuple(block.pos), tuple(block.schema.names) + new)
        return combine_rows(spec, [Side(block, vals, np.arange(block.n))], self._types,
                            self.specialization)

    def core_text(self):
        return f"Materialize({', '.join(r.name for r in self.refs)})"


class HYProject(HYOperator):
    core = "Project"

    def __init__(self, child, keep_pos: Sequence[str], keep_attrs: Sequence[str]):
        super().__init__(child, fetch=[FetchSpec()],
                         combine=CombineSpec(tuple(keep_pos), tuple(keep_attrs)))

    def _next(self):
        block = self.children[0].next()
        if block is None:
            return None
        return project_block(block, self.combine.out_pos, self.combine.out_attrs)


class HYToTuple(Operator):
    """Hands the cached tuple side to classic tuple-based operators."""

    label = "HYToTuple"

    def __init__(self, child, required: Sequence[str] | None = None):
        super().__init__(child)
        self.required = list(required) if required is not None else None

    def _next(self):
        block = self.children[0].next()
        if block is None:
            return None
        if self.required is not None:
            missing = [a for a in self.required if not block.has_attr(a)]
            if missing:
                raise PlanError(f"HYToTuple: attributes not materialized: {missing}")
        elif block.pos and not len(block.schema):
            raise PlanError("HYToTuple: block carries positions but no materialized values")
        return block.to_tuples()


class HYHashJoin(HYOperator, _Buffered):
    """Builds on the left input via its Fetch, probes with the right input's Fetch."""

    core = "HashJoin"

    def __init__(self, left, right, left_keys: Sequence[ColumnRef], right_keys: Sequence[ColumnRef],
                 left_fetch: FetchSpec, right_fetch: FetchSpec, combine: CombineSpec,
                 specialization: str = "generic"):
        HYOperator.__init__(self, left, right, fetch=[left_fetch, right_fetch], combine=combine,
                            specialization=specialization)
        self.left_keys, self.right_keys = tuple(left_keys), tuple(right_keys)
        for keys, f in ((self.left_keys, left_fetch), (self.right_keys, right_fetch)):
            if not {k.name for k in keys} <= {r.name for r in f.refs}:
                raise PlanError("HYHashJoin: join keys must be provided by Fetch")
        self._ht_bytes = 0

    def _open(self):
        self._out = deque()
        left, right = self.children
        left.open(self.ctx)
        blocks, fetched = [], []
        for b in left:
            blocks.append(b)
            fetched.append(fetch_values(self.ctx, self.fetch[0], b, self.specialization))
        self._empty = not blocks
        if self._empty:
            return
        side, vals = _concat_side(blocks, fetched)
        self._left_schema = side.schema
        keys = [vals[k.name] for k in self.left_keys]
        if self.specialization == "hashjoin_combine":
            side, vals = self._payload_only(side, vals)
        self._side, self._vals = side, vals
        self._table = HashTable(keys)
        self._ht_bytes = self._table.nbytes + _side_bytes(side, vals)
        self.ctx.hashtable_alloc(self._ht_bytes)
        self._types = None
        right.open(self.ctx)

    def _payload_only(self, side: HybridBlock, vals: dict):
        """Keep only what Combine emits from the build side."""
        needed = set(self.combine.out_attrs)
        for _, e in self.combine.exprs:
            needed |= e.refs()
        pos = {k: v for k, v in side.pos.items() if k in self.combine.out_pos}
        cached = [a for a in side.schema.names if a in needed]
        schema = side.schema.select(cached)
        rows = make_rows(schema, {a: side.rows[a] for a in cached}, side.n) if cached else None
        vals = {k: v for k, v in vals.items() if k in needed and k not in cached}
        return HybridBlock(pos, schema, rows, side.n), vals

    def _produce(self):
        if self._empty:
            return None
        block = self.children[1].next()
        if block is None:
            return None
        if self._types is None:
            self._types = _types_for(self.ctx, self.fetch, [self._left_schema, block.schema])
        rvals = fetch_values(self.ctx, self.fetch[1], block, self.specialization)
        pi, bi = self._table.probe([rvals[k.name] for k in self.right_keys])
        out = []
        for s, e in slices(len(pi), self.ctx.block_capacity):
            out.append(combine_rows(self.combine, [Side(self._side, self._vals, bi[s:e]),
                                                   Side(block, rvals, pi[s:e])],
                                    self._types, self.specialization))
        return out

    def _close(self):
        self.ctx.hashtable_free(self._ht_bytes)
        self._ht_bytes = 0

    def core_text(self):
        keys = " AND ".join(f"{a} = {b}" for a, b in zip(self.left_keys, self.right_keys))
        return f"HashJoin({keys})"


class HYNestedLoopJoin(HYOperator, _Buffered):
    """Left input is the inner loop; output follows the right input's order."""

    core = "NLJoin"

    def __init__(self, left, right, predicate: Expr, left_fetch: FetchSpec, right_fetch: FetchSpec,
                 combine: CombineSpec, specialization: str = "generic"):
        HYOperator.__init__(self, left, right, fetch=[left_fetch, right_fetch], combine=combine,
                            specialization=specialization)
        self.predicate = predicate
        missing = predicate.refs() - {r.name for f in self.fetch for r in f.refs}
        if missing:
            raise PlanError(f"HYNestedLoopJoin: Fetch does not provide {sorted(missing)}")

    def _open(self):
        self._out = deque()
        left, right = self.children
        left.open(self.ctx)
        blocks, fetched = [], []
        for b in left:
            blocks.append(b)
            fetched.append(fetch_values(self.ctx, self.fetch[0], b, self.specialization))
        self._empty = not blocks
        if self._empty:
            return
        self._side, self._vals = _concat_side(blocks, fetched)
        self._types = None
        right.open(self.ctx)

    def _produce(self):
        if self._empty:
            return None
        block = self.children[1].next()
        if block is None:
            return None
        if self._types is None:
            self._types = _types_for(self.ctx, self.fetch, [self._side.schema, block.schema])
        rvals = fetch_values(self.ctx, self.fetch[1], block, self.specialization)
        nl = self._side.n
        out = []
        step = max(1, (1 << 20) // nl)
        for s, e in slices(block.n, step):
            ri = np.repeat(np.arange(s, e), nl)
            li = np.tile(np.arange(nl), e - s)
            env = {k: v[li] for k, v in self._vals.items()}
            env.update({k: v[ri] for k, v in rvals.items()})
            keep = np.flatnonzero(self.predicate.eval(env, self._types.__getitem__, len(ri)))
            li, ri = li[keep], ri[keep]
            for a, b in slices(len(li), self.ctx.block_capacity):
                out.append(combine_rows(self.combine, [Side(self._side, self._vals, li[a:b]),
                                                       Side(block, rvals, ri[a:b])],
                                        self._types, self.specialization))
        return out

    def core_text(self):
        return f"NLJoin({self.predicate})"


# --------------------------------------------------------------------------- #
# specialization
# --------------------------------------------------------------------------- #

def specialize(d: HYOperatorDef) -> Operator:
    """Instantiate the executable operator for a definition."""
    if d.core not in CORES:
        raise PlanError(f"unknown core {d.core!r}")
    check_specialization(d.core, d.specialization, d.fetch, d.combine)
    p = d.params
    if d.core == "DataSource":
        return HYDataSource(p["alias"], p.get("table"))
    if d.core == "Filter":
        return HYFilter(d.children[0], p.get("predicate", TRUE), d.fetch[0], d.combine, d.specialization)
    if d.core == "Materialize":
        return HYMaterialize(d.children[0], d.fetch[0].refs, d.combine, d.specialization,
                             d.fetch[0].sources)
    if d.core == "Project":
        return HYProject(d.children[0], d.combine.out_pos, d.combine.out_attrs)
    if d.core == "ToTuple":
        return HYToTuple(d.children[0], p.get("required"))
    if d.core == "HashJoin":
        return HYHashJoin(d.children[0], d.children[1], p["left_keys"], p["right_keys"],
                          d.fetch[0], d.fetch[1], d.combine, d.specialization)
    return HYNestedLoopJoin(d.children[0], d.children[1], p.get("predicate", TRUE),
                            d.fetch[0], d.fetch[1], d.combine, d.specialization)
