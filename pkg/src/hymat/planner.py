"""Physical plans for SPJ queries under the early, late, ultra-late and hybrid
materialization strategies.

A query is a fixed join chain: a base table, then one table joined per step.
Each step says whether the new table is the build (left) or probe (right) input;
there is no join reordering.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Mapping, Protocol, Sequence

from .exec_classic import (ColumnRef, DataSource, Materialize, Operator, PlanError, PosFilter,
                           PosHashJoin, PosNLJoin, TupleFilter, TupleHashJoin, TupleNLJoin,
                           TupleProject, pos_column)
from .expr import Cmp, Col, Expr, columns_of, conjuncts
from .hybrid import (CombineSpec, FetchSpec, HYDataSource, HYFilter, HYHashJoin, HYMaterialize,
                     HYNestedLoopJoin, HYOperator, HYToTuple)

STRATEGIES = ("early", "late", "ultralate", "hybrid")

DENSE, STRICT, ORDERED, UNORDERED = "dense", "strict", "ordered", "unordered"


class SchemaInfo(Protocol):
    def has_table(self, table: str) -> bool: ...
    def column_type(self, table: str, name: str) -> str: ...
    def is_sorted(self, table: str, name: str) -> bool: ...
    def is_unique(self, table: str, name: str) -> bool: ...


# --------------------------------------------------------------------------- #
# query IR
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class JoinStep:
    alias: str
    predicate: Expr
    new_side: str = "build"  # role of the newly joined table: build (left) or probe (right)


@dataclass(frozen=True)
class QueryIR:
    name: str
    tables: tuple[tuple[str, str], ...]  # (alias, table)
    base: str
    joins: tuple[JoinStep, ...] = ()
    filters: tuple[tuple[str, Expr], ...] = ()
    select: tuple[tuple[str, Expr], ...] = ()

    @property
    def alias_map(self) -> dict[str, str]:
        return dict(self.tables)

    def filter_of(self, alias: str) -> Expr | None:
        for a, e in self.filters:
            if a == alias:
                return e
        return None

    def select_refs(self) -> list[ColumnRef]:
        return _refs([e for _, e in self.select], self.alias_map)

    def without_select(self, names: Sequence[str], name: str | None = None) -> "QueryIR":
        return QueryIR(name or self.name, self.tables, self.base, self.joins, self.filters,
                       tuple((n, e) for n, e in self.select if n not in set(names)))


def _refs(exprs: Sequence[Expr], aliases: Mapping[str, str]) -> list[ColumnRef]:
    seen: dict[str, ColumnRef] = {}
    for e in exprs:
        for c in columns_of(e):
            if c.alias not in aliases:
                raise PlanError(f"unknown alias {c.alias!r}")
            seen.setdefault(c.name, ColumnRef(c.alias, aliases[c.alias], c.column))
    return list(seen.values())


@dataclass
class JoinShape:
    k: int
    step: JoinStep
    left: frozenset[str]
    right: frozenset[str]
    keys: list[tuple[ColumnRef, ColumnRef]] | None  # None: nested loop

    @property
    def acc(self) -> frozenset[str]:
        return self.right if self.step.new_side == "build" else self.left


def join_shapes(ir: QueryIR) -> list[JoinShape]:
    amap = ir.alias_map
    acc = frozenset([ir.base])
    out = []
    for k, step in enumerate(ir.joins, 1):
        new = frozenset([step.alias])
        left, right = (new, acc) if step.new_side == "build" else (acc, new)
        keys: list | None = []
        for c in conjuncts(step.predicate):
            if (isinstance(c, Cmp) and c.op == "=" and isinstance(c.left, Col)
                    and isinstance(c.right, Col)):
                a, b = c.left, c.right
                if a.alias in right and b.alias in left:
                    a, b = b, a
                if a.alias in left and b.alias in right:
                    keys.append((ColumnRef(a.alias, amap[a.alias], a.column),
                                 ColumnRef(b.alias, amap[b.alias], b.column)))
                    continue
            keys = None
            break
        out.append(JoinShape(k, step, left, right, keys or None))
        acc = acc | new
    return out


def validate(ir: QueryIR, info: SchemaInfo) -> None:
    amap = ir.alias_map
    if len(amap) != len(ir.tables):
        raise PlanError("duplicate alias")
    for alias, table in ir.tables:
        if not info.has_table(table):
            raise PlanError(f"unknown table {table}")
    joined = [ir.base] + [j.alias for j in ir.joins]
    if sorted(joined) != sorted(amap):
        raise PlanError("every table must appear exactly once: as base or in one join step")
    exprs = [e for _, e in ir.filters] + [j.predicate for j in ir.joins] + [e for _, e in ir.select]
    for ref in _refs(exprs, amap):
        try:
            info.column_type(ref.table, ref.column)
        except Exception:
            raise PlanError(f"unknown column {ref.table}.{ref.column}") from None
    for alias, e in ir.filters:
        if {c.alias for c in columns_of(e)} - {alias}:
            raise PlanError(f"filter on {alias} references other tables: {e}")
    acc = {ir.base}
    for j in ir.joins:
        if j.new_side not in ("build", "probe"):
            raise PlanError(f"join side must be build or probe, got {j.new_side!r}")
        used = {c.alias for c in columns_of(j.predicate)}
        if j.alias not in used or not (used & acc) or used - acc - {j.alias}:
            raise PlanError(f"join of {j.alias} must connect it to already joined tables: {j.predicate}")
        acc.add(j.alias)
    if not ir.select:
        raise PlanError("empty select list")


# --------------------------------------------------------------------------- #
# position order analysis and the hybrid schedule
# --------------------------------------------------------------------------- #

def point_name(ordinal: int, n_joins: int, alias: str = "") -> str:
    if ordinal == -2:
        return "at_source"
    if ordinal == -1:
        return f"after_filter({alias})"
    if ordinal == n_joins + 1:
        return "at_top"
    return f"before_join({ordinal})"


_POINT = re.compile(r"^(at_source|at_top|after_filter\((\w+)\)|before_join\((\d+)\))$")


def point_ordinal(point: str, n_joins: int) -> int:
    m = _POINT.match(point.strip())
    if not m:
        raise PlanError(f"bad schedule point {point!r}")
    if m.group(1) == "at_source":
        return -2
    if m.group(1) == "at_top":
        return n_joins + 1
    if m.group(2):
        return -1
    return int(m.group(3))


def entry_join(ir: QueryIR, alias: str) -> int:
    if alias == ir.base:
        return 1 if ir.joins else len(ir.joins) + 1
    for k, j in enumerate(ir.joins, 1):
        if j.alias == alias:
            return k
    raise PlanError(f"unknown alias {alias}")


def position_order(ir: QueryIR, info: SchemaInfo) -> dict[str, dict[int, str]]:
    """For each alias, the order of its position column at every plan point it
    passes through (keyed by point ordinal).

    ``dense``: all rows, ascending; ``strict``: strictly ascending with gaps;
    ``ordered``: non-decreasing; ``unordered``: anything else.
    """
    n = len(ir.joins)
    states: dict[str, dict[int, str]] = {}
    current: dict[str, str] = {}

    def enter(alias: str) -> None:
        states[alias] = {-2: DENSE}
        st = DENSE
        if ir.filter_of(alias) is not None:
            st = STRICT
            states[alias][-1] = st
        current[alias] = st

    enter(ir.base)
    for shape in join_shapes(ir):
        new = shape.step.alias
        enter(new)
        for a in shape.left | shape.right:
            states[a][shape.k] = current[a]
        if shape.keys is None:
            # nested loop: right is the outer loop
            for a in shape.right:
                current[a] = _weaken(current[a], ORDERED)
            for a in shape.left:
                current[a] = UNORDERED
            continue
        build_unique = any(info.is_unique(l.table, l.column) and current[l.alias] in (DENSE, STRICT)
                           for l, _ in shape.keys)
        keep_build = any(
            info.is_unique(l.table, l.column) and info.is_sorted(l.table, l.column)
            and current[l.alias] in (DENSE, STRICT)
            and info.is_sorted(r.table, r.column) and current[r.alias] != UNORDERED
            for l, r in shape.keys)
        for a in shape.right:
            current[a] = _weaken(current[a], STRICT if build_unique else ORDERED)
        for a in shape.left:
            current[a] = _weaken(current[a], ORDERED) if keep_build else UNORDERED
    for a in current:
        states[a][n + 1] = current[a]
    return states


_RANK = {DENSE: 0, STRICT: 1, ORDERED: 2, UNORDERED: 3}


def _weaken(state: str, at_least: str) -> str:
    return state if _RANK[state] >= _RANK[at_least] else at_least


@dataclass
class MaterializationSchedule:
    """Materialization point of every attribute whose value is needed above the
    point where its table is joined in (select list and later join keys)."""

    points: dict[str, str] = field(default_factory=dict)

    def point_of(self, attr: str) -> str:
        return self.points[attr]

    def render(self) -> str:
        return "".join(f"{a}\t{p}\n" for a, p in self.points.items())

    @classmethod
    def parse(cls, text: str) -> "MaterializationSchedule":
        points = {}
        for line in text.splitlines():
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise PlanError(f"bad schedule line {line!r}")
            if parts[0] in points:
                raise PlanError(f"attribute {parts[0]} scheduled twice")
            points[parts[0]] = parts[1]
        return cls(points)


def attribute_uses(ir: QueryIR) -> dict[str, tuple[ColumnRef, int]]:
    """Attributes that need scheduling, with their first use point ordinal."""
    amap = ir.alias_map
    n = len(ir.joins)
    uses: dict[str, tuple[ColumnRef, int]] = {}
    for shape in join_shapes(ir):
        for c in columns_of(shape.step.predicate):
            if c.alias in shape.acc:
                ref = ColumnRef(c.alias, amap[c.alias], c.column)
                uses.setdefault(ref.name, (ref, shape.k))
    for ref in ir.select_refs():
        uses.setdefault(ref.name, (ref, n + 1))
    return uses


def default_hybrid_schedule(ir: QueryIR, info: SchemaInfo) -> MaterializationSchedule:
    """Materialize as late as possible, except where an attribute's positions
    would be out of order by then; those are read at the last point where their
    positions are still dense."""
    n = len(ir.joins)
    order = position_order(ir, info)
    points = {}
    for name, (ref, use) in attribute_uses(ir).items():
        timeline = order[ref.alias]
        if timeline.get(use, UNORDERED) != UNORDERED:
            points[name] = point_name(use, n, ref.alias)
        else:
            dense = max(p for p, st in timeline.items() if st == DENSE and p <= use)
            points[name] = point_name(dense, n, ref.alias)
    return MaterializationSchedule(points)


def merge_schedule(ir: QueryIR, default: MaterializationSchedule,
                   user: MaterializationSchedule) -> MaterializationSchedule:
    """A user schedule must place every select-list attribute; join-key
    attributes it leaves out keep their default points."""
    missing = {r.name for r in ir.select_refs()} - set(user.points)
    if missing:
        raise PlanError(f"schedule misses select attributes: {sorted(missing)}")
    return MaterializationSchedule({**default.points, **user.points})


def check_schedule(ir: QueryIR, sched: MaterializationSchedule) -> dict[str, int]:
    """Validate dominance; return attr -> point ordinal."""
    n = len(ir.joins)
    uses = attribute_uses(ir)
    missing = set(uses) - set(sched.points)
    if missing:
        raise PlanError(f"schedule misses attributes: {sorted(missing)}")
    extra = set(sched.points) - set(uses)
    if extra:
        raise PlanError(f"schedule names attributes the query does not need: {sorted(extra)}")
    out = {}
    for name, point in sched.points.items():
        ref, use = uses[name]
        p = point_ordinal(point, n)
        if p == -1:
            m = _POINT.match(point.strip())
            if m.group(2) != ref.alias or ir.filter_of(ref.alias) is None:
                raise PlanError(f"schedule violates dominance: {name} at {point}")
        elif p >= 0:
            if p < entry_join(ir, ref.alias) or p > use:
                raise PlanError(f"schedule violates dominance: {name} at {point} "
                                f"(first use at {point_name(use, n, ref.alias)})")
        out[name] = p
    return out


# --------------------------------------------------------------------------- #
# plan builders
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class Strategy:
    kind: str
    schedule: MaterializationSchedule | None = None

    def __post_init__(self):
        if self.kind not in STRATEGIES:
            raise PlanError(f"unknown strategy {self.kind!r}")


def build_plan(ir: QueryIR, strategy: Strategy | str, info: SchemaInfo) -> Operator:
    if isinstance(strategy, str):
        strategy = Strategy(strategy)
    validate(ir, info)
    if strategy.kind == "hybrid":
        sched = default_hybrid_schedule(ir, info)
        if strategy.schedule is not None:
            sched = merge_schedule(ir, sched, strategy.schedule)
        return _HybridBuilder(ir, info, sched).build()
    return _ClassicBuilder(ir, strategy.kind).build()


class _ClassicBuilder:
    def __init__(self, ir: QueryIR, kind: str):
        self.ir, self.kind = ir, kind
        self.amap = ir.alias_map

    def table_refs(self, alias: str, with_filter: bool) -> list[ColumnRef]:
        exprs = [j.predicate for j in self.ir.joins] + [e for _, e in self.ir.select]
        if with_filter and self.ir.filter_of(alias) is not None:
            exprs.insert(0, self.ir.filter_of(alias))
        return [r for r in _refs(exprs, self.amap) if r.alias == alias]

    def leaf(self, alias: str) -> Operator:
        op: Operator = DataSource(alias, self.amap[alias])
        pred = self.ir.filter_of(alias)
        if self.kind == "early":
            op = Materialize(op, self.table_refs(alias, with_filter=True))
            return TupleFilter(op, pred) if pred is not None else op
        if pred is not None:
            op = PosFilter(op, pred, self.amap)
        if self.kind == "late":
            op = Materialize(op, self.table_refs(alias, with_filter=False))
        return op

    def build(self) -> Operator:
        acc = self.leaf(self.ir.base)
        for shape in join_shapes(self.ir):
            new = self.leaf(shape.step.alias)
            left, right = (new, acc) if shape.step.new_side == "build" else (acc, new)
            if self.kind == "ultralate":
                if shape.keys:
                    acc = PosHashJoin(left, right, [l for l, _ in shape.keys], [r for _, r in shape.keys])
                else:
                    acc = PosNLJoin(left, right, shape.step.predicate, self.amap)
            elif shape.keys:
                acc = TupleHashJoin(left, right, [l.name for l, _ in shape.keys],
                                    [r.name for _, r in shape.keys])
            else:
                acc = TupleNLJoin(left, right, shape.step.predicate)
        if self.kind == "ultralate":
            acc = Materialize(acc, self.ir.select_refs())
        return TupleProject(acc, self.ir.select)


@dataclass
class _Layout:
    pos: list[str]
    attrs: list[str]
    aliases: set[str]


class _HybridBuilder:
    def __init__(self, ir: QueryIR, info: SchemaInfo, sched: MaterializationSchedule):
        self.ir, self.info = ir, info
        self.amap = ir.alias_map
        self.n = len(ir.joins)
        self.uses = attribute_uses(ir)
        self.points = check_schedule(ir, sched)
        # every use ordinal of each scheduled attr
        self.use_points: dict[str, list[int]] = {a: [] for a in self.uses}
        for shape in join_shapes(ir):
            for c in columns_of(shape.step.predicate):
                if c.alias in shape.acc:
                    self.use_points[c.name].append(shape.k)
        for ref in ir.select_refs():
            self.use_points[ref.name].append(self.n + 1)

    def scheduled_at(self, ordinal: int, aliases) -> list[ColumnRef]:
        return [ref for name, (ref, _) in self.uses.items()
                if self.points[name] == ordinal and ref.alias in aliases]

    def needed_after(self, k: int, layout_attrs: Sequence[str]) -> tuple[set[str], set[str]]:
        """(attrs still used after join k, aliases whose positions are still needed)."""
        attrs = {a for a, pts in self.use_points.items() if any(p > k for p in pts)}
        aliases = {ref.alias for name, (ref, _) in self.uses.items()
                   if name in attrs and self.points[name] > k and name not in layout_attrs}
        return attrs, aliases

    def fetch(self, refs: Sequence[ColumnRef], layout: _Layout) -> FetchSpec:
        seen: dict[str, ColumnRef] = {}
        for r in refs:
            seen.setdefault(r.name, r)
        refs = list(seen.values())
        return FetchSpec(tuple(refs), tuple("cache" if r.name in layout.attrs else "disk" for r in refs))

    def materialize(self, op: Operator, layout: _Layout, refs: list[ColumnRef]) -> Operator:
        refs = [r for r in refs if r.name not in layout.attrs]
        if not refs:
            return op
        layout.attrs += [r.name for r in refs]
        return HYMaterialize(op, refs, sources=["disk"] * len(refs))

    def leaf(self, alias: str) -> tuple[Operator, _Layout]:
        layout = _Layout([pos_column(alias)], [], {alias})
        op: Operator = HYDataSource(alias, self.amap[alias])
        op = self.materialize(op, layout, self.scheduled_at(-2, {alias}))
        pred = self.ir.filter_of(alias)
        if pred is not None:
            refs = _refs([pred], self.amap)
            spec = "pos_only" if not layout.attrs else "generic"
            op = HYFilter(op, pred, self.fetch(refs, layout),
                          CombineSpec(tuple(layout.pos), tuple(layout.attrs)), spec)
            op = self.materialize(op, layout, self.scheduled_at(-1, {alias}))
        return op, layout

    def build(self) -> Operator:
        acc, acc_layout = self.leaf(self.ir.base)
        for shape in join_shapes(self.ir):
            new, new_layout = self.leaf(shape.step.alias)
            if shape.step.new_side == "build":
                (left, ll), (right, rl) = (new, new_layout), (acc, acc_layout)
            else:
                (left, ll), (right, rl) = (acc, acc_layout), (new, new_layout)
            early = self.scheduled_at(shape.k, shape.left | shape.right)
            early = [r for r in early if r.name not in ll.attrs and r.name not in rl.attrs]
            if shape.keys:
                lrefs = [l for l, _ in shape.keys]
                rrefs = [r for _, r in shape.keys]
            else:
                pred_refs = _refs([shape.step.predicate], self.amap)
                lrefs = [r for r in pred_refs if r.alias in shape.left]
                rrefs = [r for r in pred_refs if r.alias in shape.right]
            lfetch = self.fetch(lrefs + [r for r in early if r.alias in shape.left], ll)
            rfetch = self.fetch(rrefs + [r for r in early if r.alias in shape.right], rl)

            fetched_names = [r.name for r in early]
            carried = ll.attrs + rl.attrs + fetched_names
            attrs_later, _ = self.needed_after(shape.k, carried)
            out_attrs = [a for a in carried if a in attrs_later]
            _, pos_aliases = self.needed_after(shape.k, out_attrs)
            out_pos = [p for p in ll.pos + rl.pos if p[:-3] in pos_aliases]
            combine = CombineSpec(tuple(out_pos), tuple(out_attrs))
            plain = not (ll.attrs or rl.attrs or out_attrs)
            if shape.keys:
                spec = "pos_only" if plain else "hashjoin_combine"
                acc = HYHashJoin(left, right, lrefs, rrefs, lfetch, rfetch, combine, spec)
            else:
                spec = "pos_only" if plain else "generic"
                acc = HYNestedLoopJoin(left, right, shape.step.predicate, lfetch, rfetch, combine, spec)
            acc_layout = _Layout(out_pos, out_attrs, ll.aliases | rl.aliases)

        top = [r for r in self.scheduled_at(self.n + 1, acc_layout.aliases) if r.name not in acc_layout.attrs]
        fetch = self.fetch(top, acc_layout)
        op = HYMaterialize(acc, fetch.refs, CombineSpec((), (), tuple(self.ir.select)),
                           sources=fetch.sources)
        return HYToTuple(op, [n for n, _ in self.ir.select])


# --------------------------------------------------------------------------- #
# rendering
# --------------------------------------------------------------------------- #

def plan_signature(plan: Operator) -> str:
    """Deterministic text tree of a plan; hybrid operators show their
    Fetch / Core / Combine parts."""
    lines: list[str] = []

    def walk(op: Operator, depth: int) -> None:
        pad = "  " * depth
        desc = op.describe()
        lines.append(pad + desc[0])
        lines.extend(pad + "  | " + d for d in desc[1:])
        for child in op.children:
            walk(child, depth + 1)

    walk(plan, 0)
    return "\n".join(lines) + "\n"


def count_nodes(plan: Operator, label: str) -> int:
    n = 1 if plan.describe()[0].split("(")[0].split(" ")[0] == label else 0
    return n + sum(count_nodes(c, label) for c in plan.children)
