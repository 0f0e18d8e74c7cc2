"""In-memory dataflow units: positional, tuple and hybrid blocks.

Position columns are ``int64`` numpy arrays keyed by names such as
``customer_id``.  Cached values are kept row-major, as a numpy structured array
whose fields follow the block schema.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .storage import numpy_dtype

BLOCK_CAPACITY = 1024
POS_DTYPE = np.dtype("<i8")


class BlockError(Exception):
    """Misaligned or malformed block, or an unknown name."""


@dataclass(frozen=True)
class Attr:
    name: str
    value_type: str

    @property
    def dtype(self) -> np.dtype:
        return value_dtype(self.value_type)


def value_dtype(value_type: str) -> np.dtype:
    if value_type == "bool":
        return np.dtype(bool)
    return numpy_dtype(value_type)


@dataclass(frozen=True)
class Schema:
    attributes: tuple[Attr, ...] = ()

    def __post_init__(self):
        names = [a.name for a in self.attributes]
        if len(set(names)) != len(names):
            raise BlockError(f"duplicate attribute names in schema: {names}")

    @property
    def names(self) -> list[str]:
        return [a.name for a in self.attributes]

    def __len__(self) -> int:
        return len(self.attributes)

    def __contains__(self, name: str) -> bool:
        return any(a.name == name for a in self.attributes)

    def attr(self, name: str) -> Attr:
        for a in self.attributes:
            if a.name == name:
                return a
        raise BlockError(f"unknown attribute {name!r}")

    def dtype(self) -> np.dtype:
        return np.dtype([(a.name, a.dtype) for a in self.attributes])

    def select(self, names: Iterable[str]) -> "Schema":
        return Schema(tuple(self.attr(n) for n in names))

    def __add__(self, other: "Schema") -> "Schema":
        return Schema(self.attributes + other.attributes)


EMPTY_SCHEMA = Schema()


def pos_array(values) -> np.ndarray:
    arr = np.asarray(values, dtype=POS_DTYPE)
    return arr.reshape(-1)


def make_rows(schema: Schema, columns: Mapping[str, np.ndarray], n: int) -> np.ndarray:
    """Build a row-major tuple array from per-attribute vectors."""
    rows = np.empty(n, dtype=schema.dtype())
    for a in schema.attributes:
        rows[a.name] = columns[a.name]
    return rows


@dataclass(frozen=True)
class PositionalBlock:
    pos: dict[str, np.ndarray]
    n: int

    def __post_init__(self):
        for name, col in self.pos.items():
            if len(col) != self.n:
                raise BlockError(f"position column {name} has length {len(col)}, expected {self.n}")

    @classmethod
    def of(cls, **cols) -> "PositionalBlock":
        pos = {k: pos_array(v) for k, v in cols.items()}
        n = len(next(iter(pos.values()))) if pos else 0
        return cls(pos, n)

    def __len__(self) -> int:
        return self.n


@dataclass(frozen=True)
class TupleBlock:
    schema: Schema
    rows: np.ndarray

    def __post_init__(self):
        if self.rows.dtype.names is None and len(self.schema):
            raise BlockError("tuple rows must be a structured array")
        if len(self.schema) and list(self.rows.dtype.names) != self.schema.names:
            raise BlockError(f"row fields {self.rows.dtype.names} do not match schema {self.schema.names}")

    @classmethod
    def from_columns(cls, schema: Schema, columns: Mapping[str, Sequence]) -> "TupleBlock":
        n = len(next(iter(columns.values()))) if columns else 0
        return cls(schema, make_rows(schema, columns, n))

    def __len__(self) -> int:
        return len(self.rows)

    def column(self, name: str) -> np.ndarray:
        return self.rows[name]


@dataclass(frozen=True)
class HybridBlock:
    """Aligned position columns plus a cached tuple array; row i of each side matches."""

    pos: dict[str, np.ndarray]
    schema: Schema
    rows: np.ndarray | None
    n: int

    def __post_init__(self):
        check_alignment(self)

    def __len__(self) -> int:
        return self.n

    @property
    def attr_names(self) -> list[str]:
        return self.schema.names

    def has_attr(self, name: str) -> bool:
        return name in self.schema

    def column(self, name: str) -> np.ndarray:
        if self.rows is None or name not in self.schema:
            raise BlockError(f"attribute {name!r} is not cached in block")
        return self.rows[name]

    def to_positional(self) -> PositionalBlock:
        return PositionalBlock(dict(self.pos), self.n)

    def to_tuples(self) -> TupleBlock:
        rows = self.rows if self.rows is not None else np.empty(self.n, dtype=self.schema.dtype())
        return TupleBlock(self.schema, rows)


def check_alignment(b: HybridBlock) -> None:
    for name, col in b.pos.items():
        if len(col) != b.n:
            raise BlockError(f"position column {name} has length {len(col)}, block length {b.n}")
    if len(b.schema):
        if b.rows is None:
            raise BlockError("schema is non-empty but no tuples are cached")
        if len(b.rows) != b.n:
            raise BlockError(f"tuple array has {len(b.rows)} rows, block length {b.n}")
        if list(b.rows.dtype.names) != b.schema.names:
            raise BlockError("tuple fields do not match schema")
    elif b.rows is not None and len(b.rows.dtype.names or ()) != 0:
        raise BlockError("tuples present with an empty schema")


def hybrid(pos: Mapping[str, np.ndarray] | None = None, schema: Schema = EMPTY_SCHEMA,
           rows: np.ndarray | None = None, n: int | None = None) -> HybridBlock:
    pos = {k: pos_array(v) for k, v in (pos or {}).items()}
    if n is None:
        if pos:
            n = len(next(iter(pos.values())))
        elif rows is not None:
            n = len(rows)
        else:
            n = 0
    if not len(schema):
        rows = None
    return HybridBlock(pos, schema, rows, n)


def hybrid_from_positions(b: PositionalBlock) -> HybridBlock:
    return HybridBlock(dict(b.pos), EMPTY_SCHEMA, None, b.n)


def hybrid_from_tuples(b: TupleBlock) -> HybridBlock:
    rows = b.rows if len(b.schema) else None
    return HybridBlock({}, b.schema, rows, len(b.rows))


def project_block(b: HybridBlock, keep_pos: Iterable[str], keep_attrs: Iterable[str]) -> HybridBlock:
    keep_pos, keep_attrs = list(keep_pos), list(keep_attrs)
    for name in keep_pos:
        if name not in b.pos:
            raise BlockError(f"unknown position column {name!r}")
    schema = b.schema.select(keep_attrs)
    if not keep_attrs:
        rows = None
    elif keep_attrs == b.schema.names:
        rows = b.rows
    else:
        rows = make_rows(schema, {a: b.rows[a] for a in keep_attrs}, b.n)
    return HybridBlock({k: b.pos[k] for k in keep_pos}, schema, rows, b.n)


def gather_rows(b: HybridBlock, indices) -> HybridBlock:
    idx = np.asarray(indices, dtype=np.int64).reshape(-1)
    if len(idx) and (idx.min() < 0 or idx.max() >= b.n):
        raise BlockError(f"row index out of range [0, {b.n})")
    pos = {k: v[idx] for k, v in b.pos.items()}
    rows = b.rows[idx] if b.rows is not None else None
    return HybridBlock(pos, b.schema, rows, len(idx))


def concat_hybrid(blocks: Sequence[HybridBlock]) -> HybridBlock:
    """Concatenate blocks sharing the same layout."""
    if not blocks:
        raise BlockError("nothing to concatenate")
    first = blocks[0]
    pos = {k: np.concatenate([b.pos[k] for b in blocks]) for k in first.pos}
    rows = np.concatenate([b.rows for b in blocks]) if first.rows is not None else None
    return HybridBlock(pos, first.schema, rows, sum(b.n for b in blocks))


def slices(n: int, capacity: int = BLOCK_CAPACITY):
    for start in range(0, n, capacity):
        yield start, min(start + capacity, n)
