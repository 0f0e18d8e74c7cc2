"""Columnar on-disk storage: catalog, fixed-size pages, a counting LRU buffer pool
and sequential / positional column readers.

Every column lives in its own file made of ``PAGE_SIZE`` pages.  Each page starts
with a small header followed by ``row_count_in_page`` fixed-width values.
"""

from __future__ import annotations

import json
import math
import os
import struct
import threading
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

PAGE_SIZE = 4096
MAGIC = b"HMCF"
HEADER = struct.Struct("<4sIIQI")
HEADER_SIZE = HEADER.size
CATALOG_FILE = "catalog.tsv"
MANIFEST_FILE = "gen.json"


class StorageError(Exception):
    """Raised for catalog, file layout and I/O problems."""


# --------------------------------------------------------------------------- #
# value types
# --------------------------------------------------------------------------- #

def type_width(value_type: str) -> int:
    if value_type == "int64" or value_type.startswith("decimal"):
        return 8
    if value_type.startswith("char(") and value_type.endswith(")"):
        return int(value_type[5:-1])
    raise StorageError(f"unknown value type {value_type!r}")


def numpy_dtype(value_type: str) -> np.dtype:
    if value_type.startswith("char("):
        return np.dtype(f"S{type_width(value_type)}")
    type_width(value_type)
    return np.dtype("<i8")


def rows_per_page(width: int) -> int:
    return (PAGE_SIZE - HEADER_SIZE) // width


def page_of(pos: int, rows_per_page: int) -> int:
    if rows_per_page <= 0:
        raise ValueError("rows_per_page must be positive")
    return pos // rows_per_page


# --------------------------------------------------------------------------- #
# catalog
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class TableMeta:
    name: str
    row_count: int
    table_id: int


@dataclass(frozen=True)
class ColumnMeta:
    table: str
    name: str
    value_type: str
    width_bytes: int
    row_count: int
    file_path: Path
    table_id: int
    column_id: int

    @property
    def key(self) -> str:
        return f"{self.table}.{self.name}"

    @property
    def rows_per_page(self) -> int:
        return rows_per_page(self.width_bytes)

    @property
    def page_count(self) -> int:
        return math.ceil(self.row_count / self.rows_per_page)

    @property
    def dtype(self) -> np.dtype:
        return numpy_dtype(self.value_type)


@dataclass
class Catalog:
    root: Path
    tables: dict[str, TableMeta]
    columns: dict[tuple[str, str], ColumnMeta]
    sorted_columns: frozenset[str] = field(default_factory=frozenset)
    unique_columns: frozenset[str] = field(default_factory=frozenset)
    manifest: dict = field(default_factory=dict)

    def column(self, table: str, name: str) -> ColumnMeta:
        try:
            return self.columns[(table, name)]
        except KeyError:
            raise StorageError(f"unknown column {table}.{name}") from None

    def table(self, name: str) -> TableMeta:
        try:
            return self.tables[name]
        except KeyError:
            raise StorageError(f"unknown table {name}") from None

    def table_columns(self, table: str) -> list[ColumnMeta]:
        return [c for (t, _), c in self.columns.items() if t == table]

    # schema-info protocol shared with the static TPC-H description
    def has_table(self, table: str) -> bool:
        return table in self.tables

    def column_type(self, table: str, name: str) -> str:
        return self.column(table, name).value_type

    def is_sorted(self, table: str, name: str) -> bool:
        """Values are non-decreasing in position order (recorded by the generator)."""
        return f"{table}.{name}" in self.sorted_columns

    def is_unique(self, table: str, name: str) -> bool:
        return f"{table}.{name}" in self.unique_columns


def open_catalog(directory: str | os.PathLike) -> Catalog:
    """Load ``catalog.tsv`` from *directory* and check every column file."""
    root = Path(directory)
    desc = root / CATALOG_FILE
    if not desc.is_file():
        raise StorageError("catalog descriptor not found")
    tables: dict[str, TableMeta] = {}
    columns: dict[tuple[str, str], ColumnMeta] = {}
    for lineno, line in enumerate(desc.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 6:
            raise StorageError(f"{CATALOG_FILE}:{lineno}: expected 6 fields, got {len(parts)}")
        table, name, vtype, width, row_count, fname = parts
        width, row_count = int(width), int(row_count)
        if table not in tables:
            tables[table] = TableMeta(table, row_count, len(tables))
        elif tables[table].row_count != row_count:
            raise StorageError(f"column {table}.{name}: row_count {row_count} "
                               f"differs from table row_count {tables[table].row_count}")
        if type_width(vtype) != width:
            raise StorageError(f"column {table}.{name}: width {width} does not match type {vtype}")
        col_id = sum(1 for (t, _) in columns if t == table)
        meta = ColumnMeta(table, name, vtype, width, row_count, root / fname,
                          tables[table].table_id, col_id)
        _check_column_file(meta)
        columns[(table, name)] = meta

    manifest: dict = {}
    if (root / MANIFEST_FILE).is_file():
        manifest = json.loads((root / MANIFEST_FILE).read_text(encoding="utf-8"))
    return Catalog(root, tables, columns, frozenset(manifest.get("sorted_columns", ())),
                   frozenset(manifest.get("unique_columns", ())), manifest)


def _check_column_file(meta: ColumnMeta) -> None:
    if not meta.file_path.is_file():
        raise StorageError(f"column {meta.key}: missing file {meta.file_path.name}")
    size = meta.file_path.stat().st_size
    expected = meta.page_count * PAGE_SIZE
    if size != expected:
        raise StorageError(f"column {meta.key}: file size {size} != expected {expected}")
    if meta.page_count:
        with open(meta.file_path, "rb") as fh:
            magic = fh.read(4)
        if magic != MAGIC:
            raise StorageError(f"column {meta.key}: bad magic {magic!r}")


# --------------------------------------------------------------------------- #
# bulk load
# --------------------------------------------------------------------------- #

def encode_column(values: np.ndarray, value_type: str, table_id: int, column_id: int) -> bytes:
    """Serialize a full column into its page sequence."""
    width = type_width(value_type)
    dtype = numpy_dtype(value_type)
    values = np.ascontiguousarray(values, dtype=dtype)
    if dtype.kind == "S":
        # numpy pads with NUL; the file format pads with spaces
        values = np.char.ljust(values, width, b" ").astype(dtype)
    rpp = rows_per_page(width)
    n = len(values)
    out = bytearray(math.ceil(n / rpp) * PAGE_SIZE)
    raw = values.tobytes()
    for page in range(math.ceil(n / rpp)):
        first = page * rpp
        count = min(rpp, n - first)
        base = page * PAGE_SIZE
        HEADER.pack_into(out, base, MAGIC, table_id, column_id, first, count)
        out[base + HEADER_SIZE: base + HEADER_SIZE + count * width] = \
            raw[first * width:(first + count) * width]
    return bytes(out)


def write_table_columns(directory: str | os.PathLike,
                        tables: list[tuple[str, list[tuple[str, str, np.ndarray]]]]) -> Path:
    """Write column files and ``catalog.tsv``.

    *tables* is a list of ``(table, [(column, value_type, values), ...])``.
    """
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    lines = []
    for table_id, (table, cols) in enumerate(tables):
        lengths = {len(v) for _, _, v in cols}
        if len(lengths) > 1:
            raise StorageError(f"table {table}: columns have different lengths {sorted(lengths)}")
        for column_id, (name, vtype, values) in enumerate(cols):
            fname = f"{table}.{name}.col"
            (root / fname).write_bytes(encode_column(values, vtype, table_id, column_id))
            lines.append("\t".join([table, name, vtype, str(type_width(vtype)),
                                    str(len(values)), fname]))
    (root / CATALOG_FILE).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return root


# --------------------------------------------------------------------------- #
# buffer pool
# --------------------------------------------------------------------------- #

@dataclass
class ColumnCounters:
    fetch_seq: int = 0
    fetch_rand: int = 0
    hits: int = 0


class PageHandle:
    """A pinned, resident page.  ``values`` is valid until :meth:`release`."""

    __slots__ = ("pool", "key", "values", "first_row", "_released")

    def __init__(self, pool: "BufferPool", key, values: np.ndarray, first_row: int):
        self.pool = pool
        self.key = key
        self.values = values
        self.first_row = first_row
        self._released = False

    def release(self) -> None:
        if not self._released:
            self._released = True
            self.pool._unpin(self.key)

    def __enter__(self) -> np.ndarray:
        return self.values

    def __exit__(self, *exc) -> None:
        self.release()


class BufferPool:
    """Fixed-capacity page cache with strict LRU eviction and access counters.

    A miss is classified *sequential* when the requested page is the same as, or
    directly follows, the last page requested for that column; every other miss
    is *random*.
    """

    def __init__(self, capacity_pages: int):
        if capacity_pages < 1:
            raise ValueError("capacity_pages must be >= 1")
        self.capacity_pages = capacity_pages
        self._frames: OrderedDict[tuple[str, int], tuple[np.ndarray, int]] = OrderedDict()
        self._pins: dict[tuple[str, int], int] = {}
        self._last: dict[str, int] = {}
        self._files: dict[str, int] = {}
        self._lock = threading.RLock()
        self.fetch_seq = 0
        self.fetch_rand = 0
        self.hits = 0
        self.evictions = 0
        self.calls = 0
        self.per_column: dict[str, ColumnCounters] = {}

    @property
    def resident(self) -> int:
        return len(self._frames)

    def counters(self, column_key: str) -> ColumnCounters:
        c = self.per_column.get(column_key)
        if c is None:
            c = self.per_column[column_key] = ColumnCounters()
        return c

    def fetch_page(self, column: ColumnMeta, page_index: int) -> PageHandle:
        if not 0 <= page_index < column.page_count:
            raise StorageError(f"column {column.key}: page {page_index} out of range "
                               f"[0, {column.page_count})")
        key = (column.key, page_index)
        with self._lock:
            self.calls += 1
            cnt = self.counters(column.key)
            last = self._last.get(column.key, -1)
            self._last[column.key] = page_index
            frame = self._frames.get(key)
            if frame is not None:
                self.hits += 1
                cnt.hits += 1
                self._frames.move_to_end(key)
            else:
                if page_index == last or page_index == last + 1:
                    self.fetch_seq += 1
                    cnt.fetch_seq += 1
                else:
                    self.fetch_rand += 1
                    cnt.fetch_rand += 1
                self._make_room()
                frame = self._read(column, page_index)
                self._frames[key] = frame
            self._pins[key] = self._pins.get(key, 0) + 1
            return PageHandle(self, key, frame[0], frame[1])

    def _make_room(self) -> None:
        while len(self._frames) >= self.capacity_pages:
            for victim in self._frames:
                if not self._pins.get(victim):
                    del self._frames[victim]
                    self.evictions += 1
                    break
            else:
                raise StorageError("buffer pool exhausted: every frame is pinned")

    def _unpin(self, key) -> None:
        with self._lock:
            left = self._pins[key] - 1
            if left:
                self._pins[key] = left
            else:
                del self._pins[key]

    def _read(self, column: ColumnMeta, page_index: int) -> tuple[np.ndarray, int]:
        fd = self._files.get(column.key)
        if fd is None:
            try:
                fd = os.open(column.file_path, os.O_RDONLY)
            except OSError as exc:
                raise StorageError(f"column {column.key}: {exc}") from exc
            self._files[column.key] = fd
        try:
            buf = os.pread(fd, PAGE_SIZE, page_index * PAGE_SIZE)
        except OSError as exc:
            raise StorageError(f"column {column.key}: {exc}") from exc
        if len(buf) != PAGE_SIZE:
            raise StorageError(f"column {column.key}: short read on page {page_index}")
        magic, _tid, _cid, first_row, count = HEADER.unpack_from(buf)
        if magic != MAGIC:
            raise StorageError(f"column {column.key}: bad magic on page {page_index}")
        values = np.frombuffer(buf, dtype=column.dtype, count=count, offset=HEADER_SIZE)
        return values, first_row

    def clear(self) -> None:
        """Drop every unpinned frame and forget access history (cold run)."""
        with self._lock:
            if self._pins:
                raise StorageError("cannot clear a pool with pinned pages")
            self._frames.clear()
            self._last.clear()

    def reset_counters(self) -> None:
        with self._lock:
            self.fetch_seq = self.fetch_rand = self.hits = self.evictions = self.calls = 0
            self.per_column.clear()

    def close(self) -> None:
        for fd in self._files.values():
            os.close(fd)
        self._files.clear()

    def __del__(self):
        try:
            self.close()
        except Exception:
            pass


# --------------------------------------------------------------------------- #
# readers
# --------------------------------------------------------------------------- #

def scan_column(pool: BufferPool, column: ColumnMeta,
                block_size: int | None = None) -> Iterator[np.ndarray]:
    """Yield every value of *column* in position order, one page (or block) at a time."""
    pending: list[np.ndarray] = []
    held = 0
    for page in range(column.page_count):
        handle = pool.fetch_page(column, page)
        try:
            vals = handle.values.copy()
        finally:
            handle.release()
        if block_size is None:
            yield vals
            continue
        pending.append(vals)
        held += len(vals)
        while held >= block_size:
            merged = np.concatenate(pending)
            yield merged[:block_size]
            rest = merged[block_size:]
            pending, held = ([rest] if len(rest) else []), len(rest)
    if block_size is not None and held:
        yield np.concatenate(pending)


def read_at_positions(pool: BufferPool, column: ColumnMeta, positions,
                      sort_probe: bool = False) -> np.ndarray:
    """Return the values of *column* at *positions*, in the order given.

    Consecutive positions that fall on the same page share one page fetch, so the
    fetch pattern (and hence the sequential / random split) follows position order.
    With ``sort_probe`` the positions are read in ascending order and the values
    are scattered back afterwards.
    """
    pos = np.asarray(positions, dtype=np.int64)
    n = len(pos)
    out = np.empty(n, dtype=column.dtype)
    if n == 0:
        return out
    if pos.min() < 0 or pos.max() >= column.row_count:
        raise StorageError(f"column {column.key}: position out of range "
                           f"[0, {column.row_count})")
    if sort_probe:
        order = np.argsort(pos, kind="stable")
        out[order] = read_at_positions(pool, column, pos[order])
        return out
    rpp = column.rows_per_page
    pages = pos // rpp
    starts = np.flatnonzero(np.r_[True, pages[1:] != pages[:-1]])
    ends = np.r_[starts[1:], n]
    offsets = pos - pages * rpp
    for s, e in zip(starts.tolist(), ends.tolist()):
        handle = pool.fetch_page(column, int(pages[s]))
        try:
            out[s:e] = handle.values[offsets[s:e]]
        finally:
            handle.release()
    return out
