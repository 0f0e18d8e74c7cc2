"""Reference evaluator for SPJ queries, kept apart from the engine.

It parses the catalog and page files on its own, loads whole tables into pandas
frames, joins them with ``DataFrame.merge`` and evaluates expressions with
Python ``Decimal`` arithmetic.  Nothing here touches the buffer pool, blocks or
operators, so agreement with the engine is meaningful.
"""

from __future__ import annotations

import struct
from collections import Counter
from decimal import Decimal, localcontext
from pathlib import Path

import numpy as np
import pandas as pd

_PAGE = 4096
_HDR = struct.Struct("<4sIIQI")

# in-memory evaluation only makes sense at desk scale
MAX_ROWS = 20_000_000


class OracleError(Exception):
    pass


def canonical_value(v) -> object:
    """Order-independent, type-stable encoding used for multiset comparison."""
    if isinstance(v, (bytes, np.bytes_)):
        return bytes(v).rstrip(b" ").decode("ascii")
    if isinstance(v, str):
        return v.rstrip(" ")
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    return format(Decimal(v).normalize(), "f")


def _read_catalog(root: Path) -> dict[tuple[str, str], tuple[str, int, Path]]:
    out = {}
    desc = root / "catalog.tsv"
    if not desc.is_file():
        raise OracleError(f"no catalog.tsv in {root}")
    for line in desc.read_text(encoding="utf-8").splitlines():
        if line.strip():
            table, name, vtype, width, rows, fname = line.split("\t")
            out[(table, name)] = (vtype, int(rows), root / fname)
    return out


def _read_column(vtype: str, rows: int, path: Path) -> list:
    raw = path.read_bytes()
    width = int(vtype[5:-1]) if vtype.startswith("char(") else 8
    chunks = []
    for off in range(0, len(raw), _PAGE):
        magic, _, _, first, count = _HDR.unpack_from(raw, off)
        if magic != b"HMCF":
            raise OracleError(f"{path.name}: bad page at offset {off}")
        chunks.append(raw[off + _HDR.size: off + _HDR.size + count * width])
    data = b"".join(chunks)
    if len(data) != rows * width:
        raise OracleError(f"{path.name}: expected {rows} rows")
    if vtype.startswith("char("):
        return [data[i:i + width].rstrip(b" ").decode("ascii") for i in range(0, len(data), width)]
    ints = np.frombuffer(data, dtype="<i8")
    if vtype.startswith("decimal"):
        scale = int(vtype[7:])
        return [Decimal(int(x)).scaleb(-scale) for x in ints]
    return ints.tolist()


def _eval(e, df: pd.DataFrame):
    kind = type(e).__name__
    if kind == "Col":
        return df[f"{e.alias}.{e.column}"]
    if kind == "Const":
        if isinstance(e.value, bytes):
            return e.value.decode("ascii").rstrip(" ")
        if e.vtype.startswith("decimal"):
            return Decimal(e.value).scaleb(-int(e.vtype[7:]))
        return int(e.value)
    if kind == "Arith":
        a, b = _eval(e.left, df), _eval(e.right, df)
        return {"+": lambda: a + b, "-": lambda: a - b, "*": lambda: a * b}[e.op]()
    if kind == "Cmp":
        a, b = _eval(e.left, df), _eval(e.right, df)
        ops = {"=": "__eq__", "<>": "__ne__", "<": "__lt__", ">": "__gt__",
               "<=": "__le__", ">=": "__ge__"}
        res = getattr(a, ops[e.op])(b) if isinstance(a, pd.Series) else \
            getattr(b, ops[_flip(e.op)])(a)
        return res
    if kind == "And":
        mask = pd.Series(True, index=df.index)
        for item in e.items:
            mask &= _eval(item, df)
        return mask
    raise OracleError(f"unsupported expression {e!r}")


def _flip(op: str) -> str:
    return {"<": ">", ">": "<", "<=": ">=", ">=": "<="}.get(op, op)


def _col_names(e, out: set) -> set:
    kind = type(e).__name__
    if kind == "Col":
        out.add((e.alias, e.column))
    for child in ("left", "right"):
        if hasattr(e, child):
            _col_names(getattr(e, child), out)
    for item in getattr(e, "items", ()):
        _col_names(item, out)
    return out


def _equi_keys(pred, left: set, right: set):
    items = pred.items if type(pred).__name__ == "And" else (pred,)
    lk, rk = [], []
    for c in items:
        if type(c).__name__ != "Cmp" or c.op != "=" or type(c.left).__name__ != "Col" \
                or type(c.right).__name__ != "Col":
            return None
        a, b = f"{c.left.alias}.{c.left.column}", f"{c.right.alias}.{c.right.column}"
        if c.left.alias in right and c.right.alias in left:
            a, b = b, a
        elif not (c.left.alias in left and c.right.alias in right):
            return None
        lk.append(a)
        rk.append(b)
    return lk, rk


def oracle_execute(q, data_dir) -> Counter:
    """Multiset of canonical result rows of query IR *q* over the catalog in *data_dir*."""
    root = Path(data_dir)
    catalog = _read_catalog(root)
    aliases = dict(q.tables)
    needed: set = set()
    for _, e in list(q.filters) + list(q.select):
        _col_names(e, needed)
    for j in q.joins:
        _col_names(j.predicate, needed)
    total = sum(catalog[(aliases[a], c)][1] for a, c in needed if (aliases[a], c) in catalog)
    if total > MAX_ROWS:
        raise OracleError(f"refusing to load {total} values into memory")

    with localcontext() as ctx:
        ctx.prec = 50
        frames = {}
        for alias, table in q.tables:
            cols = {}
            for a, c in sorted(needed):
                if a == alias:
                    if (table, c) not in catalog:
                        raise OracleError(f"unknown column {table}.{c}")
                    cols[f"{a}.{c}"] = _read_column(*catalog[(table, c)])
            nrows = next((r for (t, _), (_, r, _) in catalog.items() if t == table), None)
            if nrows is None:
                raise OracleError(f"unknown table {table}")
            df = pd.DataFrame(cols) if cols else pd.DataFrame(index=range(nrows))
            for fa, pred in q.filters:
                if fa == alias:
                    df = df[_eval(pred, df).astype(bool)]
            frames[alias] = df.reset_index(drop=True)

        acc, acc_aliases = frames[q.base], {q.base}
        for j in q.joins:
            new = frames[j.alias]
            keys = _equi_keys(j.predicate, acc_aliases, {j.alias})
            if keys:
                acc = acc.merge(new, left_on=keys[0], right_on=keys[1], how="inner")
            else:
                acc = acc.merge(new, how="cross")
                acc = acc[_eval(j.predicate, acc).astype(bool)]
            acc_aliases.add(j.alias)
            acc = acc.reset_index(drop=True)

        outs = []
        for _, e in q.select:
            v = _eval(e, acc)
            outs.append(list(v) if isinstance(v, pd.Series) else [v] * len(acc))
    return Counter(tuple(canonical_value(x) for x in row) for row in zip(*outs)) if outs else Counter()
