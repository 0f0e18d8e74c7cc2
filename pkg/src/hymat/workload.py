"""Desk-scale TPC-H subset: table sizes, a deterministic generator, the two
benchmark queries and the declarative query-file format."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exec_classic import PlanError
from .expr import ExprError, parse_expr
from .planner import JoinStep, QueryIR
from .storage import MANIFEST_FILE, write_table_columns

NATIONS = [
    ("ALGERIA", 0), ("ARGENTINA", 1), ("BRAZIL", 1), ("CANADA", 1), ("EGYPT", 4),
    ("ETHIOPIA", 0), ("FRANCE", 3), ("GERMANY", 3), ("INDIA", 2), ("INDONESIA", 2),
    ("IRAN", 4), ("IRAQ", 4), ("JAPAN", 2), ("JORDAN", 4), ("KENYA", 0),
    ("MOROCCO", 0), ("MOZAMBIQUE", 0), ("PERU", 1), ("CHINA", 2), ("ROMANIA", 3),
    ("SAUDI ARABIA", 4), ("VIETNAM", 2), ("RUSSIA", 3), ("UNITED KINGDOM", 3),
    ("UNITED STATES", 1),
]
REGIONS = ["AFRICA", "AMERICA", "ASIA", "EUROPE", "MIDDLE EAST"]

# rows per unit of scale factor; None marks fixed-size tables
BASE_ROWS = {
    "region": (None, 5), "nation": (None, 25), "supplier": (10_000, None),
    "customer": (150_000, None), "part": (200_000, None), "partsupp": (800_000, None),
    "orders": (1_500_000, None), "lineitem": (6_000_000, None),
}

COLUMNS: dict[str, list[tuple[str, str]]] = {
    "region": [("r_regionkey", "int64"), ("r_name", "char(25)")],
    "nation": [("n_nationkey", "int64"), ("n_name", "char(25)"), ("n_regionkey", "int64")],
    "supplier": [("s_suppkey", "int64"), ("s_nationkey", "int64")],
    "customer": [("c_custkey", "int64"), ("c_name", "char(25)"), ("c_nationkey", "int64")],
    "part": [("p_partkey", "int64"), ("p_size", "int64")],
    "partsupp": [("ps_partkey", "int64"), ("ps_suppkey", "int64"), ("ps_supplycost", "decimal2")],
    "orders": [("o_orderkey", "int64"), ("o_custkey", "int64"), ("o_totalprice", "decimal2"),
               ("o_shippriority", "int64")],
    "lineitem": [("l_orderkey", "int64"), ("l_partkey", "int64"), ("l_suppkey", "int64"),
                 ("l_quantity", "decimal2"), ("l_extendedprice", "decimal2"),
                 ("l_discount", "decimal2")],
}

PRIMARY_KEYS = {"region": "r_regionkey", "nation": "n_nationkey", "supplier": "s_suppkey",
                "customer": "c_custkey", "part": "p_partkey", "orders": "o_orderkey"}
UNIQUE_COLUMNS = sorted(f"{t}.{c}" for t, c in PRIMARY_KEYS.items())
SORTED_COLUMNS = sorted(UNIQUE_COLUMNS + ["partsupp.ps_partkey", "lineitem.l_orderkey"])


def cardinalities(sf: float) -> dict[str, int]:
    if not sf > 0:
        raise ValueError("sf must be positive")
    out = {}
    for table, (per_sf, fixed) in BASE_ROWS.items():
        out[table] = fixed if fixed is not None else max(1, int(round(sf * per_sf)))
    return out


class TpchSchema:
    """Static schema information, enough to plan without generated data."""

    def has_table(self, table: str) -> bool:
        return table in COLUMNS

    def column_type(self, table: str, name: str) -> str:
        for col, vtype in COLUMNS.get(table, ()):
            if col == name:
                return vtype
        raise PlanError(f"unknown column {table}.{name}")

    def is_sorted(self, table: str, name: str) -> bool:
        return f"{table}.{name}" in SORTED_COLUMNS

    def is_unique(self, table: str, name: str) -> bool:
        return f"{table}.{name}" in UNIQUE_COLUMNS


TPCH = TpchSchema()


# --------------------------------------------------------------------------- #
# generator
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class GenSpec:
    sf: float
    seed: int = 0
    out: str | Path = "data"


def _chars(values, width: int = 25) -> np.ndarray:
    return np.array([v.encode("ascii") for v in values], dtype=f"S{width}")


def _cents(rng: np.random.Generator, lo: float, hi: float, n: int) -> np.ndarray:
    return rng.integers(round(lo * 100), round(hi * 100) + 1, size=n, dtype=np.int64)


def generate_tables(sf: float, seed: int) -> list[tuple[str, list[tuple[str, str, np.ndarray]]]]:
    card = cardinalities(sf)
    rng = np.random.default_rng(seed)
    S, C, P = card["supplier"], card["customer"], card["part"]
    PS, O, L = card["partsupp"], card["orders"], card["lineitem"]

    def keys(n):
        return np.arange(1, n + 1, dtype=np.int64)

    region = [("r_regionkey", np.arange(5, dtype=np.int64)), ("r_name", _chars(REGIONS))]
    nation = [("n_nationkey", np.arange(25, dtype=np.int64)),
              ("n_name", _chars(n for n, _ in NATIONS)),
              ("n_regionkey", np.array([r for _, r in NATIONS], dtype=np.int64))]
    supplier = [("s_suppkey", keys(S)), ("s_nationkey", rng.integers(0, 25, S, dtype=np.int64))]
    customer = [("c_custkey", keys(C)),
                ("c_name", np.char.add(b"Customer#", np.char.zfill(keys(C).astype("S9"), 9)).astype("S25")),
                ("c_nationkey", rng.integers(0, 25, C, dtype=np.int64))]
    part = [("p_partkey", keys(P)), ("p_size", rng.integers(1, 51, P, dtype=np.int64))]

    # four suppliers per part, spread over the supplier range as dbgen does
    j = np.arange(PS, dtype=np.int64)
    ps_part0 = np.minimum(j // 4, P - 1)
    slot = j - 4 * ps_part0
    step = max(S // 4, 1)
    ps_partkey = ps_part0 + 1
    ps_suppkey = (ps_part0 + slot * step) % S + 1
    partsupp = [("ps_partkey", ps_partkey), ("ps_suppkey", ps_suppkey),
                ("ps_supplycost", _cents(rng, 1.0, 1000.0, PS))]

    orders = [("o_orderkey", keys(O)), ("o_custkey", rng.integers(1, C + 1, O, dtype=np.int64)),
              ("o_totalprice", _cents(rng, 850.0, 500_000.0, O)),
              ("o_shippriority", np.zeros(O, dtype=np.int64))]

    # each lineitem takes an existing (part, supplier) pair, so partsupp covers it
    ps_row = rng.integers(0, PS, L, dtype=np.int64)
    lineitem = [("l_orderkey", np.sort(rng.integers(1, O + 1, L, dtype=np.int64))),
                ("l_partkey", ps_partkey[ps_row]), ("l_suppkey", ps_suppkey[ps_row]),
                ("l_quantity", _cents(rng, 1.0, 50.0, L)),
                ("l_extendedprice", _cents(rng, 900.0, 105_000.0, L)),
                ("l_discount", rng.integers(0, 11, L, dtype=np.int64))]

    data = {"region": region, "nation": nation, "supplier": supplier, "customer": customer,
            "part": part, "partsupp": partsupp, "orders": orders, "lineitem": lineitem}
    out = []
    for table, cols in data.items():
        types = dict(COLUMNS[table])
        out.append((table, [(name, types[name], values) for name, values in cols]))
    return out


def generate(sf: float, seed: int, out: str | Path) -> Path:
    """Write all eight tables plus ``gen.json``; a pure function of (sf, seed)."""
    root = write_table_columns(out, generate_tables(sf, seed))
    manifest = {"sf": sf, "seed": seed, "cardinalities": cardinalities(sf),
                "sorted_columns": SORTED_COLUMNS, "unique_columns": UNIQUE_COLUMNS}
    (root / MANIFEST_FILE).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                      encoding="utf-8")
    return root


# --------------------------------------------------------------------------- #
# query files
# --------------------------------------------------------------------------- #
#
#   query <name>
#   table <table> [<alias>]
#   base <alias>
#   filter <alias>: <predicate>
#   join <alias> build|probe: <predicate>
#   select <name> = <expression>
#
# '#' starts a comment.  Joins run in file order.

_LINE = re.compile(r"^(\w+)\s*(.*)$")


def parse_query(text: str, default_name: str = "query") -> QueryIR:
    name, tables, base, joins, filters, select = default_name, [], None, [], [], []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _LINE.match(line)
        kw, rest = m.group(1), m.group(2).strip()
        try:
            if kw == "query":
                name = rest
            elif kw == "table":
                parts = rest.split()
                if len(parts) not in (1, 2):
                    raise PlanError("expected: table <table> [<alias>]")
                tables.append((parts[-1], parts[0]))
            elif kw == "base":
                base = rest
            elif kw == "filter":
                alias, expr = rest.split(":", 1)
                filters.append((alias.strip(), parse_expr(expr)))
            elif kw == "join":
                head, expr = rest.split(":", 1)
                parts = head.split()
                if len(parts) != 2 or parts[1] not in ("build", "probe"):
                    raise PlanError("expected: join <alias> build|probe: <predicate>")
                joins.append(JoinStep(parts[0], parse_expr(expr), parts[1]))
            elif kw == "select":
                out, expr = rest.split("=", 1)
                select.append((out.strip(), parse_expr(expr)))
            else:
                raise PlanError(f"unknown keyword {kw!r}")
        except (PlanError, ExprError) as e:
            raise PlanError(f"line {lineno}: {e}") from None
        except ValueError:
            raise PlanError(f"line {lineno}: malformed {kw} line") from None
    if not tables:
        raise PlanError("query declares no tables")
    return QueryIR(name, tuple(tables), base or tables[0][0], tuple(joins), tuple(filters),
                   tuple(select))


def load_query(path: str | Path) -> QueryIR:
    p = Path(path)
    return parse_query(p.read_text(encoding="utf-8"), p.stem)


Q5MOD = """
query q5mod
table nation
table customer
table orders
table lineitem
base nation
filter nation: nation.n_name = 'ALGERIA'
join customer probe: nation.n_nationkey = customer.c_nationkey
join orders probe: customer.c_custkey = orders.o_custkey
join lineitem probe: orders.o_orderkey = lineitem.l_orderkey
select c_name = customer.c_name
select o_totalprice = orders.o_totalprice
select o_shippriority = orders.o_shippriority
select l_orderkey = lineitem.l_orderkey
select revenue = lineitem.l_extendedprice * (1 - lineitem.l_discount)
"""

Q9MOD = """
query q9mod
table part
table supplier
table lineitem
table partsupp
table orders
table nation
base part
filter part: part.p_size > 25
join lineitem probe: part.p_partkey = lineitem.l_partkey
join partsupp build: partsupp.ps_suppkey = lineitem.l_suppkey AND partsupp.ps_partkey = lineitem.l_partkey
join supplier build: supplier.s_suppkey = lineitem.l_suppkey
join nation build: nation.n_nationkey = supplier.s_nationkey
join orders build: orders.o_orderkey = lineitem.l_orderkey
select nation = nation.n_name
select o_totalprice = orders.o_totalprice
select amount = lineitem.l_extendedprice * (1 - lineitem.l_discount) - partsupp.ps_supplycost * lineitem.l_quantity
"""


def builtin_queries() -> dict[str, QueryIR]:
    q5 = parse_query(Q5MOD)
    return {"q5mod": q5, "q5mod_nocname": q5.without_select(["c_name"], "q5mod_nocname"),
            "q9mod": parse_query(Q9MOD)}
