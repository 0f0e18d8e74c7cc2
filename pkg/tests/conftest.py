import numpy as np
import pytest

from hymat.storage import BufferPool, open_catalog, write_table_columns
from hymat.workload import generate


def make_catalog(path, tables):
    """tables: {table: {column: (type, values)}}"""
    spec = [(t, [(c, vt, np.asarray(v)) for c, (vt, v) in cols.items()]) for t, cols in tables.items()]
    write_table_columns(path, spec)
    return open_catalog(path)


@pytest.fixture
def toy_catalog(tmp_path):
    return make_catalog(tmp_path, {
        "region": {"r_regionkey": ("int64", np.arange(5)),
                   "r_name": ("char(25)", [b"AFRICA", b"AMERICA", b"ASIA", b"EUROPE", b"MIDDLE EAST"])},
        "big": {"v": ("int64", np.arange(2500) * 3)},
        "empty": {"e": ("int64", np.array([], dtype=np.int64))},
    })


@pytest.fixture
def pool():
    p = BufferPool(64)
    yield p
    p.close()


@pytest.fixture(scope="session")
def sf001(tmp_path_factory):
    d = tmp_path_factory.mktemp("sf001")
    generate(0.01, 7, d)
    return d


@pytest.fixture(scope="session")
def sf001_catalog(sf001):
    return open_catalog(sf001)


def run_op(op, catalog, pool, **ctx_args):
    """Open, drain and close *op*; returns (blocks, metrics)."""
    from hymat.exec_classic import drain
    from hymat.metrics import QueryContext
    ctx = QueryContext(catalog, pool, **ctx_args)
    op.open(ctx)
    try:
        blocks = drain(op)
    finally:
        op.close()
        ctx.finish()
    return blocks, ctx.snapshot()


# acceptance criterion -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture(scope="session")
def tpch_data(tmp_path_factory):
    """Factory for generated TPC-H directories, one per (sf, seed)."""
    made = {}

    def get(sf: float, seed: int = 7):
        if (sf, seed) not in made:
            made[(sf, seed)] = generate(sf, seed, tmp_path_factory.mktemp(f"sf{sf:g}_s{seed}"))
        return made[(sf, seed)]
    return get


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
