from decimal import Decimal

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hymat.expr import (TRUE, And, Arith, Cmp, Col, Const, ExprError, aliases_of, conjuncts,
                        parse_expr)

TYPES = {"l.price": "decimal2", "l.disc": "decimal2", "l.qty": "int64", "n.name": "char(25)"}


def _eval(text, env, n):
    return parse_expr(text).eval(env, TYPES.__getitem__, n)


def test_parse_structure():
    e = parse_expr("l.price * (1 - l.disc) > 10.5 AND n.name = 'FRANCE'")
    parts = conjuncts(e)
    assert len(parts) == 2 and isinstance(parts[0], Cmp)
    assert parts[0].right == Const(105, "decimal1")
    assert aliases_of(e) == {"l", "n"}


def test_true_and_literals():
    assert parse_expr("TRUE") == TRUE
    assert parse_expr("42") == Const(42, "int64")
    assert parse_expr("'A'") == Const(b"A", "char(1)")
    assert parse_expr("-3") == Arith("-", Const(0, "int64"), Const(3, "int64"))


@pytest.mark.parametrize("bad", ["l.price >", "(l.price", "l.price ) ", "x", "l.price $ 3", ""])
def test_parse_errors(bad):
    with pytest.raises(ExprError):
        parse_expr(bad)


def test_decimal_type_rules():
    e = parse_expr("l.price * (1 - l.disc)")
    assert e.value_type(TYPES.__getitem__) == "decimal4"
    assert parse_expr("l.price + l.qty").value_type(TYPES.__getitem__) == "decimal2"


def test_char_compare_ignores_padding():
    names = np.array([b"FRANCE", b"FRANCE" + b" " * 19, b"GERMANY"], dtype="S25")
    assert _eval("n.name = 'FRANCE'", {"n.name": names}, 3).tolist() == [True, True, False]


def test_char_vs_number_rejected():
    with pytest.raises(ExprError):
        _eval("n.name = 3", {"n.name": np.array([b"x"], dtype="S25")}, 1)


def test_missing_column_value():
    with pytest.raises(ExprError):
        Col("l", "qty").eval({}, TYPES.__getitem__, 1)


def test_empty_and_is_all_true():
    assert And(()).eval({}, TYPES.__getitem__, 3).tolist() == [True] * 3


cents = st.integers(-10**8, 10**8)


@settings(max_examples=150, deadline=None)
@given(p=st.lists(cents, min_size=1, max_size=8), d=st.integers(0, 100), q=st.integers(-1000, 1000))
def test_revenue_matches_decimal_arithmetic(p, d, q):
    n = len(p)
    env = {"l.price": np.array(p, dtype=np.int64), "l.disc": np.full(n, d, dtype=np.int64),
           "l.qty": np.full(n, q, dtype=np.int64)}
    got = _eval("l.price * (1 - l.disc) - l.qty", env, n)
    for g, pc in zip(got.tolist(), p):
        want = Decimal(pc) / 100 * (1 - Decimal(d) / 100) - q
        assert Decimal(g) / 10**4 == want
    mask = _eval("l.price >= l.qty", env, n)
    assert mask.tolist() == [Decimal(pc) / 100 >= q for pc in p]
