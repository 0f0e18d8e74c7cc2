"""Scalar expressions and predicates over column references.

Decimals are int64 values with an implied scale (``decimal2`` holds cents).
Arithmetic keeps values exact: addition aligns scales, multiplication adds them.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from .storage import type_width

TypeOf = Callable[[str], str]


class ExprError(Exception):
    pass


def scale_of(value_type: str) -> int:
    if value_type == "int64":
        return 0
    if value_type.startswith("decimal"):
        return int(value_type[7:])
    raise ExprError(f"{value_type} is not numeric")


def numeric_type(scale: int) -> str:
    return "int64" if scale == 0 else f"decimal{scale}"


def is_char(value_type: str) -> bool:
    return value_type.startswith("char(")


class Expr:
    def refs(self) -> set[str]:
        raise NotImplementedError

    def value_type(self, typeof: TypeOf) -> str:
        raise NotImplementedError

    def eval(self, env: Mapping[str, np.ndarray], typeof: TypeOf, n: int) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True)
class Col(Expr):
    alias: str
    column: str

    @property
    def name(self) -> str:
        return f"{self.alias}.{self.column}"

    def refs(self):
        return {self.name}

    def value_type(self, typeof):
        return typeof(self.name)

    def eval(self, env, typeof, n):
        try:
            return env[self.name]
        except KeyError:
            raise ExprError(f"no values for {self.name}") from None

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class Const(Expr):
    value: object  # int (already scaled) or bytes
    vtype: str

    def refs(self):
        return set()

    def value_type(self, typeof):
        return self.vtype

    def eval(self, env, typeof, n):
        if is_char(self.vtype):
            return np.full(n, self.value, dtype=f"S{type_width(self.vtype)}")
        return np.full(n, self.value, dtype=np.int64)

    def __str__(self):
        if is_char(self.vtype):
            return "'" + self.value.decode().rstrip() + "'"
        s = scale_of(self.vtype)
        if s == 0:
            return str(self.value)
        sign = "-" if self.value < 0 else ""
        q, r = divmod(abs(self.value), 10 ** s)
        return f"{sign}{q}.{r:0{s}d}"


def _align(a: np.ndarray, sa: int, b: np.ndarray, sb: int):
    if sa < sb:
        return a * 10 ** (sb - sa), b, sb
    if sb < sa:
        return a, b * 10 ** (sa - sb), sa
    return a, b, sa


@dataclass(frozen=True)
class Arith(Expr):
    op: str  # + - *
    left: Expr
    right: Expr

    def refs(self):
        return self.left.refs() | self.right.refs()

    def value_type(self, typeof):
        sl = scale_of(self.left.value_type(typeof))
        sr = scale_of(self.right.value_type(typeof))
        return numeric_type(sl + sr if self.op == "*" else max(sl, sr))

    def eval(self, env, typeof, n):
        a = self.left.eval(env, typeof, n)
        b = self.right.eval(env, typeof, n)
        if self.op == "*":
            return a * b
        a, b, _ = _align(a, scale_of(self.left.value_type(typeof)),
                         b, scale_of(self.right.value_type(typeof)))
        return a + b if self.op == "+" else a - b

    def __str__(self):
        return f"({self.left} {self.op} {self.right})"


@dataclass(frozen=True)
class Cmp(Expr):
    op: str  # = < > <> <= >=
    left: Expr
    right: Expr

    def refs(self):
        return self.left.refs() | self.right.refs()

    def value_type(self, typeof):
        return "bool"

    def eval(self, env, typeof, n):
        lt, rt = self.left.value_type(typeof), self.right.value_type(typeof)
        a = self.left.eval(env, typeof, n)
        b = self.right.eval(env, typeof, n)
        if is_char(lt) or is_char(rt):
            if not (is_char(lt) and is_char(rt)):
                raise ExprError(f"cannot compare {lt} with {rt}")
            a = np.char.rstrip(a.astype(bytes), b" ")
            b = np.char.rstrip(b.astype(bytes), b" ")
        else:
            a, b, _ = _align(a, scale_of(lt), b, scale_of(rt))
        return _CMP[self.op](a, b)

    def __str__(self):
        return f"{self.left} {self.op} {self.right}"


_CMP = {
    "=": np.equal, "<>": np.not_equal, "<": np.less, ">": np.greater,
    "<=": np.less_equal, ">=": np.greater_equal,
}


@dataclass(frozen=True)
class And(Expr):
    items: tuple[Expr, ...]

    def refs(self):
        out: set[str] = set()
        for e in self.items:
            out |= e.refs()
        return out

    def value_type(self, typeof):
        return "bool"

    def eval(self, env, typeof, n):
        mask = np.ones(n, dtype=bool)
        for e in self.items:
            mask &= e.eval(env, typeof, n)
        return mask

    def __str__(self):
        return " AND ".join(str(e) for e in self.items) if self.items else "TRUE"


TRUE = And(())


def conjuncts(e: Expr) -> list[Expr]:
    if isinstance(e, And):
        out = []
        for item in e.items:
            out.extend(conjuncts(item))
        return out
    return [e]


def conjoin(items) -> Expr:
    items = [c for e in items for c in conjuncts(e)]
    return items[0] if len(items) == 1 else And(tuple(items))


def aliases_of(e: Expr) -> set[str]:
    return {r.split(".", 1)[0] for r in e.refs()}


def columns_of(e: Expr) -> list[Col]:
    if isinstance(e, Col):
        return [e]
    if isinstance(e, (Arith, Cmp)):
        return columns_of(e.left) + columns_of(e.right)
    if isinstance(e, And):
        return [c for item in e.items for c in columns_of(item)]
    return []


# --------------------------------------------------------------------------- #
# parser
# --------------------------------------------------------------------------- #

_TOKEN = re.compile(r"""
    \s*(?:
      (?P<num>\d+(?:\.\d+)?)
    | (?P<str>'[^']*')
    | (?P<op><>|<=|>=|[-+*=<>()])
    | (?P<name>[A-Za-z_][A-Za-z_0-9]*(?:\.[A-Za-z_][A-Za-z_0-9]*)?)
    )""", re.VERBOSE)


def _tokenize(text: str) -> list[tuple[str, str]]:
    pos, out = 0, []
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise ExprError(f"unexpected input at {text[pos:]!r}")
        kind = m.lastgroup
        out.append((kind, m.group(kind)))
        pos = m.end()
    return out


class _Parser:
    def __init__(self, text: str):
        self.toks = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.toks[self.i] if self.i < len(self.toks) else (None, None)

    def take(self, value=None):
        tok = self.peek()
        if tok[0] is None or (value is not None and tok[1].upper() != value):
            raise ExprError(f"expected {value or 'token'}, got {tok[1]!r}")
        self.i += 1
        return tok

    def parse(self) -> Expr:
        e = self.conj()
        if self.peek()[0] is not None:
            raise ExprError(f"trailing input {self.peek()[1]!r}")
        return e

    def conj(self) -> Expr:
        items = [self.comparison()]
        while self.peek()[0] == "name" and self.peek()[1].upper() == "AND":
            self.take()
            items.append(self.comparison())
        return conjoin(items)

    def comparison(self) -> Expr:
        tok = self.peek()
        if tok[0] == "name" and tok[1].upper() == "TRUE":
            self.take()
            return TRUE
        left = self.additive()
        tok = self.peek()
        if tok[0] == "op" and tok[1] in _CMP:
            self.take()
            return Cmp(tok[1], left, self.additive())
        return left

    def additive(self) -> Expr:
        e = self.term()
        while self.peek()[0] == "op" and self.peek()[1] in "+-":
            op = self.take()[1]
            e = Arith(op, e, self.term())
        return e

    def term(self) -> Expr:
        e = self.factor()
        while self.peek() == ("op", "*"):
            self.take()
            e = Arith("*", e, self.factor())
        return e

    def factor(self) -> Expr:
        kind, val = self.peek()
        if kind == "op" and val == "(":
            self.take()
            e = self.additive()
            self.take(")")
            return e
        if kind == "op" and val == "-":
            self.take()
            return Arith("-", Const(0, "int64"), self.factor())
        if kind == "num":
            self.take()
            if "." in val:
                whole, frac = val.split(".")
                return Const(int(whole + frac), f"decimal{len(frac)}")
            return Const(int(val), "int64")
        if kind == "str":
            self.take()
            raw = val[1:-1].encode()
            return Const(raw, f"char({max(len(raw), 1)})")
        if kind == "name" and "." in val:
            self.take()
            alias, column = val.split(".")
            return Col(alias, column)
        raise ExprError(f"unexpected token {val!r}")


def parse_expr(text: str) -> Expr:
    return _Parser(text).parse()
