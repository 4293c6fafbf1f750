"""Scalar expressions of chart coordinates with exact third-order jets.

Grammar (whitespace is insignificant)::

    expr   := term (('+' | '-') term)*
    term   := factor (('*' | '/') factor)*
    factor := '-' factor | power
    power  := atom ('^' integer)?
    atom   := number | ident '(' expr ')' | var | '(' expr ')'
    var    := 'x' digit+

Functions: sin, cos, exp, log, sqrt, abs.  Parse errors carry a 1-based
byte offset into the UTF-8 encoded source.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Union

import numpy as np

from .taylor import Taylor

FUNCTIONS = ("sin", "cos", "exp", "log", "sqrt", "abs")


class ExprSyntaxError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at byte offset {offset}")
        self.offset = offset


class DomainError(ArithmeticError):
    """Raised when an expression is evaluated outside its domain."""


@dataclass(frozen=True)
class Num:
    value: float

    def __post_init__(self):
        object.__setattr__(self, "value", float(self.value))


@dataclass(frozen=True)
class Var:
    index: int  # 1-based, x1 .. xn


@dataclass(frozen=True)
class Neg:
    arg: "Expression"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expression"
    right: "Expression"


@dataclass(frozen=True)
class Pow:
    base: "Expression"
    exponent: int


@dataclass(frozen=True)
class Call:
    name: str
    arg: "Expression"


Expression = Union[Num, Var, Neg, BinOp, Pow, Call]

ZERO = Num(0.0)
ONE = Num(1.0)


# ---------------------------------------------------------------------------
# tokenizer and parser

_TOKEN = re.compile(
    rb"(?P<ws>[ \t\r\n]+)"
    rb"|(?P<num>(?:[0-9]+(?:\.[0-9]*)?|\.[0-9]+)(?:[eE][+-]?[0-9]+)?)"
    rb"|(?P<ident>[A-Za-z_][A-Za-z0-9_]*)"
    rb"|(?P<op>[-+*/^()])"
)
_VAR = re.compile(r"x([0-9]+)")


@dataclass
class _Tok:
    kind: str
    text: str
    offset: int  # 1-based byte offset


def _tokenize(data: bytes) -> list[_Tok]:
    toks = []
    pos = 0
    while pos < len(data):
        m = _TOKEN.match(data, pos)
        if m is None:
            raise ExprSyntaxError(f"unexpected character {data[pos:pos + 1]!r}", pos + 1)
        kind = m.lastgroup
        if kind != "ws":
            toks.append(_Tok(kind, m.group().decode("ascii"), pos + 1))
        pos = m.end()
    toks.append(_Tok("eof", "", len(data) + 1))
    return toks


class _Parser:
    def __init__(self, source: str, n: int | None):
        self.toks = _tokenize(source.encode("utf-8"))
        self.i = 0
        self.n = n

    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def take(self) -> _Tok:
        t = self.toks[self.i]
        self.i += 1
        return t

    def expect(self, text: str) -> None:
        if self.tok.text != text or self.tok.kind != "op":
            found = "end of input" if self.tok.kind == "eof" else repr(self.tok.text)
            raise ExprSyntaxError(f"expected {text!r}, found {found}", self.tok.offset)
        self.i += 1

    def parse(self) -> Expression:
        e = self.expr()
        if self.tok.kind != "eof":
            raise ExprSyntaxError(f"unexpected {self.tok.text!r}", self.tok.offset)
        return e

    def expr(self) -> Expression:
        left = self.term()
        while self.tok.kind == "op" and self.tok.text in "+-":
            op = self.take().text
            left = BinOp(op, left, self.term())
        return left

    def term(self) -> Expression:
        left = self.factor()
        while self.tok.kind == "op" and self.tok.text in "*/":
            op = self.take().text
            left = BinOp(op, left, self.factor())
        return left

    def factor(self) -> Expression:
        if self.tok.kind == "op" and self.tok.text == "-":
            self.take()
            return Neg(self.factor())
        return self.power()

    def power(self) -> Expression:
        base = self.atom()
        if self.tok.kind == "op" and self.tok.text == "^":
            self.take()
            t = self.tok
            if t.kind != "num" or not t.text.isdigit():
                raise ExprSyntaxError("expected non-negative integer exponent", t.offset)
            self.take()
            return Pow(base, int(t.text))
        return base

    def atom(self) -> Expression:
        t = self.tok
        if t.kind == "num":
            self.take()
            return Num(float(t.text))
        if t.kind == "ident":
            self.take()
            m = _VAR.fullmatch(t.text)
            if m:
                idx = int(m.group(1))
                if idx < 1 or (self.n is not None and idx > self.n):
                    raise ExprSyntaxError(f"variable {t.text} out of range", t.offset)
                return Var(idx)
            if t.text not in FUNCTIONS:
                raise ExprSyntaxError(f"unknown identifier {t.text!r}", t.offset)
            self.expect("(")
            arg = self.expr()
            self.expect(")")
            return Call(t.text, arg)
        if t.kind == "op" and t.text == "(":
            self.take()
            e = self.expr()
            self.expect(")")
            return e
        found = "end of input" if t.kind == "eof" else repr(t.text)
        raise ExprSyntaxError(f"expected operand, found {found}", t.offset)


def parse(source: str, n: int | None = None) -> Expression:
    """Parse ``source``; if ``n`` is given, variables must be among x1..xn."""
    return _Parser(source, n).parse()


def as_expression(value, n: int | None = None) -> Expression:
    if isinstance(value, (Num, Var, Neg, BinOp, Pow, Call)):
        return value
    if isinstance(value, str):
        return parse(value, n)
    return Num(float(value))


# ---------------------------------------------------------------------------
# printing

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}


def _prec(e: Expression) -> int:
    if isinstance(e, BinOp):
        return _PREC[e.op]
    if isinstance(e, Neg):
        return 3
    if isinstance(e, Pow):
        return 4
    if isinstance(e, Num) and (e.value < 0 or math.copysign(1.0, e.value) < 0):
        return 3
    return 5


def _wrap(e: Expression, need: int) -> str:
    s = to_text(e)
    return f"({s})" if _prec(e) < need else s


def to_text(e: Expression) -> str:
    """Render ``e`` in the input grammar; ``parse(to_text(e))`` evaluates like ``e``."""
    if isinstance(e, Num):
        if not math.isfinite(e.value):
            raise ValueError("non-finite literal cannot be printed")
        v = float(e.value)
        if math.copysign(1.0, v) < 0:
            return "-" + repr(-v)
        return repr(v)
    if isinstance(e, Var):
        return f"x{e.index}"
    if isinstance(e, Neg):
        return "-" + _wrap(e.arg, 3)
    if isinstance(e, BinOp):
        p = _PREC[e.op]
        return f"{_wrap(e.left, p)} {e.op} {_wrap(e.right, p + 1)}"
    if isinstance(e, Pow):
        return f"{_wrap(e.base, 5)}^{e.exponent}"
    if isinstance(e, Call):
        return f"{e.name}({to_text(e.arg)})"
    raise TypeError(f"not an expression: {e!r}")


def max_variable(e: Expression) -> int:
    if isinstance(e, Var):
        return e.index
    if isinstance(e, Num):
        return 0
    if isinstance(e, (Neg, Call)):
        return max_variable(e.arg)
    if isinstance(e, Pow):
        return max_variable(e.base)
    return max(max_variable(e.left), max_variable(e.right))


def is_zero(e: Expression) -> bool:
    return isinstance(e, Num) and e.value == 0.0


# ---------------------------------------------------------------------------
# construction helpers (drop literal zeros and ones, nothing more)

def add(a: Expression, b: Expression) -> Expression:
    if is_zero(a):
        return b
    if is_zero(b):
        return a
    return BinOp("+", a, b)


def sub(a: Expression, b: Expression) -> Expression:
    if is_zero(b):
        return a
    if is_zero(a):
        return Neg(b)
    return BinOp("-", a, b)


def mul(a: Expression, b: Expression) -> Expression:
    if is_zero(a) or is_zero(b):
        return ZERO
    if a == ONE:
        return b
    if b == ONE:
        return a
    return BinOp("*", a, b)


def div(a: Expression, b: Expression) -> Expression:
    if is_zero(a):
        return ZERO
    if b == ONE:
        return a
    return BinOp("/", a, b)


def scale(s: float, e: Expression) -> Expression:
    return mul(Num(float(s)), e)


def total(terms) -> Expression:
    out: Expression = ZERO
    for t in terms:
        out = add(out, t)
    return out


def diff(e: Expression, i: int) -> Expression:
    """Symbolic partial derivative with respect to x_i (1-based)."""
    if isinstance(e, Num):
        return ZERO
    if isinstance(e, Var):
        return ONE if e.index == i else ZERO
    if isinstance(e, Neg):
        d = diff(e.arg, i)
        return ZERO if is_zero(d) else Neg(d)
    if isinstance(e, BinOp):
        da, db = diff(e.left, i), diff(e.right, i)
        if e.op == "+":
            return add(da, db)
        if e.op == "-":
            return sub(da, db)
        if e.op == "*":
            return add(mul(da, e.right), mul(e.left, db))
        # quotient rule
        num = sub(mul(da, e.right), mul(e.left, db))
        return div(num, Pow(e.right, 2))
    if isinstance(e, Pow):
        if e.exponent == 0:
            return ZERO
        db = diff(e.base, i)
        inner = e.base if e.exponent == 2 else Pow(e.base, e.exponent - 1)
        if e.exponent == 1:
            return db
        return mul(mul(Num(float(e.exponent)), inner), db)
    if isinstance(e, Call):
        da = diff(e.arg, i)
        if is_zero(da):
            return ZERO
        u = e.arg
        outer = {
            "sin": lambda: Call("cos", u),
            "cos": lambda: Neg(Call("sin", u)),
            "exp": lambda: e,
            "log": lambda: div(ONE, u),
            "sqrt": lambda: div(Num(0.5), e),
            "abs": lambda: div(u, e),
        }[e.name]()
        return mul(outer, da)
    raise TypeError(f"not an expression: {e!r}")


# ---------------------------------------------------------------------------
# evaluation

@dataclass(frozen=True)
class JetValue:
    """Value and partial derivatives (to order 3) of a scalar at one point."""

    value: float
    d1: np.ndarray | None
    d2: np.ndarray | None
    d3: np.ndarray | None


def _fail(kind: str, node: Expression, points: np.ndarray, mask: np.ndarray):
    bad = points[np.argmax(mask)]
    where = "(" + ", ".join(repr(float(v)) for v in bad) + ")"
    raise DomainError(f"{kind} in '{to_text(node)}' at x={where}")


_FUNC_DERIVS = {
    "exp": lambda u, s: [np.exp(u)] * 4,
    "log": lambda u, s: [np.log(u), 1 / u, -1 / u**2, 2 / u**3],
    "sqrt": lambda u, s: [s, 0.5 / s, -0.25 / s**3, 0.375 / s**5] if s is not None else None,
    "sin": lambda u, s: [np.sin(u), np.cos(u), -np.sin(u), -np.cos(u)],
    "cos": lambda u, s: [np.cos(u), -np.sin(u), -np.cos(u), np.sin(u)],
    "abs": lambda u, s: [np.abs(u), np.sign(u), np.zeros_like(u), np.zeros_like(u)],
}


class _Evaluator:
    def __init__(self, points: np.ndarray, order: int):
        self.points = points
        self.order = order
        self.n = points.shape[1]
        self.cache: dict[int, Taylor] = {}

    def var(self, idx: int) -> Taylor:
        if idx > self.n:
            raise DomainError(f"variable x{idx} exceeds chart dimension {self.n}")
        return Taylor.variable(self.points, idx - 1, self.order)

    def __call__(self, e: Expression) -> Taylor:
        key = id(e)
        hit = self.cache.get(key)
        if hit is not None:
            return hit
        out = self._eval(e)
        if not np.all(np.isfinite(out.c)):
            _fail("non-finite result", e, self.points, ~np.all(np.isfinite(out.c), axis=-1))
        self.cache[key] = out
        return out

    def _eval(self, e: Expression) -> Taylor:
        npts = self.points.shape[0]
        if isinstance(e, Num):
            return Taylor.constant(np.full(npts, e.value), self.n, self.order)
        if isinstance(e, Var):
            return self.var(e.index)
        if isinstance(e, Neg):
            return -self(e.arg)
        if isinstance(e, BinOp):
            a, b = self(e.left), self(e.right)
            if e.op == "+":
                return a + b
            if e.op == "-":
                return a - b
            if e.op == "*":
                return a * b
            zero = b.value == 0.0
            if np.any(zero):
                _fail("division by zero", e, self.points, zero)
            return a / b
        if isinstance(e, Pow):
            b = self(e.base)
            if e.exponent < 0 and np.any(b.value == 0.0):
                _fail("division by zero", e, self.points, b.value == 0.0)
            return b.ipow(e.exponent)
        if isinstance(e, Call):
            u = self(e.arg)
            u0 = u.value
            s = None
            if e.name == "log" and np.any(u0 <= 0):
                _fail("log of non-positive value", e, self.points, u0 <= 0)
            if e.name == "sqrt":
                bad = u0 < 0 if self.order == 0 else u0 <= 0
                if np.any(bad):
                    _fail("sqrt outside its domain", e, self.points, bad)
                s = np.sqrt(u0)
            if e.name == "abs" and self.order > 0 and np.any(u0 == 0):
                _fail("abs is not differentiable", e, self.points, u0 == 0)
            return u.compose(_FUNC_DERIVS[e.name](u0, s))
        raise TypeError(f"not an expression: {e!r}")


def eval_batch(e: Expression, points, order: int = 0) -> Taylor:
    """Jets of ``e`` at every row of ``points`` (shape ``(P, n)``)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if not 0 <= order <= 3:
        raise ValueError("order must be between 0 and 3")
    return _Evaluator(pts, order)(e)


def eval_many(exprs, points, order: int = 0) -> list[Taylor]:
    """Evaluate several expressions sharing one cache (shared subtrees)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    ev = _Evaluator(pts, order)
    return [ev(e) for e in exprs]


def evaluate(e: Expression, points) -> np.ndarray:
    return eval_batch(e, points, 0).value


def eval_jet(e: Expression, x, order: int = 3) -> JetValue:
    """Value and derivatives of ``e`` at the single point ``x``."""
    x = np.asarray(x, dtype=float).reshape(1, -1)
    arrs = eval_batch(e, x, order).derivative_arrays()
    parts = [a[0] for a in arrs] + [None] * (3 - order)
    return JetValue(float(parts[0]), *parts[1:])
