"""Tiny expression language over ``t`` and ``x``.

Grammar (usual precedence, ``^`` right-associative)::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := ('+' | '-') unary | power
    power  := atom ('^' unary)?
    atom   := NUMBER | 't' | 'x' | 'pi' | 'e' | FUNC '(' expr ')' | '(' expr ')'
    FUNC   := sin | cos | exp

Parsed expressions evaluate on numpy arrays and differentiate symbolically,
which is what custom linear drift families need for their derivative suite.
"""
from __future__ import annotations

import math
import re

import numpy as np

__all__ = ["Expr", "ExpressionError", "parse"]


class ExpressionError(ValueError):
    pass


_TOKEN = re.compile(r"\s*(?:(\d+\.\d*(?:[eE][-+]?\d+)?|\.\d+(?:[eE][-+]?\d+)?|\d+(?:[eE][-+]?\d+)?)|([A-Za-z_]\w*)|(.))")
_FUNCS = {"sin": np.sin, "cos": np.cos, "exp": np.exp}
_CONSTS = {"pi": math.pi, "e": math.e}


class Expr:
    """Immutable expression node. Picklable, so models built from it can cross
    process boundaries."""

    __slots__ = ("op", "args", "value")

    def __init__(self, op, args=(), value=None):
        self.op = op
        self.args = tuple(args)
        self.value = value

    def __reduce__(self):
        return (Expr, (self.op, self.args, self.value))

    def __call__(self, t, x):
        return self.evaluate(t, x)

    def evaluate(self, t, x):
        t = np.asarray(t, dtype=float)
        x = np.asarray(x, dtype=float)
        out = self._eval(t, x)
        return np.broadcast_to(out, np.broadcast_shapes(t.shape, x.shape)) + 0.0

    def _eval(self, t, x):
        op = self.op
        if op == "num":
            return self.value
        if op == "t":
            return t
        if op == "x":
            return x
        if op == "neg":
            return -self.args[0]._eval(t, x)
        if op in _FUNCS:
            return _FUNCS[op](self.args[0]._eval(t, x))
        a = self.args[0]._eval(t, x)
        b = self.args[1]._eval(t, x)
        if op == "+":
            return a + b
        if op == "-":
            return a - b
        if op == "*":
            return a * b
        if op == "/":
            return a / b
        if op == "^":
            return np.power(a, b)
        raise ExpressionError(f"unknown node {op!r}")

    def diff(self, var: str) -> "Expr":
        """Symbolic derivative with respect to ``var`` ('t' or 'x')."""
        op = self.op
        if op == "num":
            return _num(0.0)
        if op in ("t", "x"):
            return _num(1.0 if op == var else 0.0)
        if op == "neg":
            return _neg(self.args[0].diff(var))
        if op == "sin":
            u = self.args[0]
            return _mul(Expr("cos", (u,)), u.diff(var))
        if op == "cos":
            u = self.args[0]
            return _neg(_mul(Expr("sin", (u,)), u.diff(var)))
        if op == "exp":
            u = self.args[0]
            return _mul(self, u.diff(var))
        a, b = self.args
        da, db = a.diff(var), b.diff(var)
        if op == "+":
            return _add(da, db)
        if op == "-":
            return _sub(da, db)
        if op == "*":
            return _add(_mul(da, b), _mul(a, db))
        if op == "/":
            return _sub(_div(da, b), _div(_mul(a, db), _mul(b, b)))
        if op == "^":
            if b.op == "num":
                return _mul(_mul(_num(b.value), _pow(a, _num(b.value - 1.0))), da)
            # general a^b = exp(b log a); only defined for a > 0
            raise ExpressionError("derivative of a non-constant exponent is not supported")
        raise ExpressionError(f"unknown node {op!r}")

    def is_constant(self) -> bool:
        if self.op in ("t", "x"):
            return False
        return all(a.is_constant() for a in self.args)

    def __repr__(self):
        if self.op == "num":
            return repr(self.value)
        if self.op in ("t", "x"):
            return self.op
        if self.op == "neg":
            return f"(-{self.args[0]!r})"
        if self.op in _FUNCS:
            return f"{self.op}({self.args[0]!r})"
        return f"({self.args[0]!r} {self.op} {self.args[1]!r})"


# constructors with light constant folding, keeps derivative trees small
def _num(v):
    return Expr("num", value=float(v))


def _is(e, v):
    return e.op == "num" and e.value == v


def _neg(a):
    if a.op == "num":
        return _num(-a.value)
    return Expr("neg", (a,))


def _add(a, b):
    if _is(a, 0.0):
        return b
    if _is(b, 0.0):
        return a
    if a.op == "num" and b.op == "num":
        return _num(a.value + b.value)
    return Expr("+", (a, b))


def _sub(a, b):
    if _is(b, 0.0):
        return a
    if _is(a, 0.0):
        return _neg(b)
    if a.op == "num" and b.op == "num":
        return _num(a.value - b.value)
    return Expr("-", (a, b))


def _mul(a, b):
    if _is(a, 0.0) or _is(b, 0.0):
        return _num(0.0)
    if _is(a, 1.0):
        return b
    if _is(b, 1.0):
        return a
    if a.op == "num" and b.op == "num":
        return _num(a.value * b.value)
    return Expr("*", (a, b))


def _div(a, b):
    if _is(a, 0.0):
        return _num(0.0)
    if _is(b, 1.0):
        return a
    return Expr("/", (a, b))


def _pow(a, b):
    if _is(b, 1.0):
        return a
    if _is(b, 0.0):
        return _num(1.0)
    return Expr("^", (a, b))


class _Parser:
    def __init__(self, text):
        self.text = text
        self.tokens = self._tokenize(text)
        self.pos = 0

    @staticmethod
    def _tokenize(text):
        tokens = []
        for m in _TOKEN.finditer(text):
            num, name, sym = m.groups()
            if num is not None:
                tokens.append(("num", float(num)))
            elif name is not None:
                tokens.append(("name", name))
            elif sym is not None and not sym.isspace():
                if sym not in "+-*/^()":
                    raise ExpressionError(f"unexpected character {sym!r} in {text!r}")
                tokens.append(("sym", sym))
        return tokens

    def peek(self):
        return self.tokens[self.pos] if self.pos < len(self.tokens) else (None, None)

    def take(self, kind=None, value=None):
        tok = self.peek()
        if tok[0] is None or (kind and tok[0] != kind) or (value and tok[1] != value):
            raise ExpressionError(f"expected {value or kind} at token {self.pos} in {self.text!r}")
        self.pos += 1
        return tok

    def parse(self):
        if not self.tokens:
            raise ExpressionError("empty expression")
        e = self.expr()
        if self.pos != len(self.tokens):
            raise ExpressionError(f"trailing input in {self.text!r}")
        return e

    def expr(self):
        e = self.term()
        while self.peek() in (("sym", "+"), ("sym", "-")):
            op = self.take()[1]
            e = Expr(op, (e, self.term()))
        return e

    def term(self):
        e = self.unary()
        while self.peek() in (("sym", "*"), ("sym", "/")):
            op = self.take()[1]
            e = Expr(op, (e, self.unary()))
        return e

    def unary(self):
        if self.peek() == ("sym", "-"):
            self.take()
            return _neg(self.unary())
        if self.peek() == ("sym", "+"):
            self.take()
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek() == ("sym", "^"):
            self.take()
            return Expr("^", (base, self.unary()))
        return base

    def atom(self):
        kind, val = self.peek()
        if kind == "num":
            self.take()
            return _num(val)
        if kind == "name":
            self.take()
            if val in ("t", "x"):
                return Expr(val)
            if val in _CONSTS:
                return _num(_CONSTS[val])
            if val in _FUNCS:
                self.take("sym", "(")
                inner = self.expr()
                self.take("sym", ")")
                return Expr(val, (inner,))
            raise ExpressionError(f"unknown name {val!r}")
        if (kind, val) == ("sym", "("):
            self.take()
            e = self.expr()
            self.take("sym", ")")
            return e
        raise ExpressionError(f"unexpected token {val!r} in {self.text!r}")


def parse(text: str) -> Expr:
    """Parse ``text`` into an :class:`Expr`."""
    return _Parser(str(text)).parse()
