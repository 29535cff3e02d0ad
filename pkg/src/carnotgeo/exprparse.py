"""Scalar expressions in the ambient variables ``x1..xn``.

The module provides a small recursive-descent parser, a pretty-printer whose
output re-parses to itself, vectorised evaluation over arrays of points, and
exact symbolic first and second derivatives.

Grammar (lowest to highest precedence)::

    expr   := term (("+" | "-") term)*
    term   := unary (("*" | "/") unary)*
    unary  := ("-" | "+") unary | power
    power  := atom ("^" unary)?          # right associative
    atom   := NUMBER | "pi" | VAR | FUNC "(" expr ")" | "(" expr ")"

Supported functions are ``sin cos exp log sqrt abs`` plus ``sign``, which the
differentiator emits for ``abs`` and which is accepted on input so that every
printed expression can be read back.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import (
    ArityError,
    DomainError,
    ExprSyntaxError,
    NonDifferentiable,
    UnknownIdentifier,
)

FUNCTIONS = ("sin", "cos", "exp", "log", "sqrt", "abs", "sign")

# Binding strength used by the printer.
_P_ADD, _P_MUL, _P_UNARY, _P_POW, _P_ATOM = 1, 2, 3, 4, 5


# ---------------------------------------------------------------------------
# AST
# ---------------------------------------------------------------------------
class Expr:
    """Base node. Nodes are immutable; arithmetic operators build new trees."""

    __slots__ = ()
    prec = _P_ATOM

    def __add__(self, other):
        return add(self, as_expr(other))

    def __radd__(self, other):
        return add(as_expr(other), self)

    def __sub__(self, other):
        return sub(self, as_expr(other))

    def __rsub__(self, other):
        return sub(as_expr(other), self)

    def __mul__(self, other):
        return mul(self, as_expr(other))

    def __rmul__(self, other):
        return mul(as_expr(other), self)

    def __truediv__(self, other):
        return div(self, as_expr(other))

    def __rtruediv__(self, other):
        return div(as_expr(other), self)

    def __pow__(self, other):
        return power(self, as_expr(other))

    def __neg__(self):
        return neg(self)

    def __str__(self) -> str:
        return pretty(self)

    def __repr__(self) -> str:
        return f"Expr({pretty(self)!r})"


@dataclass(frozen=True, repr=False)
class Const(Expr):
    value: float


@dataclass(frozen=True, repr=False)
class Var(Expr):
    index: int  # zero-based


@dataclass(frozen=True, repr=False)
class Neg(Expr):
    arg: Expr
    prec = _P_UNARY


@dataclass(frozen=True, repr=False)
class Add(Expr):
    left: Expr
    right: Expr
    prec = _P_ADD


@dataclass(frozen=True, repr=False)
class Sub(Expr):
    left: Expr
    right: Expr
    prec = _P_ADD


@dataclass(frozen=True, repr=False)
class Mul(Expr):
    left: Expr
    right: Expr
    prec = _P_MUL


@dataclass(frozen=True, repr=False)
class Div(Expr):
    left: Expr
    right: Expr
    prec = _P_MUL


@dataclass(frozen=True, repr=False)
class Pow(Expr):
    base: Expr
    exponent: Expr
    prec = _P_POW


@dataclass(frozen=True, repr=False)
class Func(Expr):
    name: str
    arg: Expr


ZERO = Const(0.0)
ONE = Const(1.0)


def as_expr(value) -> Expr:
    if isinstance(value, Expr):
        return value
    if isinstance(value, (int, float, np.floating, np.integer)):
        return Const(float(value))
    raise TypeError(f"cannot convert {type(value).__name__} to Expr")


def var(index: int) -> Var:
    """Variable ``x{index+1}`` (zero-based index)."""
    return Var(int(index))


# ---------------------------------------------------------------------------
# Smart constructors with light constant folding
# ---------------------------------------------------------------------------
def _is(e: Expr, v: float) -> bool:
    return isinstance(e, Const) and e.value == v


def add(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value + b.value)
    if _is(a, 0.0):
        return b
    if _is(b, 0.0):
        return a
    return Add(a, b)


def sub(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value - b.value)
    if _is(b, 0.0):
        return a
    if _is(a, 0.0):
        return neg(b)
    return Sub(a, b)


def mul(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value * b.value)
    if _is(a, 0.0) or _is(b, 0.0):
        return ZERO
    if _is(a, 1.0):
        return b
    if _is(b, 1.0):
        return a
    if _is(a, -1.0):
        return neg(b)
    if _is(b, -1.0):
        return neg(a)
    return Mul(a, b)


def div(a: Expr, b: Expr) -> Expr:
    if _is(b, 1.0):
        return a
    if _is(a, 0.0) and not _is(b, 0.0):
        return ZERO
    if isinstance(a, Const) and isinstance(b, Const) and b.value != 0.0:
        return Const(a.value / b.value)
    return Div(a, b)


def neg(a: Expr) -> Expr:
    if isinstance(a, Const):
        return Const(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def power(a: Expr, b: Expr) -> Expr:
    if _is(b, 1.0):
        return a
    if _is(b, 0.0):
        return ONE
    if isinstance(a, Const) and isinstance(b, Const):
        try:
            v = a.value ** b.value
        except (ZeroDivisionError, OverflowError):
            return Pow(a, b)
        if isinstance(v, float) and math.isfinite(v):
            return Const(v)
    return Pow(a, b)


def func(name: str, a: Expr) -> Expr:
    if isinstance(a, Const):
        try:
            v = _SCALAR_FUNCS[name](a.value)
        except (ValueError, ZeroDivisionError, OverflowError):
            v = None
        if v is not None and math.isfinite(v) and not (name == "sign" and a.value == 0.0):
            return Const(float(v))
    return Func(name, a)


def _sign_scalar(v: float) -> float:
    return math.copysign(1.0, v) if v != 0.0 else 0.0


_SCALAR_FUNCS: dict[str, Callable[[float], float]] = {
    "sin": math.sin,
    "cos": math.cos,
    "exp": math.exp,
    "log": math.log,
    "sqrt": math.sqrt,
    "abs": abs,
    "sign": _sign_scalar,
}


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------
_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^(),]))"
)


@dataclass
class _Tok:
    kind: str
    text: str
    offset: int


def _tokenize(src: str) -> list[_Tok]:
    toks: list[_Tok] = []
    pos = 0
    while pos < len(src):
        if src[pos].isspace():
            pos += 1
            continue
        m = _TOKEN.match(src, pos)
        if m is None or m.end() == pos:
            raise ExprSyntaxError(f"unexpected character {src[pos]!r}", _byte_offset(src, pos))
        kind = m.lastgroup
        start = m.start(kind)
        toks.append(_Tok(kind, m.group(kind), _byte_offset(src, start)))
        pos = m.end()
    toks.append(_Tok("end", "", _byte_offset(src, len(src))))
    return toks


def _byte_offset(src: str, char_pos: int) -> int:
    return len(src[:char_pos].encode("utf-8"))


class _Parser:
    def __init__(self, src: str, n: int):
        self.toks = _tokenize(src)
        self.i = 0
        self.n = n

    def peek(self) -> _Tok:
        return self.toks[self.i]

    def take(self) -> _Tok:
        t = self.toks[self.i]
        self.i += 1
        return t

    def expect(self, text: str) -> None:
        t = self.peek()
        if t.text != text or t.kind == "end":
            what = "end of input" if t.kind == "end" else repr(t.text)
            raise ExprSyntaxError(f"expected {text!r}, found {what}", t.offset)
        self.i += 1

    def parse(self) -> Expr:
        e = self.expr()
        t = self.peek()
        if t.kind != "end":
            raise ExprSyntaxError(f"unexpected {t.text!r}", t.offset)
        return e

    def expr(self) -> Expr:
        e = self.term()
        while self.peek().text in ("+", "-") and self.peek().kind == "op":
            op = self.take().text
            rhs = self.term()
            e = Add(e, rhs) if op == "+" else Sub(e, rhs)
        return e

    def term(self) -> Expr:
        e = self.unary()
        while self.peek().text in ("*", "/") and self.peek().kind == "op":
            op = self.take().text
            rhs = self.unary()
            e = Mul(e, rhs) if op == "*" else Div(e, rhs)
        return e

    def unary(self) -> Expr:
        t = self.peek()
        if t.kind == "op" and t.text == "-":
            self.take()
            return Neg(self.unary())
        if t.kind == "op" and t.text == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.peek().kind == "op" and self.peek().text == "^":
            self.take()
            return Pow(base, self.unary())
        return base

    def atom(self) -> Expr:
        t = self.take()
        if t.kind == "num":
            return Const(float(t.text))
        if t.kind == "name":
            if t.text in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                if self.peek().kind == "op" and self.peek().text == ",":
                    raise ArityError(f"{t.text} takes exactly one argument (offset {self.peek().offset})")
                self.expect(")")
                return Func(t.text, arg)
            if t.text == "pi":
                return Const(math.pi)
            m = re.fullmatch(r"x([1-9]\d*)", t.text)
            if m is None or int(m.group(1)) > self.n:
                raise UnknownIdentifier(f"unknown identifier {t.text!r} (variables are x1..x{self.n})")
            if self.peek().kind == "op" and self.peek().text == "(":
                raise UnknownIdentifier(f"{t.text!r} is not a function")
            return Var(int(m.group(1)) - 1)
        if t.kind == "op" and t.text == "(":
            e = self.expr()
            self.expect(")")
            return e
        what = "end of input" if t.kind == "end" else repr(t.text)
        raise ExprSyntaxError(f"unexpected {what}", t.offset)


def parse(src: str, n: int) -> Expr:
    """Parse ``src`` as an expression in ``x1..xn``.

    Raises
    ------
    ExprSyntaxError
        Malformed input; ``offset`` gives the byte position.
    UnknownIdentifier
        A name other than ``x1..xn``, ``pi`` or a supported function.
    ArityError
        A function called with more than one argument.
    """
    if not src or not src.strip():
        raise ExprSyntaxError("empty expression", 0)
    return _Parser(src, n).parse()


# ---------------------------------------------------------------------------
# Printer
# ---------------------------------------------------------------------------
def _const_text(v: float) -> str:
    if not math.isfinite(v):
        raise ValueError("non-finite constant cannot be printed")
    s = repr(float(v))
    return f"({s})" if v < 0 or (v == 0 and math.copysign(1.0, v) < 0) else s


def pretty(e: Expr) -> str:
    """Render ``e`` with minimal parentheses that preserve the tree shape."""

    def wrap(child: Expr, need: bool) -> str:
        s = go(child)
        return f"({s})" if need else s

    def pp(node: Expr) -> int:
        # Negations and negative constants print inside their own parentheses.
        return _P_ATOM if isinstance(node, Neg) else node.prec

    def go(node: Expr) -> str:
        if isinstance(node, Const):
            return _const_text(node.value)
        if isinstance(node, Var):
            return f"x{node.index + 1}"
        if isinstance(node, Neg):
            return "(-" + wrap(node.arg, pp(node.arg) < _P_POW) + ")"
        if isinstance(node, (Add, Sub, Mul, Div)):
            op = {Add: " + ", Sub: " - ", Mul: "*", Div: "/"}[type(node)]
            left = wrap(node.left, pp(node.left) < node.prec)
            right = wrap(node.right, pp(node.right) <= node.prec)
            return left + op + right
        if isinstance(node, Pow):
            base = wrap(node.base, pp(node.base) <= _P_POW)
            expo = wrap(node.exponent, pp(node.exponent) < _P_POW)
            return base + "^" + expo
        if isinstance(node, Func):
            return f"{node.name}({go(node.arg)})"
        raise TypeError(type(node).__name__)

    return go(e)


# ---------------------------------------------------------------------------
# Differentiation
# ---------------------------------------------------------------------------
class Differentiator:
    """Symbolic partial derivatives with a cache keyed on node identity.

    Reusing one instance across several derivatives lets repeated subtrees
    share their derivative trees, which in turn lets the evaluator share
    their values.
    """

    def __init__(self):
        self._cache: dict[tuple[int, int], Expr] = {}
        self._keep: list[Expr] = []

    def __call__(self, e: Expr, k: int) -> Expr:
        key = (id(e), k)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        out = self._rule(e, k)
        self._cache[key] = out
        self._keep.append(e)
        return out

    def _rule(self, e: Expr, k: int) -> Expr:
        d = self
        if isinstance(e, Const):
            return ZERO
        if isinstance(e, Var):
            return ONE if e.index == k else ZERO
        if isinstance(e, Neg):
            return neg(d(e.arg, k))
        if isinstance(e, Add):
            return add(d(e.left, k), d(e.right, k))
        if isinstance(e, Sub):
            return sub(d(e.left, k), d(e.right, k))
        if isinstance(e, Mul):
            return add(mul(d(e.left, k), e.right), mul(e.left, d(e.right, k)))
        if isinstance(e, Div):
            da, db = d(e.left, k), d(e.right, k)
            first = div(da, e.right)
            if _is(db, 0.0):
                return first
            return sub(first, div(mul(e.left, db), power(e.right, Const(2.0))))
        if isinstance(e, Pow):
            da = d(e.base, k)
            if isinstance(e.exponent, Const):
                c = e.exponent.value
                return mul(mul(Const(c), power(e.base, Const(c - 1.0))), da)
            db = d(e.exponent, k)
            inner = add(mul(db, func("log", e.base)), div(mul(e.exponent, da), e.base))
            return mul(e, inner)
        if isinstance(e, Func):
            da = d(e.arg, k)
            if _is(da, 0.0):
                return ZERO
            a = e.arg
            outer = {
                "sin": lambda: func("cos", a),
                "cos": lambda: neg(func("sin", a)),
                "exp": lambda: e,
                "log": lambda: div(ONE, a),
                "sqrt": lambda: div(Const(0.5), e),
                "abs": lambda: func("sign", a),
                "sign": lambda: None,
            }[e.name]()
            if outer is None:
                # sign is locally constant; evaluating the node still refuses 0.
                return mul(Const(0.0), e)
            return mul(outer, da)
        raise TypeError(type(e).__name__)


def diff(e: Expr, k: int) -> Expr:
    """Partial derivative of ``e`` with respect to ``x{k+1}``."""
    return Differentiator()(e, k)


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------
class _Evaluator:
    def __init__(self, X: np.ndarray, strict: bool):
        self.X = X
        self.strict = strict
        self.memo: dict[int, np.ndarray] = {}
        self.shape = X.shape[:-1]

    def __call__(self, e: Expr) -> np.ndarray:
        key = id(e)
        hit = self.memo.get(key)
        if hit is not None:
            return hit
        out = self._eval(e)
        self.memo[key] = out
        return out

    def _fail(self, exc_type, msg: str):
        if self.strict:
            raise exc_type(msg)

    def _eval(self, e: Expr) -> np.ndarray:
        ev = self
        if isinstance(e, Const):
            return np.full(self.shape, e.value)
        if isinstance(e, Var):
            if e.index >= self.X.shape[-1]:
                raise UnknownIdentifier(f"x{e.index + 1} outside the point dimension")
            return self.X[..., e.index]
        if isinstance(e, Neg):
            return -ev(e.arg)
        if isinstance(e, Add):
            return ev(e.left) + ev(e.right)
        if isinstance(e, Sub):
            return ev(e.left) - ev(e.right)
        if isinstance(e, Mul):
            return ev(e.left) * ev(e.right)
        if isinstance(e, Div):
            b = ev(e.right)
            if np.any(b == 0.0):
                self._fail(DomainError, "division by zero")
            with np.errstate(divide="ignore", invalid="ignore"):
                return ev(e.left) / b
        if isinstance(e, Pow):
            a = ev(e.base)
            if isinstance(e.exponent, Const):
                c = e.exponent.value
                if c == int(c) and abs(c) < 2**31:
                    ci = int(c)
                    if ci < 0 and np.any(a == 0.0):
                        self._fail(DomainError, "zero raised to a negative power")
                    with np.errstate(divide="ignore", invalid="ignore"):
                        if ci == 2:
                            return a * a
                        return np.power(a, float(ci)) if ci < 0 else np.power(a, ci)
                if np.any(a < 0.0):
                    self._fail(DomainError, "negative base with non-integer exponent")
                if c < 0 and np.any(a == 0.0):
                    self._fail(DomainError, "zero raised to a negative power")
                with np.errstate(divide="ignore", invalid="ignore"):
                    return np.power(a, c)
            b = ev(e.exponent)
            if np.any(a <= 0.0):
                self._fail(DomainError, "variable exponent needs a positive base")
            with np.errstate(divide="ignore", invalid="ignore"):
                return np.power(a, b)
        if isinstance(e, Func):
            a = ev(e.arg)
            name = e.name
            with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
                if name == "sin":
                    return np.sin(a)
                if name == "cos":
                    return np.cos(a)
                if name == "exp":
                    return np.exp(a)
                if name == "log":
                    if np.any(a <= 0.0):
                        self._fail(DomainError, "log of a non-positive value")
                    return np.log(a)
                if name == "sqrt":
                    if np.any(a < 0.0):
                        self._fail(DomainError, "sqrt of a negative value")
                    return np.sqrt(a)
                if name == "abs":
                    return np.abs(a)
                if name == "sign":
                    if np.any(a == 0.0):
                        self._fail(NonDifferentiable, "abs is not differentiable at 0")
                    return np.sign(a)
        raise TypeError(type(e).__name__)


def evaluate(e: Expr, X, strict: bool = True) -> np.ndarray:
    """Evaluate ``e`` at points ``X`` (shape ``(..., n)``).

    With ``strict=False`` domain violations produce ``nan``/``inf`` instead of
    raising, which is what bracketing searches want.
    """
    X = np.asarray(X, dtype=float)
    out = _Evaluator(X, strict)(e)
    return np.broadcast_to(out, X.shape[:-1]).astype(float, copy=True)


@dataclass(frozen=True)
class JetValue:
    value: float
    grad: np.ndarray
    hess: np.ndarray


class CompiledJet:
    """Value, gradient and Hessian trees of one expression, built once.

    The Hessian stores only ``i <= j`` trees and mirrors them, so the
    returned matrices are symmetric by construction.
    """

    def __init__(self, e: Expr, n: int, order: int = 2):
        self.expr = e
        self.n = n
        self.order = order
        d = Differentiator()
        self._diff = d
        self.grad_exprs = [d(e, i) for i in range(n)]
        self.hess_exprs: dict[tuple[int, int], Expr] = {}
        if order >= 2:
            for i in range(n):
                for j in range(i, n):
                    self.hess_exprs[(i, j)] = d(self.grad_exprs[i], j)

    def __call__(self, X, order: int | None = None, strict: bool = True):
        """Return ``(value, grad, hess)`` arrays for points ``X`` of shape ``(N, n)``."""
        order = self.order if order is None else order
        X = np.atleast_2d(np.asarray(X, dtype=float))
        ev = _Evaluator(X, strict)
        N = X.shape[0]
        val = np.broadcast_to(ev(self.expr), (N,)).astype(float)
        if order < 1:
            return val, None, None
        grad = np.empty((N, self.n))
        for i, g in enumerate(self.grad_exprs):
            grad[:, i] = ev(g)
        if order < 2:
            return val, grad, None
        hess = np.empty((N, self.n, self.n))
        for (i, j), h in self.hess_exprs.items():
            v = ev(h)
            hess[:, i, j] = v
            hess[:, j, i] = v
        return val, grad, hess


def eval_jet(e: Expr, x: Sequence[float]) -> JetValue:
    """Value, gradient and Hessian of ``e`` at a single point ``x``."""
    x = np.asarray(x, dtype=float)
    val, grad, hess = CompiledJet(e, x.size)(x[None, :])
    return JetValue(float(val[0]), grad[0], hess[0])


# ---------------------------------------------------------------------------
# Tree utilities
# ---------------------------------------------------------------------------
def substitute(e: Expr, mapping: Mapping[int, Expr]) -> Expr:
    """Replace variables by expressions (keys are zero-based indices)."""
    memo: dict[int, Expr] = {}

    def go(node: Expr) -> Expr:
        key = id(node)
        if key in memo:
            return memo[key]
        if isinstance(node, Var):
            out = mapping.get(node.index, node)
        elif isinstance(node, Const):
            out = node
        elif isinstance(node, Neg):
            out = neg(go(node.arg))
        elif isinstance(node, Add):
            out = add(go(node.left), go(node.right))
        elif isinstance(node, Sub):
            out = sub(go(node.left), go(node.right))
        elif isinstance(node, Mul):
            out = mul(go(node.left), go(node.right))
        elif isinstance(node, Div):
            out = div(go(node.left), go(node.right))
        elif isinstance(node, Pow):
            out = power(go(node.base), go(node.exponent))
        elif isinstance(node, Func):
            out = func(node.name, go(node.arg))
        else:
            raise TypeError(type(node).__name__)
        memo[key] = out
        return out

    return go(e)


def variables(e: Expr) -> set[int]:
    """Zero-based indices of the variables occurring in ``e``."""
    found: set[int] = set()
    stack = [e]
    while stack:
        node = stack.pop()
        if isinstance(node, Var):
            found.add(node.index)
        elif isinstance(node, (Neg, Func)):
            stack.append(node.arg)
        elif isinstance(node, (Add, Sub, Mul, Div)):
            stack.extend((node.left, node.right))
        elif isinstance(node, Pow):
            stack.extend((node.base, node.exponent))
    return found
