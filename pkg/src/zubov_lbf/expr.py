"""Symbolic scalar expressions over the state variables ``x1 .. xn``.

Expressions are immutable trees. They can be parsed from text, printed back,
evaluated pointwise or on a batch of points, differentiated symbolically and
evaluated over boxes with interval arithmetic.

Grammar::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | power
    power  := atom ('^' integer)?
    atom   := number | 'pi' | var | func '(' expr (',' expr)? ')' | '(' expr ')'
    func   := sin | cos | tanh | exp | log | sqrt | min | max
    var    := 'x' digits            (1-based: x1 is coordinate 0)

Unary minus binds looser than ``^`` so ``-x1^2`` means ``-(x1^2)``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

from .interval import Box, Interval


class ExprError(ValueError):
    pass


class ParseError(ExprError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class ExprDomainError(ExprError, ArithmeticError):
    """Evaluation left the domain of a node (log of <= 0, division by zero, ...)."""

    def __init__(self, message: str, node: Expr, path: str = ""):
        super().__init__(message if not path else f"{message} at {path}")
        self.node = node
        self.path = path


class NonDifferentiable(ExprError):
    pass


# precedence levels used by the printer
_P_ADD, _P_MUL, _P_NEG, _P_POW, _P_ATOM = 1, 2, 3, 4, 5


class Expr:
    """Base class of expression nodes. Supports ``+ - * /``, unary minus and ``**int``."""

    __slots__ = ()

    def __add__(self, other):
        return Add(self, _lift(other))

    def __radd__(self, other):
        return Add(_lift(other), self)

    def __sub__(self, other):
        return Sub(self, _lift(other))

    def __rsub__(self, other):
        return Sub(_lift(other), self)

    def __mul__(self, other):
        return Mul(self, _lift(other))

    def __rmul__(self, other):
        return Mul(_lift(other), self)

    def __truediv__(self, other):
        return Div(self, _lift(other))

    def __rtruediv__(self, other):
        return Div(_lift(other), self)

    def __neg__(self):
        return Neg(self)

    def __pow__(self, k):
        if not isinstance(k, int) or k < 0:
            raise ExprError("only nonnegative integer exponents are supported")
        return IntPow(self, k)

    def __str__(self):
        return _fmt(self)

    def children(self) -> tuple[Expr, ...]:
        return ()

    def max_var(self) -> int:
        """Largest variable index used, or -1 for a constant expression."""
        return max((c.max_var() for c in self.children()), default=-1)

    def has_minmax(self) -> bool:
        return any(c.has_minmax() for c in self.children())


def _lift(v) -> Expr:
    if isinstance(v, Expr):
        return v
    return Const(float(v))


@dataclass(frozen=True)
class Const(Expr):
    value: float

    def _ev(self, X):
        return self.value

    def _iv(self, dims):
        return Interval(self.value)

    def _d(self, i):
        return ZERO


@dataclass(frozen=True)
class Var(Expr):
    index: int

    def _ev(self, X):
        return X[..., self.index]

    def _iv(self, dims):
        return dims[self.index]

    def _d(self, i):
        return ONE if i == self.index else ZERO

    def max_var(self):
        return self.index


@dataclass(frozen=True)
class Neg(Expr):
    arg: Expr

    def children(self):
        return (self.arg,)

    def _ev(self, X):
        return -self.arg._ev(X)

    def _iv(self, dims):
        return -self.arg._iv(dims)

    def _d(self, i):
        return neg(self.arg._d(i))


@dataclass(frozen=True)
class _Binary(Expr):
    left: Expr
    right: Expr

    def children(self):
        return (self.left, self.right)


class Add(_Binary):
    def _ev(self, X):
        return self.left._ev(X) + self.right._ev(X)

    def _iv(self, dims):
        return self.left._iv(dims) + self.right._iv(dims)

    def _d(self, i):
        return add(self.left._d(i), self.right._d(i))


class Sub(_Binary):
    def _ev(self, X):
        return self.left._ev(X) - self.right._ev(X)

    def _iv(self, dims):
        return self.left._iv(dims) - self.right._iv(dims)

    def _d(self, i):
        return sub(self.left._d(i), self.right._d(i))


class Mul(_Binary):
    def _ev(self, X):
        return self.left._ev(X) * self.right._ev(X)

    def _iv(self, dims):
        return self.left._iv(dims) * self.right._iv(dims)

    def _d(self, i):
        return add(mul(self.left._d(i), self.right), mul(self.left, self.right._d(i)))


class Div(_Binary):
    def _ev(self, X):
        den = self.right._ev(X)
        if np.any(np.asarray(den) == 0.0):
            raise ExprDomainError("division by zero", self)
        return self.left._ev(X) / den

    def _iv(self, dims):
        den = self.right._iv(dims)
        if np.any((den.lo == 0.0) & (den.hi == 0.0)):
            raise ExprDomainError("division by an interval equal to [0, 0]", self)
        return self.left._iv(dims) / den

    def _d(self, i):
        num = sub(mul(self.left._d(i), self.right), mul(self.left, self.right._d(i)))
        return div(num, power(self.right, 2))


class Max(_Binary):
    def _ev(self, X):
        return np.maximum(self.left._ev(X), self.right._ev(X))

    def _iv(self, dims):
        return self.left._iv(dims).maximum(self.right._iv(dims))

    def _d(self, i):
        raise NonDifferentiable("max() cannot be differentiated")

    def has_minmax(self):
        return True


class Min(_Binary):
    def _ev(self, X):
        return np.minimum(self.left._ev(X), self.right._ev(X))

    def _iv(self, dims):
        return self.left._iv(dims).minimum(self.right._iv(dims))

    def _d(self, i):
        raise NonDifferentiable("min() cannot be differentiated")

    def has_minmax(self):
        return True


@dataclass(frozen=True)
class IntPow(Expr):
    base: Expr
    exponent: int

    def __post_init__(self):
        if not isinstance(self.exponent, int) or self.exponent < 0:
            raise ExprError(f"exponent must be a nonnegative int, got {self.exponent!r}")

    def children(self):
        return (self.base,)

    def _ev(self, X):
        return self.base._ev(X) ** self.exponent

    def _iv(self, dims):
        return self.base._iv(dims) ** self.exponent

    def _d(self, i):
        k = self.exponent
        if k == 0:
            return ZERO
        return mul(mul(Const(float(k)), power(self.base, k - 1)), self.base._d(i))


@dataclass(frozen=True)
class _Unary(Expr):
    arg: Expr

    def children(self):
        return (self.arg,)


class Sin(_Unary):
    name = "sin"

    def _ev(self, X):
        return np.sin(self.arg._ev(X))

    def _iv(self, dims):
        return self.arg._iv(dims).sin()

    def _d(self, i):
        return mul(Cos(self.arg), self.arg._d(i))


class Cos(_Unary):
    name = "cos"

    def _ev(self, X):
        return np.cos(self.arg._ev(X))

    def _iv(self, dims):
        return self.arg._iv(dims).cos()

    def _d(self, i):
        return mul(neg(Sin(self.arg)), self.arg._d(i))


class Tanh(_Unary):
    name = "tanh"

    def _ev(self, X):
        return np.tanh(self.arg._ev(X))

    def _iv(self, dims):
        return self.arg._iv(dims).tanh()

    def _d(self, i):
        return mul(sub(ONE, power(Tanh(self.arg), 2)), self.arg._d(i))


class Exp(_Unary):
    name = "exp"

    def _ev(self, X):
        return np.exp(self.arg._ev(X))

    def _iv(self, dims):
        return self.arg._iv(dims).exp()

    def _d(self, i):
        return mul(Exp(self.arg), self.arg._d(i))


class Log(_Unary):
    name = "log"

    def _ev(self, X):
        a = self.arg._ev(X)
        if np.any(np.asarray(a) <= 0.0):
            raise ExprDomainError("log of a nonpositive value", self)
        return np.log(a)

    def _iv(self, dims):
        a = self.arg._iv(dims)
        if np.any(a.hi <= 0.0):
            raise ExprDomainError("log of an interval with hi <= 0", self)
        return a.log()

    def _d(self, i):
        return div(self.arg._d(i), self.arg)


class Sqrt(_Unary):
    name = "sqrt"

    def _ev(self, X):
        a = self.arg._ev(X)
        if np.any(np.asarray(a) < 0.0):
            raise ExprDomainError("sqrt of a negative value", self)
        return np.sqrt(a)

    def _iv(self, dims):
        a = self.arg._iv(dims)
        if np.any(a.hi < 0.0):
            raise ExprDomainError("sqrt of an interval with hi < 0", self)
        return a.sqrt()

    def _d(self, i):
        return div(self.arg._d(i), mul(Const(2.0), Sqrt(self.arg)))


ZERO = Const(0.0)
ONE = Const(1.0)

_FUNCS1 = {"sin": Sin, "cos": Cos, "tanh": Tanh, "exp": Exp, "log": Log, "sqrt": Sqrt}
_FUNCS2 = {"max": Max, "min": Min}


# -- constant-folding constructors (used by diff) ------------------------------

def _is_const(e, v=None):
    return isinstance(e, Const) and (v is None or e.value == v)


def neg(a: Expr) -> Expr:
    if _is_const(a):
        return Const(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def add(a: Expr, b: Expr) -> Expr:
    if _is_const(a) and _is_const(b):
        return Const(a.value + b.value)
    if _is_const(a, 0.0):
        return b
    if _is_const(b, 0.0):
        return a
    return Add(a, b)


def sub(a: Expr, b: Expr) -> Expr:
    if _is_const(a) and _is_const(b):
        return Const(a.value - b.value)
    if _is_const(b, 0.0):
        return a
    if _is_const(a, 0.0):
        return neg(b)
    return Sub(a, b)


def mul(a: Expr, b: Expr) -> Expr:
    if _is_const(a) and _is_const(b):
        return Const(a.value * b.value)
    if _is_const(a, 0.0) or _is_const(b, 0.0):
        return ZERO
    if _is_const(a, 1.0):
        return b
    if _is_const(b, 1.0):
        return a
    return Mul(a, b)


def div(a: Expr, b: Expr) -> Expr:
    if _is_const(a) and _is_const(b) and b.value != 0.0:
        return Const(a.value / b.value)
    if _is_const(a, 0.0):
        return ZERO
    if _is_const(b, 1.0):
        return a
    return Div(a, b)


def power(b: Expr, k: int) -> Expr:
    if k == 0:
        return ONE
    if k == 1:
        return b
    if _is_const(b):
        return Const(b.value**k)
    return IntPow(b, k)


# -- public operations ----------------------------------------------------------

def evaluate(e: Expr, x) -> float | np.ndarray:
    """Evaluate ``e`` at a point (shape (n,)) or a batch of points (shape (N, n))."""
    X = np.asarray(x, dtype=float)
    try:
        with np.errstate(over="ignore"):
            val = e._ev(X)
    except ExprDomainError as err:
        raise ExprDomainError(str(err), err.node, node_path(e, err.node)) from None
    if X.ndim == 1:
        return float(val)
    return np.broadcast_to(np.asarray(val, dtype=float), X.shape[:-1]).copy()


def diff(e: Expr, i: int) -> Expr:
    """Symbolic partial derivative with respect to coordinate ``i`` (0-based)."""
    return e._d(i)


def gradient(e: Expr, n: int) -> list[Expr]:
    return [diff(e, i) for i in range(n)]


def interval_eval(e: Expr, b: Box) -> Interval:
    """Sound enclosure of ``e`` over a box or a stack of boxes."""
    if b.n <= e.max_var():
        raise ExprError(f"expression uses x{e.max_var() + 1} but the box has dimension {b.n}")
    try:
        iv = e._iv(b.dims)
    except ExprDomainError as err:
        raise ExprDomainError(str(err), err.node, node_path(e, err.node)) from None
    shape = b.lo.shape[:-1]
    return Interval(np.broadcast_to(iv.lo, shape), np.broadcast_to(iv.hi, shape))


def node_path(root: Expr, target: Expr) -> str:
    """Dotted child-index path from ``root`` to ``target`` (identity match)."""

    def walk(node, path):
        if node is target:
            return path
        for k, c in enumerate(node.children()):
            found = walk(c, f"{path}.{k}")
            if found is not None:
                return found
        return None

    return walk(root, "root") or "root"


# -- printing -------------------------------------------------------------------

def _fmt_num(v: float) -> str:
    if v.is_integer() and abs(v) < 1e16:
        return str(int(v))
    return repr(v)


def _prec(e: Expr) -> int:
    if isinstance(e, (Add, Sub)):
        return _P_ADD
    if isinstance(e, (Mul, Div)):
        return _P_MUL
    if isinstance(e, Neg) or (isinstance(e, Const) and (e.value < 0 or math.copysign(1.0, e.value) < 0)):
        return _P_NEG
    if isinstance(e, IntPow):
        return _P_POW
    return _P_ATOM


def _fmt(e: Expr) -> str:
    if isinstance(e, Const):
        return _fmt_num(e.value)
    if isinstance(e, Var):
        return f"x{e.index + 1}"
    if isinstance(e, Neg):
        inner = _fmt(e.arg)
        return f"-({inner})" if _prec(e.arg) <= _P_NEG else f"-{inner}"
    if isinstance(e, IntPow):
        inner = _fmt(e.base)
        return f"({inner})^{e.exponent}" if _prec(e.base) < _P_ATOM else f"{inner}^{e.exponent}"
    if isinstance(e, _Unary):
        return f"{e.name}({_fmt(e.arg)})"
    if isinstance(e, (Max, Min)):
        name = "max" if isinstance(e, Max) else "min"
        return f"{name}({_fmt(e.left)}, {_fmt(e.right)})"
    op = {Add: "+", Sub: "-", Mul: "*", Div: "/"}[type(e)]
    p = _prec(e)
    left, right = _fmt(e.left), _fmt(e.right)
    lp, rp = _prec(e.left), _prec(e.right)
    if lp < p or (lp == _P_NEG and p != _P_ADD):
        left = f"({left})"
    if rp <= p or rp == _P_NEG:
        right = f"({right})"
    return f"{left}{op}{right}"


# -- parsing --------------------------------------------------------------------

_TOKEN = re.compile(r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^(),])
""", re.VERBOSE)


def _tokenize(text: str):
    pos = 0
    toks = []
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", len(text[:pos].encode()))
        kind = m.lastgroup
        if kind != "ws":
            toks.append((kind, m.group(), len(text[:pos].encode())))
        pos = m.end()
    toks.append(("eof", "", len(text.encode())))
    return toks


class _Parser:
    def __init__(self, text: str, n: int):
        self.toks = _tokenize(text)
        self.i = 0
        self.n = n

    def peek(self):
        return self.toks[self.i]

    def take(self):
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def expect(self, value):
        kind, text, off = self.take()
        if text != value or kind == "eof":
            what = "end of input" if kind == "eof" else repr(text)
            raise ParseError(f"expected {value!r}, found {what}", off)

    def parse(self) -> Expr:
        e = self.expr()
        kind, text, off = self.peek()
        if kind != "eof":
            raise ParseError(f"unexpected {text!r}", off)
        return e

    def expr(self):
        e = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            rhs = self.term()
            e = Add(e, rhs) if op == "+" else Sub(e, rhs)
        return e

    def term(self):
        e = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            rhs = self.unary()
            e = Mul(e, rhs) if op == "*" else Div(e, rhs)
        return e

    def unary(self):
        if self.peek()[:2] == ("op", "-"):
            self.take()
            return Neg(self.unary())
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[:2] == ("op", "^"):
            self.take()
            kind, text, off = self.take()
            if kind != "num" or not text.isdigit():
                raise ParseError("exponent must be a nonnegative integer literal", off)
            base = IntPow(base, int(text))
            if self.peek()[:2] == ("op", "^"):
                raise ParseError("chained '^' needs parentheses", self.peek()[2])
        return base

    def atom(self):
        kind, text, off = self.take()
        if kind == "num":
            return Const(float(text))
        if kind == "ident":
            if text == "pi":
                return Const(math.pi)
            m = re.fullmatch(r"x(\d+)", text)
            if m:
                idx = int(m.group(1))
                if not 1 <= idx <= self.n:
                    raise ParseError(f"variable {text} out of range for dimension {self.n}", off)
                return Var(idx - 1)
            if text in _FUNCS1 or text in _FUNCS2:
                self.expect("(")
                a = self.expr()
                if text in _FUNCS2:
                    self.expect(",")
                    b = self.expr()
                    self.expect(")")
                    return _FUNCS2[text](a, b)
                self.expect(")")
                return _FUNCS1[text](a)
            raise ParseError(f"unknown identifier {text!r}", off)
        if kind == "op" and text == "(":
            e = self.expr()
            self.expect(")")
            return e
        what = "end of input" if kind == "eof" else repr(text)
        raise ParseError(f"unexpected {what}", off)


def parse(text: str, n: int) -> Expr:
    """Parse ``text`` into an expression over ``x1 .. xn``."""
    if n < 1:
        raise ExprError("dimension must be >= 1")
    return _Parser(text, n).parse()


def quadratic_form(P) -> Expr:
    """``x^T P x`` as an expression (diagonal terms as squares, which bound tighter)."""
    P = np.asarray(P, dtype=float)
    n = P.shape[0]
    e = ZERO
    for i in range(n):
        e = add(e, mul(Const(float(P[i, i])), power(Var(i), 2)))
        for j in range(i + 1, n):
            c = float(P[i, j] + P[j, i])
            if c != 0.0:
                e = add(e, mul(Const(c), mul(Var(i), Var(j))))
    return e
