"""Closed-form scalar expressions of chart coordinates.

Expressions are parsed with a small precedence-climbing grammar::

    expr   := term (('+'|'-') term)*
    term   := factor (('*'|'/') factor)*
    factor := base ('^' factor)?
    base   := NUMBER | IDENT | IDENT '(' expr ')' | '(' expr ')' | '-' base

``IDENT`` is ``x1`` .. ``xN``, ``pi``, ``e`` or one of the functions in
:data:`FUNCTIONS`. Note that unary minus binds tighter than ``^`` under this
grammar, so ``-x1^2`` means ``(-x1)^2``; write ``-(x1^2)`` for the other one.

Evaluation is second-order forward mode: every node yields a :class:`Jet`
carrying value, gradient and Hessian over a batch of points, so derivatives
are exact up to rounding.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

FUNCTIONS = ("exp", "log", "sin", "cos", "tanh", "sqrt")
CONSTANTS = {"pi": math.pi, "e": math.e}


class ExpressionError(ValueError):
    """Base class for expression failures."""


class ExpressionSyntaxError(ExpressionError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class ExpressionDomainError(ExpressionError, ArithmeticError):
    """Raised when a subexpression is undefined at an evaluation point."""

    def __init__(self, message: str, point_index: int | None = None):
        if point_index is not None:
            message = f"{message} (point {point_index})"
        super().__init__(message)
        self.point_index = point_index


# ---------------------------------------------------------------------------
# Tree nodes
# ---------------------------------------------------------------------------


class Node:
    """Immutable expression tree node. Supports arithmetic for building trees."""

    __slots__ = ()

    def __add__(self, other):
        return BinOp("+", self, as_node(other))

    def __radd__(self, other):
        return BinOp("+", as_node(other), self)

    def __sub__(self, other):
        return BinOp("-", self, as_node(other))

    def __rsub__(self, other):
        return BinOp("-", as_node(other), self)

    def __mul__(self, other):
        return BinOp("*", self, as_node(other))

    def __rmul__(self, other):
        return BinOp("*", as_node(other), self)

    def __truediv__(self, other):
        return BinOp("/", self, as_node(other))

    def __rtruediv__(self, other):
        return BinOp("/", as_node(other), self)

    def __pow__(self, other):
        return BinOp("^", self, as_node(other))

    def __neg__(self):
        return Neg(self)


@dataclass(frozen=True, eq=True)
class Num(Node):
    value: float


@dataclass(frozen=True, eq=True)
class Const(Node):
    name: str


@dataclass(frozen=True, eq=True)
class Var(Node):
    index: int  # 1-based


@dataclass(frozen=True, eq=True)
class Neg(Node):
    operand: Node


@dataclass(frozen=True, eq=True)
class BinOp(Node):
    op: str
    left: Node
    right: Node


@dataclass(frozen=True, eq=True)
class Call(Node):
    func: str
    arg: Node


def as_node(value) -> Node:
    if isinstance(value, Node):
        return value
    if isinstance(value, ScalarExpression):
        return value.tree
    if isinstance(value, (int, float)):
        value = float(value)
        # keep trees in the shape the parser would produce
        return Neg(Num(-value)) if value < 0 else Num(value)
    raise TypeError(f"cannot convert {type(value).__name__} to an expression node")


def call(func: str, arg) -> Call:
    if func not in FUNCTIONS:
        raise ExpressionError(f"unknown function {func!r}")
    return Call(func, as_node(arg))


def exp(arg) -> Call:
    return call("exp", arg)


def log(arg) -> Call:
    return call("log", arg)


def variables(node: Node) -> set[int]:
    """Indices of all coordinate variables appearing in ``node``."""
    out: set[int] = set()
    stack = [node]
    while stack:
        cur = stack.pop()
        if isinstance(cur, Var):
            out.add(cur.index)
        elif isinstance(cur, Neg):
            stack.append(cur.operand)
        elif isinstance(cur, BinOp):
            stack.extend((cur.left, cur.right))
        elif isinstance(cur, Call):
            stack.append(cur.arg)
    return out


def constant_value(node: Node) -> float | None:
    """Numeric value of a variable-free subtree, or None."""
    if variables(node):
        return None
    with np.errstate(all="ignore"):
        try:
            jet = _Evaluator(np.zeros((1, 1)), order=0).eval(node)
        except ExpressionDomainError:
            return None
    return float(np.asarray(jet.value).reshape(-1)[0])


# ---------------------------------------------------------------------------
# Printing
# ---------------------------------------------------------------------------


def to_text(node: Node) -> str:
    """Serialize a tree so that ``parse(to_text(t))`` rebuilds ``t`` exactly."""
    if isinstance(node, Num):
        text = repr(node.value)
        if text in ("inf", "nan"):
            raise ExpressionError(f"non-finite literal {text}")
        return text[:-2] if text.endswith(".0") else text
    if isinstance(node, Const):
        return node.name
    if isinstance(node, Var):
        return f"x{node.index}"
    if isinstance(node, Neg):
        return "-" + to_text(node.operand)
    if isinstance(node, BinOp):
        return f"({to_text(node.left)} {node.op} {to_text(node.right)})"
    if isinstance(node, Call):
        return f"{node.func}({to_text(node.arg)})"
    raise TypeError(node)


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^()]))"
)


@dataclass(frozen=True)
class _Tok:
    kind: str
    text: str
    offset: int


def _tokenize(text: str) -> list[_Tok]:
    toks = []
    pos = 0
    while pos < len(text):
        if text[pos].isspace():
            pos += 1
            continue
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise ExpressionSyntaxError(f"unexpected character {text[pos]!r}", pos)
        kind = m.lastgroup
        toks.append(_Tok(kind, m.group(kind), m.start(kind)))
        pos = m.end()
    toks.append(_Tok("end", "", len(text)))
    return toks


class _Parser:
    def __init__(self, text: str, arity: int):
        self.toks = _tokenize(text)
        self.i = 0
        self.arity = arity

    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def advance(self) -> _Tok:
        t = self.toks[self.i]
        self.i += 1
        return t

    def expect(self, text: str) -> None:
        if self.tok.text != text or self.tok.kind == "end":
            found = "end of input" if self.tok.kind == "end" else repr(self.tok.text)
            raise ExpressionSyntaxError(f"expected {text!r}, found {found}", self.tok.offset)
        self.advance()

    def parse(self) -> Node:
        node = self.expr()
        if self.tok.kind != "end":
            raise ExpressionSyntaxError(f"unexpected {self.tok.text!r}", self.tok.offset)
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.tok.kind == "op" and self.tok.text in "+-":
            op = self.advance().text
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.factor()
        while self.tok.kind == "op" and self.tok.text in "*/":
            op = self.advance().text
            node = BinOp(op, node, self.factor())
        return node

    def factor(self) -> Node:
        node = self.base()
        if self.tok.kind == "op" and self.tok.text == "^":
            self.advance()
            node = BinOp("^", node, self.factor())
        return node

    def base(self) -> Node:
        tok = self.tok
        if tok.kind == "num":
            self.advance()
            return Num(float(tok.text))
        if tok.kind == "ident":
            self.advance()
            return self.ident(tok)
        if tok.kind == "op" and tok.text == "(":
            self.advance()
            node = self.expr()
            self.expect(")")
            return node
        if tok.kind == "op" and tok.text == "-":
            self.advance()
            return Neg(self.base())
        found = "end of input" if tok.kind == "end" else repr(tok.text)
        raise ExpressionSyntaxError(f"unexpected {found}", tok.offset)

    def ident(self, tok: _Tok) -> Node:
        name = tok.text
        if name in FUNCTIONS:
            self.expect("(")
            arg = self.expr()
            self.expect(")")
            return Call(name, arg)
        if name in CONSTANTS:
            return Const(name)
        m = re.fullmatch(r"x([1-9]\d*)", name)
        if m:
            index = int(m.group(1))
            if index > self.arity:
                raise ExpressionSyntaxError(
                    f"variable {name} exceeds arity {self.arity}", tok.offset
                )
            return Var(index)
        if name == "abs":
            raise ExpressionSyntaxError("abs is not supported (non-smooth)", tok.offset)
        raise ExpressionSyntaxError(f"unknown identifier {name!r}", tok.offset)


@dataclass(frozen=True)
class ScalarExpression:
    """A parsed expression together with the number of chart coordinates."""

    source: str
    arity: int
    tree: Node

    @classmethod
    def from_tree(cls, tree, arity: int) -> "ScalarExpression":
        tree = as_node(tree)
        bad = [i for i in variables(tree) if i > arity]
        if bad:
            raise ExpressionError(f"variable x{max(bad)} exceeds arity {arity}")
        return cls(to_text(tree), arity, tree)

    def __str__(self) -> str:
        return self.source

    def to_text(self) -> str:
        return to_text(self.tree)

    def is_constant(self) -> bool:
        return not variables(self.tree)

    def __call__(self, points) -> np.ndarray | float:
        """Values only, at one point or an ``(N, n)`` batch."""
        pts = np.asarray(points, dtype=float)
        jet = evaluate(self, pts.reshape(-1, self.arity), order=0)
        vals = np.broadcast_to(jet.value, (pts.reshape(-1, self.arity).shape[0],))
        return float(vals[0]) if pts.ndim == 1 else np.array(vals)


def parse(text: str, arity: int) -> ScalarExpression:
    if not text or not text.strip():
        raise ExpressionSyntaxError("empty expression", 0)
    if arity < 1:
        raise ExpressionError("arity must be positive")
    return ScalarExpression(text, arity, _Parser(text, arity).parse())


# ---------------------------------------------------------------------------
# Batched 2-jets
# ---------------------------------------------------------------------------


@dataclass
class Jet:
    """Value/gradient/Hessian over a batch of N points.

    ``grad`` has shape (N, n) and ``hess`` (N, n, n); ``None`` stands for an
    identically zero derivative (constants, or orders that were not requested).
    ``value`` may be a Python float for constants.
    """

    value: np.ndarray | float
    grad: np.ndarray | None = None
    hess: np.ndarray | None = None


@dataclass(frozen=True)
class Jet2:
    """Exact 2-jet of an expression at a single point."""

    value: float
    gradient: np.ndarray
    hessian: np.ndarray


def _outer(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a[:, :, None] * b[:, None, :]


def _sym_outer(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # a_i b_j + b_i a_j, exactly symmetric since float addition commutes
    return a[:, :, None] * b[:, None, :] + b[:, :, None] * a[:, None, :]


def _scale(c, arr):
    if arr is None:
        return None
    c = np.asarray(c)
    if c.ndim == 0:
        return arr * c
    return arr * c.reshape(c.shape + (1,) * (arr.ndim - 1))


def _add(a, b):
    if a is None:
        return b
    if b is None:
        return a
    return a + b


def _first_bad(mask) -> int | None:
    mask = np.asarray(mask)
    if mask.ndim == 0:
        return 0 if bool(mask) else None
    idx = np.flatnonzero(mask)
    return int(idx[0]) if idx.size else None


class _Evaluator:
    def __init__(self, points: np.ndarray, order: int):
        self.points = points
        self.n_pts, self.dim = points.shape
        self.order = order
        self.memo: dict[int, tuple[Node, Jet]] = {}

    def eval(self, node: Node) -> Jet:
        key = id(node)
        hit = self.memo.get(key)
        if hit is not None and hit[0] is node:
            return hit[1]
        jet = self._eval(node)
        self.memo[key] = (node, jet)
        return jet

    def _eval(self, node: Node) -> Jet:
        if isinstance(node, Num):
            return Jet(node.value)
        if isinstance(node, Const):
            return Jet(CONSTANTS[node.name])
        if isinstance(node, Var):
            if node.index > self.dim:
                raise ExpressionError(f"variable x{node.index} exceeds point dimension {self.dim}")
            grad = None
            if self.order >= 1:
                grad = np.zeros((self.n_pts, self.dim))
                grad[:, node.index - 1] = 1.0
            return Jet(self.points[:, node.index - 1].copy(), grad, None)
        if isinstance(node, Neg):
            a = self.eval(node.operand)
            return Jet(-a.value, _scale(-1.0, a.grad), _scale(-1.0, a.hess))
        if isinstance(node, Call):
            return self._call(node.func, self.eval(node.arg))
        if isinstance(node, BinOp):
            if node.op == "^":
                return self._pow(node)
            a = self.eval(node.left)
            b = self.eval(node.right)
            if node.op == "+":
                return Jet(a.value + b.value, _add(a.grad, b.grad), _add(a.hess, b.hess))
            if node.op == "-":
                return Jet(
                    a.value - b.value,
                    _add(a.grad, _scale(-1.0, b.grad)),
                    _add(a.hess, _scale(-1.0, b.hess)),
                )
            if node.op == "*":
                return self._mul(a, b)
            if node.op == "/":
                return self._mul(a, self._unary(b, *_reciprocal(b.value)))
        raise TypeError(f"unknown node {node!r}")

    def _mul(self, a: Jet, b: Jet) -> Jet:
        value = a.value * b.value
        if self.order == 0:
            return Jet(value)
        grad = _add(_scale(a.value, b.grad), _scale(b.value, a.grad))
        hess = None
        if self.order >= 2:
            hess = _add(_scale(a.value, b.hess), _scale(b.value, a.hess))
            if a.grad is not None and b.grad is not None:
                hess = _add(hess, _sym_outer(a.grad, b.grad))
        return Jet(value, grad, hess)

    def _unary(self, a: Jet, f, df, d2f) -> Jet:
        """Chain rule for f(a) given f, f', f'' evaluated at a.value."""
        if self.order == 0 or a.grad is None:
            return Jet(f)
        grad = _scale(df, a.grad)
        hess = None
        if self.order >= 2:
            hess = _add(_scale(df, a.hess), _scale(d2f, _outer(a.grad, a.grad)))
        return Jet(f, grad, hess)

    def _call(self, func: str, a: Jet) -> Jet:
        v = np.asarray(a.value, dtype=float)
        if func == "exp":
            f = np.exp(v)
            return self._unary(a, f, f, f)
        if func == "log":
            bad = _first_bad(v <= 0)
            if bad is not None:
                raise ExpressionDomainError("log of non-positive value", bad)
            return self._unary(a, np.log(v), 1.0 / v, -1.0 / (v * v))
        if func == "sin":
            s, c = np.sin(v), np.cos(v)
            return self._unary(a, s, c, -s)
        if func == "cos":
            s, c = np.sin(v), np.cos(v)
            return self._unary(a, c, -s, -c)
        if func == "tanh":
            t = np.tanh(v)
            d = 1.0 - t * t
            return self._unary(a, t, d, -2.0 * t * d)
        if func == "sqrt":
            bad = _first_bad(v < 0 if self.order == 0 or a.grad is None else v <= 0)
            if bad is not None:
                raise ExpressionDomainError("sqrt of negative value (or zero, where derivatives are needed)", bad)
            r = np.sqrt(v)
            if self.order == 0 or a.grad is None:
                return Jet(r)
            return self._unary(a, r, 0.5 / r, -0.25 / (r * v))
        raise ExpressionError(f"unknown function {func!r}")

    def _pow(self, node: BinOp) -> Jet:
        base = self.eval(node.left)
        k = _integer_exponent(node.right)
        if k is not None:
            v = np.asarray(base.value, dtype=float)
            if k < 0:
                bad = _first_bad(v == 0)
                if bad is not None:
                    raise ExpressionDomainError("zero raised to a negative power", bad)
            if k == 0:
                return Jet(np.ones_like(v) if v.ndim else 1.0)
            f = v**k
            df = k * v ** (k - 1)
            d2f = k * (k - 1) * v ** (k - 2) if k != 1 else 0.0
            return self._unary(base, f, df, d2f)
        # non-integer exponent: f^g = exp(g * log f)
        expo = self.eval(node.right)
        v = np.asarray(base.value, dtype=float)
        bad = _first_bad(v <= 0)
        if bad is not None:
            raise ExpressionDomainError("non-positive base with non-integer exponent", bad)
        lg = self._unary(base, np.log(v), 1.0 / v, -1.0 / (v * v))
        prod = self._mul(expo, lg)
        f = np.exp(prod.value)
        return self._unary(prod, f, f, f)


def _reciprocal(v):
    v = np.asarray(v, dtype=float)
    bad = _first_bad(v == 0)
    if bad is not None:
        raise ExpressionDomainError("division by zero", bad)
    r = 1.0 / v
    return r, -r * r, 2.0 * r * r * r


_INT_EXP_CACHE: dict[int, tuple[Node, int | None]] = {}


def _integer_exponent(node: Node) -> int | None:
    hit = _INT_EXP_CACHE.get(id(node))
    if hit is not None and hit[0] is node:
        return hit[1]
    value = constant_value(node)
    k = None
    if value is not None and math.isfinite(value) and value == round(value) and abs(value) < 2**31:
        k = int(round(value))
    _INT_EXP_CACHE[id(node)] = (node, k)
    return k


def evaluate(expr: ScalarExpression | Node, points: np.ndarray, order: int = 2) -> Jet:
    """Evaluate the jet of ``expr`` at each row of ``points`` (shape (N, n))."""
    tree = expr.tree if isinstance(expr, ScalarExpression) else expr
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2:
        raise ValueError("points must have shape (N, n)")
    with np.errstate(all="ignore"):
        return _Evaluator(pts, order).eval(tree)


def evaluate_many(
    exprs: Sequence[ScalarExpression | Node], points: np.ndarray, order: int = 2
) -> list[Jet]:
    """Evaluate several expressions sharing one memo (common subtrees run once)."""
    pts = np.asarray(points, dtype=float)
    with np.errstate(all="ignore"):
        ev = _Evaluator(pts, order)
        return [ev.eval(e.tree if isinstance(e, ScalarExpression) else e) for e in exprs]


def dense(jet: Jet, n_pts: int, dim: int, order: int = 2) -> tuple[np.ndarray, ...]:
    """Expand a possibly sparse jet into full arrays."""
    value = np.broadcast_to(np.asarray(jet.value, dtype=float), (n_pts,)).copy()
    out = [value]
    if order >= 1:
        out.append(jet.grad if jet.grad is not None else np.zeros((n_pts, dim)))
    if order >= 2:
        out.append(jet.hess if jet.hess is not None else np.zeros((n_pts, dim, dim)))
    return tuple(out)


def jet2(expr: ScalarExpression, point: Iterable[float]) -> Jet2:
    x = np.asarray(list(point), dtype=float)
    if x.shape != (expr.arity,):
        raise ValueError(f"point has dimension {x.size}, expression arity is {expr.arity}")
    value, grad, hess = dense(evaluate(expr, x[None, :], order=2), 1, expr.arity)
    if not np.isfinite(value[0]):
        raise ExpressionDomainError("non-finite value", 0)
    return Jet2(float(value[0]), grad[0].copy(), hess[0].copy())
