"""Scalar expressions of coordinates used inside scenario files.

Grammar (highest binding first)::

    atom   := number | x<k> | name '(' expr ')' | '(' expr ')'
    power  := atom ('^' atom)*            left-associative
    unary  := '-' unary | power
    term   := unary (('*' | '/') unary)*
    expr   := term (('+' | '-') term)*

Variables are 1-based (``x1`` .. ``x16``). Functions: sin, cos, exp, sqrt,
log, abs. Two evaluation paths exist: :func:`evaluate` walks the tree with
``math`` on a single point, :meth:`Expression.compile` builds a numpy closure
for batches of points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

MAX_VARIABLES = 16
FUNCTIONS = ("sin", "cos", "exp", "sqrt", "log", "abs")


class ExprError(ValueError):
    """Base class for expression errors."""


class ExprSyntaxError(ExprError):
    def __init__(self, message: str, offset: int, source: str = ""):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset
        self.source = source


class DomainError(ExprError, ArithmeticError):
    def __init__(self, message: str, subexpression: str):
        super().__init__(f"{message} in '{subexpression}'")
        self.subexpression = subexpression


# --- AST -------------------------------------------------------------------


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    index: int  # 1-based


@dataclass(frozen=True)
class Neg:
    arg: "Node"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Call:
    name: str
    arg: "Node"


Node = Union[Num, Var, Neg, BinOp, Call]


def serialize(node: Node) -> str:
    """Fully parenthesised source text that parses back to ``node``."""
    if isinstance(node, Num):
        return repr(float(node.value))
    if isinstance(node, Var):
        return f"x{node.index}"
    if isinstance(node, Neg):
        return f"(-{serialize(node.arg)})"
    if isinstance(node, Call):
        return f"{node.name}({serialize(node.arg)})"
    return f"({serialize(node.left)} {node.op} {serialize(node.right)})"


def max_index(node: Node) -> int:
    if isinstance(node, Num):
        return 0
    if isinstance(node, Var):
        return node.index
    if isinstance(node, (Neg, Call)):
        return max_index(node.arg)
    return max(max_index(node.left), max_index(node.right))


# --- tokenizer / parser ----------------------------------------------------


def _tokenize(source: str):
    tokens = []
    i, n = 0, len(source)
    while i < n:
        c = source[i]
        if c.isspace():
            i += 1
            continue
        if c.isdigit() or (c == "." and i + 1 < n and source[i + 1].isdigit()):
            j = i
            while j < n and (source[j].isdigit() or source[j] == "."):
                j += 1
            if j < n and source[j] in "eE":
                k = j + 1
                if k < n and source[k] in "+-":
                    k += 1
                if k < n and source[k].isdigit():
                    while k < n and source[k].isdigit():
                        k += 1
                    j = k
            text = source[i:j]
            try:
                value = float(text)
            except ValueError:
                raise ExprSyntaxError(f"malformed number '{text}'", i, source) from None
            tokens.append(("num", value, i))
            i = j
            continue
        if c.isalpha() or c == "_":
            j = i
            while j < n and (source[j].isalnum() or source[j] == "_"):
                j += 1
            tokens.append(("name", source[i:j], i))
            i = j
            continue
        if c in "+-*/^()":
            tokens.append(("op", c, i))
            i += 1
            continue
        raise ExprSyntaxError(f"unexpected character '{c}'", i, source)
    tokens.append(("end", None, n))
    return tokens


class _Parser:
    def __init__(self, source: str, max_var: int):
        self.source = source
        self.max_var = max_var
        self.tokens = _tokenize(source)
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos]

    def take(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def error(self, message, tok=None):
        tok = tok or self.peek()
        raise ExprSyntaxError(message, tok[2], self.source)

    def parse(self) -> Node:
        node = self.expr()
        if self.peek()[0] != "end":
            self.error(f"unexpected token '{self.peek()[1]}'")
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.peek()[0] == "op" and self.peek()[1] in "+-":
            op = self.take()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.peek()[0] == "op" and self.peek()[1] in "*/":
            op = self.take()[1]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Node:
        if self.peek()[:2] == ("op", "-"):
            self.take()
            return Neg(self.unary())
        return self.power()

    def power(self) -> Node:
        node = self.atom()
        while self.peek()[0] == "op" and self.peek()[1] == "^":
            self.take()
            node = BinOp("^", node, self.atom())
        return node

    def atom(self) -> Node:
        kind, value, offset = self.peek()
        if kind == "num":
            self.take()
            return Num(value)
        if kind == "op" and value == "(":
            self.take()
            node = self.expr()
            if self.peek()[:2] != ("op", ")"):
                self.error("expected ')'")
            self.take()
            return node
        if kind == "name":
            self.take()
            if value in FUNCTIONS:
                if self.peek()[:2] != ("op", "("):
                    self.error(f"expected '(' after {value}")
                self.take()
                arg = self.expr()
                if self.peek()[:2] != ("op", ")"):
                    self.error("expected ')'")
                self.take()
                return Call(value, arg)
            if value[0] == "x" and value[1:].isdigit() and value[1] != "0":
                index = int(value[1:])
                limit = min(self.max_var, MAX_VARIABLES)
                if index > limit:
                    raise ExprSyntaxError(
                        f"variable {value} exceeds declared dimension {limit}",
                        offset,
                        self.source,
                    )
                return Var(index)
            raise ExprSyntaxError(f"unknown identifier '{value}'", offset, self.source)
        if kind == "end":
            self.error("unexpected end of input")
        self.error(f"unexpected token '{value}'")


# --- scalar evaluation -----------------------------------------------------


def _is_integral(b: float) -> bool:
    return math.isfinite(b) and b == math.floor(b)


def _pow(a: float, b: float, node: Node) -> float:
    if _is_integral(b):
        if a == 0.0 and b < 0:
            raise DomainError("division by zero", serialize(node))
        return a ** int(b)
    if a > 0.0:
        return math.exp(b * math.log(a))
    raise DomainError("non-integer power of non-positive base", serialize(node))


def evaluate(node: Node, coords) -> float:
    """Evaluate an AST at one point with IEEE double arithmetic."""
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        return float(coords[node.index - 1])
    if isinstance(node, Neg):
        return -evaluate(node.arg, coords)
    if isinstance(node, Call):
        a = evaluate(node.arg, coords)
        name = node.name
        if name == "sqrt":
            if a < 0.0:
                raise DomainError("sqrt of negative", serialize(node))
            return math.sqrt(a)
        if name == "log":
            if a <= 0.0:
                raise DomainError("log of non-positive", serialize(node))
            return math.log(a)
        if name == "abs":
            return abs(a)
        return getattr(math, name)(a)
    a = evaluate(node.left, coords)
    b = evaluate(node.right, coords)
    op = node.op
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    if op == "/":
        if b == 0.0:
            raise DomainError("division by zero", serialize(node))
        return a / b
    return _pow(a, b, node)


# --- vectorised compilation ------------------------------------------------

_NP_FUNCS = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "abs": np.abs,
}


def _compile(node: Node) -> Callable[[np.ndarray], np.ndarray]:
    if isinstance(node, Num):
        value = float(node.value)
        return lambda x: value
    if isinstance(node, Var):
        k = node.index - 1
        return lambda x: x[..., k]
    if isinstance(node, Neg):
        f = _compile(node.arg)
        return lambda x: -f(x)
    if isinstance(node, Call):
        f = _compile(node.arg)
        text = serialize(node)
        if node.name == "sqrt":

            def sqrt_(x):
                a = f(x)
                if np.any(np.asarray(a) < 0.0):
                    raise DomainError("sqrt of negative", text)
                return np.sqrt(a)

            return sqrt_
        if node.name == "log":

            def log_(x):
                a = f(x)
                if np.any(np.asarray(a) <= 0.0):
                    raise DomainError("log of non-positive", text)
                return np.log(a)

            return log_
        g = _NP_FUNCS[node.name]
        return lambda x: g(f(x))
    fl, fr = _compile(node.left), _compile(node.right)
    op = node.op
    if op == "+":
        return lambda x: fl(x) + fr(x)
    if op == "-":
        return lambda x: fl(x) - fr(x)
    if op == "*":
        return lambda x: fl(x) * fr(x)
    text = serialize(node)
    if op == "/":

        def div(x):
            b = fr(x)
            if np.any(np.asarray(b) == 0.0):
                raise DomainError("division by zero", text)
            return fl(x) / b

        return div
    if isinstance(node.right, Num) and _is_integral(node.right.value):
        k = int(node.right.value)
        if k == 2:
            return lambda x: _sq(fl(x))
        if k >= 0:
            return lambda x: np.power(fl(x), k)

    def power(x):
        a = np.asarray(fl(x), dtype=float)
        b = np.asarray(fr(x), dtype=float)
        a, b = np.broadcast_arrays(a, b)
        integral = np.isfinite(b) & (b == np.floor(b))
        if np.any(integral & (a == 0.0) & (b < 0)):
            raise DomainError("division by zero", text)
        if np.any(~integral & (a <= 0.0)):
            raise DomainError("non-integer power of non-positive base", text)
        out = np.empty(a.shape)
        out[integral] = np.power(a[integral], b[integral])
        pos = ~integral
        out[pos] = np.exp(b[pos] * np.log(a[pos]))
        return out if out.ndim else float(out)

    return power


def _sq(a):
    return a * a


@dataclass(frozen=True)
class Expression:
    source: str
    ast: Node
    max_var: int

    @property
    def is_constant(self) -> bool:
        return max_index(self.ast) == 0

    def __call__(self, coords) -> float:
        return evaluate(self.ast, coords)

    def compile(self) -> Callable[[np.ndarray], np.ndarray]:
        """Vectorised evaluator: array of shape (..., d) -> array of shape (...)."""
        fn = _compile(self.ast)
        if self.is_constant:
            value = float(fn(None))
            return lambda x: np.full(np.shape(x)[:-1], value)
        return lambda x: np.broadcast_to(
            np.asarray(fn(np.asarray(x, dtype=float)), dtype=float), np.shape(x)[:-1]
        )

    def serialize(self) -> str:
        return serialize(self.ast)


def parse(source: str, max_var: int = MAX_VARIABLES) -> Expression:
    """Parse ``source`` into an :class:`Expression`.

    Raises :class:`ExprSyntaxError` (with ``offset``) on malformed input,
    unknown identifiers and variables beyond ``max_var``.
    """
    if not isinstance(source, str) or not source.strip():
        raise ExprSyntaxError("empty expression", 0, source or "")
    ast = _Parser(source, max_var).parse()
    return Expression(source, ast, max_var)


def eval_expr(e: Expression, coords) -> float:
    if len(coords) < max_index(e.ast):
        raise ExprError(
            f"need {max_index(e.ast)} coordinates, got {len(coords)}"
        )
    return evaluate(e.ast, coords)


def gradient(e: Expression, coords, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient ``(e(x + h e_i) - e(x - h e_i)) / 2h``."""
    if not h > 0:
        raise ValueError("step must be positive")
    x = np.asarray(coords, dtype=float)
    out = np.zeros(len(x))
    for i in range(len(x)):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        out[i] = (eval_expr(e, xp) - eval_expr(e, xm)) / (2 * h)
    return out
