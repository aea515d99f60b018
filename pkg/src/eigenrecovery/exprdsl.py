"""Small expression language for user-supplied coefficient functions.

Grammar (precedence low to high)::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | power
    power  := atom ('^' unary)?          # right associative
    atom   := NUMBER | 'x' | 'pi' | 'e' | NAME '(' args ')' | '(' expr ')'

Parsing is done with a Pratt loop; every node is an immutable dataclass, so
structural equality is plain ``==``.  Evaluation accepts scalars or numpy
arrays and raises :class:`DomainFault` instead of returning non-finite values.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np

__all__ = [
    "ExprError",
    "ParseError",
    "DomainFault",
    "Expr",
    "Num",
    "Var",
    "Const",
    "Neg",
    "BinOp",
    "Call",
    "parse",
    "evaluate",
    "to_source",
    "substitute",
]

FUNCTIONS = {"exp": 1, "log": 1, "sqrt": 1, "abs": 1, "pow": 2, "min": 2, "max": 2}
CONSTANTS = {"pi": math.pi, "e": math.e}

# binding powers
_BP_ADD = 10
_BP_MUL = 20
_BP_NEG = 25
_BP_POW = 30


class ExprError(ValueError):
    pass


class ParseError(ExprError):
    def __init__(self, message: str, offset: int, expected: str | None = None):
        self.offset = offset
        self.expected = expected
        text = f"{message} at offset {offset}"
        if expected:
            text += f", expected {expected}"
        super().__init__(text)


class DomainFault(ExprError):
    def __init__(self, subexpr: "Expr", x: float, reason: str):
        self.subexpr = subexpr
        self.x = x
        self.reason = reason
        super().__init__(f"{reason} in '{to_source(subexpr)}' at x={x!r}")


# --------------------------------------------------------------------------- #
# AST
# --------------------------------------------------------------------------- #


class Expr:
    """Base class for expression nodes.  Instances are callable."""

    def __call__(self, x):
        return evaluate(self, x)

    def jet(self, x):
        """Value, first and second derivative with respect to ``x``."""
        x = np.asarray(x, dtype=float)
        with np.errstate(all="ignore"):
            v, d1, d2 = _jet(self, x, x)
        return v, d1, d2

    def __str__(self) -> str:
        return to_source(self)


@dataclass(frozen=True)
class Num(Expr):
    value: float


@dataclass(frozen=True)
class Var(Expr):
    pass


@dataclass(frozen=True)
class Const(Expr):
    name: str


@dataclass(frozen=True)
class Neg(Expr):
    operand: Expr


@dataclass(frozen=True)
class BinOp(Expr):
    op: str
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Call(Expr):
    name: str
    args: Tuple[Expr, ...]


# --------------------------------------------------------------------------- #
# Tokenizer
# --------------------------------------------------------------------------- #

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_]\w*)|(?P<op>[-+*/^(),]))"
)


@dataclass(frozen=True)
class _Token:
    kind: str  # 'num', 'name', 'op', 'end'
    text: str
    offset: int


def _tokenize(src: str):
    pos = 0
    n = len(src)
    while True:
        while pos < n and src[pos].isspace():
            pos += 1
        if pos >= n:
            yield _Token("end", "", pos)
            return
        m = _TOKEN_RE.match(src, pos)
        if m is None or m.end() == pos:
            raise ParseError(f"unexpected character {src[pos]!r}", pos)
        kind = m.lastgroup
        yield _Token(kind, m.group(kind), m.start(kind))
        pos = m.end()


class _Parser:
    def __init__(self, src: str):
        self.src = src
        self.tokens = list(_tokenize(src))
        self.i = 0

    @property
    def tok(self) -> _Token:
        return self.tokens[self.i]

    def advance(self) -> _Token:
        t = self.tokens[self.i]
        self.i += 1
        return t

    def expect(self, text: str) -> _Token:
        t = self.tok
        if t.kind != "op" or t.text != text:
            raise ParseError(f"unexpected {_describe(t)}", t.offset, f"'{text}'")
        return self.advance()

    def expression(self, rbp: int = 0) -> Expr:
        left = self.nud(self.advance())
        while rbp < _lbp(self.tok):
            left = self.led(self.advance(), left)
        return left

    def nud(self, t: _Token) -> Expr:
        if t.kind == "num":
            return Num(float(t.text))
        if t.kind == "name":
            if self.tok.kind == "op" and self.tok.text == "(":
                return self.call(t)
            if t.text == "x":
                return Var()
            if t.text in CONSTANTS:
                return Const(t.text)
            if t.text in FUNCTIONS:
                raise ParseError(f"function '{t.text}' used without arguments", t.offset, "'('")
            raise ParseError(f"unknown identifier '{t.text}'", t.offset)
        if t.kind == "op" and t.text == "-":
            return Neg(self.expression(_BP_NEG))
        if t.kind == "op" and t.text == "(":
            inner = self.expression(0)
            self.expect(")")
            return inner
        raise ParseError(f"unexpected {_describe(t)}", t.offset, "operand")

    def led(self, t: _Token, left: Expr) -> Expr:
        if t.text == "^":
            # right associative; allow a unary minus in the exponent
            return BinOp("^", left, self.expression(_BP_POW - 1))
        return BinOp(t.text, left, self.expression(_lbp(t)))

    def call(self, name_tok: _Token) -> Expr:
        name = name_tok.text
        if name not in FUNCTIONS:
            raise ParseError(f"unknown function '{name}'", name_tok.offset)
        self.expect("(")
        args = [self.expression(0)]
        while self.tok.kind == "op" and self.tok.text == ",":
            self.advance()
            args.append(self.expression(0))
        self.expect(")")
        if len(args) != FUNCTIONS[name]:
            raise ParseError(
                f"function '{name}' takes {FUNCTIONS[name]} argument(s), got {len(args)}",
                name_tok.offset,
            )
        return Call(name, tuple(args))


def _lbp(t: _Token) -> int:
    if t.kind != "op":
        return 0
    return {"+": _BP_ADD, "-": _BP_ADD, "*": _BP_MUL, "/": _BP_MUL, "^": _BP_POW}.get(t.text, 0)


def _describe(t: _Token) -> str:
    if t.kind == "end":
        return "end of input"
    return f"'{t.text}'"


def parse(src: str) -> Expr:
    """Parse ``src`` into an expression tree."""
    if not isinstance(src, str) or not src.strip():
        raise ParseError("empty expression", 0, "operand")
    p = _Parser(src)
    tree = p.expression(0)
    if p.tok.kind != "end":
        raise ParseError(f"unexpected {_describe(p.tok)}", p.tok.offset, "operator or end of input")
    return tree


def to_source(expr: Expr) -> str:
    """Fully parenthesised source text; ``parse(to_source(e)) == e``."""
    if isinstance(expr, Num):
        return repr(float(expr.value))
    if isinstance(expr, Var):
        return "x"
    if isinstance(expr, Const):
        return expr.name
    if isinstance(expr, Neg):
        return f"(-{to_source(expr.operand)})"
    if isinstance(expr, BinOp):
        return f"({to_source(expr.left)} {expr.op} {to_source(expr.right)})"
    if isinstance(expr, Call):
        return f"{expr.name}({', '.join(to_source(a) for a in expr.args)})"
    raise TypeError(f"not an expression node: {expr!r}")


# --------------------------------------------------------------------------- #
# Evaluation
# --------------------------------------------------------------------------- #

Number = Union[float, np.ndarray]


def _fault(node: Expr, x: np.ndarray, bad: np.ndarray, reason: str):
    bad = np.broadcast_to(bad, x.shape)
    idx = np.flatnonzero(bad)
    xv = float(x.ravel()[idx[0]]) if idx.size else float("nan")
    raise DomainFault(node, xv, reason)


def _check(node: Expr, x: np.ndarray, value: np.ndarray) -> np.ndarray:
    bad = ~np.isfinite(value)
    if np.any(bad):
        _fault(node, x, bad, "non-finite result")
    return value


def _is_integer(a: np.ndarray) -> np.ndarray:
    return np.isfinite(a) & (np.floor(a) == a)


def _power(node: Expr, x: np.ndarray, base: np.ndarray, expo: np.ndarray) -> np.ndarray:
    bad = (base < 0) & ~_is_integer(expo)
    if np.any(bad):
        _fault(node, x, bad, "negative base with non-integer exponent")
    bad = (base == 0) & (expo < 0)
    if np.any(bad):
        _fault(node, x, bad, "zero raised to a negative power")
    return np.power(base, expo)


def _eval(node: Expr, x: np.ndarray) -> np.ndarray:
    if isinstance(node, Num):
        return np.full_like(x, node.value)
    if isinstance(node, Var):
        return x
    if isinstance(node, Const):
        return np.full_like(x, CONSTANTS[node.name])
    if isinstance(node, Neg):
        return -_eval(node.operand, x)
    if isinstance(node, BinOp):
        a = _eval(node.left, x)
        b = _eval(node.right, x)
        if node.op == "+":
            out = a + b
        elif node.op == "-":
            out = a - b
        elif node.op == "*":
            out = a * b
        elif node.op == "/":
            if np.any(b == 0):
                _fault(node, x, b == 0, "division by zero")
            out = a / b
        else:
            out = _power(node, x, a, b)
        return _check(node, x, out)
    if isinstance(node, Call):
        args = [_eval(a, x) for a in node.args]
        name = node.name
        if name == "exp":
            out = np.exp(args[0])
        elif name == "log":
            if np.any(args[0] <= 0):
                _fault(node, x, args[0] <= 0, "log of non-positive value")
            out = np.log(args[0])
        elif name == "sqrt":
            if np.any(args[0] < 0):
                _fault(node, x, args[0] < 0, "sqrt of negative value")
            out = np.sqrt(args[0])
        elif name == "abs":
            out = np.abs(args[0])
        elif name == "pow":
            out = _power(node, x, args[0], args[1])
        elif name == "min":
            out = np.minimum(args[0], args[1])
        else:
            out = np.maximum(args[0], args[1])
        return _check(node, x, out)
    raise TypeError(f"not an expression node: {node!r}")


def evaluate(expr: Expr, x) -> Number:
    """Evaluate ``expr`` at ``x`` (scalar or array).

    Raises DomainFault on log/sqrt/division/power domain errors and on any
    non-finite intermediate.
    """
    scalar = np.ndim(x) == 0
    xa = np.atleast_1d(np.asarray(x, dtype=float))
    with np.errstate(all="ignore"):
        out = _check(expr, xa, _eval(expr, xa))
    return float(out[0]) if scalar else out


def substitute(expr: Expr, replacement: Expr) -> Expr:
    """Return ``expr`` with every occurrence of ``x`` replaced (composition)."""
    if isinstance(expr, Var):
        return replacement
    if isinstance(expr, Neg):
        return Neg(substitute(expr.operand, replacement))
    if isinstance(expr, BinOp):
        return BinOp(expr.op, substitute(expr.left, replacement), substitute(expr.right, replacement))
    if isinstance(expr, Call):
        return Call(expr.name, tuple(substitute(a, replacement) for a in expr.args))
    return expr


def _jet(node: Expr, x: np.ndarray, xs: np.ndarray):
    """Second-order forward-mode derivatives (value, d/dx, d2/dx2)."""
    zero = np.zeros_like(x)
    if isinstance(node, Num):
        return np.full_like(x, node.value), zero, zero
    if isinstance(node, Var):
        return x, np.ones_like(x), zero
    if isinstance(node, Const):
        return np.full_like(x, CONSTANTS[node.name]), zero, zero
    if isinstance(node, Neg):
        v, d1, d2 = _jet(node.operand, x, xs)
        return -v, -d1, -d2
    if isinstance(node, BinOp):
        u = _jet(node.left, x, xs)
        w = _jet(node.right, x, xs)
        if node.op == "+":
            out = tuple(a + b for a, b in zip(u, w))
        elif node.op == "-":
            out = tuple(a - b for a, b in zip(u, w))
        elif node.op == "*":
            out = _jet_mul(u, w)
        elif node.op == "/":
            if np.any(w[0] == 0):
                _fault(node, xs, w[0] == 0, "division by zero")
            out = _jet_div(u, w)
        else:
            out = _jet_pow(node, xs, u, w)
        _check(node, xs, out[0])
        return out
    if isinstance(node, Call):
        args = [_jet(a, x, xs) for a in node.args]
        name = node.name
        u, du, ddu = args[0]
        if name == "exp":
            e = np.exp(u)
            out = (e, e * du, e * (ddu + du * du))
        elif name == "log":
            if np.any(u <= 0):
                _fault(node, xs, u <= 0, "log of non-positive value")
            out = (np.log(u), du / u, (ddu * u - du * du) / (u * u))
        elif name == "sqrt":
            if np.any(u < 0):
                _fault(node, xs, u < 0, "sqrt of negative value")
            s = np.sqrt(u)
            s1 = du / (2 * s)
            out = (s, s1, (ddu - 2 * s1 * s1) / (2 * s))
        elif name == "abs":
            sg = np.sign(u)
            out = (np.abs(u), sg * du, sg * ddu)
        elif name == "pow":
            out = _jet_pow(node, xs, args[0], args[1])
        else:
            pick = (u <= args[1][0]) if name == "min" else (u >= args[1][0])
            out = tuple(np.where(pick, a, b) for a, b in zip(args[0], args[1]))
        _check(node, xs, out[0])
        return out
    raise TypeError(f"not an expression node: {node!r}")


def _jet_mul(u, w):
    return (
        u[0] * w[0],
        u[1] * w[0] + u[0] * w[1],
        u[2] * w[0] + 2 * u[1] * w[1] + u[0] * w[2],
    )


def _jet_div(u, w):
    q = u[0] / w[0]
    q1 = (u[1] - q * w[1]) / w[0]
    q2 = (u[2] - 2 * q1 * w[1] - q * w[2]) / w[0]
    return q, q1, q2


def _jet_pow(node, xs, u, w):
    if np.all(w[1] == 0) and np.all(w[2] == 0):
        c = w[0]
        val = _power(node, xs, u[0], c)
        with np.errstate(all="ignore"):
            p1 = np.where(c == 0, 0.0, c * np.power(u[0], c - 1))
            p2 = np.where((c == 0) | (c == 1), 0.0, c * (c - 1) * np.power(u[0], c - 2))
        return val, p1 * u[1], p2 * u[1] ** 2 + p1 * u[2]
    if np.any(u[0] <= 0):
        _fault(node, xs, u[0] <= 0, "non-positive base with variable exponent")
    lu = (np.log(u[0]), u[1] / u[0], (u[2] * u[0] - u[1] ** 2) / u[0] ** 2)
    g = _jet_mul(w, lu)
    e = np.exp(g[0])
    return e, e * g[1], e * (g[2] + g[1] ** 2)
