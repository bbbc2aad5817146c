"""Arithmetic expressions over named state variables.

Scenario files describe Hamiltonians, Lagrangians, force coefficients and
flux laws as plain strings such as ``"p^2/2 + q^2/2 + T0*S"``.  This module
parses them with a small Pratt parser into an immutable AST and evaluates
the AST either to a float or to a :class:`DualNumber` carrying the exact
first-order gradient with respect to a declared list of variables.

Precedence, from tightest to loosest::

    ^          right associative
    unary -
    * /        left associative
    + -        left associative

Function calls ``f(x)`` are available for the names in :data:`FUNCTIONS`.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence, Union

import numpy as np

from .errors import DomainError, ExprSyntaxError, UnknownVariable

__all__ = [
    "Const",
    "Var",
    "Unary",
    "Binary",
    "ExprAst",
    "DualNumber",
    "Expression",
    "FUNCTIONS",
    "parse",
    "to_source",
    "variables",
    "eval_value",
    "eval_with_grad",
    "summands",
]


# ---------------------------------------------------------------------------
# AST
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Unary:
    op: str  # "neg" or a name from FUNCTIONS
    operand: "ExprAst"


@dataclass(frozen=True)
class Binary:
    op: str  # one of + - * / ^
    left: "ExprAst"
    right: "ExprAst"


ExprAst = Union[Const, Var, Unary, Binary]

FUNCTIONS = ("exp", "log", "sin", "cos", "sqrt", "tanh", "sinh", "cosh")


def variables(ast: ExprAst) -> frozenset[str]:
    """Names referenced anywhere in ``ast``."""
    out: set[str] = set()
    stack = [ast]
    while stack:
        node = stack.pop()
        if isinstance(node, Var):
            out.add(node.name)
        elif isinstance(node, Unary):
            stack.append(node.operand)
        elif isinstance(node, Binary):
            stack.append(node.left)
            stack.append(node.right)
    return frozenset(out)


def summands(ast: ExprAst) -> list[ExprAst]:
    """Flatten the top-level chain of ``+`` nodes (``-`` is not split)."""
    if isinstance(ast, Binary) and ast.op == "+":
        return summands(ast.left) + summands(ast.right)
    return [ast]


# ---------------------------------------------------------------------------
# Lexer
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<number>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^(),])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Token:
    kind: str  # number, name, op, end
    text: str
    offset: int  # byte offset


def _tokenize(src: str) -> list[_Token]:
    tokens: list[_Token] = []
    pos = 0
    byte = 0
    while pos < len(src):
        m = _TOKEN_RE.match(src, pos)
        if m is None:
            raise ExprSyntaxError(f"unexpected character {src[pos]!r}", src, byte)
        text = m.group()
        kind = m.lastgroup
        if kind != "ws":
            tokens.append(_Token(kind, text, byte))
        byte += len(text.encode("utf-8"))
        pos = m.end()
    tokens.append(_Token("end", "", byte))
    return tokens


# ---------------------------------------------------------------------------
# Pratt parser
# ---------------------------------------------------------------------------

_INFIX_BP = {"+": 10, "-": 10, "*": 20, "/": 20, "^": 40}
_NEG_BP = 30
_PRIMARY_START = frozenset({"number", "name", "(", "-"})


class _Parser:
    def __init__(self, src: str, vocabulary: frozenset[str]):
        self.src = src
        self.vocabulary = vocabulary
        self.tokens = _tokenize(src)
        self.i = 0

    def peek(self) -> _Token:
        return self.tokens[self.i]

    def advance(self) -> _Token:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def fail(self, tok: _Token, expected: Iterable[str]) -> ExprSyntaxError:
        what = "end of input" if tok.kind == "end" else repr(tok.text)
        return ExprSyntaxError(f"unexpected {what}", self.src, tok.offset, frozenset(expected))

    def expect(self, text: str) -> _Token:
        tok = self.peek()
        if tok.kind != "op" or tok.text != text:
            raise self.fail(tok, {text})
        return self.advance()

    def parse(self) -> ExprAst:
        node = self.expression(0)
        tok = self.peek()
        if tok.kind != "end":
            raise self.fail(tok, set(_INFIX_BP) | {"end of input"})
        return node

    def expression(self, rbp: int) -> ExprAst:
        left = self.nud(self.advance())
        while True:
            tok = self.peek()
            if tok.kind != "op" or tok.text not in _INFIX_BP:
                if tok.kind in ("number", "name") or (tok.kind == "op" and tok.text == "("):
                    raise self.fail(tok, set(_INFIX_BP) | {")", "end of input"})
                return left
            lbp = _INFIX_BP[tok.text]
            if lbp <= rbp:
                return left
            self.advance()
            # ^ is right associative: parse its right side one notch looser
            right = self.expression(lbp - 1 if tok.text == "^" else lbp)
            left = Binary(tok.text, left, right)

    def nud(self, tok: _Token) -> ExprAst:
        if tok.kind == "number":
            value = float(tok.text)
            if not math.isfinite(value):
                raise ExprSyntaxError("numeric literal out of range", self.src, tok.offset)
            return Const(value)
        if tok.kind == "name":
            if tok.text in FUNCTIONS:
                self.expect("(")
                arg = self.expression(0)
                self.expect(")")
                return Unary(tok.text, arg)
            if tok.text not in self.vocabulary:
                raise UnknownVariable(tok.text, self.src)
            return Var(tok.text)
        if tok.kind == "op" and tok.text == "(":
            inner = self.expression(0)
            self.expect(")")
            return inner
        if tok.kind == "op" and tok.text == "-":
            literal = self.peek().kind == "number"
            operand = self.expression(_NEG_BP)
            # fold "-<number>" only, so "-(2)" stays a negation and printing round-trips
            if literal and isinstance(operand, Const):
                return Const(-operand.value)
            return Unary("neg", operand)
        raise self.fail(tok, _PRIMARY_START | {"function"})


def parse(src: str, vocabulary: Iterable[str]) -> ExprAst:
    """Parse ``src`` into an AST whose variables are drawn from ``vocabulary``.

    Raises
    ------
    ExprSyntaxError
        With the byte offset of the offending token and the expected set.
    UnknownVariable
        When an identifier is neither a function nor in ``vocabulary``.
    """
    vocab = frozenset(vocabulary)
    clash = vocab.intersection(FUNCTIONS)
    if clash:
        raise ValueError(f"vocabulary shadows function names: {sorted(clash)}")
    return _Parser(src, vocab).parse()


# ---------------------------------------------------------------------------
# Printer
# ---------------------------------------------------------------------------

_ATOM = 100


def _fmt_number(value: float) -> str:
    if value.is_integer() and abs(value) < 1e15:
        text = str(int(value))
        if value == 0.0 and math.copysign(1.0, value) < 0:
            text = "0"
    else:
        text = repr(value)
    return f"({text})" if text.startswith("-") else text


def _print(node: ExprAst) -> tuple[str, int]:
    if isinstance(node, Const):
        return _fmt_number(node.value), _ATOM
    if isinstance(node, Var):
        return node.name, _ATOM
    if isinstance(node, Unary):
        inner, _ = _print(node.operand)
        if node.op == "neg":
            s, p = _print(node.operand)
            if p < _NEG_BP or isinstance(node.operand, Const):
                s = f"({s})"
            return f"-{s}", _NEG_BP
        return f"{node.op}({inner})", _ATOM
    bp = _INFIX_BP[node.op]
    ls, lp = _print(node.left)
    rs, rp = _print(node.right)
    if node.op == "^":
        if lp <= bp:
            ls = f"({ls})"
        if rp < bp:
            rs = f"({rs})"
        return f"{ls}^{rs}", bp
    if lp < bp:
        ls = f"({ls})"
    if rp <= bp:
        rs = f"({rs})"
    return f"{ls} {node.op} {rs}", bp


def to_source(ast: ExprAst) -> str:
    """Render ``ast`` so that ``parse(to_source(ast)) == ast``."""
    return _print(ast)[0]


# ---------------------------------------------------------------------------
# Dual numbers
# ---------------------------------------------------------------------------


class DualNumber:
    """Value plus gradient over a fixed list of active variables.

    ``derivs`` is either a float array with one slot per active variable or
    ``None`` for an exact zero gradient, which keeps constant subtrees cheap.
    """

    __slots__ = ("value", "derivs")

    def __init__(self, value: float, derivs: np.ndarray | None = None):
        self.value = float(value)
        self.derivs = derivs

    @classmethod
    def variable(cls, value: float, index: int, size: int) -> "DualNumber":
        d = np.zeros(size)
        d[index] = 1.0
        return cls(value, d)

    def gradient(self, size: int) -> np.ndarray:
        return np.zeros(size) if self.derivs is None else np.array(self.derivs, dtype=float)

    def __repr__(self) -> str:
        return f"DualNumber({self.value!r}, {self.derivs!r})"

    @staticmethod
    def _lift(other) -> "DualNumber":
        return other if isinstance(other, DualNumber) else DualNumber(other)

    def __add__(self, other):
        return _dual_binary("+", self, self._lift(other), None)

    __radd__ = __add__

    def __sub__(self, other):
        return _dual_binary("-", self, self._lift(other), None)

    def __rsub__(self, other):
        return _dual_binary("-", self._lift(other), self, None)

    def __mul__(self, other):
        return _dual_binary("*", self, self._lift(other), None)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return _dual_binary("/", self, self._lift(other), None)

    def __rtruediv__(self, other):
        return _dual_binary("/", self._lift(other), self, None)

    def __pow__(self, other):
        return _dual_binary("^", self, self._lift(other), None)

    def __rpow__(self, other):
        return _dual_binary("^", self._lift(other), self, None)

    def __neg__(self):
        return DualNumber(-self.value, None if self.derivs is None else -self.derivs)


def _scaled(c: float, d: np.ndarray | None) -> np.ndarray | None:
    return None if d is None else c * d


def _plus(a: np.ndarray | None, b: np.ndarray | None) -> np.ndarray | None:
    if a is None:
        return b
    if b is None:
        return a
    return a + b


def _where(node) -> str:
    return to_source(node) if node is not None else "<dual arithmetic>"


def _checked(value: float, node) -> float:
    if not math.isfinite(value):
        raise DomainError("non-finite result", _where(node))
    return value


# value-level primitives shared by the float and dual evaluators


def _div_value(a: float, b: float, node) -> float:
    if b == 0.0:
        raise DomainError("division by zero", _where(node))
    return _checked(a / b, node)


def _pow_value(a: float, b: float, node) -> float:
    if a == 0.0 and b < 0.0:
        raise DomainError("zero raised to a negative power", _where(node))
    if a < 0.0 and not float(b).is_integer():
        raise DomainError("negative base with non-integer exponent", _where(node))
    try:
        return _checked(math.pow(a, b), node)
    except OverflowError:
        raise DomainError("overflow", _where(node)) from None


def _log_value(a: float, node) -> float:
    if a <= 0.0:
        raise DomainError("logarithm of a non-positive number", _where(node))
    return math.log(a)


def _sqrt_value(a: float, node) -> float:
    if a < 0.0:
        raise DomainError("square root of a negative number", _where(node))
    return math.sqrt(a)


def _guard(fn: Callable[[float], float]) -> Callable[[float, object], float]:
    def wrapped(a: float, node) -> float:
        try:
            return _checked(fn(a), node)
        except OverflowError:
            raise DomainError("overflow", _where(node)) from None

    return wrapped


_UNARY_VALUE: dict[str, Callable[[float, object], float]] = {
    "neg": lambda a, node: -a,
    "exp": _guard(math.exp),
    "log": _log_value,
    "sin": _guard(math.sin),
    "cos": _guard(math.cos),
    "sqrt": _sqrt_value,
    "tanh": _guard(math.tanh),
    "sinh": _guard(math.sinh),
    "cosh": _guard(math.cosh),
}


def _sqrt_slope(a: float, v: float, node) -> float:
    if v == 0.0:
        raise DomainError("derivative of sqrt at zero", _where(node))
    return 0.5 / v


# derivative of f at a, given v = f(a)
_UNARY_SLOPE: dict[str, Callable[[float, float, object], float]] = {
    "neg": lambda a, v, node: -1.0,
    "exp": lambda a, v, node: v,
    "log": lambda a, v, node: 1.0 / a,
    "sin": lambda a, v, node: math.cos(a),
    "cos": lambda a, v, node: -math.sin(a),
    "sqrt": _sqrt_slope,
    "tanh": lambda a, v, node: 1.0 - v * v,
    "sinh": lambda a, v, node: math.cosh(a),
    "cosh": lambda a, v, node: math.sinh(a),
}


def _binary_value(op: str, a: float, b: float, node) -> float:
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return _checked(a * b, node)
    if op == "/":
        return _div_value(a, b, node)
    return _pow_value(a, b, node)


def _dual_unary(op: str, x: DualNumber, node) -> DualNumber:
    v = _UNARY_VALUE[op](x.value, node)
    if x.derivs is None:
        return DualNumber(v)
    return DualNumber(v, _UNARY_SLOPE[op](x.value, v, node) * x.derivs)


def _dual_binary(op: str, x: DualNumber, y: DualNumber, node) -> DualNumber:
    a, b = x.value, y.value
    da, db = x.derivs, y.derivs
    if op == "+":
        return DualNumber(a + b, _plus(da, db))
    if op == "-":
        return DualNumber(a - b, _plus(da, _scaled(-1.0, db)))
    if op == "*":
        return DualNumber(_checked(a * b, node), _plus(_scaled(b, da), _scaled(a, db)))
    if op == "/":
        v = _div_value(a, b, node)
        return DualNumber(v, _plus(_scaled(1.0 / b, da), _scaled(-v / b, db)))
    v = _pow_value(a, b, node)
    d = None
    if da is not None and b != 0.0:
        if a == 0.0 and b < 1.0:
            raise DomainError("derivative of power undefined at zero base", _where(node))
        d = _scaled(b * _pow_value(a, b - 1.0, node), da)
    if db is not None:
        if a > 0.0:
            d = _plus(d, _scaled(v * math.log(a), db))
        elif not (a == 0.0 and b > 0.0):
            raise DomainError("derivative of power with respect to exponent needs a positive base", _where(node))
    return DualNumber(v, d)


# ---------------------------------------------------------------------------
# Compilation to closures
# ---------------------------------------------------------------------------


def _compile_value(node: ExprAst) -> Callable[[Mapping[str, float]], float]:
    if isinstance(node, Const):
        c = node.value
        return lambda env: c
    if isinstance(node, Var):
        name = node.name
        return lambda env: env[name]
    if isinstance(node, Unary):
        f = _UNARY_VALUE[node.op]
        inner = _compile_value(node.operand)
        return lambda env: f(inner(env), node)
    op = node.op
    left = _compile_value(node.left)
    right = _compile_value(node.right)
    if op == "+":
        return lambda env: left(env) + right(env)
    if op == "-":
        return lambda env: left(env) - right(env)
    return lambda env: _binary_value(op, left(env), right(env), node)


def _compile_dual(node: ExprAst) -> Callable[[Mapping[str, DualNumber]], DualNumber]:
    if isinstance(node, Const):
        c = DualNumber(node.value)
        return lambda env: c
    if isinstance(node, Var):
        name = node.name
        return lambda env: env[name]
    if isinstance(node, Unary):
        op = node.op
        inner = _compile_dual(node.operand)
        return lambda env: _dual_unary(op, inner(env), node)
    op = node.op
    left = _compile_dual(node.left)
    right = _compile_dual(node.right)
    return lambda env: _dual_binary(op, left(env), right(env), node)


class Expression:
    """A parsed, compiled expression.  Immutable and safe to share across threads."""

    def __init__(self, src: str, vocabulary: Iterable[str]):
        self.src = src
        self.ast = parse(src, vocabulary)
        self.names = variables(self.ast)
        self._value = _compile_value(self.ast)
        self._dual = _compile_dual(self.ast)

    @classmethod
    def from_ast(cls, ast: ExprAst) -> "Expression":
        self = cls.__new__(cls)
        self.src = to_source(ast)
        self.ast = ast
        self.names = variables(ast)
        self._value = _compile_value(ast)
        self._dual = _compile_dual(ast)
        return self

    def __repr__(self) -> str:
        return f"Expression({self.src!r})"

    @property
    def is_constant(self) -> bool:
        return not self.names

    def value(self, env: Mapping[str, float]) -> float:
        return float(self._value(env))

    def dual(self, env: Mapping[str, DualNumber]) -> DualNumber:
        return self._dual(env)


def _missing(ast: ExprAst, point: Mapping[str, float]) -> None:
    absent = sorted(variables(ast) - set(point))
    if absent:
        raise UnknownVariable(absent[0], to_source(ast))


def eval_value(ast: ExprAst, point: Mapping[str, float]) -> float:
    _missing(ast, point)
    return float(_compile_value(ast)(point))


def eval_with_grad(
    ast: ExprAst | Expression,
    point: Mapping[str, float],
    active: Sequence[str] | None = None,
) -> tuple[float, dict[str, float]]:
    """Value and exact gradient of ``ast`` at ``point``.

    Seeds are allocated for every name in ``active`` (default: every key of
    ``point``), so names absent from the expression get a zero entry.
    Names in ``point`` but not in ``active`` are treated as constants.
    """
    expr = ast if isinstance(ast, Expression) else Expression.from_ast(ast)
    _missing(expr.ast, point)
    active = list(point) if active is None else list(active)
    size = len(active)
    env: dict[str, DualNumber] = {k: DualNumber(v) for k, v in point.items()}
    for i, name in enumerate(active):
        env[name] = DualNumber.variable(point[name], i, size)
    out = expr.dual(env)
    grad = out.gradient(size)
    return out.value, {name: float(grad[i]) for i, name in enumerate(active)}
