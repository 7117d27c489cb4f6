"""
Expression language for metric entries.

Grammar (precedence from loosest to tightest)::

    expr    := expr ('+' | '-') expr
             | expr ('*' | '/') expr
             | '-' expr                  # binds looser than '^': -x^2 == -(x^2)
             | expr '^' expr             # right-associative: 2^3^2 == 2^9
             | NUMBER | IDENT | IDENT '(' expr ')' | '(' expr ')'

Identifiers are the declared coordinate names, the constant ``pi`` and the
functions sin, cos, tan, sqrt, exp, log, abs. Parsing is Pratt-style: every
token has a left binding power and prefix/infix handlers.

Evaluation is vectorized with numpy: a coordinate vector gives a float, an
array of points with shape (..., n) gives an array of shape (...).
"""
import math
import re
from dataclasses import dataclass
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from geoequiv.core.errors import (
    EmptyExpressionError,
    EvaluationDomainError,
    ExpressionSyntaxError,
    UnknownIdentifierError,
)

Number = Union[float, np.ndarray]

FUNCTIONS: Dict[str, Callable[[Number], Number]] = {
    "sin": np.sin,
    "cos": np.cos,
    "tan": np.tan,
    "sqrt": np.sqrt,
    "exp": np.exp,
    "log": np.log,
    "abs": np.abs,
}

CONSTANTS: Dict[str, float] = {"pi": math.pi}

# Binding powers
_ADDITIVE = 10
_MULTIPLICATIVE = 20
_UNARY = 25
_POWER = 30


# Tree nodes

@dataclass(frozen=True)
class Const:
    value: float
    name: Optional[str] = None

    def serialize(self) -> str:
        return self.name if self.name else repr(float(self.value))

    def eval(self, env: Mapping[str, Number]) -> Number:
        return _finite(np.float64(self.value), self)


@dataclass(frozen=True)
class Var:
    name: str

    def serialize(self) -> str:
        return self.name

    def eval(self, env: Mapping[str, Number]) -> Number:
        return env[self.name]


@dataclass(frozen=True)
class Unary:
    op: str
    operand: "Node"

    def serialize(self) -> str:
        return f"({self.op}{self.operand.serialize()})"

    def eval(self, env: Mapping[str, Number]) -> Number:
        return np.negative(self.operand.eval(env))


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Node"
    right: "Node"

    def serialize(self) -> str:
        return f"({self.left.serialize()} {self.op} {self.right.serialize()})"

    def eval(self, env: Mapping[str, Number]) -> Number:
        a = self.left.eval(env)
        b = self.right.eval(env)
        with np.errstate(all="ignore"):
            if self.op == "+":
                result = np.add(a, b)
            elif self.op == "-":
                result = np.subtract(a, b)
            elif self.op == "*":
                result = np.multiply(a, b)
            elif self.op == "/":
                if np.any(np.asarray(b) == 0.0):
                    raise EvaluationDomainError("division by zero", self.serialize())
                result = np.divide(a, b)
            else:
                base = np.asarray(a, dtype=float)
                exponent = np.asarray(b, dtype=float)
                fractional = exponent != np.round(exponent)
                if np.any((base < 0.0) & fractional):
                    raise EvaluationDomainError("negative base with fractional exponent", self.serialize())
                if np.any((base == 0.0) & (exponent < 0.0)):
                    raise EvaluationDomainError("zero raised to a negative power", self.serialize())
                result = np.power(a, b)
        return _finite(result, self)


@dataclass(frozen=True)
class Call:
    func: str
    arg: "Node"

    def serialize(self) -> str:
        return f"{self.func}({self.arg.serialize()})"

    def eval(self, env: Mapping[str, Number]) -> Number:
        value = self.arg.eval(env)
        if self.func == "sqrt" and np.any(np.asarray(value) < 0.0):
            raise EvaluationDomainError("sqrt of negative value", self.serialize())
        if self.func == "log" and np.any(np.asarray(value) <= 0.0):
            raise EvaluationDomainError("log of non-positive value", self.serialize())
        with np.errstate(all="ignore"):
            result = FUNCTIONS[self.func](value)
        return _finite(result, self)


Node = Union[Const, Var, Unary, Binary, Call]


def _finite(result: Number, node: Node) -> Number:
    if not np.all(np.isfinite(result)):
        raise EvaluationDomainError("non-finite result", node.serialize())
    return result


@dataclass(frozen=True)
class Expression:
    """Parsed expression bound to an ordered list of coordinate names."""

    root: Node
    variables: Tuple[str, ...]

    def serialize(self) -> str:
        return self.root.serialize()

    def evaluate(self, point: Union[Sequence[float], np.ndarray, Mapping[str, Number]]) -> Number:
        """Evaluate at a coordinate vector, an array of points (..., n) or a name mapping."""
        return evaluate(self, point)

    def __str__(self) -> str:
        return self.serialize()


# Tokenizer

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<number>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op>[-+*/^(),]))"
)


@dataclass(frozen=True)
class _Token:
    kind: str  # "number" | "ident" | "op" | "end"
    text: str
    position: int


def _tokenize(source: str) -> List[_Token]:
    tokens: List[_Token] = []
    position = 0
    while position < len(source):
        if source[position:].strip() == "":
            break
        match = _TOKEN_RE.match(source, position)
        if match is None or match.end() == position:
            offset = position + (len(source[position:]) - len(source[position:].lstrip()))
            raise ExpressionSyntaxError(f"unexpected character '{source[offset]}'", offset, source)
        kind = match.lastgroup
        tokens.append(_Token(kind, match.group(kind), match.start(kind)))
        position = match.end()
    tokens.append(_Token("end", "", len(source)))
    return tokens


class _Parser:
    """Pratt parser over a token list."""

    def __init__(self, source: str, allowed_vars: Sequence[str]):
        self.source = source
        self.allowed = set(allowed_vars)
        self.tokens = _tokenize(source)
        self.index = 0

    @property
    def token(self) -> _Token:
        return self.tokens[self.index]

    def advance(self) -> _Token:
        token = self.tokens[self.index]
        if token.kind != "end":
            self.index += 1
        return token

    def expect(self, text: str) -> None:
        token = self.advance()
        if token.kind != "op" or token.text != text:
            found = token.text or "end of input"
            raise ExpressionSyntaxError(f"expected '{text}' but found '{found}'", token.position, self.source)

    def parse(self) -> Node:
        if self.token.kind == "end":
            raise EmptyExpressionError("empty expression")
        node = self.expression(0)
        if self.token.kind != "end":
            raise ExpressionSyntaxError(f"unexpected '{self.token.text}'", self.token.position, self.source)
        return node

    def expression(self, rbp: int) -> Node:
        left = self.nud(self.advance())
        while rbp < self._lbp(self.token):
            left = self.led(self.advance(), left)
        return left

    @staticmethod
    def _lbp(token: _Token) -> int:
        if token.kind != "op":
            return 0
        return {"+": _ADDITIVE, "-": _ADDITIVE, "*": _MULTIPLICATIVE, "/": _MULTIPLICATIVE, "^": _POWER}.get(
            token.text, 0
        )

    def nud(self, token: _Token) -> Node:
        if token.kind == "number":
            return Const(float(token.text))
        if token.kind == "ident":
            return self._identifier(token)
        if token.kind == "op" and token.text == "-":
            return Unary("-", self.expression(_UNARY))
        if token.kind == "op" and token.text == "(":
            inner = self.expression(0)
            self.expect(")")
            return inner
        if token.kind == "end":
            raise ExpressionSyntaxError("unexpected end of input", token.position, self.source)
        raise ExpressionSyntaxError(f"unexpected '{token.text}'", token.position, self.source)

    def led(self, token: _Token, left: Node) -> Node:
        if token.text == "^":
            # right-associative: the right operand may contain another '^'
            return Binary("^", left, self.expression(_POWER - 1))
        return Binary(token.text, left, self.expression(self._lbp(token)))

    def _identifier(self, token: _Token) -> Node:
        name = token.text
        followed_by_paren = self.token.kind == "op" and self.token.text == "("
        if name in FUNCTIONS:
            if not followed_by_paren:
                raise ExpressionSyntaxError(f"function '{name}' requires an argument", self.token.position, self.source)
            self.advance()
            arg = self.expression(0)
            self.expect(")")
            return Call(name, arg)
        if followed_by_paren:
            raise UnknownIdentifierError(name, token.position)
        if name in self.allowed:
            return Var(name)
        if name in CONSTANTS:
            return Const(CONSTANTS[name], name)
        raise UnknownIdentifierError(name, token.position)


def parse(source: str, allowed_vars: Sequence[str] = ()) -> Expression:
    """
    Parse expression text.

    Args:
        source: Expression text
        allowed_vars: Ordered coordinate names the expression may reference

    Returns:
        Expression: Immutable expression tree

    Raises:
        EmptyExpressionError: No tokens in source
        ExpressionSyntaxError: Malformed input, with the offending offset
        UnknownIdentifierError: Identifier not declared, with its name
    """
    return Expression(_Parser(source, allowed_vars).parse(), tuple(allowed_vars))


def evaluate(e: Expression, point: Union[Sequence[float], np.ndarray, Mapping[str, Number]]) -> Number:
    """
    Evaluate an expression in IEEE double precision.

    Args:
        e: Parsed expression
        point: Coordinate vector, array of points with trailing axis n, or name mapping

    Returns:
        float for a single point, ndarray for a batch

    Raises:
        EvaluationDomainError: Division by zero, sqrt/log outside domain, non-finite result
    """
    if isinstance(point, Mapping):
        env = dict(point)
        scalar = all(np.ndim(v) == 0 for v in env.values())
        shape: Tuple[int, ...] = ()
    else:
        values = np.asarray(point, dtype=float)
        if values.shape[-1:] != (len(e.variables),) and not (values.size == 0 and not e.variables):
            raise ValueError(f"expected {len(e.variables)} coordinates, got shape {values.shape}")
        env = {name: values[..., i] for i, name in enumerate(e.variables)}
        scalar = values.ndim <= 1
        shape = values.shape[:-1]
    result = e.root.eval(env)
    if scalar:
        return float(result)
    return np.broadcast_to(np.asarray(result, dtype=float), shape).copy() if shape else np.asarray(result)
