"""
Unit tests for the expression language.
Tests parsing, precedence, vectorized evaluation and error reporting.
"""
import math

import numpy as np
import pytest

from geoequiv.core.errors import (
    EmptyExpressionError,
    EvaluationDomainError,
    ExpressionSyntaxError,
    UnknownIdentifierError,
)
from geoequiv.services.expr import evaluate, parse


class TestParse:
    """Test parse precedence and associativity."""

    def test_arithmetic_precedence(self):
        """Test that multiplication binds tighter than addition."""
        assert evaluate(parse("1 + 2*3"), []) == 7.0
        assert evaluate(parse("(1 + 2)*3"), []) == 9.0

    def test_unary_minus_binds_looser_than_power(self):
        """Test that -x^2 parses as -(x^2)."""
        e = parse("-x^2", ["x"])
        assert evaluate(e, [3.0]) == -9.0

    def test_power_is_right_associative(self):
        """Test that 2^3^2 is 2^9."""
        assert evaluate(parse("2^3^2"), []) == 512.0

    def test_functions_and_constants(self):
        """Test built-in functions and the constant pi."""
        e = parse("sin(pi/2) + cos(0) + sqrt(4) + exp(0) + log(1) + abs(-2) + tan(0)")
        assert evaluate(e, []) == pytest.approx(7.0)

    def test_scientific_notation(self):
        """Test numbers with exponents."""
        assert evaluate(parse("1.5e2 + .5"), []) == 150.5

    def test_coordinate_names_shadow_constants(self):
        """Test that a declared coordinate named like a constant is a variable."""
        e = parse("pi * 2", ["pi"])
        assert evaluate(e, [1.0]) == 2.0

    def test_serialize_reparses_to_same_values(self):
        """Test that serialized text parses back to an equivalent expression."""
        e = parse("1 + x1*x2 - sin(x1)^2", ["x1", "x2"])
        again = parse(e.serialize(), ["x1", "x2"])
        point = [0.3, -1.7]
        assert evaluate(again, point) == evaluate(e, point)


class TestParseErrors:
    """Test syntax error reporting."""

    def test_unknown_identifier(self):
        """Test that undeclared names are rejected with name and offset."""
        with pytest.raises(UnknownIdentifierError) as exc_info:
            parse("x + y", ["x"])
        assert exc_info.value.name == "y"
        assert exc_info.value.position == 4

    def test_unknown_function(self):
        """Test that calls of unknown functions are rejected."""
        with pytest.raises(UnknownIdentifierError) as exc_info:
            parse("f(x)", ["x"])
        assert exc_info.value.name == "f"

    def test_dangling_operator(self):
        """Test that a trailing operator reports the end offset."""
        with pytest.raises(ExpressionSyntaxError) as exc_info:
            parse("1 +")
        assert exc_info.value.position == 3

    def test_unbalanced_parenthesis(self):
        """Test that a missing closing parenthesis is reported."""
        with pytest.raises(ExpressionSyntaxError):
            parse("(1 + 2")

    def test_unexpected_character(self):
        """Test that illegal characters are reported at their offset."""
        with pytest.raises(ExpressionSyntaxError) as exc_info:
            parse("2 $ 3")
        assert exc_info.value.position == 2
        assert "offset 2" in exc_info.value.message

    def test_function_without_argument(self):
        """Test that a bare function name is a syntax error."""
        with pytest.raises(ExpressionSyntaxError):
            parse("sin x", ["x"])

    @pytest.mark.parametrize("source", ["", "   "])
    def test_empty_expression(self, source):
        """Test that blank input raises EmptyExpressionError."""
        with pytest.raises(EmptyExpressionError):
            parse(source)


class TestEvaluate:
    """Test evaluation semantics."""

    def test_vectorized_batch(self):
        """Test that an array of points evaluates to an array."""
        e = parse("x*y", ["x", "y"])
        result = evaluate(e, np.array([[1.0, 2.0], [3.0, 4.0]]))
        np.testing.assert_array_equal(result, [2.0, 12.0])

    def test_constant_broadcasts_over_batch(self):
        """Test that constant expressions broadcast to the batch shape."""
        e = parse("2", ["x", "y"])
        result = evaluate(e, np.zeros((3, 4, 2)))
        assert result.shape == (3, 4)
        assert np.all(result == 2.0)

    def test_mapping_point(self):
        """Test evaluation at a name mapping."""
        e = parse("theta + 2*phi", ["theta", "phi"])
        assert evaluate(e, {"theta": 1.0, "phi": 0.5}) == 2.0

    def test_division_by_zero(self):
        """Test that division by zero reports the subexpression."""
        with pytest.raises(EvaluationDomainError) as exc_info:
            evaluate(parse("1/x", ["x"]), [0.0])
        assert "x" in exc_info.value.subexpression

    def test_sqrt_of_negative(self):
        """Test that sqrt outside its domain raises."""
        with pytest.raises(EvaluationDomainError):
            evaluate(parse("sqrt(x)", ["x"]), [-1.0])

    def test_log_of_zero(self):
        """Test that log outside its domain raises."""
        with pytest.raises(EvaluationDomainError):
            evaluate(parse("log(x)", ["x"]), [0.0])

    def test_fractional_power_of_negative(self):
        """Test that a negative base with fractional exponent raises."""
        with pytest.raises(EvaluationDomainError):
            evaluate(parse("x^0.5", ["x"]), [-4.0])

    def test_integer_power_of_negative(self):
        """Test that integer exponents of negative bases are allowed."""
        assert evaluate(parse("x^3", ["x"]), [-2.0]) == -8.0

    def test_overflow_is_reported(self):
        """Test that non-finite results raise."""
        with pytest.raises(EvaluationDomainError):
            evaluate(parse("exp(x)", ["x"]), [1000.0])

    def test_ieee_double_result(self):
        """Test that evaluation matches math in double precision."""
        e = parse("sin(x)^2 + cos(x)^2", ["x"])
        assert evaluate(e, [0.7]) == pytest.approx(math.sin(0.7) ** 2 + math.cos(0.7) ** 2, abs=0)

    def test_overflowing_literal_is_reported(self):
        """Test that a literal beyond double range raises instead of evaluating to inf."""
        with pytest.raises(EvaluationDomainError):
            evaluate(parse("1e400"), [])


def _random_source(rng, depth):
    """Random expression text over x and y whose value stays finite on [-1, 1]^2."""
    if depth == 0 or rng.random() < 0.2:
        kind = rng.integers(3)
        if kind == 0:
            return str(rng.choice(["x", "y"]))
        if kind == 1:
            return f"{rng.uniform(0.0, 3.0):.4f}"
        return "pi"
    kind = rng.integers(5)
    left = _random_source(rng, depth - 1)
    if kind == 0:
        return f"{left} {rng.choice(['+', '-', '*'])} {_random_source(rng, depth - 1)}"
    if kind == 1:
        return f"({left}) {rng.choice(['+', '-', '*'])} ({_random_source(rng, depth - 1)})"
    if kind == 2:
        return f"-{left}"
    if kind == 3:
        return f"{rng.choice(['sin', 'cos', 'abs'])}({left})"
    return f"({left})^{rng.integers(0, 4)}"


class TestSerializeRoundTrip:
    """Test that serialized expressions parse back to the same tree."""

    def setup_method(self):
        """Set up a seeded generator and evaluation points."""
        self.rng = np.random.default_rng(7)
        self.points = self.rng.uniform(-1.0, 1.0, size=(25, 2))

    def test_random_expressions(self):
        """Test the round trip on seeded random expression trees."""
        for _ in range(200):
            source = _random_source(self.rng, 4)
            e = parse(source, ["x", "y"])
            text = e.serialize()
            again = parse(text, ["x", "y"])
            assert again.root == e.root, source
            assert again.serialize() == text
            np.testing.assert_array_equal(evaluate(again, self.points), evaluate(e, self.points))
