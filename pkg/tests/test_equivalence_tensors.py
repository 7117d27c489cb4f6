"""
Unit tests for G, the characteristic polynomial, the S_k family and the B-transform.
"""
import numpy as np
import pytest

from geoequiv.core.errors import ConfigurationError
from geoequiv.services.equivalence_tensors import (
    MetricPair,
    OperatorAtPoint,
    build_B,
    build_G,
    build_S,
    cayley_hamilton_residual,
    char_poly,
    distinct_eigenvalue_count,
    eigenvalue_spread,
    generalized_eigenvalues,
    s_operators,
    sample_points,
    sinjukov_transform,
)
from geoequiv.services.metric_core import Chart, MetricField


def _operator(matrix):
    matrix = np.asarray(matrix, dtype=float)
    return OperatorAtPoint(matrix, np.zeros(matrix.shape[-1]))


class TestCharPoly:
    """Test the Faddeev-LeVerrier recurrence."""

    def test_two_by_two(self):
        """Test det(G - mu E) = mu^2 - 5 mu + 6 for diag(2, 3)."""
        np.testing.assert_allclose(char_poly(_operator(np.diag([2.0, 3.0]))).coeffs, [1.0, -5.0, 6.0])

    def test_odd_dimension_sign(self):
        """Test that the leading coefficient is (-1)^n."""
        coeffs = char_poly(_operator(np.diag([1.0, 2.0, 3.0]))).coeffs
        np.testing.assert_allclose(coeffs, [-1.0, 6.0, -11.0, 6.0])

    def test_roots_are_eigenvalues(self):
        """Test that the roots match the eigenvalues of a non-diagonal matrix."""
        matrix = np.array([[2.0, 1.0, 0.0], [1.0, 3.0, 1.0], [0.0, 1.0, 4.0]])
        roots = np.sort(char_poly(_operator(matrix)).roots().real)
        np.testing.assert_allclose(roots, np.linalg.eigvalsh(matrix), rtol=1e-10)

    def test_batched_coefficients(self):
        """Test that a stack of operators gives stacked coefficients."""
        stack = np.stack([np.diag([2.0, 3.0]), np.eye(2)])
        coeffs = OperatorAtPoint(stack, np.zeros((2, 2)))
        np.testing.assert_allclose(char_poly(coeffs).coeffs, [[1.0, -5.0, 6.0], [1.0, -2.0, 1.0]])

    def test_cayley_hamilton(self, rng):
        """Test that G annihilates its own characteristic polynomial."""
        matrix = rng.standard_normal((4, 4))
        assert cayley_hamilton_residual(_operator(matrix)) < 1e-10


class TestSOperators:
    """Test the S_k family."""

    def test_identical_metrics_on_surface(self):
        """Test S_0 = E and S_1 = -E when gbar = g in dimension two."""
        g = np.array([[2.0, 0.5], [0.5, 1.0]])
        s = s_operators(g, g)
        np.testing.assert_allclose(s[0], np.eye(2), atol=1e-14)
        np.testing.assert_allclose(s[1], -np.eye(2), atol=1e-14)

    def test_last_operator_is_minus_identity(self, rng):
        """Test S_{n-1} = -E for a random pair of SPD matrices."""
        a = rng.standard_normal((3, 3))
        b = rng.standard_normal((3, 3))
        g = a @ a.T + 3 * np.eye(3)
        gbar = b @ b.T + 3 * np.eye(3)
        np.testing.assert_allclose(s_operators(g, gbar, [2])[0], -np.eye(3), atol=1e-10)

    def test_index_out_of_range(self):
        """Test that k outside 0..n-1 is rejected."""
        with pytest.raises(ConfigurationError):
            s_operators(np.eye(2), np.eye(2), [2])

    def test_build_S_at_point(self, constant_pair):
        """Test S_0 of g = E, gbar = diag(2, 3): (1/6)^{2/3} diag(2, 3)."""
        s0 = build_S(constant_pair, np.array([0.1, 0.2]), 0)
        np.testing.assert_allclose(s0.matrix, (1 / 6) ** (2 / 3) * np.diag([2.0, 3.0]))


class TestEigenvalues:
    """Test eigenvalue clustering."""

    def test_distinct_counts(self):
        """Test distinct counts for separated, equal and partly equal spectra."""
        assert distinct_eigenvalue_count(_operator(np.diag([1.0, 2.0, 3.0]))) == 3
        assert distinct_eigenvalue_count(_operator(np.diag([2.0, 2.0, 2.0]))) == 1
        assert distinct_eigenvalue_count(_operator(np.diag([1.0, 1.0, 3.0]))) == 2

    def test_explicit_gap_tol(self):
        """Test that a wide gap_tol merges close eigenvalues."""
        assert distinct_eigenvalue_count(_operator(np.diag([1.0, 1.01])), gap_tol=0.1) == 1

    def test_nonpositive_gap_tol(self):
        """Test that gap_tol must be positive."""
        with pytest.raises(ConfigurationError):
            distinct_eigenvalue_count(_operator(np.eye(2)), gap_tol=0.0)

    def test_generalized_eigenvalues(self):
        """Test gbar v = lambda g v for a diagonal pair."""
        values = generalized_eigenvalues(np.diag([1.0, 2.0]), np.diag([3.0, 2.0]))
        np.testing.assert_allclose(values, [1.0, 3.0])

    def test_G_from_pair(self, constant_pair):
        """Test G = g^{-1} gbar and its distinct count at a point."""
        G = build_G(constant_pair, np.array([0.0, 0.0]))
        np.testing.assert_allclose(G.matrix, np.diag([2.0, 3.0]))
        assert distinct_eigenvalue_count(G) == 2

    def test_spread_vanishes_when_proportional(self, flat_pair):
        """Test that the relative spread is zero for proportional metrics."""
        spread = eigenvalue_spread(flat_pair, np.array([[0.1, 0.2], [0.3, -0.4]]))
        np.testing.assert_allclose(spread, 0.0, atol=1e-14)


class TestBTransform:
    """Test the B operator and the transformed pair."""

    def test_B_is_self_adjoint(self, beltrami_pair):
        """Test that g B and gbar B are symmetric."""
        x = sample_points(beltrami_pair, 5, np.random.default_rng(1))
        B = build_B(beltrami_pair, x)
        for m in (B.g @ B.matrix, B.gbar @ B.matrix):
            np.testing.assert_allclose(m, np.swapaxes(m, -1, -2), atol=1e-10)

    @pytest.mark.parametrize("power", [0, 1.5])
    def test_invalid_power(self, constant_pair, power):
        """Test that the power must be a nonzero integer."""
        with pytest.raises(ConfigurationError):
            sinjukov_transform(constant_pair, power)

    def test_constant_pair_transform(self, constant_pair):
        """Test g B for g = E, gbar = diag(2, 3)."""
        transformed = sinjukov_transform(constant_pair, 1)
        b = 6 ** (1 / 3) * np.diag([0.5, 1 / 3])
        np.testing.assert_allclose(transformed.g.matrix(np.array([0.0, 0.0])), b)
        np.testing.assert_allclose(transformed.gbar.matrix(np.array([0.0, 0.0])), np.diag([2.0, 3.0]) @ b)
        assert transformed.params["power"] == 1

    def test_round_trip(self, beltrami_pair):
        """Test that the transform by -power undoes the transform by power."""
        back = sinjukov_transform(sinjukov_transform(beltrami_pair, 2), -2)
        x = sample_points(beltrami_pair, 10, np.random.default_rng(3))
        np.testing.assert_allclose(back.g(x), beltrami_pair.g(x), rtol=1e-9, atol=1e-12)
        np.testing.assert_allclose(back.gbar(x), beltrami_pair.gbar(x), rtol=1e-9, atol=1e-12)


class TestMetricPair:
    """Test pair construction."""

    def test_chart_mismatch(self, plane_chart):
        """Test that both metrics must share one chart."""
        other = Chart(names=("y1", "y2"), lower=(-1.0, -1.0), upper=(1.0, 1.0), periodic=(False, False))
        g = MetricField.from_expressions(plane_chart, [["1", "0"], ["0", "1"]])
        gbar = MetricField.from_expressions(other, [["1", "0"], ["0", "1"]])
        with pytest.raises(ConfigurationError):
            MetricPair(g=g, gbar=gbar)

    def test_box_dimension_mismatch(self, plane_chart):
        """Test that a sampling box must match the chart dimension."""
        g = MetricField.from_expressions(plane_chart, [["1", "0"], ["0", "1"]])
        with pytest.raises(ConfigurationError):
            MetricPair(g=g, gbar=g, sample_box=((0.0, 1.0),))

    def test_sample_points_in_box(self, constant_pair, rng):
        """Test that samples stay inside the sampling box."""
        x = sample_points(constant_pair, 100, rng)
        assert x.shape == (100, 2)
        assert np.all(np.abs(x) <= 1.0)
