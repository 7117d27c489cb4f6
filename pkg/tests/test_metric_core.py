"""
Unit tests for charts, metric fields and pullbacks.
"""
import math

import numpy as np
import pytest

from geoequiv.core.errors import (
    ConfigurationError,
    OutOfDomainError,
    PositivityError,
    RankDeficiencyError,
    SingularMatrixError,
)
from geoequiv.services import catalog
from geoequiv.services.metric_core import (
    Chart,
    EmbeddingMap,
    MetricField,
    eval_metric,
    induced_metric,
    inverse_and_det,
    metric_gradient,
    metric_partials,
    pullback_metric,
    sphere_chart,
    sphere_coordinates,
    sphere_embedding,
    sphere_point,
)


class TestChart:
    """Test chart domains."""

    def setup_method(self):
        """Set up a chart with one bounded and one periodic coordinate."""
        self.chart = Chart(names=("r", "phi"), lower=(0.0, 0.0), upper=(1.0, 2 * math.pi), periodic=(False, True))

    def test_inside_mask(self):
        """Test the open-interval mask on bounded coordinates only."""
        points = np.array([[0.5, 10.0], [0.0, 1.0], [1.2, 1.0]])
        np.testing.assert_array_equal(self.chart.inside(points), [True, False, False])

    def test_require_raises_outside(self):
        """Test that require reports the offending point."""
        with pytest.raises(OutOfDomainError) as exc_info:
            self.chart.require(np.array([2.0, 0.0]))
        assert exc_info.value.details["point"] == [2.0, 0.0]

    def test_wrap_periodic(self):
        """Test that periodic coordinates wrap into [lower, upper)."""
        wrapped = self.chart.wrap(np.array([0.5, 2 * math.pi + 1.0]))
        assert wrapped[0] == 0.5
        assert wrapped[1] == pytest.approx(1.0)

    def test_wrap_stays_below_upper_bound(self):
        """Test that a point just below the seam lands at lower rather than upper."""
        wrapped = self.chart.wrap(np.array([[0.5, -1e-17], [0.5, 2 * math.pi]]))
        np.testing.assert_array_equal(wrapped[:, 1], [0.0, 0.0])

    def test_unordered_bounds_rejected(self):
        """Test that lower >= upper is rejected."""
        with pytest.raises(ValueError):
            Chart(names=("x",), lower=(1.0,), upper=(0.0,), periodic=(False,))

    def test_periodic_needs_finite_bounds(self):
        """Test that periodic coordinates need finite bounds."""
        with pytest.raises(ValueError):
            Chart(names=("x",), lower=(0.0,), upper=(math.inf,), periodic=(True,))


class TestMetricField:
    """Test metric evaluation and validation."""

    def test_round_sphere_from_expressions(self):
        """Test diag(1, sin^2 theta) on the sphere chart."""
        chart = sphere_chart(2)
        g = MetricField.from_expressions(chart, [["1", "0"], ["0", "sin(theta)^2"]])
        m = eval_metric(g, np.array([math.pi / 2, 1.0]))
        np.testing.assert_allclose(m, np.eye(2))

    def test_batch_shape(self, plane_chart):
        """Test that batches of points give stacked matrices."""
        g = MetricField.from_expressions(plane_chart, [["1 + x1^2", "0"], ["0", "1"]])
        assert eval_metric(g, np.zeros((4, 3, 2))).shape == (4, 3, 2, 2)

    def test_wrong_entry_grid(self, plane_chart):
        """Test that a non n x n grid of entries is rejected."""
        with pytest.raises(ConfigurationError):
            MetricField.from_expressions(plane_chart, [["1", "0"]])

    def test_asymmetric_entries(self, plane_chart):
        """Test that asymmetric entries raise ConfigurationError on evaluation."""
        g = MetricField.from_expressions(plane_chart, [["1", "x1"], ["0", "1"]])
        with pytest.raises(ConfigurationError):
            eval_metric(g, np.array([0.5, 0.0]))

    def test_not_positive_definite(self, plane_chart):
        """Test that indefinite matrices report the smallest pivot."""
        g = MetricField.from_expressions(plane_chart, [["1", "0"], ["0", "-2"]])
        with pytest.raises(PositivityError) as exc_info:
            eval_metric(g, np.array([0.0, 0.0]))
        assert exc_info.value.details["smallest_pivot"] == pytest.approx(-2.0)

    def test_out_of_domain(self, plane_chart):
        """Test evaluation outside the chart."""
        g = MetricField.from_expressions(plane_chart, [["1", "0"], ["0", "1"]])
        with pytest.raises(OutOfDomainError):
            eval_metric(g, np.array([6.0, 0.0]))

    def test_nonpositive_fd_step(self, plane_chart):
        """Test that fd_step must be positive."""
        with pytest.raises(ConfigurationError):
            MetricField.from_expressions(plane_chart, [["1", "0"], ["0", "1"]], fd_step=0.0)

    def test_inverse_and_det(self, plane_chart):
        """Test inverse and determinant of a diagonal metric."""
        g = MetricField.from_expressions(plane_chart, [["2", "0"], ["0", "4"]])
        inv, det = inverse_and_det(g, np.array([0.0, 0.0]))
        np.testing.assert_allclose(inv, np.diag([0.5, 0.25]))
        assert det == pytest.approx(8.0)

    def test_partials(self, plane_chart):
        """Test the central difference of x1^2 against 2 x1."""
        g = MetricField.from_expressions(plane_chart, [["1 + x1^2", "0"], ["0", "1"]])
        d = metric_partials(g, np.array([1.5, 0.0]), 0)
        assert d[0, 0] == pytest.approx(3.0, rel=1e-6)
        assert d[1, 1] == pytest.approx(0.0, abs=1e-9)

    def test_partials_near_boundary(self, plane_chart):
        """Test that a stencil leaving the chart raises."""
        g = MetricField.from_expressions(plane_chart, [["1", "0"], ["0", "1"]], fd_step=0.1)
        with pytest.raises(OutOfDomainError):
            metric_partials(g, np.array([4.99, 0.0]), 0)

    def test_gradient_matches_partials(self, plane_chart):
        """Test that the gradient stacks every partial with the derivative index first."""
        g = MetricField.from_expressions(plane_chart, [["1 + x1^2", "x1*x2"], ["x1*x2", "2 + x2^2"]])
        x = np.array([0.7, -0.4])
        grad = metric_gradient(g, x)
        assert grad.shape == (2, 2, 2)
        for i in range(2):
            np.testing.assert_allclose(grad[i], metric_partials(g, x, i), atol=1e-12)

    def test_partials_converge_at_second_order(self, plane_chart):
        """Test that halving the step cuts the partial derivative error about four times."""
        entries = [["exp(x1)*sin(x2) + 2", "x1*x2"], ["x1*x2", "3 + x1^2"]]
        x = np.array([0.3, 0.7])
        exact = np.array([[math.exp(0.3) * math.sin(0.7), 0.7], [0.7, 0.6]])
        errors = []
        for step in (1e-2, 5e-3):
            g = MetricField.from_expressions(plane_chart, entries, fd_step=step)
            errors.append(np.max(np.abs(metric_partials(g, x, 0) - exact)))
        assert 3.8 <= errors[0] / errors[1] <= 4.2


class TestEmbeddings:
    """Test induced metrics and pullbacks."""

    def test_sphere_induced_metric(self):
        """Test that the unit sphere induces diag(1, sin^2 theta)."""
        g = induced_metric(sphere_embedding(2))
        theta = 1.1
        m = eval_metric(g, np.array([theta, 0.3]))
        np.testing.assert_allclose(m, np.diag([1.0, math.sin(theta) ** 2]), atol=1e-12)

    def test_paraboloid_induced_metric(self, plane_chart):
        """Test the graph of x1^2 + x2^2 with a finite-difference Jacobian."""
        e = EmbeddingMap(plane_chart, ["x1", "x2", "x1^2 + x2^2"])
        x = np.array([0.5, -1.0])
        m = eval_metric(induced_metric(e), x)
        expected = np.eye(2) + 4.0 * np.outer(x, x)
        np.testing.assert_allclose(m, expected, rtol=1e-7)

    def test_rank_deficient_embedding(self, plane_chart):
        """Test that a map with dependent columns is rejected."""
        e = EmbeddingMap(plane_chart, ["x1", "x1", "x1"])
        with pytest.raises(RankDeficiencyError):
            eval_metric(induced_metric(e), np.array([0.1, 0.2]))

    def test_pullback_of_linear_map(self, plane_chart):
        """Test the pullback of the Euclidean metric by (2 x1, x2)."""
        phi = EmbeddingMap(plane_chart, ["2*x1", "x2"])
        m = eval_metric(pullback_metric(phi), np.array([0.3, 0.3]))
        np.testing.assert_allclose(m, np.diag([4.0, 1.0]), rtol=1e-8)

    def test_pullback_singular(self, plane_chart):
        """Test that a map with vanishing Jacobian determinant is rejected."""
        phi = EmbeddingMap(plane_chart, ["x1 + x2", "x1 + x2"])
        with pytest.raises(SingularMatrixError):
            eval_metric(pullback_metric(phi), np.array([0.3, 0.3]))

    def test_pullback_dimension_mismatch(self, plane_chart):
        """Test that pullbacks need maps between equal dimensions."""
        phi = EmbeddingMap(plane_chart, ["x1", "x2", "x1"])
        with pytest.raises(ConfigurationError):
            pullback_metric(phi)

    def test_sphere_coordinates_invert_points(self):
        """Test that sphere_coordinates inverts sphere_point on S^3."""
        x = np.array([[0.4, 1.3, 5.0], [2.0, 0.7, 0.2]])
        u = sphere_point(x)
        np.testing.assert_allclose(np.linalg.norm(u, axis=-1), 1.0)
        np.testing.assert_allclose(sphere_coordinates(u), x, atol=1e-12)

    def test_beltrami_metric_is_the_pullback_of_the_round_metric(self):
        """Test gbar of the Beltrami pair against the round metric pulled back by l in sphere coordinates."""
        A = np.diag([1.0, 2.0, 3.0])
        gbar = catalog.beltrami_pair(A).gbar
        round_metric = induced_metric(sphere_embedding(2))

        def composed(x):
            w = sphere_point(x) @ A.T
            return sphere_coordinates(w / np.linalg.norm(w, axis=-1, keepdims=True))

        phi = EmbeddingMap(sphere_chart(2), composed, m=2, ambient_metric=round_metric)
        rng = np.random.default_rng(9)
        x = np.column_stack([rng.uniform(1.0, 2.1, 10), rng.uniform(0.5, 2.5, 10)])
        np.testing.assert_allclose(gbar(x), pullback_metric(phi)(x), rtol=1e-7, atol=1e-9)
