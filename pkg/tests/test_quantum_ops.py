"""
Unit tests for the grid discretization of the quantum integrals.
"""
import math

import numpy as np
import pytest

from geoequiv.core.config import settings
from geoequiv.core.errors import ConfigurationError
from geoequiv.services import catalog
from geoequiv.services.quantum_ops import (
    GridFunction,
    adjoint_defect,
    build_grid,
    build_laplacian,
    build_quantum_I,
    commutator_norm,
    fitted_order,
    probe_functions,
    quantum_study,
)


class TestGrid:
    """Test grid construction."""

    def test_periodic_axes_for_flat_torus(self, flat_pair):
        """Test that full-period boxes give periodic axes."""
        grid = build_grid(flat_pair, (16, 16))
        assert grid.periodic == (True, True)
        assert grid.spacing(0) == pytest.approx(2 * math.pi / 16)
        assert grid.nodes(0)[0] == 0.0

    def test_sphere_grid_boundary_policy(self, beltrami_pair):
        """Test that theta is bounded and phi is periodic on the sphere box."""
        grid = build_grid(beltrami_pair, (12,))
        assert grid.shape == (12, 12)
        assert grid.periodic == (False, True)
        nodes = grid.nodes(0)
        assert nodes[0] > grid.lower[0]
        assert nodes[-1] < grid.upper[0]

    def test_grid_too_coarse(self, flat_pair):
        """Test the minimum resolution."""
        with pytest.raises(ConfigurationError):
            build_grid(flat_pair, (4, 4))

    def test_higher_dimensional_chart(self):
        """Test that only surfaces are discretized."""
        with pytest.raises(ConfigurationError):
            build_grid(catalog.beltrami_pair([1.0, 2.0, 3.0, 4.0]), (16, 16))

    def test_probe_functions(self, beltrami_pair):
        """Test that the test functions vanish towards bounded edges."""
        grid = build_grid(beltrami_pair, (16, 16))
        functions = probe_functions(grid)
        assert len(functions) == 8
        for f in functions:
            assert np.max(np.abs(f.values[[0, -1], :])) < 1e-3

    def test_grid_function_shape(self, flat_pair):
        """Test that values must match the grid shape."""
        grid = build_grid(flat_pair, (8, 8))
        with pytest.raises(ConfigurationError):
            GridFunction(grid, np.zeros((8, 9)))


class TestOperators:
    """Test the discretized operators."""

    def test_flat_laplacian_on_cosine(self, flat_pair):
        """Test the discrete eigenvalue of -Laplace on cos(x1)."""
        grid = build_grid(flat_pair, (32, 32))
        points = grid.node_points()
        f = GridFunction(grid, np.cos(points[..., 0]))
        result = build_laplacian(flat_pair.g, grid)(f)
        h = grid.spacing(0)
        factor = (2.0 / h * math.sin(h / 2.0)) ** 2
        np.testing.assert_allclose(result.values, factor * f.values, atol=1e-10)

    def test_last_integral_is_laplacian(self, beltrami_pair):
        """Test that the operator of I_{n-1} is the Laplace-Beltrami operator."""
        op = build_quantum_I(beltrami_pair, 1, (16, 16))
        laplacian = build_laplacian(beltrami_pair.g, op.grid)
        difference = abs(op.matrix - laplacian.matrix).max()
        assert difference <= 1e-8 * abs(laplacian.matrix).max()

    def test_operators_are_self_adjoint(self, beltrami_pair):
        """Test that the weighted adjoint defect is at rounding level."""
        op = build_quantum_I(beltrami_pair, 0, (16, 16))
        functions = probe_functions(op.grid)
        assert adjoint_defect(op, functions[0], functions[3], pair=beltrami_pair) < 1e-9

    def test_index_out_of_range(self, flat_pair):
        """Test that k outside 0..n-1 is rejected."""
        with pytest.raises(ConfigurationError):
            build_quantum_I(flat_pair, 2, (8, 8))

    def test_identical_flat_metrics_commute_exactly(self):
        """Test that I_0 = -I_1 for g = gbar = E gives a zero commutator."""
        pair = catalog.flat_pair(1.0, 2)
        ops = [build_quantum_I(pair, k, (16, 16)) for k in range(2)]
        assert commutator_norm(ops[0], ops[1], probe_functions(ops[0].grid)) == 0.0

    def test_commutator_needs_one_grid(self, flat_pair):
        """Test that operators on different grids are not compared."""
        first = build_quantum_I(flat_pair, 0, (8, 8))
        second = build_quantum_I(flat_pair, 1, (10, 10))
        with pytest.raises(ConfigurationError):
            commutator_norm(first, second, probe_functions(first.grid))


class TestConvergenceStudy:
    """Test the commutator convergence study."""

    def test_fitted_order(self):
        """Test the slope of norms halving twice per refinement."""
        assert fitted_order([1.0, 0.5, 0.25], [1.0, 0.25, 0.0625]) == pytest.approx(2.0)

    def test_fitted_order_at_zero_floor(self):
        """Test that exact zeros give no order."""
        assert fitted_order([1.0, 0.5], [0.0, 0.0]) is None

    def test_flat_pair_study_passes(self):
        """Test the exact-zero case of the study."""
        result = quantum_study(catalog.flat_pair(1.0, 2), grids=[16, 32])
        assert result.verdict == "PASS"
        assert result.studies[0].exact_zero
        assert set(result.adjoint_defects) == {0, 1}

    def test_single_resolution_rejected(self, flat_pair):
        """Test that a convergence study needs two resolutions."""
        with pytest.raises(ConfigurationError):
            quantum_study(flat_pair, grids=[16])

    @pytest.mark.slow
    def test_beltrami_commutator_converges_at_order(self, beltrami_pair):
        """Test the fitted order of every commutator over three resolutions."""
        result = quantum_study(beltrami_pair, grids=[32, 64, 128])
        for study in result.studies:
            assert not study.exact_zero
            assert study.order >= settings.QUANTUM_ORDER_MIN
        assert max(result.adjoint_defects.values()) <= settings.ADJOINT_TOL
        assert result.verdict == "PASS"

    def test_control_commutator_stalls(self, control_pair):
        """Test that the negative control keeps a commutator of order one on refinement."""
        result = quantum_study(control_pair, grids=[16, 32, 64])
        study = result.studies[0]
        assert study.norms[-1] > 1e-3
        assert study.order < settings.QUANTUM_ORDER_MIN
        assert result.verdict == "FAIL"
