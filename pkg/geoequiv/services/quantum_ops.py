"""
Grid discretization of the operators phi -> (1/sqrt|g|) d_i ( C^{ij} d_j phi ) on
two-dimensional charts, with C = S_k sqrt|g| g^{-1} (the quantum integrals) or
C = -sqrt|g| g^{-1} (the Laplace-Beltrami operator with its leading minus sign).

The discretization is in flux form: gradients on cell edges (and cell
corners for the mixed term), coefficients sampled there, and the divergence
taken as the negative transpose of the gradient. The stiffness matrix K is
therefore exactly symmetric and the operator (1/sqrt|g|) K is exactly
self-adjoint for the sqrt|g|-weighted grid quadrature.

Axes that cover a full period of a periodic coordinate are periodic; all
other axes carry zero ghost values just outside the box.
"""
import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from geoequiv.core.config import settings
from geoequiv.core.errors import ConfigurationError
from geoequiv.core.logging import get_logger
from geoequiv.services.equivalence_tensors import MetricPair, s_operators
from geoequiv.services.metric_core import Chart, MetricField

logger = get_logger(__name__)

MIN_RESOLUTION = 8
CoefficientFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class Grid2D:
    """Regular grid over a box of a two-dimensional chart."""

    chart: Chart
    lower: Tuple[float, float]
    upper: Tuple[float, float]
    shape: Tuple[int, int]
    periodic: Tuple[bool, bool]

    def __post_init__(self) -> None:
        if self.chart.n != 2:
            raise ConfigurationError("operator grids need a two-dimensional chart", {"n": self.chart.n})
        if min(self.shape) < MIN_RESOLUTION:
            raise ConfigurationError(
                f"grid too coarse: at least {MIN_RESOLUTION} nodes per axis", {"shape": list(self.shape)}
            )

    @property
    def size(self) -> int:
        return self.shape[0] * self.shape[1]

    def spacing(self, axis: int) -> float:
        count = self.shape[axis] if self.periodic[axis] else self.shape[axis] + 1
        return (self.upper[axis] - self.lower[axis]) / count

    def nodes(self, axis: int) -> np.ndarray:
        offset = 0 if self.periodic[axis] else 1
        return self.lower[axis] + (np.arange(self.shape[axis]) + offset) * self.spacing(axis)

    def edges(self, axis: int) -> np.ndarray:
        """Midpoints between neighbouring nodes (and ghosts on zero-boundary axes)."""
        count = self.shape[axis] if self.periodic[axis] else self.shape[axis] + 1
        return self.lower[axis] + (np.arange(count) + 0.5) * self.spacing(axis)

    def mesh(self, first: np.ndarray, second: np.ndarray) -> np.ndarray:
        return np.stack(np.meshgrid(first, second, indexing="ij"), axis=-1)

    def node_points(self) -> np.ndarray:
        return self.mesh(self.nodes(0), self.nodes(1))

    def difference(self, axis: int) -> sp.csr_matrix:
        """Forward differences from nodes to edges along one axis."""
        n = self.shape[axis]
        h = self.spacing(axis)
        if self.periodic[axis]:
            rows = np.concatenate([np.arange(n), np.arange(n)])
            cols = np.concatenate([np.arange(n), (np.arange(n) + 1) % n])
            data = np.concatenate([-np.ones(n), np.ones(n)]) / h
            return sp.csr_matrix((data, (rows, cols)), shape=(n, n))
        # edge e sits between node e-1 and node e; ghosts are zero
        rows = np.concatenate([np.arange(n), np.arange(1, n + 1)])
        cols = np.concatenate([np.arange(n), np.arange(n)])
        data = np.concatenate([np.ones(n), -np.ones(n)]) / h
        return sp.csr_matrix((data, (rows, cols)), shape=(n + 1, n))

    def average(self, axis: int) -> sp.csr_matrix:
        """Averages of neighbouring nodes onto edges along one axis."""
        return abs(self.difference(axis)) * (0.5 * self.spacing(axis))


@dataclass
class GridFunction:
    """Samples of a scalar function at the grid nodes, shape grid.shape."""

    grid: Grid2D
    values: np.ndarray

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ConfigurationError("grid function shape does not match its grid")
        if not np.all(np.isfinite(self.values)):
            raise ConfigurationError("grid function has non-finite values")

    def norm(self) -> float:
        return float(np.max(np.abs(self.values)))

    def rows(self) -> np.ndarray:
        """(x1, x2, value) rows for export."""
        points = self.grid.node_points().reshape(-1, 2)
        return np.column_stack([points, self.values.ravel()])

    def __add__(self, other: "GridFunction") -> "GridFunction":
        return GridFunction(self.grid, self.values + other.values)

    def __rmul__(self, scalar: float) -> "GridFunction":
        return GridFunction(self.grid, scalar * self.values)


@dataclass
class GridOperator:
    """Sparse second-order operator acting on GridFunctions of one grid."""

    grid: Grid2D
    matrix: sp.csr_matrix
    sqrt_det: np.ndarray
    label: str = "op"
    order: int = 2

    def __call__(self, f: GridFunction) -> GridFunction:
        if f.grid != self.grid:
            raise ConfigurationError("grid function and operator live on different grids")
        return GridFunction(self.grid, (self.matrix @ f.values.ravel()).reshape(self.grid.shape))


def build_grid(pair: MetricPair, resolution: Sequence[int]) -> Grid2D:
    """Grid over the pair's operator box; an axis is periodic when it spans a full period."""
    if pair.n != 2:
        raise ConfigurationError("quantum operators are implemented for two-dimensional charts", {"n": pair.n})
    chart = pair.chart
    lo, hi = pair.grid_box()
    periodic = []
    for i in range(2):
        full = chart.periodic[i] and math.isclose(hi[i] - lo[i], chart.upper[i] - chart.lower[i], rel_tol=1e-12)
        periodic.append(bool(full))
    shape = tuple(int(r) for r in resolution)
    if len(shape) == 1:
        shape = (shape[0], shape[0])
    return Grid2D(chart, (float(lo[0]), float(lo[1])), (float(hi[0]), float(hi[1])), shape, tuple(periodic))


def _divergence_operator(grid: Grid2D, coefficients: CoefficientFn, metric: MetricField, label: str) -> GridOperator:
    """(1/sqrt|g|) K with K = -(D^T C D) summed over the edge and corner fluxes."""
    d1, d2 = grid.difference(0), grid.difference(1)
    a1, a2 = grid.average(0), grid.average(1)
    i1 = sp.identity(grid.shape[0], format="csr")
    i2 = sp.identity(grid.shape[1], format="csr")
    grad1 = sp.kron(d1, i2, format="csr")
    grad2 = sp.kron(i1, d2, format="csr")
    corner1 = sp.kron(d1, a2, format="csr")
    corner2 = sp.kron(a1, d2, format="csr")

    c_edge1 = coefficients(grid.mesh(grid.edges(0), grid.nodes(1)))[..., 0, 0].ravel()
    c_edge2 = coefficients(grid.mesh(grid.nodes(0), grid.edges(1)))[..., 1, 1].ravel()
    c_corner = coefficients(grid.mesh(grid.edges(0), grid.edges(1)))[..., 0, 1].ravel()

    stiffness = -(
        grad1.T @ sp.diags(c_edge1) @ grad1
        + grad2.T @ sp.diags(c_edge2) @ grad2
        + corner1.T @ sp.diags(c_corner) @ corner2
        + corner2.T @ sp.diags(c_corner) @ corner1
    )
    stiffness = (0.5 * (stiffness + stiffness.T)).tocsr()
    sqrt_det = np.sqrt(np.linalg.det(metric.matrix(grid.node_points())))
    matrix = (sp.diags(1.0 / sqrt_det.ravel()) @ stiffness).tocsr()
    return GridOperator(grid, matrix, sqrt_det, label)


def _coefficient_field(pair: MetricPair, k: int) -> CoefficientFn:
    def coefficients(points: np.ndarray) -> np.ndarray:
        g, gbar = pair.matrices(points)
        s = s_operators(g, gbar, [k])[..., 0, :, :]
        sqrt_det = np.sqrt(np.linalg.det(g))
        c = s @ np.linalg.inv(g) * sqrt_det[..., None, None]
        return 0.5 * (c + np.swapaxes(c, -1, -2))

    return coefficients


def build_quantum_I(pair: MetricPair, k: int, resolution: Sequence[int]) -> GridOperator:
    """
    Discretize the k-th quantum integral (1/sqrt|g|) d_i (S_k)^i_a sqrt|g| g^{aj} d_j.

    For k = n - 1 the coefficient is -sqrt|g| g^{-1}, so the operator equals the
    discretized Laplace-Beltrami operator with its leading minus sign.

    Raises:
        ConfigurationError: grid too coarse, k out of range or chart not two-dimensional
        PositivityError: metric failure at a grid point
    """
    if not 0 <= k < pair.n:
        raise ConfigurationError(f"operator index {k} outside 0..{pair.n - 1}")
    grid = build_grid(pair, resolution)
    return _divergence_operator(grid, _coefficient_field(pair, k), pair.g, f"I_{k}")


def build_laplacian(metric: MetricField, grid: Grid2D) -> GridOperator:
    """Laplace-Beltrami operator -(1/sqrt|g|) d_i sqrt|g| g^{ij} d_j on the same stencil."""

    def coefficients(points: np.ndarray) -> np.ndarray:
        g = metric.matrix(points)
        return -np.linalg.inv(g) * np.sqrt(np.linalg.det(g))[..., None, None]

    return _divergence_operator(grid, coefficients, metric, "laplacian")


def commutator_norm(opA: GridOperator, opB: GridOperator, functions: Sequence[GridFunction]) -> float:
    """
    Max over test functions of |A B f - B A f|_inf / max(|f|_inf, |A B f|_inf).

    Raises:
        ConfigurationError: operators live on different grids
    """
    if opA.grid != opB.grid:
        raise ConfigurationError("commutator of operators on different grids")
    worst = 0.0
    for f in functions:
        ab = opA(opB(f)).values
        ba = opB(opA(f)).values
        scale = max(f.norm(), float(np.max(np.abs(ab))), 1e-300)
        worst = max(worst, float(np.max(np.abs(ab - ba))) / scale)
    return worst


def inner_product(f: GridFunction, h: GridFunction, sqrt_det: np.ndarray) -> float:
    """Grid quadrature of f h against the Riemannian volume sqrt|g| dx^1 dx^2."""
    grid = f.grid
    return float(np.sum(f.values * h.values * sqrt_det) * grid.spacing(0) * grid.spacing(1))


def adjoint_defect(op: GridOperator, f: GridFunction, h: GridFunction, pair: Optional[MetricPair] = None) -> float:
    """|<op f, h> - <f, op h>| in the sqrt|g|-weighted grid quadrature."""
    if pair is not None:
        sqrt_det = np.sqrt(np.linalg.det(pair.g.matrix(op.grid.node_points())))
    else:
        sqrt_det = op.sqrt_det
    return abs(inner_product(op(f), h, sqrt_det) - inner_product(f, op(h), sqrt_det))


# Test-function suite

def _axis_families(grid: Grid2D, axis: int) -> List[np.ndarray]:
    """Four 1D profiles per axis: trigonometric modes when periodic, windowed bumps otherwise."""
    s = (grid.nodes(axis) - grid.lower[axis]) / (grid.upper[axis] - grid.lower[axis])
    if grid.periodic[axis]:
        angle = 2.0 * math.pi * s
        return [np.ones_like(s), np.cos(angle), np.sin(2.0 * angle), np.exp(np.cos(angle))]
    # the window vanishes to sixth order at the box edges
    window = np.sin(math.pi * s) ** 6
    return [
        window,
        window * np.cos(3.0 * math.pi * s),
        window * np.exp(-(((s - 0.5) / 0.15) ** 2)),
        window * np.sin(2.0 * math.pi * s),
    ]


_COMBINATIONS = [(0, 1), (1, 0), (1, 1), (2, 1), (1, 2), (3, 3), (2, 3), (3, 2)]


def probe_functions(grid: Grid2D) -> List[GridFunction]:
    """Eight tensor-product test functions matched to the boundary policy of each axis."""
    first, second = _axis_families(grid, 0), _axis_families(grid, 1)
    return [GridFunction(grid, np.outer(first[i], second[j])) for i, j in _COMBINATIONS]




@dataclass
class CommutatorStudy:
    """Commutator norms of one (j, k) pair over several resolutions."""

    j: int
    k: int
    resolutions: List[int]
    norms: List[float]
    order: Optional[float]
    exact_zero: bool


@dataclass
class QuantumResult:
    studies: List[CommutatorStudy]
    adjoint_defects: Dict[int, float]
    verdict: str


def fitted_order(spacings: Sequence[float], norms: Sequence[float]) -> Optional[float]:
    """Least-squares slope of log(norm) against log(h); None when every norm is at the zero floor."""
    floor = settings.QUANTUM_ZERO_FLOOR
    values = np.asarray(norms, dtype=float)
    if np.all(values <= floor):
        return None
    slope, _ = np.polyfit(np.log(np.asarray(spacings, dtype=float)), np.log(np.maximum(values, floor)), 1)
    return float(slope)


def quantum_study(
    pair: MetricPair, grids: Optional[Sequence[int]] = None
) -> QuantumResult:
    """
    Commutator convergence and self-adjointness of the quantum integrals.

    PASS iff every (j, k) commutator is at the zero floor or converges with
    fitted order at least QUANTUM_ORDER_MIN, and every adjoint defect is at
    most ADJOINT_TOL.
    """
    grids = list(grids or settings.DEFAULT_GRIDS)
    if len(grids) < 2:
        raise ConfigurationError("a convergence study needs at least two resolutions", {"grids": grids})
    n = pair.n
    norms: Dict[Tuple[int, int], List[float]] = {(j, k): [] for j in range(n) for k in range(j + 1, n)}
    spacings: List[float] = []
    defects: Dict[int, float] = {k: 0.0 for k in range(n)}

    for resolution in grids:
        ops = [build_quantum_I(pair, k, (resolution, resolution)) for k in range(n)]
        grid = ops[0].grid
        spacings.append(max(grid.spacing(0), grid.spacing(1)))
        functions = probe_functions(grid)
        for (j, k), values in norms.items():
            values.append(commutator_norm(ops[j], ops[k], functions))
        for k, op in enumerate(ops):
            for f, h in zip(functions, functions[1:]):
                defects[k] = max(defects[k], adjoint_defect(op, f, h))
        logger.debug("quantum_resolution", pair=pair.name, resolution=resolution)

    studies = []
    passed = all(d <= settings.ADJOINT_TOL for d in defects.values())
    for (j, k), values in norms.items():
        order = fitted_order(spacings, values)
        exact_zero = order is None
        studies.append(CommutatorStudy(j, k, grids, values, order, exact_zero))
        if not exact_zero and order < settings.QUANTUM_ORDER_MIN:
            passed = False
    verdict = "PASS" if passed else "FAIL"
    logger.info("quantum_study", pair=pair.name, grids=grids, verdict=verdict)
    return QuantumResult(studies, defects, verdict)
