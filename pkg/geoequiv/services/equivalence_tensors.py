"""
The operator G = g^{-1} gbar, its characteristic polynomial, the S_k family,
eigenvalue clustering and the B-transform.

Everything is batch-first: the basepoint may be a single point (n,) or a batch
(..., n), and operators come back stacked as (..., n, n).
"""
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

from geoequiv.core.config import settings
from geoequiv.core.errors import ConfigurationError, PositivityError, SingularMatrixError
from geoequiv.core.logging import get_logger
from geoequiv.services.metric_core import Chart, MetricField, symmetrize

logger = get_logger(__name__)

Box = Tuple[Tuple[float, float], ...]

# Substitute bounds for infinite chart intervals when nothing else is configured
_UNBOUNDED_BOX = 1.0


@dataclass(frozen=True)
class MetricPair:
    """Two metrics on one chart, with the boxes used for sampling and grids."""

    g: MetricField
    gbar: MetricField
    name: str = "pair"
    sample_box: Optional[Box] = None
    quantum_box: Optional[Box] = None
    params: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.g.chart != self.gbar.chart:
            raise ConfigurationError("metrics of a pair must share one chart", {"pair": self.name})
        for box in (self.sample_box, self.quantum_box):
            if box is not None and len(box) != self.g.chart.n:
                raise ConfigurationError("box dimension does not match the chart", {"pair": self.name})

    @property
    def chart(self) -> Chart:
        return self.g.chart

    @property
    def n(self) -> int:
        return self.g.chart.n

    def box(self) -> Tuple[np.ndarray, np.ndarray]:
        """Lower and upper corners of the sampling box."""
        if self.sample_box is not None:
            lo, hi = zip(*self.sample_box)
            return np.array(lo, dtype=float), np.array(hi, dtype=float)
        chart = self.chart
        lo = np.array([b if np.isfinite(b) else -_UNBOUNDED_BOX for b in chart.lower])
        hi = np.array([b if np.isfinite(b) else _UNBOUNDED_BOX for b in chart.upper])
        return lo, hi

    def grid_box(self) -> Tuple[np.ndarray, np.ndarray]:
        """Box covered by operator grids: quantum_box, else the sampling box."""
        if self.quantum_box is not None:
            lo, hi = zip(*self.quantum_box)
            return np.array(lo, dtype=float), np.array(hi, dtype=float)
        return self.box()

    def matrices(self, x: np.ndarray, check: bool = True) -> Tuple[np.ndarray, np.ndarray]:
        """Evaluate (g(x), gbar(x))."""
        return self.g.matrix(x, check=check), self.gbar.matrix(x, check=check)


@dataclass(frozen=True)
class CharPoly:
    """Coefficients c_0..c_n of det(G - mu E) = c_0 mu^n + ... + c_n, stacked over the batch."""

    coeffs: np.ndarray

    @property
    def degree(self) -> int:
        return self.coeffs.shape[-1] - 1

    def roots(self) -> np.ndarray:
        """Roots of a single (unbatched) polynomial."""
        return np.roots(np.asarray(self.coeffs, dtype=float))

    def evaluate_at(self, matrix: np.ndarray) -> np.ndarray:
        """Sum_i c_i M^{n-i}; vanishes for the operator the polynomial came from."""
        n = self.degree
        result = np.zeros(matrix.shape)
        power = np.broadcast_to(np.eye(n), matrix.shape).copy()
        for i in range(n, -1, -1):
            result = result + self.coeffs[..., i, None, None] * power
            power = power @ matrix
        return result


@dataclass(frozen=True)
class OperatorAtPoint:
    """A (1,1)-tensor at a basepoint; g and gbar are kept when the operator came from a pair."""

    matrix: np.ndarray
    basepoint: np.ndarray
    g: Optional[np.ndarray] = None
    gbar: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        if not np.all(np.isfinite(self.matrix)):
            raise SingularMatrixError("operator has non-finite entries")


def g_operator(g: np.ndarray, gbar: np.ndarray) -> np.ndarray:
    return np.linalg.solve(g, gbar)


def build_G(pair: MetricPair, x: np.ndarray, check: bool = True) -> OperatorAtPoint:
    """
    G = g^{-1} gbar at x, so that g(G xi, nu) = gbar(xi, nu).

    Raises:
        OutOfDomainError: x outside the chart
        PositivityError: one of the metrics is not positive definite
    """
    x = np.asarray(x, dtype=float)
    g, gbar = pair.matrices(x, check=check)
    return OperatorAtPoint(g_operator(g, gbar), x, g, gbar)


def char_poly(G: OperatorAtPoint) -> CharPoly:
    """
    Characteristic polynomial det(G - mu E) by the Faddeev-LeVerrier recurrence.

    With M_0 = 0, a_0 = 1: M_k = G M_{k-1} + a_{k-1} E and a_k = -tr(G M_k)/k give
    det(mu E - G) = sum a_k mu^{n-k}; multiplying by (-1)^n flips to det(G - mu E).
    """
    matrix = np.asarray(G.matrix, dtype=float)
    n = matrix.shape[-1]
    batch = matrix.shape[:-2]
    eye = np.broadcast_to(np.eye(n), matrix.shape)
    sign = -1.0 if n % 2 else 1.0

    coeffs = np.empty(batch + (n + 1,))
    coeffs[..., 0] = sign
    a_prev = np.ones(batch)
    m = np.zeros(matrix.shape)
    for k in range(1, n + 1):
        m = matrix @ m + a_prev[..., None, None] * eye
        a_prev = -np.trace(matrix @ m, axis1=-2, axis2=-1) / k
        coeffs[..., k] = sign * a_prev
    return CharPoly(coeffs)


def s_operators(g: np.ndarray, gbar: np.ndarray, ks: Optional[Sequence[int]] = None) -> np.ndarray:
    """
    S_k = (det g/det gbar)^{(k+2)/(n+1)} sum_{i=0}^{k} c_i G^{k-i+1} from metric matrices.

    Returns:
        Array (..., len(ks), n, n), or all k = 0..n-1 when ks is None
    """
    n = g.shape[-1]
    ks = list(range(n)) if ks is None else list(ks)
    for k in ks:
        if not 0 <= k < n:
            raise ConfigurationError(f"S_k index {k} outside 0..{n - 1}")
    det_g = np.linalg.det(g)
    det_gbar = np.linalg.det(gbar)
    if np.any(det_g <= 0.0) or np.any(det_gbar <= 0.0):
        raise PositivityError("metric determinant is not positive")
    G = g_operator(g, gbar)
    coeffs = char_poly(OperatorAtPoint(G, np.zeros(G.shape[:-1]))).coeffs
    ratio = det_g / det_gbar

    top = max(ks) + 1
    powers = [np.broadcast_to(np.eye(n), G.shape).copy()]
    for _ in range(top):
        powers.append(powers[-1] @ G)

    out = []
    for k in ks:
        total = np.zeros(G.shape)
        for i in range(k + 1):
            total = total + coeffs[..., i, None, None] * powers[k - i + 1]
        out.append(ratio[..., None, None] ** ((k + 2) / (n + 1)) * total)
    return np.stack(out, axis=-3)


def build_S(pair: MetricPair, x: np.ndarray, k: int, check: bool = True) -> OperatorAtPoint:
    """
    The operator S_k at x, k in 0..n-1.

    For gbar = g on a surface S_0 = E and S_1 = -E; in every dimension
    S_{n-1} = -E by Cayley-Hamilton.
    """
    x = np.asarray(x, dtype=float)
    g, gbar = pair.matrices(x, check=check)
    return OperatorAtPoint(s_operators(g, gbar, [k])[..., 0, :, :], x, g, gbar)


def generalized_eigenvalues(g: np.ndarray, gbar: np.ndarray) -> np.ndarray:
    """
    Ascending eigenvalues of gbar v = lambda g v.

    Reduced to a standard symmetric problem with the Cholesky factor of g,
    C = L^{-1} gbar L^{-T}, then solved with a symmetric eigensolver.
    """
    lower = np.linalg.cholesky(g)
    half = np.linalg.solve(lower, gbar)
    reduced = symmetrize(np.swapaxes(np.linalg.solve(lower, np.swapaxes(half, -1, -2)), -1, -2))
    return np.linalg.eigvalsh(reduced)


def operator_eigenvalues(G: OperatorAtPoint) -> np.ndarray:
    """Ascending real eigenvalues of G, through the symmetric problem when the metrics are known."""
    if G.g is not None and G.gbar is not None:
        return generalized_eigenvalues(G.g, G.gbar)
    values = np.linalg.eigvals(G.matrix)
    return np.sort(values.real, axis=-1)


def default_gap_tol(eigenvalues: np.ndarray) -> np.ndarray:
    return settings.GAP_TOL_FACTOR * (1.0 + np.max(np.abs(eigenvalues), axis=-1))


def distinct_eigenvalue_count(G: OperatorAtPoint, gap_tol: Optional[float] = None) -> np.ndarray:
    """
    Number of eigenvalue clusters of G separated by more than gap_tol.

    Args:
        G: Operator at a point or a batch of points
        gap_tol: Cluster separation; defaults to GAP_TOL_FACTOR * (1 + spectral radius)

    Returns:
        int for a single operator, integer array for a batch
    """
    if gap_tol is not None and gap_tol <= 0:
        raise ConfigurationError("gap_tol must be positive", {"gap_tol": gap_tol})
    eigenvalues = operator_eigenvalues(G)
    tol = default_gap_tol(eigenvalues) if gap_tol is None else gap_tol
    gaps = np.diff(eigenvalues, axis=-1)
    counts = 1 + np.sum(gaps > np.asarray(tol)[..., None], axis=-1)
    return int(counts) if np.ndim(counts) == 0 else counts


def eigenvalue_spread(pair: MetricPair, x: np.ndarray, check: bool = True) -> np.ndarray:
    """Relative spread (lambda_max - lambda_min)/(1 + spectral radius); zero exactly at proportionality points."""
    g, gbar = pair.matrices(x, check=check)
    eigenvalues = generalized_eigenvalues(g, gbar)
    radius = np.max(np.abs(eigenvalues), axis=-1)
    return (eigenvalues[..., -1] - eigenvalues[..., 0]) / (1.0 + radius)


def b_operator(g: np.ndarray, gbar: np.ndarray) -> np.ndarray:
    n = g.shape[-1]
    ratio = np.linalg.det(gbar) / np.linalg.det(g)
    return ratio[..., None, None] ** (1.0 / (n + 1)) * np.linalg.solve(gbar, g)


def build_B(pair: MetricPair, x: np.ndarray, check: bool = True) -> OperatorAtPoint:
    """
    B = (det gbar/det g)^{1/(n+1)} gbar^{-1} g at x.

    B is self-adjoint with respect to both metrics: g B and gbar B are symmetric.
    """
    x = np.asarray(x, dtype=float)
    g, gbar = pair.matrices(x, check=check)
    return OperatorAtPoint(b_operator(g, gbar), x, g, gbar)


def sinjukov_transform(pair: MetricPair, power: int) -> MetricPair:
    """
    The pair (g B^power, gbar B^power), again geodesically equivalent.

    The new metrics are field-level evaluators over the original pair, so they
    are evaluated lazily and validated (domain, positivity) on use.

    Raises:
        ConfigurationError: power is zero
    """
    if int(power) != power or power == 0:
        raise ConfigurationError("power must be a nonzero integer", {"power": power})
    power = int(power)

    def transformed(base: MetricField) -> MetricField:
        def evaluator(x: np.ndarray) -> np.ndarray:
            g, gbar = pair.g(x), pair.gbar(x)
            b_power = np.linalg.matrix_power(b_operator(g, gbar), power)
            return symmetrize(base(x) @ b_power)

        return MetricField(base.chart, evaluator, fd_step=base.fd_step, label=f"{base.label}_B^{power}")

    logger.debug("sinjukov_transform", pair=pair.name, power=power)
    return MetricPair(
        g=transformed(pair.g),
        gbar=transformed(pair.gbar),
        name=f"{pair.name}|B^{power}",
        sample_box=pair.sample_box,
        quantum_box=pair.quantum_box,
        params={**pair.params, "power": power},
    )


def sample_points(pair: MetricPair, count: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform points in the pair's sampling box, shape (count, n)."""
    lo, hi = pair.box()
    return lo + (hi - lo) * rng.random((count, pair.n))


def cayley_hamilton_residual(G: OperatorAtPoint) -> np.ndarray:
    """Relative norm of sum_i c_i G^{n-i}."""
    residual = char_poly(G).evaluate_at(G.matrix)
    scale = np.maximum(1.0, np.linalg.norm(G.matrix, axis=(-2, -1)) ** G.matrix.shape[-1])
    return np.linalg.norm(residual, axis=(-2, -1)) / scale

