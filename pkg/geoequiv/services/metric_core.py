"""
Charts, metric fields and pullbacks.

All evaluators are batch-first: a point has shape (n,), a batch of points has
shape (..., n), and metric matrices come back with shape (..., n, n). Derivatives
are central finite differences with the scale-aware step
h = fd_step * max(1, |x^i|).
"""
import math
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from geoequiv.core.config import settings
from geoequiv.core.errors import (
    ConfigurationError,
    OutOfDomainError,
    PositivityError,
    RankDeficiencyError,
    SingularMatrixError,
)
from geoequiv.services.expr import Expression, parse

ArrayFn = Callable[[np.ndarray], np.ndarray]

SYMMETRY_TOL = 1e-12
RANK_TOL = 1e-8
POLAR_CAP = 0.05


class Chart(BaseModel):
    """
    A single coordinate chart.

    Non-periodic coordinates live in open intervals (lower, upper); periodic
    coordinates are never out of domain and have period upper - lower.
    """

    names: Tuple[str, ...]
    lower: Tuple[float, ...]
    upper: Tuple[float, ...]
    periodic: Tuple[bool, ...]

    model_config = ConfigDict(frozen=True)

    @model_validator(mode="after")
    def check_bounds(self) -> "Chart":
        n = len(self.names)
        if n < 1:
            raise ValueError("chart needs at least one coordinate")
        if not (len(self.lower) == len(self.upper) == len(self.periodic) == n):
            raise ValueError("names, bounds and periodic flags must have the same length")
        if len(set(self.names)) != n:
            raise ValueError("coordinate names must be distinct")
        for name, lo, hi, per in zip(self.names, self.lower, self.upper, self.periodic):
            if not lo < hi:
                raise ValueError(f"bounds of '{name}' are not ordered")
            if per and not (math.isfinite(lo) and math.isfinite(hi)):
                raise ValueError(f"periodic coordinate '{name}' needs finite bounds")
        return self

    @property
    def n(self) -> int:
        return len(self.names)

    def inside(self, x: np.ndarray) -> np.ndarray:
        """Boolean mask over the batch: True where every bounded coordinate is strictly inside."""
        x = np.asarray(x, dtype=float)
        mask = np.ones(x.shape[:-1], dtype=bool)
        for i, (lo, hi, per) in enumerate(zip(self.lower, self.upper, self.periodic)):
            if not per:
                mask &= (x[..., i] > lo) & (x[..., i] < hi)
        return mask

    def require(self, x: np.ndarray) -> None:
        """Raise OutOfDomainError if any point of the batch lies outside the chart."""
        mask = self.inside(x)
        if not np.all(mask):
            bad = np.asarray(x, dtype=float)[~mask]
            raise OutOfDomainError(
                f"point {bad[0].tolist()} outside chart domain",
                {"point": bad[0].tolist(), "lower": list(self.lower), "upper": list(self.upper)},
            )

    def wrap(self, x: np.ndarray) -> np.ndarray:
        """Reduce periodic coordinates into [lower, upper)."""
        x = np.array(x, dtype=float)
        for i, (lo, hi, per) in enumerate(zip(self.lower, self.upper, self.periodic)):
            if per:
                wrapped = lo + np.mod(x[..., i] - lo, hi - lo)
                # np.mod of a tiny negative offset rounds up to the full period
                x[..., i] = np.where(wrapped >= hi, lo, wrapped)
        return x


def fd_steps(x: np.ndarray, fd_step: float) -> np.ndarray:
    """Per-component finite-difference steps h = fd_step * max(1, |x|)."""
    return fd_step * np.maximum(1.0, np.abs(x))


def symmetrize(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + np.swapaxes(m, -1, -2))


def smallest_pivots(m: np.ndarray) -> np.ndarray:
    """Cholesky pivots (ratios of leading principal minors), smallest per matrix."""
    n = m.shape[-1]
    minors = [np.ones(m.shape[:-2])]
    for k in range(1, n + 1):
        minors.append(np.linalg.det(m[..., :k, :k]))
    with np.errstate(divide="ignore", invalid="ignore"):
        pivots = np.stack([minors[k] / minors[k - 1] for k in range(1, n + 1)], axis=-1)
    return np.nanmin(pivots, axis=-1)


def check_positive_definite(m: np.ndarray, x: np.ndarray, label: str = "metric") -> None:
    """Raise PositivityError unless every matrix of the batch admits a Cholesky factor."""
    try:
        np.linalg.cholesky(m)
    except np.linalg.LinAlgError:
        pivots = np.atleast_1d(smallest_pivots(m))
        worst = int(np.argmin(pivots))
        points = np.asarray(x, dtype=float).reshape(-1, m.shape[-1])
        raise PositivityError(
            f"{label} is not positive definite (smallest pivot {pivots[worst]:.6g})",
            {"smallest_pivot": float(pivots[worst]), "point": points[min(worst, len(points) - 1)].tolist()},
        )


class MetricField:
    """
    A symmetric positive-definite matrix field on a chart.

    The evaluator maps points (..., n) to matrices (..., n, n). Use
    ``matrix`` for validated evaluation and calling the field directly for the
    raw (symmetrized) values inside numerical loops.
    """

    def __init__(
        self,
        chart: Chart,
        evaluator: ArrayFn,
        fd_step: Optional[float] = None,
        label: str = "g",
        validator: Optional[Callable[[np.ndarray], None]] = None,
        entries: Optional[List[List[Expression]]] = None,
    ):
        if fd_step is not None and fd_step <= 0:
            raise ConfigurationError("fd_step must be positive", {"fd_step": fd_step})
        self.chart = chart
        self.evaluator = evaluator
        self.fd_step = fd_step if fd_step is not None else settings.FD_STEP
        self.label = label
        self.validator = validator
        self.entries = entries

    @classmethod
    def from_expressions(
        cls,
        chart: Chart,
        entries: Sequence[Sequence[Union[str, Expression]]],
        fd_step: Optional[float] = None,
        label: str = "g",
    ) -> "MetricField":
        """Build a field from an n x n grid of expression texts (or parsed expressions)."""
        n = chart.n
        if len(entries) != n or any(len(row) != n for row in entries):
            raise ConfigurationError(f"metric '{label}' needs a {n}x{n} grid of entries")
        parsed = [[e if isinstance(e, Expression) else parse(str(e), chart.names) for e in row] for row in entries]

        def evaluator(x: np.ndarray) -> np.ndarray:
            x = np.asarray(x, dtype=float)
            out = np.empty(x.shape[:-1] + (n, n))
            for i in range(n):
                for j in range(n):
                    out[..., i, j] = parsed[i][j].evaluate(x)
            return out

        def validator(x: np.ndarray) -> None:
            m = evaluator(x)
            defect = np.max(np.abs(m - np.swapaxes(m, -1, -2)), initial=0.0)
            if defect > SYMMETRY_TOL * max(1.0, float(np.max(np.abs(m), initial=0.0))):
                raise ConfigurationError(f"metric '{label}' entries are not symmetric", {"defect": float(defect)})

        return cls(chart, evaluator, fd_step=fd_step, label=label, validator=validator, entries=parsed)

    @property
    def n(self) -> int:
        return self.chart.n

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return symmetrize(np.asarray(self.evaluator(np.asarray(x, dtype=float)), dtype=float))

    def matrix(self, x: np.ndarray, check: bool = True) -> np.ndarray:
        """Evaluate with domain, symmetry and positivity checks."""
        x = np.asarray(x, dtype=float)
        if check:
            self.chart.require(x)
            if self.validator is not None:
                self.validator(x)
        m = self(x)
        if check:
            check_positive_definite(m, x, self.label)
        return m


def eval_metric(f: MetricField, x: np.ndarray) -> np.ndarray:
    """
    Evaluate a metric field at a point or batch of points.

    Raises:
        OutOfDomainError: x outside the chart
        PositivityError: matrix not positive definite (reports smallest pivot)
    """
    return f.matrix(x, check=True)


def inverse_and_det(f: MetricField, x: np.ndarray, check: bool = True) -> Tuple[np.ndarray, np.ndarray]:
    """
    Inverse matrix and determinant of the metric.

    Returns:
        Tuple of (inverse with shape (..., n, n), determinant with shape (...))
    """
    m = f.matrix(x, check=check)
    det = np.linalg.det(m)
    if np.any(det <= 0.0):
        raise PositivityError(f"{f.label} has non-positive determinant", {"determinant": float(np.min(det))})
    return np.linalg.inv(m), det


def metric_partials(f: MetricField, x: np.ndarray, i: int, check: bool = True) -> np.ndarray:
    """
    Central-difference partial derivative dg/dx^i.

    Raises:
        OutOfDomainError: a stencil point x +- h e_i leaves the chart
    """
    x = np.asarray(x, dtype=float)
    h = fd_steps(x[..., i], f.fd_step)
    shift = np.zeros_like(x)
    shift[..., i] = h
    plus, minus = x + shift, x - shift
    if check:
        f.chart.require(plus)
        f.chart.require(minus)
    return (f(plus) - f(minus)) / (2.0 * h)[..., None, None]


def metric_gradient(f: MetricField, x: np.ndarray) -> np.ndarray:
    """All partials at once, shape (..., n, n, n) with the derivative index first."""
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    h = fd_steps(x, f.fd_step)
    eye = np.eye(n)
    # stencil axis inserted before the coordinate axis: (..., n, n)
    shifts = eye * h[..., None, :]
    values_plus = f(x[..., None, :] + shifts)
    values_minus = f(x[..., None, :] - shifts)
    return (values_plus - values_minus) / (2.0 * h)[..., :, None, None]


def euclidean_metric(y: np.ndarray) -> np.ndarray:
    y = np.asarray(y)
    m = y.shape[-1]
    return np.broadcast_to(np.eye(m), y.shape[:-1] + (m, m)).copy()


class EmbeddingMap:
    """
    A smooth map from a chart into R^m carrying an ambient metric.

    Components are either a vectorized callable (..., n) -> (..., m) or a list
    of m expressions over the chart coordinates. Without an analytic Jacobian
    the Jacobian is taken by central differences.
    """

    def __init__(
        self,
        chart: Chart,
        components: Union[ArrayFn, Sequence[Union[str, Expression]]],
        m: Optional[int] = None,
        ambient_metric: Optional[ArrayFn] = None,
        jacobian: Optional[ArrayFn] = None,
        fd_step: Optional[float] = None,
        label: str = "embedding",
    ):
        if callable(components):
            if m is None:
                raise ConfigurationError("ambient dimension m is required for callable components")
            self._map = components
        else:
            parsed = [c if isinstance(c, Expression) else parse(str(c), chart.names) for c in components]
            m = len(parsed)

            def expression_map(x: np.ndarray) -> np.ndarray:
                x = np.asarray(x, dtype=float)
                return np.stack([np.broadcast_to(c.evaluate(x), x.shape[:-1]) for c in parsed], axis=-1)

            self._map = expression_map
        self.chart = chart
        self.m = int(m)
        self.ambient_metric = ambient_metric or euclidean_metric
        self._jacobian = jacobian
        self.fd_step = fd_step if fd_step is not None else settings.FD_STEP
        self.label = label

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self._map(np.asarray(x, dtype=float))

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        """Jacobian with shape (..., m, n)."""
        x = np.asarray(x, dtype=float)
        if self._jacobian is not None:
            return self._jacobian(x)
        n = x.shape[-1]
        h = fd_steps(x, self.fd_step)
        shifts = np.eye(n) * h[..., None, :]
        plus = self._map(x[..., None, :] + shifts)
        minus = self._map(x[..., None, :] - shifts)
        # (..., n, m) -> (..., m, n)
        return np.swapaxes((plus - minus) / (2.0 * h)[..., :, None], -1, -2)

    def check_rank(self, x: np.ndarray) -> None:
        jac = self.jacobian(x)
        s = np.linalg.svd(jac, compute_uv=False)
        rank = np.sum(s > RANK_TOL * np.maximum(s[..., :1], 1e-300), axis=-1)
        if np.any(rank < jac.shape[-1]):
            raise RankDeficiencyError(
                f"{self.label} Jacobian is rank deficient",
                {"rank": int(np.min(rank)), "expected": int(jac.shape[-1])},
            )


def induced_metric(e: EmbeddingMap, label: str = "g") -> MetricField:
    """
    Restriction of the ambient metric to the embedded chart: J^T A(e(x)) J.

    Raises:
        RankDeficiencyError: during validated evaluation, when J loses rank
    """

    def evaluator(x: np.ndarray) -> np.ndarray:
        jac = e.jacobian(x)
        ambient = e.ambient_metric(e(x))
        return np.swapaxes(jac, -1, -2) @ ambient @ jac

    return MetricField(e.chart, evaluator, fd_step=e.fd_step, label=label, validator=e.check_rank)


def pullback_metric(phi: EmbeddingMap, label: str = "g") -> MetricField:
    """
    Pullback of the metric carried by a chart diffeomorphism: J^T g(phi(x)) J.

    Raises:
        ConfigurationError: phi is not dimension preserving
        SingularMatrixError: during validated evaluation, when det J vanishes
    """
    if phi.m != phi.chart.n:
        raise ConfigurationError("pullback needs a map between charts of equal dimension", {"m": phi.m})

    def validator(x: np.ndarray) -> None:
        jac = phi.jacobian(x)
        det = np.abs(np.linalg.det(jac))
        scale = np.maximum(np.max(np.abs(jac), axis=(-1, -2)) ** phi.m, 1e-300)
        if np.any(det <= 1e-12 * scale):
            raise SingularMatrixError(f"{phi.label} Jacobian is singular", {"min_abs_det": float(np.min(det))})

    def evaluator(x: np.ndarray) -> np.ndarray:
        jac = phi.jacobian(x)
        target = phi.ambient_metric(phi(x))
        return np.swapaxes(jac, -1, -2) @ target @ jac

    return MetricField(phi.chart, evaluator, fd_step=phi.fd_step, label=label, validator=validator)


# The working chart of the sphere family

def sphere_chart(n: int = 2, cap: float = POLAR_CAP) -> Chart:
    """
    Hyperspherical chart (theta_1..theta_{n-1}, phi) of S^n with polar caps excised.

    For n = 2 the coordinates are named (theta, phi).
    """
    if n < 1:
        raise ConfigurationError("sphere dimension must be positive", {"n": n})
    if n == 2:
        names: Tuple[str, ...] = ("theta", "phi")
    else:
        names = tuple(f"theta{k}" for k in range(1, n)) + ("phi",)
    lower = tuple([cap] * (n - 1) + [0.0])
    upper = tuple([math.pi - cap] * (n - 1) + [2.0 * math.pi])
    return Chart(names=names, lower=lower, upper=upper, periodic=tuple([False] * (n - 1) + [True]))


def _sphere_factors(x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Factor tables F, dF with shape (..., n+1, n): u_c = prod_j F[c, j]."""
    n = x.shape[-1]
    theta = x[..., :-1]
    phi = x[..., -1]
    shape = x.shape[:-1] + (n + 1, n)
    factors = np.ones(shape)
    dfactors = np.zeros(shape)
    sin_t, cos_t = np.sin(theta), np.cos(theta)
    for c in range(n + 1):
        if c >= 2:
            # u_c = sin(t_0)...sin(t_{k-1}) cos(t_k) with k = n - c
            k = n - c
            factors[..., c, :k] = sin_t[..., :k]
            dfactors[..., c, :k] = cos_t[..., :k]
            factors[..., c, k] = cos_t[..., k]
            dfactors[..., c, k] = -sin_t[..., k]
        else:
            factors[..., c, : n - 1] = sin_t
            dfactors[..., c, : n - 1] = cos_t
            factors[..., c, n - 1] = np.cos(phi) if c == 0 else np.sin(phi)
            dfactors[..., c, n - 1] = -np.sin(phi) if c == 0 else np.cos(phi)
    return factors, dfactors


def sphere_point(x: np.ndarray) -> np.ndarray:
    """Unit sphere point u(x) with shape (..., n+1)."""
    factors, _ = _sphere_factors(np.asarray(x, dtype=float))
    return np.prod(factors, axis=-1)


def sphere_jacobian(x: np.ndarray) -> np.ndarray:
    """Analytic Jacobian du/dx with shape (..., n+1, n)."""
    factors, dfactors = _sphere_factors(np.asarray(x, dtype=float))
    n = factors.shape[-1]
    columns = []
    for j in range(n):
        others = np.prod(np.delete(factors, j, axis=-1), axis=-1)
        columns.append(others * dfactors[..., j])
    return np.stack(columns, axis=-1)


def sphere_embedding(n: int = 2, cap: float = POLAR_CAP) -> EmbeddingMap:
    """Unit sphere S^n in R^{n+1} over the hyperspherical chart, Euclidean ambient metric."""
    return EmbeddingMap(
        sphere_chart(n, cap), sphere_point, m=n + 1, jacobian=sphere_jacobian, label="sphere"
    )


def sphere_coordinates(u: np.ndarray) -> np.ndarray:
    """Inverse of sphere_point on the chart: unit vectors (..., n+1) to (theta..., phi)."""
    u = np.asarray(u, dtype=float)
    n = u.shape[-1] - 1
    coords = []
    # remaining radius of the not-yet-used components
    for k in range(n - 1):
        c = n - k
        rest = np.linalg.norm(u[..., : c + 1], axis=-1)
        coords.append(np.arccos(np.clip(u[..., c] / rest, -1.0, 1.0)))
    coords.append(np.mod(np.arctan2(u[..., 1], u[..., 0]), 2.0 * math.pi))
    return np.stack(coords, axis=-1)
