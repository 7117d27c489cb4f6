"""
Built-in metric pairs and the proportionality scan.

Sphere-family entries live on the hyperspherical chart of ``metric_core`` with
polar caps excised. Ellipsoids are parametrized as the scaled sphere
y = sqrt(a) * u(x), so every sphere-family entry shares one chart and the
B-transform chain of the Beltrami pair can be compared with the ellipsoid and
Poisson-sphere pairs point by point.
"""
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage
from scipy.optimize import minimize

from geoequiv.core.config import settings
from geoequiv.core.errors import CatalogError, ConfigurationError
from geoequiv.core.logging import get_logger
from geoequiv.services.equivalence_tensors import Box, MetricPair, eigenvalue_spread
from geoequiv.services.metric_core import (
    Chart,
    EmbeddingMap,
    MetricField,
    induced_metric,
    sphere_chart,
    sphere_embedding,
    sphere_jacobian,
    sphere_point,
)

logger = get_logger(__name__)

# Sampling keeps further away from the excised caps than the chart does
SPHERE_SAMPLE_MARGIN = 0.3
SPHERE_QUANTUM_MARGIN = 0.35
SCAN_REFINE_TOL = 1e-5


# Sphere-family boxes

def sphere_sample_box(n: int) -> Box:
    return tuple([(SPHERE_SAMPLE_MARGIN, math.pi - SPHERE_SAMPLE_MARGIN)] * (n - 1) + [(0.0, 2.0 * math.pi)])


def sphere_quantum_box(n: int) -> Box:
    return tuple([(SPHERE_QUANTUM_MARGIN, math.pi - SPHERE_QUANTUM_MARGIN)] * (n - 1) + [(0.0, 2.0 * math.pi)])


def _sphere_pair(n: int, g: MetricField, gbar: MetricField, name: str, params: Dict[str, Any]) -> MetricPair:
    return MetricPair(
        g=g, gbar=gbar, name=name, sample_box=sphere_sample_box(n), quantum_box=sphere_quantum_box(n), params=params
    )


# Ambient metrics on R^{n+1}

def ellipsoid_eq8_metric(a: np.ndarray) -> Callable[[np.ndarray], np.ndarray]:
    """(sum dy_i^2 / a_i) / sum (y_i/a_i)^2."""

    def metric(y: np.ndarray) -> np.ndarray:
        denominator = np.sum((y / a) ** 2, axis=-1)
        return np.diag(1.0 / a) / denominator[..., None, None]

    return metric


def poisson_sphere_metric(a: np.ndarray) -> Callable[[np.ndarray], np.ndarray]:
    """(sum dy_i^2) / sum y_i^2/a_i^2, the metric of the Poisson sphere."""

    def metric(y: np.ndarray) -> np.ndarray:
        denominator = np.sum(y * y / (a * a), axis=-1)
        return np.eye(len(a)) / denominator[..., None, None]

    return metric


def poisson_partner_metric(a: np.ndarray) -> Callable[[np.ndarray], np.ndarray]:
    """sum a_i dy_i^2 - (sum y_i dy_i)^2, with the rank-one term subtracted exactly."""

    def metric(y: np.ndarray) -> np.ndarray:
        return np.diag(a) - y[..., :, None] * y[..., None, :]

    return metric


# Embeddings

def ellipsoid_embedding(a: Sequence[float], ambient_metric: Optional[Callable] = None) -> EmbeddingMap:
    """The ellipsoid sum y_i^2/a_i = 1 as the scaled sphere y = sqrt(a) u(x), with analytic Jacobian."""
    a = _positive_vector(a, "a")
    n = len(a) - 1
    root = np.sqrt(a)
    return EmbeddingMap(
        sphere_chart(n),
        lambda x: root * sphere_point(x),
        m=n + 1,
        ambient_metric=ambient_metric,
        jacobian=lambda x: root[:, None] * sphere_jacobian(x),
        label="ellipsoid",
    )


def beltrami_map(A: np.ndarray) -> EmbeddingMap:
    """l(u(x)) = A u / |A u| on the sphere chart; dl = (E - l l^T) A du / |A u|."""
    A = np.asarray(A, dtype=float)
    n = A.shape[0] - 1

    def point(x: np.ndarray) -> np.ndarray:
        w = sphere_point(x) @ A.T
        return w / np.linalg.norm(w, axis=-1, keepdims=True)

    def jacobian(x: np.ndarray) -> np.ndarray:
        w = sphere_point(x) @ A.T
        norm = np.linalg.norm(w, axis=-1)
        image = w / norm[..., None]
        projector = np.eye(n + 1) - image[..., :, None] * image[..., None, :]
        return projector @ A @ sphere_jacobian(x) / norm[..., None, None]

    return EmbeddingMap(sphere_chart(n), point, m=n + 1, jacobian=jacobian, label="beltrami")


# Builders

def round_sphere_pair(n: int = 2) -> MetricPair:
    g = induced_metric(sphere_embedding(n), label="g")
    gbar = induced_metric(sphere_embedding(n), label="gbar")
    return _sphere_pair(n, g, gbar, "round-sphere", {"n": n})


def proportional_pair(c: float = 5.0, n: int = 2) -> MetricPair:
    """gbar = c g over the round sphere: proportional at every point."""
    if c <= 0:
        raise CatalogError("proportionality constant must be positive", {"c": c})
    g = induced_metric(sphere_embedding(n), label="g")
    gbar = MetricField(g.chart, lambda x: c * g(x), fd_step=g.fd_step, label="gbar")
    return _sphere_pair(n, g, gbar, "proportional", {"c": c, "n": n})


def beltrami_pair(A: Sequence) -> MetricPair:
    """
    Round sphere g and its pullback gbar = l*g under l(x) = Ax/|Ax|.

    Args:
        A: (n+1) x (n+1) nondegenerate matrix, or its n+1 diagonal entries

    Raises:
        CatalogError: A singular or malformed
    """
    A = _square_matrix(A)
    n = A.shape[0] - 1
    if n < 1:
        raise CatalogError("A must be at least 2x2")
    scale = max(1.0, float(np.max(np.abs(A)))) ** (n + 1)
    if abs(np.linalg.det(A)) <= 1e-12 * scale:
        raise CatalogError("A is singular", {"det": float(np.linalg.det(A))})
    g = induced_metric(sphere_embedding(n), label="g")
    gbar = induced_metric(beltrami_map(A), label="gbar")
    return _sphere_pair(n, g, gbar, "beltrami-sphere", {"A": A.tolist()})


def ellipsoid_pair(a: Sequence[float]) -> MetricPair:
    """Euclidean restriction to the ellipsoid against the restriction of the conformally weighted metric."""
    a = _positive_vector(a, "a")
    n = len(a) - 1
    g = induced_metric(ellipsoid_embedding(a), label="g")
    gbar = induced_metric(ellipsoid_embedding(a, ellipsoid_eq8_metric(a)), label="gbar")
    return _sphere_pair(n, g, gbar, "ellipsoid", {"a": a.tolist()})


def poisson_pair(a: Sequence[float]) -> MetricPair:
    """Poisson-sphere metric against a_i dy_i^2 - (y.dy)^2, both restricted to the ellipsoid."""
    a = _positive_vector(a, "a")
    n = len(a) - 1
    g = induced_metric(ellipsoid_embedding(a, poisson_sphere_metric(a)), label="g")
    gbar = induced_metric(ellipsoid_embedding(a, poisson_partner_metric(a)), label="gbar")
    return _sphere_pair(n, g, gbar, "poisson-sphere", {"a": a.tolist()})


def control_pair_nonequivalent() -> MetricPair:
    """
    Flat g against gbar = diag(1 + x1*x2, 1).

    Both metrics are the identity at the origin, but the pair is not
    geodesically equivalent; it serves as the negative control.
    """
    chart = Chart(names=("x1", "x2"), lower=(-0.1, -0.1), upper=(6.0, 6.0), periodic=(False, False))
    g = MetricField.from_expressions(chart, [["1", "0"], ["0", "1"]], label="g")
    gbar = MetricField.from_expressions(chart, [["1 + x1*x2", "0"], ["0", "1"]], label="gbar")
    box = ((2.0, 4.0), (2.0, 4.0))
    return MetricPair(g=g, gbar=gbar, name="control-nonequivalent", sample_box=box, quantum_box=box, params={})


def flat_pair(c: float = 1.0, n: int = 2) -> MetricPair:
    """g = E and gbar = c E on the periodic square [0, 2 pi)^n."""
    if c <= 0:
        raise CatalogError("scale c must be positive", {"c": c})
    names = tuple(f"x{i + 1}" for i in range(n))
    chart = Chart(names=names, lower=(0.0,) * n, upper=(2.0 * math.pi,) * n, periodic=(True,) * n)
    g = MetricField(chart, lambda x: np.broadcast_to(np.eye(n), np.shape(x)[:-1] + (n, n)).copy(), label="g")
    gbar = MetricField(chart, lambda x: c * np.broadcast_to(np.eye(n), np.shape(x)[:-1] + (n, n)), label="gbar")
    return MetricPair(g=g, gbar=gbar, name="flat", params={"c": c, "n": n})


# The B-transform chain of the Beltrami pair

def ellipsoid_beltrami_matrix(a: Sequence[float]) -> np.ndarray:
    """A = diag(a_i^{-1/2}); its Beltrami pair transforms into the ellipsoid family of a."""
    return np.diag(1.0 / np.sqrt(_positive_vector(a, "a")))


def sinjukov_scale(a: Sequence[float], power: int) -> float:
    """
    Constant factor of the chain identification, (prod a_i)^{-power/(n+1)}.

    Over the shared sphere chart, with A = ellipsoid_beltrami_matrix(a):
    g_B = s * ellipsoid g, gbar_B = s * ellipsoid gbar (power 1) and
    g_{B^2} = s * poisson gbar, gbar_{B^2} = s * poisson g (power 2).
    """
    a = _positive_vector(a, "a")
    return float(np.prod(a) ** (-power / len(a)))


# Registry

@dataclass(frozen=True)
class CatalogEntry:
    """A named builder with its parameter schema and domain caveats."""

    name: str
    description: str
    params: Dict[str, str]
    defaults: Dict[str, Any]
    chart: str
    caveats: str
    builder: Callable[..., MetricPair] = field(repr=False)
    equivalent: bool = True

    def build(self, params: Optional[Dict[str, Any]] = None) -> MetricPair:
        merged = {**self.defaults, **{k: v for k, v in (params or {}).items() if v is not None}}
        unknown = set(merged) - set(self.params)
        if unknown:
            raise CatalogError(f"unknown parameters for '{self.name}': {sorted(unknown)}", {"allowed": list(self.params)})
        return self.builder(**merged)


_SPHERE_CHART = "hyperspherical (theta_1..theta_{n-1}, phi), theta in (0.05, pi-0.05), phi periodic"
_CAP_CAVEAT = "polar caps excised; statements are checked on the chart interior only"

CATALOG: Dict[str, CatalogEntry] = {
    "beltrami-sphere": CatalogEntry(
        name="beltrami-sphere",
        description="round sphere against its pullback under l(x) = Ax/|Ax|",
        params={"A": "n+1 diagonal entries or (n+1)^2 row-major entries, nondegenerate"},
        defaults={"A": [1.0, 2.0, 3.0]},
        chart=_SPHERE_CHART,
        caveats=_CAP_CAVEAT,
        builder=lambda A: beltrami_pair(A),
    ),
    "ellipsoid": CatalogEntry(
        name="ellipsoid",
        description="Euclidean ellipsoid metric against its geodesically equivalent partner",
        params={"a": "n+1 positive values, squared semi-axes"},
        defaults={"a": [1.0, 2.0, 3.0]},
        chart=_SPHERE_CHART + ", ellipsoid y = sqrt(a) u",
        caveats=_CAP_CAVEAT,
        builder=lambda a: ellipsoid_pair(a),
    ),
    "poisson-sphere": CatalogEntry(
        name="poisson-sphere",
        description="Poisson-sphere metric against a_i dy_i^2 - (y.dy)^2 on the ellipsoid",
        params={"a": "n+1 positive values"},
        defaults={"a": [1.0, 2.0, 3.0]},
        chart=_SPHERE_CHART + ", ellipsoid y = sqrt(a) u",
        caveats=_CAP_CAVEAT,
        builder=lambda a: poisson_pair(a),
    ),
    "control-nonequivalent": CatalogEntry(
        name="control-nonequivalent",
        description="flat g against diag(1 + x1*x2, 1); not geodesically equivalent",
        params={},
        defaults={},
        chart="(x1, x2) in (-0.1, 6)^2, sampled on [2, 4]^2",
        caveats="negative control, expected to FAIL",
        builder=lambda: control_pair_nonequivalent(),
        equivalent=False,
    ),
    "flat": CatalogEntry(
        name="flat",
        description="g = E against gbar = c E",
        params={"c": "positive scale", "n": "dimension"},
        defaults={"c": 1.0, "n": 2},
        chart="periodic square [0, 2 pi)^n",
        caveats="constant coefficients; quantum commutators vanish exactly for c = 1",
        builder=lambda c, n: flat_pair(float(c), int(n)),
    ),
    "round-sphere": CatalogEntry(
        name="round-sphere",
        description="round sphere paired with itself",
        params={"n": "sphere dimension"},
        defaults={"n": 2},
        chart=_SPHERE_CHART,
        caveats=_CAP_CAVEAT,
        builder=lambda n: round_sphere_pair(int(n)),
    ),
    "proportional": CatalogEntry(
        name="proportional",
        description="round sphere against c times itself",
        params={"c": "positive scale", "n": "sphere dimension"},
        defaults={"c": 5.0, "n": 2},
        chart=_SPHERE_CHART,
        caveats=_CAP_CAVEAT + "; proportional everywhere",
        builder=lambda c, n: proportional_pair(float(c), int(n)),
    ),
}


def list_entries() -> List[CatalogEntry]:
    return list(CATALOG.values())


def build_pair(name: str, params: Optional[Dict[str, Any]] = None) -> MetricPair:
    """
    Build a catalog pair by name.

    Raises:
        CatalogError: unknown name or invalid parameters
    """
    entry = CATALOG.get(name)
    if entry is None:
        raise CatalogError(f"unknown catalog entry '{name}'", {"available": sorted(CATALOG)})
    try:
        return entry.build(params)
    except (TypeError, ValueError) as exc:
        raise CatalogError(f"invalid parameters for '{name}': {exc}") from exc


# Parameter helpers

def _positive_vector(a: Sequence[float], label: str) -> np.ndarray:
    values = np.asarray(a, dtype=float).ravel()
    if values.size < 2:
        raise CatalogError(f"'{label}' needs at least two values")
    if np.any(~np.isfinite(values)) or np.any(values <= 0):
        raise CatalogError(f"all values of '{label}' must be positive", {label: values.tolist()})
    return values


def _square_matrix(A: Sequence) -> np.ndarray:
    values = np.asarray(A, dtype=float)
    if values.ndim == 1:
        root = int(round(math.sqrt(values.size)))
        if root * root == values.size and root > 2:
            return values.reshape(root, root)
        return np.diag(values)
    if values.ndim != 2 or values.shape[0] != values.shape[1]:
        raise CatalogError("A must be square", {"shape": list(values.shape)})
    return values


# Proportionality scan

@dataclass
class ScanResult:
    """Proportionality points found on a grid: every point, or clustered representatives."""

    all_proportional: bool
    representatives: np.ndarray
    grid_shape: Tuple[int, int]
    min_spread: float
    candidate_nodes: int = 0

    @property
    def count(self) -> Optional[int]:
        return None if self.all_proportional else int(len(self.representatives))


def scan_grid(chart: Chart, box: Tuple[np.ndarray, np.ndarray], density: int) -> List[np.ndarray]:
    """Axis nodes: cell centres on bounded axes, a full period without endpoint on periodic ones."""
    axes = []
    for i in range(chart.n):
        lo = chart.lower[i] if np.isfinite(chart.lower[i]) else box[0][i]
        hi = chart.upper[i] if np.isfinite(chart.upper[i]) else box[1][i]
        step = (hi - lo) / density
        offset = 0.0 if chart.periodic[i] else 0.5
        axes.append(lo + (np.arange(density) + offset) * step)
    return axes


def _merge_periodic_labels(labels: np.ndarray, periodic: Sequence[bool]) -> np.ndarray:
    """Merge components that touch across a periodic seam."""
    parent = {int(v): int(v) for v in np.unique(labels) if v}

    def find(v: int) -> int:
        while parent[v] != v:
            parent[v] = parent[parent[v]]
            v = parent[v]
        return v

    for axis, is_periodic in enumerate(periodic):
        if not is_periodic:
            continue
        first = np.take(labels, 0, axis=axis)
        last = np.take(labels, -1, axis=axis)
        for shift in (-1, 0, 1):
            shifted = np.roll(last, shift)
            for u, v in zip(first.ravel(), shifted.ravel()):
                if u and v:
                    parent[find(int(u))] = find(int(v))
    merged = np.zeros_like(labels)
    roots: Dict[int, int] = {}
    for v in parent:
        root = find(v)
        roots.setdefault(root, len(roots) + 1)
        merged[labels == v] = roots[root]
    return merged


def proportionality_scan(
    pair: MetricPair, grid_density: Optional[int] = None, gap_tol: Optional[float] = None
) -> ScanResult:
    """
    Locate points where gbar = c g (a single eigenvalue cluster of G) on a surface chart.

    Grid nodes with relative spread below gap_tol are proportional outright.
    Interior local minima of the spread below SCAN_SNAP_FACTOR grid spacings
    are refined with a Nelder-Mead search and kept when the refined spread is
    below SCAN_REFINE_TOL, so isolated points between nodes are found. Minima
    on bounded chart edges belong to excised regions and are ignored.

    Args:
        pair: Metric pair on a two-dimensional chart
        grid_density: Nodes per axis
        gap_tol: Relative spread counted as proportional

    Returns:
        ScanResult: "all" when every node is proportional, else the clustered points
    """
    if pair.n != 2:
        raise ConfigurationError("proportionality scan needs a two-dimensional chart", {"n": pair.n})
    density = grid_density or settings.DEFAULT_SCAN_DENSITY
    gap_tol = gap_tol or settings.GAP_TOL_FACTOR
    if density < 8:
        raise ConfigurationError("scan grid needs at least 8 nodes per axis", {"density": density})
    chart = pair.chart
    axes = scan_grid(chart, pair.box(), density)
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    spread = eigenvalue_spread(pair, mesh)

    if np.all(spread <= gap_tol):
        logger.info("proportionality_scan", pair=pair.name, result="all")
        return ScanResult(True, mesh.reshape(-1, 2)[:0], spread.shape, float(np.min(spread)))

    spacing = max(float(ax[1] - ax[0]) for ax in axes)
    modes = ["wrap" if p else "nearest" for p in chart.periodic]
    local_min = spread == ndimage.minimum_filter(spread, size=3, mode=modes)
    for axis, is_periodic in enumerate(chart.periodic):
        if not is_periodic:
            index = [slice(None)] * 2
            index[axis] = [0, -1]
            local_min[tuple(index)] = False
    exact = spread <= gap_tol
    candidates = exact | (local_min & (spread <= settings.SCAN_SNAP_FACTOR * spacing))

    labels, _ = ndimage.label(candidates, structure=np.ones((3, 3), dtype=int))
    labels = _merge_periodic_labels(labels, chart.periodic)

    def objective(point: np.ndarray) -> float:
        if not chart.inside(point):
            return float("inf")
        return float(eigenvalue_spread(pair, point, check=False))

    accepted: List[np.ndarray] = []
    for label in range(1, int(labels.max()) + 1):
        nodes = np.argwhere(labels == label)
        if nodes.size == 0:
            continue
        values = spread[tuple(nodes.T)]
        start = mesh[tuple(nodes[int(np.argmin(values))])]
        result = minimize(
            objective, start, method="Nelder-Mead",
            options={"xatol": 1e-10, "fatol": 1e-14, "initial_simplex": start + spacing * np.array([[0, 0], [1, 0], [0, 1]])},
        )
        best = chart.wrap(result.x) if np.isfinite(result.fun) and result.fun < values.min() else start
        refined = min(float(result.fun), float(values.min()))
        if np.any(exact[tuple(nodes.T)]) or refined <= SCAN_REFINE_TOL:
            accepted.append(best)

    representatives = _dedupe(accepted, chart, 2.0 * spacing)
    logger.info(
        "proportionality_scan", pair=pair.name, density=density, candidates=int(candidates.sum()),
        components=len(representatives),
    )
    return ScanResult(
        False,
        chart.wrap(np.array(representatives).reshape(-1, 2)),
        spread.shape,
        float(np.min(spread)),
        int(candidates.sum()),
    )


def _dedupe(points: List[np.ndarray], chart: Chart, radius: float) -> List[np.ndarray]:
    """Drop points within radius of an earlier one, measuring periodic axes on the circle."""
    kept: List[np.ndarray] = []
    periods = np.array([hi - lo if p else np.inf for lo, hi, p in zip(chart.lower, chart.upper, chart.periodic)])
    for point in points:
        close = False
        for other in kept:
            diff = np.abs(point - other)
            diff = np.where(np.isfinite(periods), np.minimum(diff, periods - diff), diff)
            if np.linalg.norm(diff) < radius:
                close = True
                break
        if not close:
            kept.append(point)
    return kept
