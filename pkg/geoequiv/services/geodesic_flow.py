"""
Hamiltonian integration of geodesic flows.

Geodesics are integrated as the flow of H = 1/2 p^T g^{-1} p on the cotangent
bundle of the chart, batch-wise: many geodesics advance together, each with
its own step. A geodesic that leaves the chart is frozen at its last inside
point and flagged as exited.
"""
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np
from scipy.integrate import trapezoid

from geoequiv.core.config import settings
from geoequiv.core.errors import ConfigurationError, DegeneratePhasePointError, IntegrationError
from geoequiv.core.logging import get_logger
from geoequiv.services.equivalence_tensors import MetricPair
from geoequiv.services.integrals import IntegralFamily, orbital_map
from geoequiv.services.metric_core import MetricField, metric_gradient
from geoequiv.utils.parallel import parallel_map

logger = get_logger(__name__)

METHODS = ("rk4", "midpoint")
MIDPOINT_MAX_ITER = 50
MIDPOINT_TOL = 1e-14
# Bound on point-segment pairs handled per chunk in polyline distances
_DISTANCE_CHUNK = 2_000_000


@dataclass
class GeodesicTrace:
    """Samples (t, x, p) of one integrated geodesic plus integrator metadata."""

    t: np.ndarray
    x: np.ndarray
    p: np.ndarray
    metric_id: str
    step: float
    method: str = "rk4"
    exited: bool = False
    energy_drift: float = 0.0

    def __len__(self) -> int:
        return len(self.t)

    def velocities(self, metric: MetricField) -> np.ndarray:
        """xi = g^{-1} p along the trace."""
        return np.linalg.solve(metric(self.x), self.p[..., None])[..., 0]

    def reversed(self) -> "GeodesicTrace":
        return GeodesicTrace(
            self.t[-1] - self.t[::-1], self.x[::-1].copy(), -self.p[::-1], self.metric_id, self.step, self.method,
            self.exited, self.energy_drift,
        )


@dataclass
class EquivalenceResult:
    """Outcome of comparing g- and gbar-geodesics from matched initial data."""

    verdict: str
    distances: np.ndarray
    x0: np.ndarray
    v0: np.ndarray
    tol: float
    exited: int
    worst_index: Optional[int] = None
    traces: List[Tuple[GeodesicTrace, GeodesicTrace]] = field(default_factory=list)

    @property
    def max_distance(self) -> float:
        finite = self.distances[np.isfinite(self.distances)]
        return float(np.max(finite)) if finite.size else float("nan")


def hamilton_rhs(metric: MetricField, x: np.ndarray, p: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """x' = g^{-1} p and p'_i = 1/2 v^T (d_i g) v with v = g^{-1} p."""
    v = np.linalg.solve(metric(x), p[..., None])[..., 0]
    dg = metric_gradient(metric, x)
    pdot = 0.5 * np.einsum("...a,...iab,...b->...i", v, dg, v)
    return v, pdot


def _rk4_step(metric: MetricField, x: np.ndarray, p: np.ndarray, h: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    h = h[:, None]
    k1x, k1p = hamilton_rhs(metric, x, p)
    k2x, k2p = hamilton_rhs(metric, x + 0.5 * h * k1x, p + 0.5 * h * k1p)
    k3x, k3p = hamilton_rhs(metric, x + 0.5 * h * k2x, p + 0.5 * h * k2p)
    k4x, k4p = hamilton_rhs(metric, x + h * k3x, p + h * k3p)
    return (
        x + h / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x),
        p + h / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p),
    )


def _midpoint_step(metric: MetricField, x: np.ndarray, p: np.ndarray, h: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Implicit midpoint rule solved by fixed-point iteration, started from an explicit Euler guess."""
    h = h[:, None]
    vx, vp = hamilton_rhs(metric, x, p)
    new_x, new_p = x + h * vx, p + h * vp
    for _ in range(MIDPOINT_MAX_ITER):
        mx, mp = hamilton_rhs(metric, 0.5 * (x + new_x), 0.5 * (p + new_p))
        next_x, next_p = x + h * mx, p + h * mp
        change = max(float(np.max(np.abs(next_x - new_x))), float(np.max(np.abs(next_p - new_p))))
        new_x, new_p = next_x, next_p
        if change <= MIDPOINT_TOL:
            break
    return new_x, new_p


def _hamiltonian_values(metric: MetricField, x: np.ndarray, p: np.ndarray) -> np.ndarray:
    return 0.5 * np.einsum("...i,...i->...", p, np.linalg.solve(metric(x), p[..., None])[..., 0])


def integrate_batch(
    metric: MetricField,
    x0: np.ndarray,
    p0: np.ndarray,
    t_end: np.ndarray,
    n_steps: int,
    method: str = "rk4",
) -> List[GeodesicTrace]:
    """
    Integrate several geodesics at once, geodesic i with step t_end[i]/n_steps.

    Args:
        metric: Metric generating the flow
        x0: Start points (B, n), inside the chart
        p0: Start momenta (B, n)
        t_end: End times (B,) or a scalar, positive
        n_steps: Number of steps per geodesic
        method: "rk4" or "midpoint"

    Returns:
        One GeodesicTrace per geodesic, truncated at a domain exit
    """
    if method not in METHODS:
        raise ConfigurationError(f"unknown integrator '{method}'", {"methods": list(METHODS)})
    x = np.array(x0, dtype=float, ndmin=2)
    p = np.array(p0, dtype=float, ndmin=2)
    batch = x.shape[0]
    t_end = np.broadcast_to(np.asarray(t_end, dtype=float), (batch,))
    if np.any(t_end <= 0) or n_steps < 1:
        raise IntegrationError("integration interval and step count must be positive")
    if not np.all(metric.chart.inside(x)):
        raise IntegrationError("geodesic starts outside the chart", {"x0": x[~metric.chart.inside(x)][0].tolist()})
    h = t_end / n_steps
    step = _rk4_step if method == "rk4" else _midpoint_step

    xs = np.empty((n_steps + 1, batch, x.shape[1]))
    ps = np.empty_like(xs)
    xs[0], ps[0] = x, p
    alive = np.ones(batch, dtype=bool)
    last = np.full(batch, n_steps)
    with np.errstate(all="ignore"):
        for k in range(1, n_steps + 1):
            new_x, new_p = step(metric, x, p, h)
            ok = metric.chart.inside(new_x) & np.all(np.isfinite(new_x), axis=-1) & np.all(np.isfinite(new_p), axis=-1)
            leaving = alive & ~ok
            last[leaving] = k - 1
            alive &= ok
            x = np.where(alive[:, None], new_x, x)
            p = np.where(alive[:, None], new_p, p)
            xs[k], ps[k] = x, p
            if not np.any(alive):
                xs[k + 1:], ps[k + 1:] = x, p
                break

    traces = []
    for i in range(batch):
        stop = last[i] + 1
        tx, tp = xs[:stop, i], ps[:stop, i]
        energy = _hamiltonian_values(metric, tx, tp)
        drift = float(np.max(np.abs(energy - energy[0])) / max(abs(float(energy[0])), 1e-300))
        traces.append(
            GeodesicTrace(
                t=h[i] * np.arange(stop),
                x=tx.copy(),
                p=tp.copy(),
                metric_id=metric.label,
                step=float(h[i]),
                method=method,
                exited=bool(last[i] < n_steps),
                energy_drift=drift,
            )
        )
    return traces


def steps_for(t_end: float, step: float) -> int:
    """Number of equal steps no longer than ``step`` covering [0, t_end]."""
    return max(1, int(math.ceil(t_end / step - 1e-9)))


def integrate_geodesic(
    metric: MetricField,
    x0: np.ndarray,
    v0: np.ndarray,
    t_end: float,
    step: float,
    method: str = "rk4",
) -> GeodesicTrace:
    """
    Integrate the geodesic with initial velocity v0, starting from p0 = g(x0) v0.

    The step is shrunk slightly, if needed, so a whole number of steps ends at t_end.

    Raises:
        IntegrationError: step or t_end not positive, x0 outside the chart
        DegeneratePhasePointError: v0 is zero
    """
    if step <= 0 or t_end <= 0:
        raise IntegrationError("step and t_end must be positive", {"step": step, "t_end": t_end})
    x0 = np.asarray(x0, dtype=float)
    v0 = np.asarray(v0, dtype=float)
    if not np.any(v0):
        raise DegeneratePhasePointError("initial velocity is zero")
    if not metric.chart.inside(x0):
        raise IntegrationError("geodesic starts outside the chart", {"x0": x0.tolist()})
    p0 = metric.matrix(x0) @ v0
    return integrate_batch(metric, x0[None], p0[None], t_end, steps_for(t_end, step), method)[0]


def integral_drift(trace: GeodesicTrace, fam: IntegralFamily) -> np.ndarray:
    """max_t |I_k(t) - I_k(0)| / max(1, |I_k(0)|) for every k."""
    values = fam.values(trace.x, trace.p)
    return np.max(np.abs(values - values[0]), axis=0) / np.maximum(1.0, np.abs(values[0]))


def function_drift(
    trace: GeodesicTrace,
    fn: Callable[[np.ndarray, np.ndarray], np.ndarray],
    metric: Optional[MetricField] = None,
) -> float:
    """
    Relative drift of a phase function along a trace.

    With ``metric`` given, fn is a function of (x, xi) and the momenta are
    raised to velocities first.
    """
    second = trace.velocities(metric) if metric is not None else trace.p
    values = np.asarray(fn(trace.x, second), dtype=float)
    return float(np.max(np.abs(values - values[0])) / max(1.0, abs(float(values[0]))))


def _point_polyline_distances(points: np.ndarray, polyline: np.ndarray) -> np.ndarray:
    """Distance from every point to the nearest point of the polyline."""
    if len(polyline) == 1:
        return np.linalg.norm(points - polyline[0], axis=-1)
    start = polyline[:-1]
    seg = polyline[1:] - start
    seg_sq = np.maximum(np.einsum("ij,ij->i", seg, seg), 1e-300)
    out = np.empty(len(points))
    chunk = max(1, _DISTANCE_CHUNK // len(start))
    for lo in range(0, len(points), chunk):
        q = points[lo:lo + chunk, None, :]
        rel = q - start[None]
        s = np.clip(np.einsum("qsi,si->qs", rel, seg) / seg_sq, 0.0, 1.0)
        diff = rel - s[..., None] * seg[None]
        out[lo:lo + chunk] = np.sqrt(np.min(np.einsum("qsi,qsi->qs", diff, diff), axis=1))
    return out


def unparameterized_distance(
    t1: GeodesicTrace, t2: GeodesicTrace, metric: Optional[MetricField] = None
) -> float:
    """
    Symmetrized max-min distance between two traces seen as point sets.

    Distances are chart-Euclidean; with ``metric`` given the chart is rescaled
    by the metric frozen at the start of t1, which keeps the measure
    dimensionless for strongly anisotropic metrics.
    """
    if len(t1) == 0 or len(t2) == 0:
        raise ConfigurationError("cannot compare empty traces")
    a, b = t1.x, t2.x
    if metric is not None:
        factor = np.linalg.cholesky(metric(t1.x[0]))
        a, b = a @ factor, b @ factor
    forward = float(np.max(_point_polyline_distances(a, b)))
    backward = float(np.max(_point_polyline_distances(b, a)))
    return max(forward, backward)


def random_unit_velocities(metric: MetricField, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Random g-unit vectors: v = L^{-T} w with g = L L^T and |w| = 1."""
    w = rng.standard_normal(x.shape)
    w /= np.linalg.norm(w, axis=-1, keepdims=True)
    lower = np.linalg.cholesky(metric.matrix(x))
    return np.linalg.solve(np.swapaxes(lower, -1, -2), w[..., None])[..., 0]


def trace_length(trace: GeodesicTrace, velocity_metric: MetricField, length_metric: MetricField) -> float:
    """Length in length_metric of a trace generated by velocity_metric (trapezoid rule)."""
    xi = trace.velocities(velocity_metric)
    speed = np.sqrt(np.einsum("ti,tij,tj->t", xi, length_metric(trace.x), xi))
    return float(trapezoid(speed, trace.t))


def check_equivalence(
    pair: MetricPair,
    n_geodesics: Optional[int] = None,
    t_end: Optional[float] = None,
    step: Optional[float] = None,
    tol: Optional[float] = None,
    seed: Optional[int] = None,
    method: str = "rk4",
    keep_traces: bool = False,
) -> EquivalenceResult:
    """
    Compare g- and gbar-geodesics from matched initial conditions as unparameterized curves.

    For each random g-unit (x0, v0) the g-geodesic runs for t_end; the
    gbar-geodesic starts from the orbital image of v0 (a gbar-unit vector) and
    runs for the gbar-length of the g-trace, so both traces cover the same arc
    when the metrics are geodesically equivalent.

    Args:
        pair: Metric pair
        n_geodesics: Number of random geodesics
        t_end: g-time of every g-geodesic
        step: Integration step of the g-geodesics
        tol: Distance threshold for PASS
        seed: Random seed
        method: "rk4" or "midpoint"
        keep_traces: Keep the compared traces in the result

    Returns:
        EquivalenceResult: PASS if every compared distance is within tol, FAIL
        with the worst offender otherwise, INCONCLUSIVE if every geodesic left the chart
    """
    n_geodesics = n_geodesics or settings.DEFAULT_GEODESICS
    t_end = t_end or settings.DEFAULT_T_END
    step = step or settings.DEFAULT_STEP
    tol = tol or settings.EQUIVALENCE_TOL
    seed = settings.DEFAULT_SEED if seed is None else seed
    if n_geodesics < 1 or t_end <= 0 or step <= 0 or tol <= 0:
        raise ConfigurationError("geodesic count, t_end, step and tol must be positive")

    rng = np.random.default_rng(seed)
    lo, hi = pair.box()
    x0 = lo + (hi - lo) * rng.random((n_geodesics, pair.n))
    v0 = random_unit_velocities(pair.g, x0, rng)
    n_steps = steps_for(t_end, step)

    g_traces = integrate_batch(pair.g, x0, np.einsum("bij,bj->bi", pair.g.matrix(x0), v0), t_end, n_steps, method)
    lengths = np.array(
        [trace_length(tr, pair.g, pair.gbar) if not tr.exited else np.nan for tr in g_traces]
    )
    usable = np.isfinite(lengths) & (lengths > 0)

    distances = np.full(n_geodesics, np.nan)
    kept: List[Tuple[GeodesicTrace, GeodesicTrace]] = []
    if np.any(usable):
        vbar0 = orbital_map(pair, x0[usable], v0[usable])
        pbar0 = np.einsum("bij,bj->bi", pair.gbar.matrix(x0[usable]), vbar0)
        bar_traces = integrate_batch(pair.gbar, x0[usable], pbar0, lengths[usable], n_steps, method)
        indices = np.flatnonzero(usable)
        compared = [(i, g_traces[i], tb) for i, tb in zip(indices, bar_traces) if not tb.exited]
        values = parallel_map(lambda item: unparameterized_distance(item[1], item[2]), compared)
        for (i, tg, tb), d in zip(compared, values):
            distances[i] = d
            if keep_traces:
                kept.append((tg, tb))

    exited = int(np.sum(~np.isfinite(distances)))
    if exited == n_geodesics:
        verdict, worst = "INCONCLUSIVE", None
    else:
        worst = int(np.nanargmax(distances))
        verdict = "PASS" if distances[worst] <= tol else "FAIL"
    logger.info(
        "check_equivalence",
        pair=pair.name,
        geodesics=n_geodesics,
        exited=exited,
        verdict=verdict,
        max_distance=None if worst is None else float(distances[worst]),
    )
    return EquivalenceResult(verdict, distances, x0, v0, tol, exited, worst, kept)
