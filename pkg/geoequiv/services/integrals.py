"""
The quadratic integrals I_0..I_{n-1}, canonical Poisson brackets, rank analysis,
the orbital map and the transfer of linear integrals.

Phase-space functions are vectorized callables f(x, p) over (..., n) arrays
returning (...) values (or (..., K) for several functions at once).
"""
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from geoequiv.core.config import settings
from geoequiv.core.errors import ConfigurationError, DegeneratePhasePointError
from geoequiv.core.logging import get_logger
from geoequiv.services.equivalence_tensors import MetricPair, s_operators
from geoequiv.services.expr import Expression, parse
from geoequiv.utils.parallel import parallel_map, split_rows

logger = get_logger(__name__)

PhaseFunction = Callable[[np.ndarray, np.ndarray], np.ndarray]

DEGENERATE_MOMENTUM = 1e-8


@dataclass(frozen=True)
class PhasePoint:
    """Position x and momentum covector p (single point or stacked batch)."""

    x: np.ndarray
    p: np.ndarray

    @classmethod
    def of(cls, x: Sequence[float], p: Sequence[float]) -> "PhasePoint":
        return cls(np.asarray(x, dtype=float), np.asarray(p, dtype=float))


@dataclass(frozen=True)
class IntegralFamily:
    """I_k(x, p) = p^T S_k g^{-1} p for k = 0..n-1 over a metric pair."""

    pair: MetricPair

    @property
    def n(self) -> int:
        return self.pair.n

    def values(self, x: np.ndarray, p: np.ndarray, check: bool = False) -> np.ndarray:
        """All integrals at once, shape (..., n)."""
        x = np.asarray(x, dtype=float)
        p = np.asarray(p, dtype=float)
        g, gbar = self.pair.matrices(x, check=check)
        s = s_operators(g, gbar)
        xi = np.linalg.solve(g, p[..., None])[..., 0]
        # p_j (S_k)^j_a xi^a for every k
        return np.einsum("...j,...kja,...a->...k", p, s, xi)

    def integral(self, k: int) -> PhaseFunction:
        if not 0 <= k < self.n:
            raise ConfigurationError(f"integral index {k} outside 0..{self.n - 1}")
        return lambda x, p: self.values(x, p)[..., k]


def integral_family(pair: MetricPair) -> IntegralFamily:
    return IntegralFamily(pair)


def hamiltonian(pair: MetricPair, pp: PhasePoint, check: bool = True) -> np.ndarray:
    """H = 1/2 p^T g^{-1} p."""
    g = pair.g.matrix(pp.x, check=check)
    p = np.asarray(pp.p, dtype=float)
    value = 0.5 * np.einsum("...i,...i->...", p, np.linalg.solve(g, p[..., None])[..., 0])
    return float(value) if np.ndim(value) == 0 else value


def eval_I(fam: IntegralFamily, k: int, pp: PhasePoint, check: bool = True) -> np.ndarray:
    """
    Evaluate I_k at a phase point in momentum form.

    Raises:
        OutOfDomainError: x outside the chart
        ConfigurationError: k outside 0..n-1
    """
    if not 0 <= k < fam.n:
        raise ConfigurationError(f"integral index {k} outside 0..{fam.n - 1}")
    value = fam.values(pp.x, pp.p, check=check)[..., k]
    return float(value) if np.ndim(value) == 0 else value


def eval_I_velocity(fam: IntegralFamily, k: int, x: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """Invariant form g(S_k xi, xi) of I_k on tangent vectors."""
    x = np.asarray(x, dtype=float)
    xi = np.asarray(xi, dtype=float)
    g, gbar = fam.pair.matrices(x)
    s = s_operators(g, gbar, [k])[..., 0, :, :]
    value = np.einsum("...i,...ij,...jk,...k->...", xi, g, s, xi)
    return float(value) if np.ndim(value) == 0 else value


def phase_steps(z: np.ndarray, fd_step: float) -> np.ndarray:
    return fd_step * (1.0 + np.abs(z))


def phase_gradient(
    f: PhaseFunction, x: np.ndarray, p: np.ndarray, fd_step: Optional[float] = None, chart=None
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Central-difference gradients of f in x and in p.

    All 4n stencil points are stacked into one batched call of f. When f
    returns (...) the gradients are (..., n); when it returns (..., K) they
    are (..., n, K).

    Raises:
        OutOfDomainError: a position stencil point leaves the chart (when chart is given)
    """
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    fd_step = fd_step or settings.PHASE_FD_STEP
    n = x.shape[-1]
    eye = np.eye(n)
    hx = phase_steps(x, fd_step)
    hp = phase_steps(p, fd_step)
    dx = eye * hx[..., None, :]
    dp = eye * hp[..., None, :]
    xs = np.concatenate(
        [x[..., None, :] + dx, x[..., None, :] - dx, np.repeat(x[..., None, :], 2 * n, axis=-2)], axis=-2
    )
    ps = np.concatenate(
        [np.repeat(p[..., None, :], 2 * n, axis=-2), p[..., None, :] + dp, p[..., None, :] - dp], axis=-2
    )
    if chart is not None:
        chart.require(xs)
    values = np.asarray(f(xs, ps), dtype=float)
    extra = values.ndim - xs.ndim + 1
    shape_hx = (2.0 * hx).reshape(hx.shape + (1,) * extra)
    shape_hp = (2.0 * hp).reshape(hp.shape + (1,) * extra)
    grad_x = (_take(values, 0, n, extra) - _take(values, n, 2 * n, extra)) / shape_hx
    grad_p = (_take(values, 2 * n, 3 * n, extra) - _take(values, 3 * n, 4 * n, extra)) / shape_hp
    return grad_x, grad_p


def _take(values: np.ndarray, start: int, stop: int, extra: int) -> np.ndarray:
    """Slice the stencil axis, which sits before ``extra`` trailing value axes."""
    index = (Ellipsis, slice(start, stop)) + (slice(None),) * extra
    return values[index]


def poisson_bracket(
    f: PhaseFunction, h: PhaseFunction, pp: PhasePoint, fd_step: Optional[float] = None, chart=None
) -> np.ndarray:
    """
    Canonical bracket {f, h} = sum_i (df/dx^i dh/dp_i - df/dp_i dh/dx^i), so {x^i, p_i} = +1.

    Raises:
        OutOfDomainError: a stencil point leaves the chart (when chart is given)
    """
    fx, fp = phase_gradient(f, pp.x, pp.p, fd_step, chart)
    hx, hp = phase_gradient(h, pp.x, pp.p, fd_step, chart)
    value = np.sum(fx * hp - fp * hx, axis=-1)
    return float(value) if np.ndim(value) == 0 else value


def bracket_matrix(
    fam: IntegralFamily, x: np.ndarray, p: np.ndarray, fd_step: Optional[float] = None
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Brackets {I_j, I_k} for all pairs and the integral values, at a batch of phase points.

    Returns:
        Tuple of (brackets (..., n, n), integral values (..., n))
    """
    gx, gp = phase_gradient(fam.values, x, p, fd_step)
    # gx, gp: (..., n coords, n integrals)
    brackets = np.einsum("...ij,...ik->...jk", gx, gp) - np.einsum("...ij,...ik->...jk", gp, gx)
    return brackets, fam.values(x, p)


def bracket_scale(values: np.ndarray, p: np.ndarray) -> np.ndarray:
    """max(1, |I_j|, |I_k|) * max(1, |p|^2) for every (j, k)."""
    mags = np.abs(values)
    pair_max = np.maximum(np.maximum(mags[..., :, None], mags[..., None, :]), 1.0)
    return pair_max * np.maximum(1.0, np.sum(p * p, axis=-1))[..., None, None]


def sample_phase_points(
    pair: MetricPair, count: int, rng: np.random.Generator
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Uniform positions in the sampling box with momenta on the unit g-cosphere.

    With g = L L^T and w uniform on the unit sphere, p = L w has p^T g^{-1} p = 1.
    """
    lo, hi = pair.box()
    x = lo + (hi - lo) * rng.random((count, pair.n))
    w = rng.standard_normal((count, pair.n))
    w /= np.linalg.norm(w, axis=-1, keepdims=True)
    lower = np.linalg.cholesky(pair.g.matrix(x))
    p = np.einsum("...ij,...j->...i", lower, w)
    return x, p


@dataclass
class BracketResult:
    """Per-(j, k) maxima of normalized brackets over the sampled phase points."""

    values: np.ndarray
    argmax_x: np.ndarray
    argmax_p: np.ndarray
    halved: np.ndarray
    samples: int
    skipped: int

    @property
    def max_value(self) -> float:
        return float(np.max(self.values)) if self.values.size else 0.0

    def richardson_ratio(self) -> float:
        """Ratio of the maxima at steps h and h/2; about 4 when the residual is O(h^2) noise."""
        top = float(np.max(self.halved)) if self.halved.size else 0.0
        return self.max_value / top if top > 0 else float("inf")


def _stencil_inside(pair: MetricPair, x: np.ndarray, fd_step: float) -> np.ndarray:
    h = phase_steps(x, fd_step)
    mask = pair.chart.inside(x)
    for i in range(pair.n):
        shift = np.zeros_like(x)
        shift[:, i] = h[:, i]
        mask &= pair.chart.inside(x + shift) & pair.chart.inside(x - shift)
    return mask


def bracket_report(
    fam: IntegralFamily,
    samples: int,
    seed: Optional[int] = None,
    fd_step: Optional[float] = None,
) -> BracketResult:
    """
    Maximum normalized |{I_j, I_k}| over seeded phase points.

    The same sample is evaluated again at half the step as a Richardson check:
    a true zero shows up as fd noise shrinking about four times.

    Args:
        fam: Integral family of the pair
        samples: Number of phase points (at least one)
        seed: Random seed, defaults to settings.DEFAULT_SEED
        fd_step: Phase-space finite-difference step

    Returns:
        BracketResult: symmetric maxima with zero diagonal, argmax points and skip count
    """
    if samples < 1:
        raise ConfigurationError("samples must be at least 1", {"samples": samples})
    seed = settings.DEFAULT_SEED if seed is None else seed
    fd_step = fd_step or settings.PHASE_FD_STEP
    rng = np.random.default_rng(seed)
    x, p = sample_phase_points(fam.pair, samples, rng)
    keep = _stencil_inside(fam.pair, x, fd_step)
    x, p = x[keep], p[keep]
    skipped = int(samples - len(x))
    n = fam.n

    def normalized(chunk: Tuple[np.ndarray, np.ndarray]) -> Tuple[np.ndarray, np.ndarray]:
        cx, cp = chunk
        full, values = bracket_matrix(fam, cx, cp, fd_step)
        half, _ = bracket_matrix(fam, cx, cp, fd_step / 2.0)
        scale = bracket_scale(values, cp)
        return np.abs(full) / scale, np.abs(half) / scale

    if len(x) == 0:
        empty = np.zeros((n, n))
        logger.warning("bracket_report_no_samples", pair=fam.pair.name, skipped=skipped)
        return BracketResult(empty, np.zeros((n, n, n)), np.zeros((n, n, n)), empty, 0, skipped)

    chunks = list(zip(split_rows(x), split_rows(p)))
    results = parallel_map(normalized, chunks)
    full = np.concatenate([r[0] for r in results])
    half = np.concatenate([r[1] for r in results])

    best = np.argmax(full, axis=0)
    values = np.take_along_axis(full, best[None], axis=0)[0]
    logger.info(
        "bracket_report", pair=fam.pair.name, samples=len(x), skipped=skipped, max_bracket=float(np.max(values))
    )
    return BracketResult(
        values=values,
        argmax_x=x[best],
        argmax_p=p[best],
        halved=np.max(half, axis=0),
        samples=int(len(x)),
        skipped=skipped,
    )


def differential_ranks(
    fam: IntegralFamily, x: np.ndarray, p: np.ndarray, rank_tol: Optional[float] = None,
    fd_step: Optional[float] = None,
) -> np.ndarray:
    """
    Numeric rank of the n x 2n matrix of gradients of I_0..I_{n-1} at a batch of phase points.

    Degenerate points (|p| below 1e-8) are reported as -1.
    """
    rank_tol = rank_tol or settings.RANK_TOL
    x = np.atleast_2d(np.asarray(x, dtype=float))
    p = np.atleast_2d(np.asarray(p, dtype=float))
    gx, gp = phase_gradient(fam.values, x, p, fd_step)
    # rows: integrals, columns: (x, p)
    jac = np.concatenate([np.swapaxes(gx, -1, -2), np.swapaxes(gp, -1, -2)], axis=-1)
    s = np.linalg.svd(jac, compute_uv=False)
    ranks = np.sum(s > rank_tol * s[..., :1], axis=-1)
    degenerate = np.linalg.norm(p, axis=-1) < DEGENERATE_MOMENTUM
    return np.where(degenerate, -1, ranks)


def differential_rank(
    fam: IntegralFamily, pp: PhasePoint, rank_tol: Optional[float] = None
) -> Optional[int]:
    """
    Dimension of span{dI_0, ..., dI_{n-1}} at one phase point.

    Returns:
        The numeric rank, or None when the momentum is too small for a meaningful rank
    """
    fam.pair.chart.require(pp.x)
    rank = int(differential_ranks(fam, pp.x, pp.p, rank_tol)[0])
    return None if rank < 0 else rank


def orbital_map(pair: MetricPair, x: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """
    xi' = (|xi|_g / |xi|_gbar) xi, carrying g-unit vectors to gbar-unit vectors.

    Raises:
        DegeneratePhasePointError: xi is the zero vector
    """
    x = np.asarray(x, dtype=float)
    xi = np.asarray(xi, dtype=float)
    g, gbar = pair.matrices(x)
    norm_g = np.sqrt(np.einsum("...i,...ij,...j->...", xi, g, xi))
    norm_gbar = np.sqrt(np.einsum("...i,...ij,...j->...", xi, gbar, xi))
    if np.any(norm_g == 0.0):
        raise DegeneratePhasePointError("orbital map of the zero vector")
    return (norm_g / norm_gbar)[..., None] * xi


CovectorField = Union[Sequence[Union[str, Expression]], Callable[[np.ndarray], np.ndarray]]


def killing_transfer(pair: MetricPair, a: CovectorField) -> PhaseFunction:
    """
    Transfer a linear integral of the gbar-flow to the g-flow.

    If sum a_i xi^i is conserved along gbar-geodesics, then
    (det g/det gbar)^{1/(n+1)} sum a_i(x) xi^i is conserved along g-geodesics.

    Args:
        pair: Metric pair
        a: Covector field, n expressions over the chart coordinates or a
           vectorized callable x -> (..., n)

    Returns:
        Function of (x, xi) with xi a tangent vector
    """
    n = pair.n
    if callable(a):
        covector = a
    else:
        parsed: List[Expression] = [c if isinstance(c, Expression) else parse(str(c), pair.chart.names) for c in a]
        if len(parsed) != n:
            raise ConfigurationError(f"covector needs {n} components", {"given": len(parsed)})

        def covector(x: np.ndarray) -> np.ndarray:
            x = np.asarray(x, dtype=float)
            return np.stack([np.broadcast_to(c.evaluate(x), x.shape[:-1]) for c in parsed], axis=-1)

    def transferred(x: np.ndarray, xi: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        g, gbar = pair.g(x), pair.gbar(x)
        factor = (np.linalg.det(g) / np.linalg.det(gbar)) ** (1.0 / (n + 1))
        return factor * np.einsum("...i,...i->...", covector(x), np.asarray(xi, dtype=float))

    return transferred
