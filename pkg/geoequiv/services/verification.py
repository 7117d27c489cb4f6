"""
Verification service shared by the command line and the HTTP API.
Resolves pair sources and runs the verification suites, producing report models
and CSV/JSON exports.
"""
import json
from pathlib import Path
from typing import Any, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import ValidationError
from scipy.interpolate import RegularGridInterpolator

from geoequiv.core.config import settings
from geoequiv.core.errors import ConfigurationError
from geoequiv.core.logging import get_logger
from geoequiv.schemas.pairs import PairDefinition, PairSource, RunConfig, TabulatedPair
from geoequiv.schemas.reports import (
    EXIT_CODES,
    BracketEntry,
    BracketReport,
    CatalogEntryInfo,
    CheckReport,
    CommutatorRow,
    DriftReport,
    EquivalenceReport,
    GeodesicsReport,
    GeodesicStart,
    QuantumReport,
    RankSummary,
    ScanReport,
    SinjukovReport,
    TraceSummary,
    Verdict,
    combine,
)
from geoequiv.services import catalog
from geoequiv.services.equivalence_tensors import (
    MetricPair,
    build_G,
    distinct_eigenvalue_count,
    sample_points,
    sinjukov_transform,
)
from geoequiv.services.geodesic_flow import (
    EquivalenceResult,
    check_equivalence,
    integral_drift,
    integrate_batch,
    random_unit_velocities,
    steps_for,
)
from geoequiv.services.integrals import (
    PhasePoint,
    bracket_report,
    differential_ranks,
    hamiltonian,
    integral_family,
    sample_phase_points,
)
from geoequiv.services.metric_core import Chart, MetricField
from geoequiv.services.quantum_ops import build_quantum_I, probe_functions, quantum_study
from geoequiv.utils.export import quantity_rows, write_grid_function, write_json, write_long_csv, write_rows
from geoequiv.utils.parallel import parallel_map, split_rows

logger = get_logger(__name__)

# Share of nondegenerate samples whose rank must equal the eigenvalue count
RANK_SHARE_MIN = 0.95
IDENTITY_TOL = 1e-10
ROUND_TRIP_TOL = 1e-10
ROUND_TRIP_POINTS = 50
# Nodes per axis of exported tables on charts of dimension > 2
TABLE_NODES_HIGH_DIM = 12


def _finite_or_none(value: float) -> Optional[float]:
    return float(value) if np.isfinite(value) else None


def _tabulated_field(chart: Chart, table: TabulatedPair, values: Any, label: str, fd_step: float) -> MetricField:
    """Cubic interpolation of tabulated matrices over the chart; periodic coordinates are wrapped first."""
    n = chart.n
    axes = tuple(np.asarray(axis, dtype=float) for axis in table.axes)
    data = np.asarray(values, dtype=float)
    expected = tuple(len(axis) for axis in axes) + (n, n)
    if data.shape != expected:
        raise ConfigurationError(
            f"tabulated '{label}' has shape {list(data.shape)}, expected {list(expected)}",
            {"shape": list(data.shape)},
        )
    interpolator = RegularGridInterpolator(axes, data, method="cubic", bounds_error=False, fill_value=None)

    def evaluator(x: np.ndarray) -> np.ndarray:
        x = chart.wrap(np.asarray(x, dtype=float))
        flat = x.reshape(-1, n)
        return interpolator(flat).reshape(x.shape[:-1] + (n, n))

    return MetricField(chart, evaluator, fd_step=fd_step, label=label)


class VerificationService:
    """
    Service for resolving metric pairs and running verification suites.

    Every suite is deterministic for a given RunConfig: randomness comes from
    the configured seed only, and parallel work keeps the input order.
    """

    # Pair resolution

    def load_definition(self, path: str) -> PairDefinition:
        """
        Read and validate a pair-definition JSON file.

        Raises:
            ConfigurationError: missing file, malformed JSON or invalid definition
        """
        file_path = Path(path)
        if not file_path.is_file():
            raise ConfigurationError(f"pair definition file '{path}' not found", {"path": str(path)})
        try:
            data = json.loads(file_path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigurationError(
                f"invalid JSON in '{path}': {exc.msg}", {"line": exc.lineno, "column": exc.colno}
            ) from exc
        try:
            definition = PairDefinition.model_validate(data)
        except ValidationError as exc:
            raise ConfigurationError(
                f"invalid pair definition '{path}'",
                {"errors": [{"loc": [str(p) for p in e["loc"]], "msg": e["msg"]} for e in exc.errors()]},
            ) from exc
        if definition.name is None and definition.catalog is None:
            definition.name = file_path.stem
        return definition

    def pair_from_definition(self, definition: PairDefinition) -> MetricPair:
        """
        Build a MetricPair from a validated definition.

        Raises:
            CatalogError: unknown catalog entry
            ExpressionSyntaxError, UnknownIdentifierError: malformed entries
        """
        if definition.catalog is not None:
            return catalog.build_pair(definition.catalog, definition.params)
        lower, upper = zip(*definition.domain)
        chart = Chart(
            names=tuple(definition.coords),
            lower=tuple(lower),
            upper=tuple(upper),
            periodic=tuple(definition.periodic),
        )
        if definition.tabulated is not None:
            table = definition.tabulated
            g = _tabulated_field(chart, table, table.g, "g", definition.fd_step)
            gbar = _tabulated_field(chart, table, table.gbar, "gbar", definition.fd_step)
            logger.warning("tabulated_pair", name=definition.name, notice=table.notice)
        else:
            g = MetricField.from_expressions(chart, definition.g, fd_step=definition.fd_step, label="g")
            gbar = MetricField.from_expressions(chart, definition.gbar, fd_step=definition.fd_step, label="gbar")
        box = tuple(tuple(b) for b in definition.sample_box) if definition.sample_box else None
        return MetricPair(g=g, gbar=gbar, name=definition.name or "custom", sample_box=box)

    def resolve_pair(self, source: PairSource) -> MetricPair:
        """Resolve a catalog reference, a definition file or an inline definition."""
        if source.catalog is not None:
            return catalog.build_pair(source.catalog, source.params)
        if source.file is not None:
            return self.pair_from_definition(self.load_definition(source.file))
        return self.pair_from_definition(source.definition)

    # Suites on a resolved pair

    def bracket_suite(self, pair: MetricPair, config: RunConfig, tol: Optional[float] = None) -> BracketReport:
        """Maximum normalized brackets {I_j, I_k} over seeded phase points."""
        tol = tol or settings.BRACKET_TOL
        result = bracket_report(integral_family(pair), config.samples, config.seed)
        n = pair.n
        entries = [
            BracketEntry(
                j=j,
                k=k,
                max_normalized_bracket=float(result.values[j, k]),
                halved_step=float(result.halved[j, k]),
                argmax_x=result.argmax_x[j, k].tolist(),
                argmax_p=result.argmax_p[j, k].tolist(),
            )
            for j in range(n)
            for k in range(j + 1, n)
        ]
        if result.samples == 0:
            verdict = Verdict.INCONCLUSIVE
        else:
            verdict = Verdict.PASS if result.max_value <= tol else Verdict.FAIL
        return BracketReport(
            pair=pair.name,
            samples=result.samples,
            skipped=result.skipped,
            seed=config.seed,
            fd_step=settings.PHASE_FD_STEP,
            tol=tol,
            entries=entries,
            max_bracket=result.max_value,
            richardson_ratio=_finite_or_none(result.richardson_ratio()) if result.samples else None,
            verdict=verdict,
        )

    def rank_suite(self, pair: MetricPair, config: RunConfig) -> Tuple[RankSummary, float]:
        """
        Differential rank against the distinct eigenvalue count, plus the I_{n-1} + 2H defect.

        Returns:
            Tuple of (rank summary, relative Hamiltonian identity defect)
        """
        rng = np.random.default_rng(config.seed)
        x, p = sample_phase_points(pair, config.samples, rng)
        fam = integral_family(pair)
        chunks = list(zip(split_rows(x), split_rows(p)))
        ranks = np.concatenate(parallel_map(lambda chunk: differential_ranks(fam, chunk[0], chunk[1]), chunks))
        distinct = np.atleast_1d(distinct_eigenvalue_count(build_G(pair, x)))

        nondegenerate = ranks >= 0
        matches = ranks[nondegenerate] == distinct[nondegenerate]
        share = float(np.mean(matches)) if matches.size else 0.0
        non_proportional = float(np.mean(distinct == pair.n))
        if not matches.size:
            verdict = Verdict.INCONCLUSIVE
        else:
            verdict = Verdict.PASS if share >= RANK_SHARE_MIN else Verdict.FAIL

        values = fam.values(x, p)
        two_h = 2.0 * np.asarray(hamiltonian(pair, PhasePoint(x, p)))
        identity_defect = float(np.max(np.abs(values[:, -1] + two_h) / np.maximum(1.0, np.abs(two_h))))

        ranks_found, rank_counts = np.unique(ranks[nondegenerate], return_counts=True)
        distinct_found, distinct_counts = np.unique(distinct, return_counts=True)
        summary = RankSummary(
            pair=pair.name,
            samples=int(len(x)),
            degenerate=int(np.sum(~nondegenerate)),
            rank_histogram={int(r): int(c) for r, c in zip(ranks_found, rank_counts)},
            distinct_histogram={int(d): int(c) for d, c in zip(distinct_found, distinct_counts)},
            rank_matches_distinct=share,
            non_proportional_share=non_proportional,
            verdict=verdict,
        )
        logger.info("rank_suite", pair=pair.name, share=share, identity_defect=identity_defect)
        return summary, identity_defect

    def equivalence_suite(
        self, pair: MetricPair, config: RunConfig, tol: Optional[float] = None
    ) -> Tuple[EquivalenceReport, EquivalenceResult]:
        """Unparameterized comparison of matched g- and gbar-geodesics."""
        tol = tol or settings.EQUIVALENCE_TOL
        result = check_equivalence(
            pair,
            n_geodesics=config.geodesics,
            t_end=config.t_end,
            step=config.step,
            tol=tol,
            seed=config.seed,
            method=config.method,
            keep_traces=True,
        )
        worst = None
        if result.worst_index is not None:
            i = result.worst_index
            worst = GeodesicStart(
                index=i, x0=result.x0[i].tolist(), v0=result.v0[i].tolist(), distance=float(result.distances[i])
            )
        report = EquivalenceReport(
            pair=pair.name,
            geodesics=config.geodesics,
            t_end=config.t_end,
            step=config.step,
            method=config.method,
            tol=tol,
            distances=[_finite_or_none(d) for d in result.distances],
            max_distance=_finite_or_none(result.max_distance),
            exited=result.exited,
            worst=worst,
            verdict=Verdict(result.verdict),
        )
        return report, result

    def drift_suite(self, pair: MetricPair, config: RunConfig, result: EquivalenceResult) -> DriftReport:
        """Relative drift of every I_k along the g-geodesics of an equivalence run."""
        fam = integral_family(pair)
        g_traces = [trace for trace, _ in result.traces]
        if g_traces:
            drifts = np.max(np.stack([integral_drift(trace, fam) for trace in g_traces]), axis=0)
            energy = max(trace.energy_drift for trace in g_traces)
            verdict = Verdict.PASS if float(np.max(drifts)) <= settings.DRIFT_TOL else Verdict.FAIL
        else:
            drifts, energy, verdict = np.zeros(0), 0.0, Verdict.INCONCLUSIVE
        return DriftReport(
            pair=pair.name,
            geodesics=len(g_traces),
            step=config.step,
            t_end=config.t_end,
            integral_drift=[float(d) for d in drifts],
            energy_drift=float(energy),
            exited=config.geodesics - len(g_traces),
            tol=settings.DRIFT_TOL,
            verdict=verdict,
        )

    def check_pair(self, pair: MetricPair, config: RunConfig) -> CheckReport:
        """Brackets, geodesic equivalence, integral drift, rank and the Hamiltonian identity."""
        brackets = self.bracket_suite(pair, config)
        equivalence, result = self.equivalence_suite(pair, config, config.tol)
        drift = self.drift_suite(pair, config, result)
        rank, identity_defect = self.rank_suite(pair, config)
        identity_verdict = Verdict.PASS if identity_defect <= IDENTITY_TOL else Verdict.FAIL
        verdict = combine([brackets.verdict, equivalence.verdict, drift.verdict, rank.verdict, identity_verdict])
        logger.info("check_pair", pair=pair.name, verdict=verdict.value)
        return CheckReport(
            pair=pair.name,
            brackets=brackets,
            equivalence=equivalence,
            drift=drift,
            rank=rank,
            hamiltonian_identity_defect=identity_defect,
            verdict=verdict,
        )

    # Commands

    def run_check(self, config: RunConfig) -> CheckReport:
        """Resolve the pair, run every check and write the long-format CSV when requested."""
        report = self.check_pair(self.resolve_pair(config.source), config)
        if config.emit:
            report.emitted = str(write_long_csv(config.emit, check_rows(report)))
        return report

    def run_brackets(self, config: RunConfig) -> BracketReport:
        pair = self.resolve_pair(config.source)
        report = self.bracket_suite(pair, config, config.tol)
        if config.emit:
            rows = bracket_rows(report) + [("verdict", "", "", EXIT_CODES[report.verdict])]
            report.emitted = str(write_long_csv(config.emit, rows))
        return report

    def run_rank(self, config: RunConfig) -> RankSummary:
        pair = self.resolve_pair(config.source)
        summary, _ = self.rank_suite(pair, config)
        if config.emit:
            rows = rank_rows(summary) + [("verdict", "", "", EXIT_CODES[summary.verdict])]
            summary.emitted = str(write_long_csv(config.emit, rows))
        return summary

    def run_sinjukov(self, config: RunConfig) -> SinjukovReport:
        """
        Check the B-transformed pair and the round trip of the transform.

        With ``emit`` set, the transformed pair is written as a definition file
        with tabulated entries.
        """
        pair = self.resolve_pair(config.source)
        power = config.power or 1
        transformed = sinjukov_transform(pair, power)
        check = self.check_pair(transformed, config)

        back = sinjukov_transform(transformed, -power)
        x = sample_points(pair, ROUND_TRIP_POINTS, np.random.default_rng(config.seed))
        defect = 0.0
        for original, returned in ((pair.g, back.g), (pair.gbar, back.gbar)):
            reference = original.matrix(x)
            scale = np.maximum(1.0, np.max(np.abs(reference), axis=(-2, -1)))
            defect = max(defect, float(np.max(np.max(np.abs(returned(x) - reference), axis=(-2, -1)) / scale)))

        emitted = None
        if config.emit:
            nodes = config.grid[0] if pair.n == 2 else TABLE_NODES_HIGH_DIM
            definition = self.tabulate_pair(transformed, nodes)
            emitted = str(write_json(config.emit, definition.model_dump(exclude_none=True)))

        round_trip = Verdict.PASS if defect <= ROUND_TRIP_TOL else Verdict.FAIL
        return SinjukovReport(
            pair=pair.name,
            power=power,
            transformed=transformed.name,
            round_trip_defect=defect,
            emitted=emitted,
            check=check,
            verdict=combine([check.verdict, round_trip]),
        )

    def tabulate_pair(self, pair: MetricPair, nodes: int) -> PairDefinition:
        """
        Sample both metrics on a tensor grid and wrap them as a tabulated definition.

        Bounded axes use cell centres of the chart interval (or of the sampling
        box when the interval is infinite); periodic axes cover a full period
        including its end point.
        """
        chart = pair.chart
        box_lo, box_hi = pair.box()
        axes: List[np.ndarray] = []
        domain: List[Tuple[float, float]] = []
        for i in range(chart.n):
            if chart.periodic[i]:
                axis = np.linspace(chart.lower[i], chart.upper[i], nodes + 1)
                domain.append((chart.lower[i], chart.upper[i]))
            else:
                lo = chart.lower[i] if np.isfinite(chart.lower[i]) else box_lo[i]
                hi = chart.upper[i] if np.isfinite(chart.upper[i]) else box_hi[i]
                axis = lo + (np.arange(nodes) + 0.5) * (hi - lo) / nodes
                domain.append((float(axis[0]), float(axis[-1])))
            axes.append(axis)
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        g, gbar = pair.matrices(mesh)
        sample_box = [
            (max(float(lo), d_lo), min(float(hi), d_hi)) for lo, hi, (d_lo, d_hi) in zip(box_lo, box_hi, domain)
        ]
        return PairDefinition(
            name=pair.name,
            n=chart.n,
            coords=list(chart.names),
            domain=domain,
            periodic=list(chart.periodic),
            tabulated=TabulatedPair(axes=[a.tolist() for a in axes], g=g.tolist(), gbar=gbar.tolist()),
            fd_step=pair.g.fd_step,
            sample_box=sample_box,
        )

    def run_geodesics(self, config: RunConfig) -> GeodesicsReport:
        """Integrate seeded geodesics of g (or gbar) and optionally export the traces."""
        pair = self.resolve_pair(config.source)
        metric = pair.g if config.metric == "g" else pair.gbar
        rng = np.random.default_rng(config.seed)
        x0 = sample_points(pair, config.geodesics, rng)
        v0 = random_unit_velocities(metric, x0, rng)
        p0 = np.einsum("bij,bj->bi", metric.matrix(x0), v0)
        traces = integrate_batch(metric, x0, p0, config.t_end, steps_for(config.t_end, config.step), config.method)

        emitted = None
        if config.emit:
            n = pair.n
            header = ["t"] + [f"x{i + 1}" for i in range(n)] + [f"p{i + 1}" for i in range(n)]
            rows = (
                [t, *x, *p] for trace in traces for t, x, p in zip(trace.t, trace.x, trace.p)
            )
            emitted = str(write_rows(config.emit, header, rows))
        return GeodesicsReport(
            pair=pair.name,
            metric=config.metric,
            step=traces[0].step,
            t_end=config.t_end,
            method=config.method,
            traces=[
                TraceSummary(
                    index=i,
                    samples=len(trace),
                    exited=trace.exited,
                    energy_drift=trace.energy_drift,
                    end_point=trace.x[-1].tolist(),
                )
                for i, trace in enumerate(traces)
            ],
            emitted=emitted,
        )

    def run_quantum(self, config: RunConfig) -> QuantumReport:
        """
        Commutator convergence study and adjoint defects.

        With ``emit`` set, the norms go to a long-format CSV and the commutator
        [I_0, I_1] applied to the first probe function on the finest grid goes
        to a companion ``*_commutator.csv`` grid file.
        """
        pair = self.resolve_pair(config.source)
        result = quantum_study(pair, config.grid)
        rows = [
            CommutatorRow(
                j=s.j, k=s.k, resolutions=s.resolutions, norms=s.norms, order=s.order, exact_zero=s.exact_zero
            )
            for s in result.studies
        ]
        report = QuantumReport(
            pair=pair.name,
            grids=list(config.grid),
            commutators=rows,
            adjoint_defects={int(k): float(v) for k, v in result.adjoint_defects.items()},
            verdict=Verdict(result.verdict),
        )
        if config.emit:
            report.emitted = str(write_long_csv(config.emit, quantum_rows(report)))
            self._emit_commutator_grid(pair, config.grid[-1], Path(config.emit))
        return report

    def _emit_commutator_grid(self, pair: MetricPair, resolution: int, target: Path) -> Path:
        first = build_quantum_I(pair, 0, (resolution, resolution))
        second = build_quantum_I(pair, 1, (resolution, resolution))
        f = probe_functions(first.grid)[0]
        values = first(second(f)).values - second(first(f)).values
        path = target.with_name(f"{target.stem}_commutator.csv")
        return write_grid_function(path, first.grid.nodes(0), first.grid.nodes(1), values)

    def run_scan(self, config: RunConfig) -> ScanReport:
        """Proportionality points of a surface pair."""
        pair = self.resolve_pair(config.source)
        result = catalog.proportionality_scan(pair, config.scan_density)
        report = ScanReport(
            pair=pair.name,
            density=config.scan_density,
            gap_tol=settings.GAP_TOL_FACTOR,
            all_proportional=result.all_proportional,
            count=result.count,
            points=[pt.tolist() for pt in result.representatives],
            min_spread=result.min_spread,
        )
        if config.emit:
            report.emitted = str(write_rows(config.emit, list(pair.chart.names), result.representatives))
        return report

    def list_catalog(self) -> List[CatalogEntryInfo]:
        return [
            CatalogEntryInfo(
                name=entry.name,
                description=entry.description,
                params=entry.params,
                defaults=entry.defaults,
                chart=entry.chart,
                caveats=entry.caveats,
                equivalent=entry.equivalent,
            )
            for entry in catalog.list_entries()
        ]


def bracket_rows(report: BracketReport) -> List[Sequence[Any]]:
    """Bracket maxima per pair (j, k) with the coordinates of the maximizing phase point."""
    rows: List[Sequence[Any]] = []
    for entry in report.entries:
        rows.append(("bracket", entry.j, entry.k, entry.max_normalized_bracket))
        rows.append(("bracket_halved_step", entry.j, entry.k, entry.halved_step))
        rows += [(f"argmax_x{c + 1}", entry.j, entry.k, v) for c, v in enumerate(entry.argmax_x)]
        rows += [(f"argmax_p{c + 1}", entry.j, entry.k, v) for c, v in enumerate(entry.argmax_p)]
    rows.append(("richardson_ratio", "", "", report.richardson_ratio))
    return rows


def rank_rows(summary: RankSummary) -> List[Sequence[Any]]:
    rows: List[Sequence[Any]] = [("rank_count", r, "", c) for r, c in sorted(summary.rank_histogram.items())]
    rows += [("distinct_eigenvalue_count", d, "", c) for d, c in sorted(summary.distinct_histogram.items())]
    rows.append(("rank_matches_distinct", "", "", summary.rank_matches_distinct))
    rows.append(("non_proportional_share", "", "", summary.non_proportional_share))
    return rows


def check_rows(report: CheckReport) -> List[Sequence[Any]]:
    """Long-format rows (quantity, i, j, value) of a check report."""
    rows = bracket_rows(report.brackets)
    rows += quantity_rows("geodesic_distance", [d if d is not None else np.nan for d in report.equivalence.distances])
    rows += quantity_rows("integral_drift", report.drift.integral_drift)
    rows.append(("energy_drift", "", "", report.drift.energy_drift))
    rows.append(("hamiltonian_identity_defect", "", "", report.hamiltonian_identity_defect))
    rows += rank_rows(report.rank)
    for label, verdict in (
        ("brackets", report.brackets.verdict),
        ("equivalence", report.equivalence.verdict),
        ("drift", report.drift.verdict),
        ("rank", report.rank.verdict),
        ("check", report.verdict),
    ):
        rows.append((f"verdict_{label}", "", "", EXIT_CODES[verdict]))
    return rows


def quantum_rows(report: QuantumReport) -> List[Sequence[Any]]:
    """Long-format rows of a quantum report; resolutions are part of the quantity name."""
    rows: List[Sequence[Any]] = []
    for row in report.commutators:
        for resolution, norm in zip(row.resolutions, row.norms):
            rows.append((f"commutator_norm_{resolution}", row.j, row.k, norm))
        rows.append(("fitted_order", row.j, row.k, row.order))
    for k, defect in sorted(report.adjoint_defects.items()):
        rows.append(("adjoint_defect", k, "", defect))
    rows.append(("verdict", "", "", EXIT_CODES[report.verdict]))
    return rows


# Create a single instance to be used across the application
verification_service = VerificationService()
