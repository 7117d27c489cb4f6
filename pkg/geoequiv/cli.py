"""
Command-line front end.

Exit codes: 0 PASS, 1 FAIL, 2 INCONCLUSIVE, 64 usage or configuration error.
Verdicts and summaries go to stdout, structured logs to stderr.
"""
import argparse
import json
import sys
from typing import Any, Callable, Dict, List, Optional, Sequence

from pydantic import BaseModel, ValidationError

from geoequiv.core.config import settings
from geoequiv.core.errors import GeoEquivError
from geoequiv.core.logging import configure_logging, get_logger
from geoequiv.schemas.pairs import PairSource, RunConfig
from geoequiv.schemas.reports import (
    EXIT_CODES,
    BracketReport,
    CheckReport,
    GeodesicsReport,
    QuantumReport,
    RankSummary,
    ScanReport,
    SinjukovReport,
)
from geoequiv.services.verification import verification_service

logger = get_logger(__name__)

EXIT_USAGE = 64

COMMANDS = ("check", "brackets", "rank", "sinjukov", "geodesics", "quantum", "scan", "catalog")


class UsageError(Exception):
    """Invalid command line."""


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on errors, which would read as INCONCLUSIVE
    def error(self, message: str) -> None:  # type: ignore[override]
        raise UsageError(message)


def _floats(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got '{text}'")


def _ints(text: str) -> List[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got '{text}'")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="geoequiv", description="Verify geodesic equivalence of Riemannian metric pairs.")
    parser.add_argument("--log-level", default=None, help="Log level (default from GEOEQUIV_LOG_LEVEL)")
    parser.add_argument("--log-format", choices=("json", "console"), default=None, help="Log renderer")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    for name in COMMANDS:
        cmd = sub.add_parser(name, help=f"run the {name} suite" if name != "catalog" else "list catalog entries")
        if name == "catalog":
            cmd.add_argument("--json", action="store_true", help="Print the listing as JSON")
            continue
        source = cmd.add_mutually_exclusive_group(required=True)
        source.add_argument("--catalog", help="Catalog entry name")
        source.add_argument("--file", help="Pair-definition JSON file")
        cmd.add_argument("--A", dest="A", type=_floats, help="Beltrami matrix: n+1 diagonal or (n+1)^2 entries")
        cmd.add_argument("--a", dest="a", type=_floats, help="Ellipsoid parameters a_1..a_{n+1}")
        cmd.add_argument("--c", dest="c", type=float, help="Scale of flat/proportional pairs")
        cmd.add_argument("--n", dest="n", type=int, help="Dimension of sphere or flat pairs")
        cmd.add_argument("--samples", type=int, default=settings.DEFAULT_SAMPLES)
        cmd.add_argument("--seed", type=int, default=settings.DEFAULT_SEED)
        cmd.add_argument("--tol", type=float, default=None, help="Threshold of the main comparison")
        cmd.add_argument("--geodesics", type=int, default=settings.DEFAULT_GEODESICS)
        cmd.add_argument("--t-end", dest="t_end", type=float, default=settings.DEFAULT_T_END)
        cmd.add_argument("--step", type=float, default=settings.DEFAULT_STEP)
        cmd.add_argument("--method", choices=("rk4", "midpoint"), default="rk4")
        cmd.add_argument("--grid", type=_ints, default=list(settings.DEFAULT_GRIDS), help="e.g. 32,64,128")
        cmd.add_argument("--power", type=int, default=None, help="B-transform power (sinjukov)")
        cmd.add_argument("--density", type=int, default=settings.DEFAULT_SCAN_DENSITY, help="Scan nodes per axis")
        cmd.add_argument("--metric", choices=("g", "gbar"), default="g", help="Metric traced by geodesics")
        cmd.add_argument("--emit", default=None, help="Output path (CSV, or JSON for sinjukov)")
        cmd.add_argument("--json", action="store_true", help="Print the full report as JSON")
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    """Translate parsed arguments into a validated RunConfig."""
    params: Dict[str, Any] = {key: getattr(args, key) for key in ("A", "a", "c", "n") if getattr(args, key) is not None}
    if args.catalog is not None:
        source = PairSource(catalog=args.catalog, params=params)
    else:
        if params:
            raise UsageError("catalog parameters (--A, --a, --c, --n) need --catalog")
        source = PairSource(file=args.file)
    return RunConfig(
        source=source,
        samples=args.samples,
        seed=args.seed,
        tol=args.tol,
        geodesics=args.geodesics,
        t_end=args.t_end,
        step=args.step,
        method=args.method,
        grid=args.grid,
        power=args.power,
        scan_density=args.density,
        metric=args.metric,
        emit=args.emit,
    )


# Human-readable summaries

def _fmt(value: Optional[float]) -> str:
    return "n/a" if value is None else f"{value:.3e}"


def summarize_brackets(report: BracketReport) -> List[str]:
    lines = [f"brackets: max normalized {_fmt(report.max_bracket)} (tol {report.tol:g}), "
             f"{report.samples} samples, {report.skipped} skipped"]
    lines += [f"  {{I_{e.j}, I_{e.k}}}: {_fmt(e.max_normalized_bracket)} (h/2: {_fmt(e.halved_step)})"
              for e in report.entries]
    if report.richardson_ratio is not None:
        lines.append(f"  step-halving ratio {report.richardson_ratio:.2f}")
    lines.append(f"  verdict {report.verdict.value}")
    return lines


def summarize_rank(report: RankSummary) -> List[str]:
    return [
        f"rank: histogram {report.rank_histogram}, distinct eigenvalues {report.distinct_histogram}",
        f"  rank matches distinct count at {report.rank_matches_distinct:.1%}, "
        f"strictly non-proportional at {report.non_proportional_share:.1%}, {report.degenerate} degenerate",
        f"  verdict {report.verdict.value}",
    ]


def summarize_check(report: CheckReport) -> List[str]:
    eq = report.equivalence
    lines = [f"pair {report.pair}"]
    lines += summarize_brackets(report.brackets)
    lines.append(f"geodesics: max distance {_fmt(eq.max_distance)} (tol {eq.tol:g}), {eq.exited} exited, "
                 f"verdict {eq.verdict.value}")
    if eq.worst is not None and eq.verdict.value == "FAIL":
        lines.append(f"  worst geodesic {eq.worst.index}: x0 {eq.worst.x0}, v0 {eq.worst.v0}")
    drift = max(report.drift.integral_drift, default=None)
    lines.append(f"drift: max integral drift {_fmt(drift)}, energy drift {_fmt(report.drift.energy_drift)}, "
                 f"verdict {report.drift.verdict.value}")
    lines += summarize_rank(report.rank)
    lines.append(f"identity I_(n-1) + 2H: {_fmt(report.hamiltonian_identity_defect)}")
    lines.append(f"VERDICT {report.verdict.value}")
    return lines


def summarize_sinjukov(report: SinjukovReport) -> List[str]:
    lines = [f"transform {report.transformed} (power {report.power}), "
             f"round-trip defect {_fmt(report.round_trip_defect)}"]
    lines += summarize_check(report.check)[:-1]
    if report.emitted:
        lines.append(f"tabulated pair written to {report.emitted}")
    lines.append(f"VERDICT {report.verdict.value}")
    return lines


def summarize_quantum(report: QuantumReport) -> List[str]:
    lines = [f"quantum: pair {report.pair}, grids {report.grids}"]
    for row in report.commutators:
        norms = ", ".join(_fmt(v) for v in row.norms)
        order = "exact zero" if row.exact_zero else f"order {row.order:.2f}"
        lines.append(f"  [I_{row.j}, I_{row.k}]: {norms} -> {order}")
    for k, defect in sorted(report.adjoint_defects.items()):
        lines.append(f"  adjoint defect I_{k}: {_fmt(defect)}")
    lines.append(f"VERDICT {report.verdict.value}")
    return lines


def summarize_scan(report: ScanReport) -> List[str]:
    if report.all_proportional:
        return [f"scan: pair {report.pair} is proportional at every grid point (all)"]
    lines = [f"scan: {report.count} proportionality components on a {report.density}^2 grid"]
    lines += [f"  at {[round(v, 6) for v in point]}" for point in report.points]
    return lines


def summarize_geodesics(report: GeodesicsReport) -> List[str]:
    lines = [f"geodesics of {report.metric} on {report.pair}: {len(report.traces)} traces, step {report.step:g}"]
    lines += [f"  #{t.index}: {t.samples} samples, energy drift {_fmt(t.energy_drift)}"
              + (" (left the chart)" if t.exited else "") for t in report.traces]
    if report.emitted:
        lines.append(f"traces written to {report.emitted}")
    return lines


_RUNNERS: Dict[str, Callable[[RunConfig], BaseModel]] = {
    "check": verification_service.run_check,
    "brackets": verification_service.run_brackets,
    "rank": verification_service.run_rank,
    "sinjukov": verification_service.run_sinjukov,
    "geodesics": verification_service.run_geodesics,
    "quantum": verification_service.run_quantum,
    "scan": verification_service.run_scan,
}

_SUMMARIES: Dict[str, Callable[[Any], List[str]]] = {
    "check": summarize_check,
    "brackets": summarize_brackets,
    "rank": summarize_rank,
    "sinjukov": summarize_sinjukov,
    "geodesics": summarize_geodesics,
    "quantum": summarize_quantum,
    "scan": summarize_scan,
}


def _exit_code(report: BaseModel) -> int:
    verdict = getattr(report, "verdict", None)
    return EXIT_CODES[verdict] if verdict is not None else 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run one command and return its exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    configure_logging(args.log_level, args.log_format)

    if args.command == "catalog":
        entries = verification_service.list_catalog()
        if args.json:
            print(json.dumps([e.model_dump() for e in entries], indent=2))
        else:
            for entry in entries:
                params = ", ".join(f"{k}={v}" for k, v in entry.defaults.items()) or "-"
                print(f"{entry.name:24s} {entry.description} [{params}]")
        return 0

    try:
        config = config_from_args(args)
        report = _RUNNERS[args.command](config)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValidationError as exc:
        first = exc.errors()[0]
        print(f"invalid configuration: {first['msg']}", file=sys.stderr)
        return EXIT_USAGE
    except GeoEquivError as exc:
        logger.error("command_failed", command=args.command, error_code=exc.error_code, details=exc.details)
        print(f"error [{exc.error_code}]: {exc.message}", file=sys.stderr)
        return EXIT_USAGE

    if args.json:
        print(report.model_dump_json(indent=2))
    else:
        print("\n".join(_SUMMARIES[args.command](report)))
    return _exit_code(report)


if __name__ == "__main__":
    sys.exit(main())
