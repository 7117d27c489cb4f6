"""
Verification API routes.
Every endpoint takes a RunConfig body and returns the matching report; the
suites are the ones the command line runs.
"""
from fastapi import APIRouter, Depends, status

from geoequiv.core.errors import ConfigurationError
from geoequiv.schemas.errors import ErrorResponse
from geoequiv.schemas.pairs import RunConfig
from geoequiv.schemas.reports import (
    BracketReport,
    CheckReport,
    GeodesicsReport,
    QuantumReport,
    RankSummary,
    ScanReport,
    SinjukovReport,
)
from geoequiv.services.verification import verification_service

router = APIRouter(prefix="/verify", tags=["Verification"])

_ERRORS = {
    400: {"model": ErrorResponse, "description": "Numerical failure (domain, positivity, integration)"},
    404: {"model": ErrorResponse, "description": "Unknown catalog entry"},
    422: {"model": ErrorResponse, "description": "Invalid run configuration or pair definition"},
}


def request_config(config: RunConfig) -> RunConfig:
    """
    Accept a run configuration from a request body.

    Raises:
        ConfigurationError: the body names a server-side path (source.file or emit)
    """
    paths = {"source.file": config.source.file, "emit": config.emit}
    given = [name for name, value in paths.items() if value]
    if given:
        raise ConfigurationError("server-side paths are not accepted over HTTP", {"fields": given})
    return config


@router.post(
    "/check",
    response_model=CheckReport,
    status_code=status.HTTP_200_OK,
    responses=_ERRORS,
    summary="Run All Checks",
    description="""
    Run the bracket, geodesic-equivalence, drift and rank suites on one pair.

    **Verdict**: FAIL if any suite fails, INCONCLUSIVE if a suite could not
    decide (for example every geodesic left the chart), PASS otherwise.
    """,
)
def check(config: RunConfig = Depends(request_config)) -> CheckReport:
    """
    Run every check on the configured pair.

    Args:
        config: Pair source and run parameters

    Returns:
        CheckReport: Aggregated report with per-suite verdicts
    """
    return verification_service.run_check(config)


@router.post(
    "/brackets",
    response_model=BracketReport,
    responses=_ERRORS,
    summary="Poisson Brackets of the Integrals",
    description="""
    Maximum normalized |{I_j, I_k}| over seeded phase points, with the
    step-halving ratio that separates finite-difference noise from a true
    nonzero bracket.
    """,
)
def brackets(config: RunConfig = Depends(request_config)) -> BracketReport:
    return verification_service.run_brackets(config)


@router.post("/rank", response_model=RankSummary, responses=_ERRORS, summary="Differential Rank")
def rank(config: RunConfig = Depends(request_config)) -> RankSummary:
    """Rank of the integral differentials against the distinct eigenvalue count of G."""
    return verification_service.run_rank(config)


@router.post(
    "/sinjukov",
    response_model=SinjukovReport,
    responses=_ERRORS,
    summary="B-Transformed Pair",
    description="""
    Apply the B-transform with the configured nonzero `power` (default 1),
    re-run every check on the result and report the round-trip defect of the
    transform followed by its inverse.
    """,
)
def sinjukov(config: RunConfig = Depends(request_config)) -> SinjukovReport:
    return verification_service.run_sinjukov(config)


@router.post("/geodesics", response_model=GeodesicsReport, responses=_ERRORS, summary="Integrate Geodesics")
def geodesics(config: RunConfig = Depends(request_config)) -> GeodesicsReport:
    """Integrate seeded geodesics of g or gbar."""
    return verification_service.run_geodesics(config)


@router.post(
    "/quantum",
    response_model=QuantumReport,
    responses=_ERRORS,
    summary="Quantum Commutators",
    description="""
    Commutator norms of the discretized quantum integrals over the configured
    grid resolutions, the fitted convergence order and the adjoint defects.
    Implemented for two-dimensional charts.
    """,
)
def quantum(config: RunConfig = Depends(request_config)) -> QuantumReport:
    return verification_service.run_quantum(config)


@router.post("/scan", response_model=ScanReport, responses=_ERRORS, summary="Proportionality Scan")
def scan(config: RunConfig = Depends(request_config)) -> ScanReport:
    """Points where gbar is proportional to g on a surface chart."""
    return verification_service.run_scan(config)
