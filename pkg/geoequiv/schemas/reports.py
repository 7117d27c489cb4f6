"""
Report schemas returned by the verification service, the CLI and the HTTP API.
"""
from enum import Enum
from typing import Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field


class Verdict(str, Enum):
    """Outcome of a verification suite."""
    PASS = "PASS"
    FAIL = "FAIL"
    INCONCLUSIVE = "INCONCLUSIVE"


EXIT_CODES: Dict[Verdict, int] = {Verdict.PASS: 0, Verdict.FAIL: 1, Verdict.INCONCLUSIVE: 2}


def combine(verdicts: List[Verdict]) -> Verdict:
    """FAIL wins over INCONCLUSIVE, which wins over PASS."""
    if Verdict.FAIL in verdicts:
        return Verdict.FAIL
    if Verdict.INCONCLUSIVE in verdicts:
        return Verdict.INCONCLUSIVE
    return Verdict.PASS


class BracketEntry(BaseModel):
    """Maximum normalized bracket of one pair of integrals."""
    j: int
    k: int
    max_normalized_bracket: float = Field(..., description="max |{I_j, I_k}| / scale at step h")
    halved_step: float = Field(..., description="Same maximum at step h/2")
    argmax_x: List[float]
    argmax_p: List[float]


class BracketReport(BaseModel):
    """Involution check of the integral family."""
    pair: str
    samples: int
    skipped: int
    seed: int
    fd_step: float
    tol: float
    entries: List[BracketEntry]
    max_bracket: float
    richardson_ratio: Optional[float] = Field(None, description="about 4 when the residual is O(h^2) noise")
    emitted: Optional[str] = None
    verdict: Verdict

    model_config = ConfigDict(
        json_schema_extra={
            "example": {
                "pair": "beltrami-sphere",
                "samples": 200,
                "skipped": 0,
                "seed": 42,
                "fd_step": 1e-5,
                "tol": 1e-6,
                "entries": [
                    {
                        "j": 0,
                        "k": 1,
                        "max_normalized_bracket": 3.1e-10,
                        "halved_step": 7.8e-11,
                        "argmax_x": [1.2, 4.0],
                        "argmax_p": [0.3, -0.7],
                    }
                ],
                "max_bracket": 3.1e-10,
                "richardson_ratio": 3.97,
                "verdict": "PASS",
            }
        }
    )


class RankSummary(BaseModel):
    """Differential rank of the integrals against the eigenvalue count of G."""
    pair: str
    samples: int
    degenerate: int
    rank_histogram: Dict[int, int]
    distinct_histogram: Dict[int, int]
    rank_matches_distinct: float = Field(
        ..., description="Share of nondegenerate samples whose rank equals the distinct eigenvalue count"
    )
    non_proportional_share: float = Field(..., description="Share of base points with n distinct eigenvalues")
    emitted: Optional[str] = None
    verdict: Verdict


class GeodesicStart(BaseModel):
    index: int
    x0: List[float]
    v0: List[float]
    distance: float


class EquivalenceReport(BaseModel):
    """Unparameterized comparison of g- and gbar-geodesics."""
    pair: str
    geodesics: int
    t_end: float
    step: float
    method: str
    tol: float
    distances: List[Optional[float]] = Field(..., description="None where a geodesic left the chart")
    max_distance: Optional[float]
    exited: int
    worst: Optional[GeodesicStart]
    verdict: Verdict


class DriftReport(BaseModel):
    """Conservation of the integrals along g-geodesics."""
    pair: str
    geodesics: int
    step: float
    t_end: float
    integral_drift: List[float] = Field(..., description="Max relative drift of I_k over all geodesics")
    energy_drift: float
    exited: int
    tol: float
    verdict: Verdict


class CheckReport(BaseModel):
    """Aggregate of brackets, geodesic comparison, drift and rank."""
    pair: str
    brackets: BracketReport
    equivalence: EquivalenceReport
    drift: DriftReport
    rank: RankSummary
    hamiltonian_identity_defect: float = Field(..., description="max |I_{n-1} + 2H| / max(1, |2H|)")
    emitted: Optional[str] = None
    verdict: Verdict


class SinjukovReport(BaseModel):
    """Check of the B-transformed pair."""
    pair: str
    power: int
    transformed: str
    round_trip_defect: float = Field(..., description="Max deviation of the (-power, power) round trip")
    emitted: Optional[str] = None
    check: CheckReport
    verdict: Verdict


class CommutatorRow(BaseModel):
    j: int
    k: int
    resolutions: List[int]
    norms: List[float]
    order: Optional[float] = Field(None, description="Fitted order; None when every norm is at the zero floor")
    exact_zero: bool


class QuantumReport(BaseModel):
    """Commutator convergence and self-adjointness of the quantum integrals."""
    pair: str
    grids: List[int]
    commutators: List[CommutatorRow]
    adjoint_defects: Dict[int, float]
    emitted: Optional[str] = None
    verdict: Verdict


class ScanReport(BaseModel):
    """Proportionality points on a surface chart."""
    pair: str
    density: int
    gap_tol: float
    all_proportional: bool
    count: Optional[int] = Field(None, description="Number of components; None when every point is proportional")
    points: List[List[float]]
    min_spread: float
    emitted: Optional[str] = None


class TraceSummary(BaseModel):
    index: int
    samples: int
    exited: bool
    energy_drift: float
    end_point: List[float]


class GeodesicsReport(BaseModel):
    """Integrated geodesic traces."""
    pair: str
    metric: str
    step: float
    t_end: float
    method: str
    traces: List[TraceSummary]
    emitted: Optional[str] = None


class CatalogEntryInfo(BaseModel):
    """Catalog listing row."""
    name: str
    description: str
    params: Dict[str, str]
    defaults: Dict[str, object]
    chart: str
    caveats: str
    equivalent: bool
