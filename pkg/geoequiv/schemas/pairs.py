"""
Pair-definition and run-configuration schemas.
A pair is either a catalog reference or an explicit chart with metric entries.
"""
import math
from typing import Any, Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from geoequiv.core.config import settings

Bounds = Tuple[float, float]


class TabulatedPair(BaseModel):
    """
    Metric values sampled on a tensor grid of the chart.

    Values between nodes are cubic interpolants, so verification of a loaded
    tabulated pair is approximate to interpolation accuracy.
    """

    axes: List[List[float]] = Field(..., description="Node coordinates per axis, strictly increasing")
    g: List[Any] = Field(..., description="Nested array of shape (N1, ..., Nn, n, n)")
    gbar: List[Any] = Field(..., description="Nested array of shape (N1, ..., Nn, n, n)")
    notice: str = Field(
        "tabulated metric values; evaluation between nodes uses cubic interpolation",
        description="Interpolation notice",
    )

    @field_validator("axes")
    @classmethod
    def validate_axes(cls, v: List[List[float]]) -> List[List[float]]:
        """Each axis needs at least four increasing nodes for cubic interpolation."""
        for axis in v:
            if len(axis) < 4:
                raise ValueError("each tabulated axis needs at least 4 nodes")
            if any(b <= a for a, b in zip(axis, axis[1:])):
                raise ValueError("tabulated axes must be strictly increasing")
        return v


class PairDefinition(BaseModel):
    """
    Pair-definition file.

    Either ``{"catalog": name, "params": {...}}`` or an explicit chart
    (n, coords, domain, periodic) with n x n grids of expression entries for
    g and gbar (or a tabulated pair).
    """

    name: Optional[str] = Field(None, description="Label used in reports")
    catalog: Optional[str] = Field(None, description="Catalog entry name")
    params: Dict[str, Any] = Field(default_factory=dict, description="Catalog parameters")

    n: Optional[int] = Field(None, ge=1, description="Chart dimension")
    coords: Optional[List[str]] = Field(None, description="Coordinate names")
    domain: Optional[List[Bounds]] = Field(None, description="Open interval per coordinate; 'inf' allowed")
    periodic: Optional[List[bool]] = Field(None, description="Periodic flag per coordinate")
    g: Optional[List[List[str]]] = Field(None, description="Expression entries of g")
    gbar: Optional[List[List[str]]] = Field(None, description="Expression entries of gbar")
    tabulated: Optional[TabulatedPair] = Field(None, description="Tabulated metric values")
    fd_step: float = Field(default_factory=lambda: settings.FD_STEP, gt=0, description="Finite-difference step")
    sample_box: Optional[List[Bounds]] = Field(None, description="Sampling box, defaults to the finite domain")

    model_config = ConfigDict(
        json_schema_extra={
            "examples": [
                {
                    "n": 2,
                    "coords": ["x1", "x2"],
                    "domain": [[-0.1, 6.0], [-0.1, 6.0]],
                    "periodic": [False, False],
                    "g": [["1", "0"], ["0", "1"]],
                    "gbar": [["1 + x1*x2", "0"], ["0", "1"]],
                    "fd_step": 1e-5,
                    "sample_box": [[2.0, 4.0], [2.0, 4.0]],
                },
                {"catalog": "beltrami-sphere", "params": {"A": [1, 1, 2]}},
            ]
        }
    )

    @field_validator("g", "gbar", mode="before")
    @classmethod
    def stringify_entries(cls, v: Any) -> Any:
        """Numeric JSON entries are accepted as constant expressions."""
        if isinstance(v, list):
            return [[str(e) if isinstance(e, (int, float)) else e for e in row] if isinstance(row, list) else row
                    for row in v]
        return v

    @model_validator(mode="after")
    def check_shape(self) -> "PairDefinition":
        """Validate that exactly one source is given and all sizes agree with n."""
        if self.catalog is not None:
            if any(v is not None for v in (self.n, self.coords, self.domain, self.g, self.gbar, self.tabulated)):
                raise ValueError("a catalog reference cannot also define a chart or entries")
            return self
        if self.n is None or self.coords is None or self.domain is None:
            raise ValueError("explicit pairs need n, coords and domain")
        n = self.n
        if len(self.coords) != n or len(self.domain) != n:
            raise ValueError(f"coords and domain must have {n} entries")
        if self.periodic is None:
            self.periodic = [False] * n
        if len(self.periodic) != n:
            raise ValueError(f"periodic must have {n} entries")
        for (lo, hi), per in zip(self.domain, self.periodic):
            if not lo < hi:
                raise ValueError("domain bounds must be ordered")
            if per and not (math.isfinite(lo) and math.isfinite(hi)):
                raise ValueError("periodic coordinates need finite bounds")
        if self.tabulated is None:
            if self.g is None or self.gbar is None:
                raise ValueError("explicit pairs need g and gbar entries (or a tabulated pair)")
            for grid in (self.g, self.gbar):
                if len(grid) != n or any(len(row) != n for row in grid):
                    raise ValueError(f"metric entries must be {n}x{n} grids")
        elif len(self.tabulated.axes) != n:
            raise ValueError(f"tabulated pair needs {n} axes")
        if self.sample_box is not None:
            if len(self.sample_box) != n or any(not lo < hi for lo, hi in self.sample_box):
                raise ValueError(f"sample_box must have {n} ordered intervals")
        return self


class PairSource(BaseModel):
    """Where a pair comes from: a catalog entry, a definition file or an inline definition."""

    catalog: Optional[str] = Field(None, description="Catalog entry name")
    params: Dict[str, Any] = Field(default_factory=dict, description="Catalog parameters")
    file: Optional[str] = Field(None, description="Path to a pair-definition JSON file")
    definition: Optional[PairDefinition] = Field(None, description="Inline pair definition")

    @model_validator(mode="after")
    def exactly_one(self) -> "PairSource":
        """Exactly one of catalog, file and definition must be set."""
        given = [v is not None for v in (self.catalog, self.file, self.definition)]
        if sum(given) != 1:
            raise ValueError("give exactly one of catalog, file or definition")
        return self


class RunConfig(BaseModel):
    """
    Parameters shared by every verification command.

    ``tol`` is the threshold of the command's main comparison: the
    unparameterized distance for check/sinjukov, the normalized bracket for
    brackets. Unset values fall back to the settings.
    """

    source: PairSource
    samples: int = Field(default_factory=lambda: settings.DEFAULT_SAMPLES, ge=1, description="Phase-space samples")
    seed: int = Field(default_factory=lambda: settings.DEFAULT_SEED, description="Random seed")
    tol: Optional[float] = Field(None, gt=0, description="Threshold of the main comparison")
    geodesics: int = Field(default_factory=lambda: settings.DEFAULT_GEODESICS, ge=1, description="Geodesic count")
    t_end: float = Field(default_factory=lambda: settings.DEFAULT_T_END, gt=0, description="Geodesic time")
    step: float = Field(default_factory=lambda: settings.DEFAULT_STEP, gt=0, description="Integration step")
    method: Literal["rk4", "midpoint"] = Field("rk4", description="Geodesic integrator")
    grid: List[int] = Field(default_factory=lambda: list(settings.DEFAULT_GRIDS), description="Grid resolutions")
    power: Optional[int] = Field(None, description="B-transform power, nonzero")
    scan_density: int = Field(
        default_factory=lambda: settings.DEFAULT_SCAN_DENSITY, ge=8, description="Scan nodes per axis"
    )
    metric: Literal["g", "gbar"] = Field("g", description="Metric traced by the geodesics command")
    emit: Optional[str] = Field(None, description="Output path")

    model_config = ConfigDict(
        json_schema_extra={
            "example": {
                "source": {"catalog": "beltrami-sphere", "params": {"A": [1, 2, 3]}},
                "samples": 200,
                "seed": 42,
                "tol": 1e-3,
                "geodesics": 20,
                "t_end": 3.0,
                "step": 1e-3,
            }
        }
    )

    @field_validator("grid")
    @classmethod
    def validate_grid(cls, v: List[int]) -> List[int]:
        """Resolutions must be at least 8 nodes per axis."""
        if not v or any(r < 8 for r in v):
            raise ValueError("grid resolutions must be at least 8")
        return v

    @field_validator("power")
    @classmethod
    def validate_power(cls, v: Optional[int]) -> Optional[int]:
        """Power 0 would be the identity transform."""
        if v == 0:
            raise ValueError("power must be nonzero")
        return v
