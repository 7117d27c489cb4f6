"""
Error hierarchy for the toolkit.

Every error carries an ``error_code``, a human-readable ``message`` and an
optional ``details`` dictionary, the same shape the HTTP layer returns.
"""
from typing import Any, Dict, Optional


class GeoEquivError(Exception):
    """Base class for all toolkit errors."""

    error_code: str = "GEOEQUIV_ERROR"

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.details = details or {}

    def to_dict(self) -> Dict[str, Any]:
        """Serialize the error to the ErrorResponse body."""
        return {"error_code": self.error_code, "message": self.message, "details": self.details}


# Expression language

class ExpressionSyntaxError(GeoEquivError):
    """Malformed expression text."""

    error_code = "EXPRESSION_SYNTAX"

    def __init__(self, message: str, position: int, source: str = ""):
        super().__init__(f"{message} at offset {position}", {"position": position, "source": source})
        self.position = position


class UnknownIdentifierError(GeoEquivError):
    """Identifier that is neither a declared coordinate, a function nor a constant."""

    error_code = "UNKNOWN_IDENTIFIER"

    def __init__(self, name: str, position: int):
        super().__init__(f"Unknown identifier '{name}' at offset {position}", {"name": name, "position": position})
        self.name = name
        self.position = position


class EmptyExpressionError(GeoEquivError):
    """Expression text with no tokens."""

    error_code = "EMPTY_EXPRESSION"


class EvaluationDomainError(GeoEquivError):
    """Expression evaluated outside the domain of one of its operations."""

    error_code = "EVALUATION_DOMAIN"

    def __init__(self, message: str, subexpression: str):
        super().__init__(f"{message} in '{subexpression}'", {"subexpression": subexpression})
        self.subexpression = subexpression


# Geometry

class OutOfDomainError(GeoEquivError):
    """Point outside the chart domain."""

    error_code = "OUT_OF_DOMAIN"


class PositivityError(GeoEquivError):
    """Metric matrix failed the Cholesky positivity check."""

    error_code = "NOT_POSITIVE_DEFINITE"


class RankDeficiencyError(GeoEquivError):
    """Embedding Jacobian without full column rank."""

    error_code = "RANK_DEFICIENT"


class SingularMatrixError(GeoEquivError):
    """Matrix that must be invertible is singular."""

    error_code = "SINGULAR_MATRIX"


# Dynamics

class IntegrationError(GeoEquivError):
    """Invalid integration request (bad step, start outside the chart)."""

    error_code = "INTEGRATION_ERROR"


class DegeneratePhasePointError(GeoEquivError):
    """Phase point with vanishing momentum where a direction is required."""

    error_code = "DEGENERATE_PHASE_POINT"


# Configuration

class ConfigurationError(GeoEquivError):
    """Invalid run configuration or pair definition."""

    error_code = "INVALID_CONFIGURATION"


class CatalogError(ConfigurationError):
    """Unknown catalog entry or invalid catalog parameters."""

    error_code = "CATALOG_ERROR"
