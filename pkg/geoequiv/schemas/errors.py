"""
Error response schema shared by every HTTP endpoint.
"""
from typing import Any, Dict

from pydantic import BaseModel, ConfigDict, Field


class ErrorResponse(BaseModel):
    """Body of every error response."""
    error_code: str = Field(..., description="Machine-readable error code")
    message: str = Field(..., description="Human-readable message")
    details: Dict[str, Any] = Field(default_factory=dict, description="Additional context")

    model_config = ConfigDict(
        json_schema_extra={
            "example": {
                "error_code": "UNKNOWN_IDENTIFIER",
                "message": "Unknown identifier 'y' at offset 4",
                "details": {"name": "y", "position": 4},
            }
        }
    )
