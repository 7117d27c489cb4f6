"""
Application configuration settings using Pydantic Settings.
"""
import os
from typing import Optional, Tuple

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Toolkit settings configuration.

    Every field can be overridden with a ``GEOEQUIV_``-prefixed environment
    variable (for example ``GEOEQUIV_THREADS=2``) or a ``.env`` file.
    """

    # Application Settings
    APP_NAME: str = "GeoEquiv"
    APP_VERSION: str = "1.0.0"
    ENVIRONMENT: str = "development"

    # API Configuration
    API_V1_STR: str = "/api/v1"

    # Parallelism (None means min(8, cpu count))
    THREADS: Optional[int] = None

    # Reproducibility
    DEFAULT_SEED: int = 42

    # Finite differences
    FD_STEP: float = 1e-5
    PHASE_FD_STEP: float = 1e-5

    # Spectral and rank tolerances
    GAP_TOL_FACTOR: float = 1e-6
    RANK_TOL: float = 1e-6

    # Verification thresholds
    BRACKET_TOL: float = 1e-6
    EQUIVALENCE_TOL: float = 1e-3
    DRIFT_TOL: float = 1e-6
    QUANTUM_ORDER_MIN: float = 1.5
    QUANTUM_ZERO_FLOOR: float = 1e-13
    ADJOINT_TOL: float = 1e-9
    SCAN_SNAP_FACTOR: float = 10.0

    # Default run sizes
    DEFAULT_SAMPLES: int = 200
    DEFAULT_GEODESICS: int = 20
    DEFAULT_T_END: float = 3.0
    DEFAULT_STEP: float = 1e-3
    DEFAULT_GRIDS: Tuple[int, ...] = (32, 64, 128)
    DEFAULT_SCAN_DENSITY: int = 400

    # Logging
    LOG_LEVEL: str = "INFO"
    LOG_FORMAT: str = "json"

    model_config = SettingsConfigDict(
        env_prefix="GEOEQUIV_",
        env_file=".env",
        case_sensitive=True,
        extra="ignore",
    )

    @property
    def worker_count(self) -> int:
        """Number of worker threads the services may use."""
        if self.THREADS is not None and self.THREADS > 0:
            return self.THREADS
        return min(8, os.cpu_count() or 1)


# Global settings instance
settings = Settings()
