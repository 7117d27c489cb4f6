"""
Main FastAPI application entry point.
"""
from fastapi import FastAPI, Request, status
from fastapi.responses import JSONResponse

from geoequiv.api.catalog import router as catalog_router
from geoequiv.api.verify import router as verify_router
from geoequiv.core.config import settings
from geoequiv.core.errors import CatalogError, ConfigurationError, GeoEquivError
from geoequiv.core.logging import configure_logging, get_logger
from geoequiv.schemas.errors import ErrorResponse

configure_logging()
logger = get_logger(__name__)

# Create FastAPI application instance
app = FastAPI(
    title=settings.APP_NAME,
    version=settings.APP_VERSION,
    description="Numerical verification of geodesically equivalent Riemannian metric pairs",
    docs_url="/docs",
    redoc_url="/redoc",
)

# Include API routers
app.include_router(catalog_router, prefix=settings.API_V1_STR)
app.include_router(verify_router, prefix=settings.API_V1_STR)


def error_status(exc: GeoEquivError) -> int:
    """404 for unknown catalog entries, 422 for invalid configuration, 400 otherwise."""
    if isinstance(exc, CatalogError) and "available" in exc.details:
        return status.HTTP_404_NOT_FOUND
    if isinstance(exc, ConfigurationError):
        return status.HTTP_422_UNPROCESSABLE_ENTITY
    return status.HTTP_400_BAD_REQUEST


@app.exception_handler(GeoEquivError)
async def geoequiv_error_handler(request: Request, exc: GeoEquivError) -> JSONResponse:
    """Serialize toolkit errors as ErrorResponse bodies."""
    code = error_status(exc)
    logger.warning("request_failed", path=request.url.path, error_code=exc.error_code, status=code)
    body = ErrorResponse(**exc.to_dict())
    return JSONResponse(status_code=code, content=body.model_dump(mode="json"))


@app.get("/")
async def root():
    """Root endpoint for health check."""
    return {
        "message": "GeoEquiv verification API",
        "version": settings.APP_VERSION,
        "docs": "/docs",
    }


@app.get("/health")
async def health_check():
    """Health check endpoint."""
    return {
        "status": "healthy",
        "service": settings.APP_NAME,
        "version": settings.APP_VERSION,
    }
