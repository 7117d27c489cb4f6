"""
Catalog API routes listing the built-in metric pairs.
"""
from typing import List

from fastapi import APIRouter, status

from geoequiv.schemas.reports import CatalogEntryInfo
from geoequiv.services.verification import verification_service

router = APIRouter(prefix="/catalog", tags=["Catalog"])


@router.get(
    "",
    response_model=List[CatalogEntryInfo],
    status_code=status.HTTP_200_OK,
    summary="List Catalog Pairs",
    description="""
    List the built-in metric pairs with their parameters and defaults.

    **Entries**:
    - Sphere-family pairs share the hyperspherical chart with polar caps excised
    - `control-nonequivalent` is the negative control and is expected to FAIL
    - `flat`, `round-sphere` and `proportional` are trivial controls
    """,
)
def list_catalog() -> List[CatalogEntryInfo]:
    """
    List catalog entries.

    Returns:
        List[CatalogEntryInfo]: One row per entry
    """
    return verification_service.list_catalog()
