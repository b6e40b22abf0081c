from fastapi import APIRouter, HTTPException, status

from app.api.routes.transforms import check_dimensions
from app.core.exceptions import AuonError
from app.models.schemas import SpectraRequest, SpectraTrace
from app.services.diagnostics import singular_trajectory
from app.services.linalg import sample_matrix

router = APIRouter()


@router.post("", response_model=SpectraTrace)
def spectra(request: SpectraRequest):
    """Singular values and Gram distance per Newton-Schulz step on a seeded Gaussian"""

    check_dimensions(request.rows, request.cols)
    try:
        g = sample_matrix(request.rows, request.cols, request.seed)
        return singular_trajectory(g, request.steps, request.coeffs)
    except (AuonError, ValueError) as e:
        raise HTTPException(status_code=status.HTTP_400_BAD_REQUEST, detail=str(e))
