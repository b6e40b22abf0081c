from fastapi import APIRouter, HTTPException, status

from app.core.config import settings
from app.core.exceptions import AuonError
from app.models.schemas import TransformRequest, TransformResponse, TransformSpec
from app.services.linalg import as_matrix
from app.services.transforms import apply_transform

router = APIRouter()


def check_dimensions(rows: int, cols: int) -> None:
    if max(rows, cols) > settings.API_MAX_DIM:
        raise HTTPException(
            status_code=status.HTTP_400_BAD_REQUEST,
            detail=f"Matrix dimensions are limited to {settings.API_MAX_DIM}, got {rows}x{cols}"
        )


@router.post("/apply", response_model=TransformResponse)
def apply(request: TransformRequest):
    """Apply one update transform to a row-major matrix"""

    if len({len(row) for row in request.matrix}) != 1:
        raise HTTPException(
            status_code=status.HTTP_400_BAD_REQUEST,
            detail="Matrix rows must all have the same length"
        )
    check_dimensions(len(request.matrix), len(request.matrix[0]))

    try:
        spec = TransformSpec(kind=request.kind, steps=request.steps, coeffs=request.coeffs)
        u, report = apply_transform(as_matrix(request.matrix), spec)
    except (AuonError, ValueError) as e:
        raise HTTPException(status_code=status.HTTP_400_BAD_REQUEST, detail=str(e))

    return TransformResponse(output=u.tolist(), report=report)
