from fastapi import APIRouter, HTTPException, status

from app.core.exceptions import AuonError
from app.models.schemas import VerifyRequest, VerifyResponse
from app.services.verification import run_battery

router = APIRouter()


@router.post("", response_model=VerifyResponse)
def verify(request: VerifyRequest):
    """Run the seeded property batteries"""

    try:
        results = run_battery(request.samples, request.seed, request.spikes)
    except (AuonError, ValueError) as e:
        raise HTTPException(status_code=status.HTTP_400_BAD_REQUEST, detail=str(e))

    return VerifyResponse(passed=all(r.passed for r in results), results=results)
