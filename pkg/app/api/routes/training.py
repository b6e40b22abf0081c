from fastapi import APIRouter, HTTPException, status

from app.core.config import settings
from app.core.exceptions import AuonError, TrainingDivergedError
from app.models.schemas import RunConfig, RunSummary
from app.services.nn import train

router = APIRouter()


@router.post("/runs", response_model=RunSummary)
def create_run(run: RunConfig):
    """Train in-process and return the summary; nothing is written to disk"""

    if run.steps > settings.API_MAX_TRAIN_STEPS:
        raise HTTPException(
            status_code=status.HTTP_400_BAD_REQUEST,
            detail=f"Step budget is limited to {settings.API_MAX_TRAIN_STEPS}, got {run.steps}"
        )
    if max(run.hidden, run.dataset.d) > settings.API_MAX_DIM:
        raise HTTPException(
            status_code=status.HTTP_400_BAD_REQUEST,
            detail=f"Layer widths are limited to {settings.API_MAX_DIM}"
        )

    try:
        log = train(run)
    except TrainingDivergedError as e:
        raise HTTPException(
            status_code=status.HTTP_400_BAD_REQUEST,
            detail=f"{e} (last finite loss {e.last_finite_loss})"
        )
    except AuonError as e:
        raise HTTPException(status_code=status.HTTP_400_BAD_REQUEST, detail=str(e))

    return log.summary
