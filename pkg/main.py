from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from contextlib import asynccontextmanager
from datetime import datetime, timezone
import logging

from app.api.routes import spectra, training, transforms, verification
from app.core.config import settings
from app.core.logging import configure_logging
from app.models.schemas import TransformKind

VERSION = "1.0.0"


@asynccontextmanager
async def lifespan(app: FastAPI):
    # Startup
    configure_logging()
    logging.getLogger(__name__).info(f"AuON toolkit API starting ({settings.ENVIRONMENT})")
    yield


app = FastAPI(
    title="AuON Toolkit API",
    description="cosh-RMS update transforms, spectral property checks and desk-scale training runs",
    version=VERSION,
    docs_url="/docs",
    redoc_url="/redoc",
    lifespan=lifespan
)

# CORS configuration
app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

# Include routers
app.include_router(transforms.router, prefix="/api/transforms", tags=["transforms"])
app.include_router(verification.router, prefix="/api/verify", tags=["verification"])
app.include_router(spectra.router, prefix="/api/spectra", tags=["spectra"])
app.include_router(training.router, prefix="/api/training", tags=["training"])


@app.get("/health")
async def health_check():
    """Health check endpoint for monitoring and deployment"""
    return JSONResponse(
        status_code=200,
        content={
            "status": "healthy",
            "timestamp": datetime.now(timezone.utc).isoformat(),
            "version": VERSION,
            "service": "AuON Toolkit API"
        }
    )


@app.get("/")
async def root():
    """Root endpoint with API information"""
    return {
        "message": "AuON Toolkit API",
        "version": VERSION,
        "docs": "/docs",
        "transforms": [kind.value for kind in TransformKind],
    }


if __name__ == "__main__":
    import uvicorn
    uvicorn.run("main:app", host="0.0.0.0", port=8000, reload=settings.ENVIRONMENT == "development")
