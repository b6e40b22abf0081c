from pydantic_settings import BaseSettings
from pydantic import Field
import logging


class Settings(BaseSettings):
    # Output
    AUON_OUTPUT_DIR: str = Field(default="runs", description="Default directory for CSV/JSON artifacts")

    # Environment
    ENVIRONMENT: str = Field(default="development", description="Environment (development/production)")
    LOG_LEVEL: str = Field(default="INFO", description="Root log level")

    # Diagnostics
    BOOTSTRAP_ITERATIONS: int = Field(default=2000, ge=1, description="Bootstrap resamples per confidence interval")
    BOOTSTRAP_LEVEL: float = Field(default=0.95, gt=0.0, lt=1.0, description="Bootstrap confidence level")

    # Property batteries
    VERIFY_SAMPLES: int = Field(default=1000, ge=1, description="Random matrices in the default verify battery")

    # Benchmarks - exact polar runs the Jacobi oracle, too slow past this size
    BENCH_POLAR_MAX_SIZE: int = Field(default=256, ge=1, description="Largest n timed for exact polar")

    # HTTP limits
    API_MAX_DIM: int = Field(default=256, ge=1, description="Largest matrix dimension accepted over HTTP")
    API_MAX_TRAIN_STEPS: int = Field(default=500, ge=1, description="Largest step budget accepted over HTTP")

    class Config:
        env_file = ".env"
        case_sensitive = True
        extra = "ignore"  # Ignore extra fields from .env file

    def __init__(self, **kwargs):
        super().__init__(**kwargs)

        if self.BENCH_POLAR_MAX_SIZE > 512:
            logging.getLogger(__name__).warning(
                f"BENCH_POLAR_MAX_SIZE={self.BENCH_POLAR_MAX_SIZE} exceeds the 512 oracle cap; polar timings above it will be skipped"
            )


settings = Settings()
