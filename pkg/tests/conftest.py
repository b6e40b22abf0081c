import numpy as np
import pytest

from app.models.schemas import DatasetConfig, OptimizerConfig, OptimizerKind, RunConfig


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def gaussian(rng):
    def make(rows: int, cols: int) -> np.ndarray:
        return rng.standard_normal((rows, cols))
    return make


@pytest.fixture
def small_run(tmp_path):
    """A quick AuON run writing into a temporary directory"""
    def make(**overrides) -> RunConfig:
        fields = dict(
            seed=7,
            optimizer=OptimizerConfig(kind=OptimizerKind.AUON),
            dataset=DatasetConfig(n=64, d=6, classes=3, spread=0.5),
            hidden=8,
            steps=10,
            output_dir=str(tmp_path),
        )
        fields.update(overrides)
        return RunConfig(**fields)
    return make
