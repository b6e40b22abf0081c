from pydantic import BaseModel, ConfigDict, Field, field_serializer, field_validator, model_validator
from typing import Optional, List, Dict, Set, Tuple
from enum import Enum

import numpy as np

from app.core.config import settings

Coeffs = Tuple[float, float, float]

# Quintic Newton-Schulz coefficients
MUON_COEFFS: Coeffs = (3.4445, -4.7750, 2.0315)
HYBRID_COEFFS: Coeffs = (1.0, -0.5, 0.375)


# Linear algebra models
class SvdResult(BaseModel):
    """Thin SVD u . diag(sigma) . v^T"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    u: np.ndarray
    sigma: np.ndarray
    v: np.ndarray

    @model_validator(mode="after")
    def check_shapes(self):
        k = self.sigma.shape[0]
        if self.u.shape[1] != k or self.v.shape[1] != k:
            raise ValueError("u and v must have min(rows, cols) columns")
        return self


# Transform models
class TransformKind(str, Enum):
    IDENTITY = "identity"
    EXACT_POLAR = "polar"
    NEWTON_SCHULZ = "newton-schulz"
    COSH_RMS = "cosh-rms"
    HYBRID_COSH_RMS = "hybrid-cosh-rms"


class TransformSpec(BaseModel):
    """Which update transform to apply, with its iteration parameters"""
    kind: TransformKind = TransformKind.COSH_RMS
    steps: Optional[int] = Field(None, ge=0, description="Newton-Schulz steps; 0 only for the hybrid degenerate case")
    coeffs: Optional[Coeffs] = Field(None, description="Quintic coefficients (a, b, c)")

    @model_validator(mode="after")
    def fill_defaults(self):
        if self.kind == TransformKind.NEWTON_SCHULZ:
            self.steps = 5 if self.steps is None else self.steps
            self.coeffs = MUON_COEFFS if self.coeffs is None else self.coeffs
            if self.steps < 1:
                raise ValueError("newton-schulz needs at least one step")
        elif self.kind == TransformKind.HYBRID_COSH_RMS:
            self.steps = 1 if self.steps is None else self.steps
            self.coeffs = HYBRID_COEFFS if self.coeffs is None else self.coeffs
        return self


class TransformReport(BaseModel):
    input_frobenius: float
    rms_statistic: float = 0.0
    output_spectral_norm: float
    output_frobenius: float


# Optimizer models
class OptimizerKind(str, Enum):
    AUON = "auon"
    HYBRID_AUON = "hybrid-auon"
    MUON_NS = "muon"
    SGD_MOMENTUM = "sgdm"
    ADAMW = "adamw"


STRUCTURED_KINDS = {OptimizerKind.AUON, OptimizerKind.HYBRID_AUON, OptimizerKind.MUON_NS}

DEFAULT_LR: Dict[OptimizerKind, float] = {
    OptimizerKind.AUON: 0.24,
    OptimizerKind.HYBRID_AUON: 0.24,
    OptimizerKind.MUON_NS: 0.01,
    OptimizerKind.SGD_MOMENTUM: 0.1,
    OptimizerKind.ADAMW: 0.003,
}

DEFAULT_TRANSFORM: Dict[OptimizerKind, TransformKind] = {
    OptimizerKind.AUON: TransformKind.COSH_RMS,
    OptimizerKind.HYBRID_AUON: TransformKind.HYBRID_COSH_RMS,
    OptimizerKind.MUON_NS: TransformKind.NEWTON_SCHULZ,
    OptimizerKind.SGD_MOMENTUM: TransformKind.IDENTITY,
    OptimizerKind.ADAMW: TransformKind.IDENTITY,
}


class OptimizerConfig(BaseModel):
    kind: OptimizerKind = OptimizerKind.AUON
    lr: Optional[float] = Field(None, ge=0.0, description="Learning rate; per-kind default when omitted")
    momentum_beta: float = Field(0.95, ge=0.0, lt=1.0)
    nesterov: bool = True
    weight_decay: float = Field(0.0, ge=0.0)
    transform: Optional[TransformSpec] = None
    adam_beta1: float = Field(0.9, ge=0.0, lt=1.0)
    adam_beta2: float = Field(0.999, ge=0.0, lt=1.0)
    adam_eps: float = Field(1e-8, gt=0.0)

    @model_validator(mode="after")
    def fill_defaults(self):
        if self.lr is None:
            self.lr = DEFAULT_LR[self.kind]
        if self.transform is None:
            self.transform = TransformSpec(kind=DEFAULT_TRANSFORM[self.kind])
        return self


class ParamState(BaseModel):
    """One parameter with its momentum and moment buffers"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    value: np.ndarray
    momentum_buffer: np.ndarray
    adam_m: np.ndarray
    adam_v: np.ndarray
    step_count: int = Field(0, ge=0)
    last_update: Optional[np.ndarray] = None
    last_report: Optional[TransformReport] = None

    @model_validator(mode="after")
    def check_buffers(self):
        for name in ("momentum_buffer", "adam_m", "adam_v"):
            if getattr(self, name).shape != self.value.shape:
                raise ValueError(f"{name} must match value shape {self.value.shape}")
        return self

    @classmethod
    def create(cls, value: np.ndarray) -> "ParamState":
        value = np.array(value, dtype=np.float64)
        return cls(
            value=value,
            momentum_buffer=np.zeros_like(value),
            adam_m=np.zeros_like(value),
            adam_v=np.zeros_like(value),
        )

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape


# Network models
class Dataset(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    inputs: np.ndarray
    labels: np.ndarray
    classes: int = Field(..., ge=2)

    @model_validator(mode="after")
    def check_rows(self):
        if self.inputs.ndim != 2 or self.labels.ndim != 1:
            raise ValueError("inputs must be n x d and labels length n")
        if self.inputs.shape[0] != self.labels.shape[0]:
            raise ValueError("inputs and labels row counts differ")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.classes):
            raise ValueError(f"labels must lie in [0, {self.classes})")
        return self

    @property
    def size(self) -> int:
        return self.inputs.shape[0]


class MlpModel(BaseModel):
    """Two-layer tanh MLP; biases are stored as 1 x k rows"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    @model_validator(mode="after")
    def check_shapes(self):
        hidden, _ = self.w1.shape
        classes, hidden2 = self.w2.shape
        if hidden2 != hidden or self.b1.shape != (1, hidden) or self.b2.shape != (1, classes):
            raise ValueError("inconsistent MLP parameter shapes")
        return self

    def parameters(self) -> Dict[str, np.ndarray]:
        return {
            "linear1.weight": self.w1,
            "linear1.bias": self.b1,
            "linear2.weight": self.w2,
            "linear2.bias": self.b2,
        }

    def with_parameters(self, params: Dict[str, np.ndarray]) -> "MlpModel":
        return MlpModel(
            w1=params["linear1.weight"],
            b1=params["linear1.bias"],
            w2=params["linear2.weight"],
            b2=params["linear2.bias"],
        )


# Diagnostics models
class Statistic(str, Enum):
    MEDIAN = "median"
    MEAN = "mean"


class StepDiagnostics(BaseModel):
    step: int = Field(..., ge=0)
    loss: float
    rho_samples: Dict[str, float] = {}
    sigma2_samples: Dict[str, float] = {}
    update_spectral_norm: Dict[str, float] = {}
    rms_statistic: Dict[str, float] = {}
    rho_flat: float = Field(0.0, description="Alignment with gradient and update flattened across all parameters")


class BootstrapCI(BaseModel):
    point: float
    lo: float
    hi: float
    level: float = 0.95
    iterations: int = 2000
    statistic: Statistic = Statistic.MEDIAN

    @model_validator(mode="after")
    def check_order(self):
        if not self.lo <= self.point <= self.hi:
            raise ValueError("confidence interval must satisfy lo <= point <= hi")
        return self


class KappaSigma(BaseModel):
    kappa_median: float
    kappa_p10: float
    sigma2_mean: float


class LayerSummary(BaseModel):
    layer: str
    rho_median: float
    sigma2_mean: float


class StepwiseRow(BaseModel):
    step: int
    loss: float
    kappa_median: float
    kappa_p10: float
    sigma2_mean: float


class BenchRow(BaseModel):
    size: int
    transform: str
    mean_seconds: float
    std_seconds: float


class SpectraTrace(BaseModel):
    sigmas: List[List[float]]
    gram_distances: List[float]


class PropertyResult(BaseModel):
    name: str
    passed: bool
    samples: int
    worst_margin: float = Field(..., description="Smallest slack to the bound; negative means violated")
    counterexample: Optional[str] = None


# Run models
class EmitKind(str, Enum):
    RUNLOG = "runlog"
    DIAGNOSTICS = "diagnostics"
    SPECTRA = "spectra"
    BENCH = "bench"


class DatasetConfig(BaseModel):
    n: int = Field(512, ge=2)
    d: int = Field(16, ge=1)
    classes: int = Field(4, ge=2)
    spread: float = Field(1.0, ge=0.0)

    @model_validator(mode="after")
    def check_counts(self):
        if self.n < self.classes:
            raise ValueError("need at least one sample per class")
        return self


class RunConfig(BaseModel):
    seed: int = 42
    optimizer: OptimizerConfig = Field(default_factory=OptimizerConfig)
    dataset: DatasetConfig = Field(default_factory=DatasetConfig)
    hidden: int = Field(32, ge=1)
    steps: int = Field(50, ge=1)
    batch_size: Optional[int] = Field(None, ge=1, description="Minibatch size; full batch when omitted")
    output_dir: str = Field(default_factory=lambda: settings.AUON_OUTPUT_DIR)
    emit: Set[EmitKind] = Field(default_factory=lambda: {EmitKind.RUNLOG, EmitKind.DIAGNOSTICS})

    @field_serializer("emit")
    def serialize_emit(self, emit: Set[EmitKind]) -> List[str]:
        return sorted(kind.value for kind in emit)


class RunSummary(BaseModel):
    initial_loss: float
    final_loss: float
    final_accuracy: float
    kappa_median: float
    kappa_p10: float
    sigma2_mean: float
    kappa_ci: BootstrapCI
    sigma2_ci: BootstrapCI
    layers: List[LayerSummary]


class RunLog(BaseModel):
    config: RunConfig
    steps: List[StepDiagnostics] = []
    summary: Optional[RunSummary] = None

    @field_validator("steps")
    @classmethod
    def check_contiguous(cls, steps: List[StepDiagnostics]) -> List[StepDiagnostics]:
        for i, record in enumerate(steps):
            if record.step != i:
                raise ValueError(f"step records must be contiguous from 0, found {record.step} at {i}")
        return steps


# HTTP models
class TransformRequest(BaseModel):
    matrix: List[List[float]] = Field(..., min_length=1, description="Row-major matrix")
    kind: TransformKind = TransformKind.COSH_RMS
    steps: Optional[int] = Field(None, ge=0)
    coeffs: Optional[Coeffs] = None


class TransformResponse(BaseModel):
    output: List[List[float]]
    report: TransformReport


class VerifyRequest(BaseModel):
    seed: int = 0
    samples: int = Field(200, ge=1, le=5000)
    spikes: List[float] = [2.0, 5.0, 10.0]


class VerifyResponse(BaseModel):
    passed: bool
    results: List[PropertyResult]


class SpectraRequest(BaseModel):
    rows: int = Field(64, ge=1)
    cols: int = Field(64, ge=1)
    seed: int = 0
    steps: int = Field(5, ge=1, le=50)
    coeffs: Coeffs = MUON_COEFFS
