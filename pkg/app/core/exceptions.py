from typing import Optional


class AuonError(Exception):
    """Base class for every error raised by the optimizer toolkit"""


class NonFiniteMatrixError(AuonError):
    """Matrix contains NaN or Inf entries"""


class ShapeMismatchError(AuonError):
    """Two operands do not have matching shapes"""


class ZeroMatrixError(AuonError):
    """Operation is undefined for the zero matrix"""


class DimensionTooLargeError(AuonError):
    """Matrix exceeds the size cap of the dense oracle"""


class CoshOverflowError(AuonError):
    """An entry is too large for cosh in double precision"""


class ConvergenceError(AuonError):
    """Iteration exhausted its budget before meeting tolerance"""

    def __init__(self, message: str, estimate: Optional[float] = None, iterations: int = 0):
        super().__init__(message)
        self.estimate = estimate
        self.iterations = iterations


class StaleCacheError(AuonError):
    """Forward cache does not belong to the model's current parameters"""


class TrainingDivergedError(AuonError):
    """Loss became non-finite during training"""

    def __init__(self, message: str, last_finite_step: int, last_finite_loss: Optional[float]):
        super().__init__(message)
        self.last_finite_step = last_finite_step
        self.last_finite_loss = last_finite_loss


class EmptyLogError(AuonError):
    """Run log holds no samples to aggregate"""


class InsufficientSamplesError(AuonError):
    """Too few samples for the requested statistic"""


class ConfigError(AuonError):
    """Invalid run configuration"""
