"""
Optimizer steps over named parameters.

Structured optimizers (AuON, Hybrid-AuON, Muon) blend momentum, push the
blended gradient through an update transform on its 2-D view, and apply
value <- (1 - lr*wd) * value - lr * shape_scale * U. SGD-momentum and AdamW are
the unstructured baselines. Each step function returns a new ParamState and
never touches any other parameter, so distinct parameters can be stepped in
any order or in parallel.
"""

import logging
from typing import Dict, Tuple

import numpy as np

from app.core.exceptions import ConfigError, ShapeMismatchError
from app.models.schemas import (
    OptimizerConfig,
    OptimizerKind,
    ParamState,
    STRUCTURED_KINDS,
)
from app.services.transforms import apply_transform, shape_scale

logger = logging.getLogger(__name__)


def momentum_blend(
    buf: np.ndarray, g: np.ndarray, beta: float, nesterov: bool
) -> Tuple[np.ndarray, np.ndarray]:
    """
    new_buf = lerp(buf, g, 1 - beta); the effective gradient is new_buf, or
    lerp(g, new_buf, beta) under Nesterov.
    """
    if buf.shape != g.shape:
        raise ShapeMismatchError(f"momentum buffer {buf.shape} does not match gradient {g.shape}")
    if not 0.0 <= beta < 1.0:
        raise ValueError(f"momentum beta must lie in [0, 1), got {beta}")
    new_buf = buf + (1.0 - beta) * (g - buf)
    effective = g + beta * (new_buf - g) if nesterov else new_buf
    return new_buf, effective


def as_2d(x: np.ndarray) -> np.ndarray:
    """Vectors become 1 x n rows; higher ranks flatten to (dim0, rest)"""
    if x.ndim == 1:
        return x.reshape(1, -1)
    if x.ndim > 2:
        return x.reshape(x.shape[0], -1)
    return x


def _checked_grad(p: ParamState, grad: np.ndarray) -> np.ndarray:
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != p.shape:
        raise ShapeMismatchError(f"gradient {grad.shape} does not match parameter {p.shape}")
    return grad


def _decayed(p: ParamState, cfg: OptimizerConfig) -> np.ndarray:
    return (1.0 - cfg.lr * cfg.weight_decay) * p.value


def step_structured(p: ParamState, grad: np.ndarray, cfg: OptimizerConfig) -> ParamState:
    if cfg.kind not in STRUCTURED_KINDS:
        raise ConfigError(f"step_structured does not handle optimizer '{cfg.kind.value}'")
    grad = _checked_grad(p, grad)
    new_buf, effective = momentum_blend(p.momentum_buffer, grad, cfg.momentum_beta, cfg.nesterov)

    matrix = as_2d(effective)
    u, report = apply_transform(matrix, cfg.transform)
    u = u.reshape(p.shape)
    rows, cols = matrix.shape

    return p.model_copy(update={
        "value": _decayed(p, cfg) - cfg.lr * shape_scale(rows, cols) * u,
        "momentum_buffer": new_buf,
        "step_count": p.step_count + 1,
        "last_update": u,
        "last_report": report,
    })


def step_sgdm(p: ParamState, grad: np.ndarray, cfg: OptimizerConfig) -> ParamState:
    grad = _checked_grad(p, grad)
    new_buf, effective = momentum_blend(p.momentum_buffer, grad, cfg.momentum_beta, cfg.nesterov)
    return p.model_copy(update={
        "value": _decayed(p, cfg) - cfg.lr * effective,
        "momentum_buffer": new_buf,
        "step_count": p.step_count + 1,
        "last_update": effective,
        "last_report": None,
    })


def step_adamw(p: ParamState, grad: np.ndarray, cfg: OptimizerConfig) -> ParamState:
    """Bias-corrected Adam moments with decoupled weight decay"""
    grad = _checked_grad(p, grad)
    t = p.step_count + 1
    m = cfg.adam_beta1 * p.adam_m + (1.0 - cfg.adam_beta1) * grad
    v = cfg.adam_beta2 * p.adam_v + (1.0 - cfg.adam_beta2) * grad * grad
    m_hat = m / (1.0 - cfg.adam_beta1 ** t)
    v_hat = v / (1.0 - cfg.adam_beta2 ** t)
    direction = m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
    return p.model_copy(update={
        "value": _decayed(p, cfg) - cfg.lr * direction,
        "adam_m": m,
        "adam_v": v,
        "step_count": t,
        "last_update": direction,
        "last_report": None,
    })


def step_param(p: ParamState, grad: np.ndarray, cfg: OptimizerConfig) -> ParamState:
    if cfg.kind in STRUCTURED_KINDS:
        return step_structured(p, grad, cfg)
    if cfg.kind == OptimizerKind.ADAMW:
        return step_adamw(p, grad, cfg)
    return step_sgdm(p, grad, cfg)


class Optimizer:
    """One configuration stepping a named set of parameters"""

    def __init__(self, config: OptimizerConfig, params: Dict[str, np.ndarray]):
        self.config = config
        self.states: Dict[str, ParamState] = {
            name: ParamState.create(value) for name, value in params.items()
        }
        logger.debug(f"{config.kind.value} optimizer over {len(self.states)} parameters, lr={config.lr}")

    def step(self, grads: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
        """Step every parameter; returns the new values"""
        missing = set(self.states) - set(grads)
        if missing:
            raise ShapeMismatchError(f"no gradient for parameters {sorted(missing)}")
        for name in sorted(self.states):
            self.states[name] = step_param(self.states[name], grads[name], self.config)
        return self.values()

    def values(self) -> Dict[str, np.ndarray]:
        return {name: state.value for name, state in self.states.items()}

    def updates(self) -> Dict[str, np.ndarray]:
        """Raw (pre-lr) update of the latest step per parameter"""
        return {name: state.last_update for name, state in self.states.items()}
