"""
Desk-scale network: a two-layer tanh MLP with softmax cross-entropy, manual
backpropagation, Gaussian blob datasets and the training loop that logs the
alignment / update-energy diagnostics at every step.
"""

import logging
from typing import Dict, Tuple

import numpy as np
import xxhash
from pydantic import BaseModel, ConfigDict

from app.core.exceptions import ConfigError, StaleCacheError, TrainingDivergedError
from app.models.schemas import Dataset, MlpModel, RunConfig, RunLog
from app.services.diagnostics import record_step, summarize_run
from app.services.optim import Optimizer

logger = logging.getLogger(__name__)

CENTER_SCALE = 1.0


class ForwardCache(BaseModel):
    """Activations of one forward pass, tagged with the parameters that made them"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    inputs: np.ndarray
    labels: np.ndarray
    hidden: np.ndarray
    logits: np.ndarray
    log_norm: np.ndarray
    tag: str


def make_blobs(seed: int, n: int, classes: int, d: int, spread: float) -> Dataset:
    """Gaussian clusters around seeded class centers, classes balanced within one sample"""
    if not n >= classes >= 2:
        raise ConfigError(f"need n >= classes >= 2, got n={n}, classes={classes}")
    rng = np.random.default_rng(seed)
    centers = CENTER_SCALE * rng.standard_normal((classes, d))
    labels = rng.permutation(np.arange(n) % classes)
    inputs = centers[labels] + spread * rng.standard_normal((n, d))
    return Dataset(inputs=inputs, labels=labels, classes=classes)


def init_mlp(seed: int, input_dim: int, hidden: int, classes: int) -> MlpModel:
    rng = np.random.default_rng([seed, 1])
    return MlpModel(
        w1=rng.standard_normal((hidden, input_dim)) / np.sqrt(input_dim),
        b1=np.zeros((1, hidden)),
        w2=rng.standard_normal((classes, hidden)) / np.sqrt(hidden),
        b2=np.zeros((1, classes)),
    )


def fingerprint(model: MlpModel) -> str:
    digest = xxhash.xxh64()
    for name, value in model.parameters().items():
        digest.update(name.encode())
        digest.update(np.ascontiguousarray(value).tobytes())
    return digest.hexdigest()


def forward_loss(model: MlpModel, batch: Dataset) -> Tuple[float, ForwardCache]:
    """Mean softmax cross-entropy with a max-shifted log-sum-exp"""
    if batch.inputs.shape[1] != model.w1.shape[1]:
        raise ConfigError(f"batch has {batch.inputs.shape[1]} features, model expects {model.w1.shape[1]}")
    hidden = np.tanh(batch.inputs @ model.w1.T + model.b1)
    logits = hidden @ model.w2.T + model.b2
    shift = logits.max(axis=1)
    log_norm = shift + np.log(np.exp(logits - shift[:, None]).sum(axis=1))
    picked = logits[np.arange(batch.size), batch.labels]
    loss = float(np.mean(log_norm - picked))
    cache = ForwardCache(
        inputs=batch.inputs,
        labels=batch.labels,
        hidden=hidden,
        logits=logits,
        log_norm=log_norm,
        tag=fingerprint(model),
    )
    return loss, cache


def backward(model: MlpModel, cache: ForwardCache) -> Dict[str, np.ndarray]:
    if cache.tag != fingerprint(model):
        raise StaleCacheError("forward cache was produced by different parameters")
    n = cache.inputs.shape[0]
    dlogits = np.exp(cache.logits - cache.log_norm[:, None])
    dlogits[np.arange(n), cache.labels] -= 1.0
    dlogits /= n

    dz1 = (dlogits @ model.w2) * (1.0 - cache.hidden ** 2)
    return {
        "linear1.weight": dz1.T @ cache.inputs,
        "linear1.bias": dz1.sum(axis=0, keepdims=True),
        "linear2.weight": dlogits.T @ cache.hidden,
        "linear2.bias": dlogits.sum(axis=0, keepdims=True),
    }


def accuracy(model: MlpModel, data: Dataset) -> float:
    hidden = np.tanh(data.inputs @ model.w1.T + model.b1)
    predictions = np.argmax(hidden @ model.w2.T + model.b2, axis=1)
    return float(np.mean(predictions == data.labels))


def _batch(data: Dataset, size, rng: np.random.Generator) -> Dataset:
    if size is None or size >= data.size:
        return data
    idx = rng.choice(data.size, size=size, replace=False)
    return Dataset(inputs=data.inputs[idx], labels=data.labels[idx], classes=data.classes)


def _finite(arrays: Dict[str, np.ndarray]) -> bool:
    return all(np.isfinite(a).all() for a in arrays.values())


def train_model(run: RunConfig) -> Tuple[RunLog, MlpModel, Dataset]:
    """Run the step budget; returns the log, the final model and the training data"""
    ds = run.dataset
    data = make_blobs(run.seed, ds.n, ds.classes, ds.d, ds.spread)
    model = init_mlp(run.seed, ds.d, run.hidden, ds.classes)
    optimizer = Optimizer(run.optimizer, model.parameters())
    batch_rng = np.random.default_rng([run.seed, 2])

    logger.info(
        f"Training {run.optimizer.kind.value} (lr={run.optimizer.lr}) for {run.steps} steps "
        f"on {ds.n} blobs, hidden={run.hidden}, seed={run.seed}"
    )
    records = []
    last_finite = (-1, None)
    for step in range(run.steps):
        loss, cache = forward_loss(model, _batch(data, run.batch_size, batch_rng))
        if not np.isfinite(loss):
            logger.error(f"Loss diverged at step {step}")
            raise TrainingDivergedError(
                f"loss became non-finite at step {step}; last finite step {last_finite[0]}",
                last_finite_step=last_finite[0],
                last_finite_loss=last_finite[1],
            )
        last_finite = (step, loss)

        grads = backward(model, cache)
        values = optimizer.step(grads) if _finite(grads) else None
        if values is None or not _finite(values):
            logger.error(f"Gradients or parameters became non-finite at step {step}")
            raise TrainingDivergedError(
                f"gradients or parameters became non-finite at step {step}",
                last_finite_step=step,
                last_finite_loss=loss,
            )
        model = model.with_parameters(values)
        records.append(record_step(step, loss, grads, optimizer.states))

    log = RunLog(config=run, steps=records)
    final_loss, _ = forward_loss(model, data)
    log.summary = summarize_run(log, final_loss, accuracy(model, data), seed=run.seed)
    logger.info(
        f"Finished: loss {log.summary.initial_loss:.4f} -> {final_loss:.4f}, "
        f"kappa median {log.summary.kappa_median:.3f}, sigma2 mean {log.summary.sigma2_mean:.4f}"
    )
    return log, model, data


def train(run: RunConfig) -> RunLog:
    log, _, _ = train_model(run)
    return log
