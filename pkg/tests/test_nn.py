import numpy as np
import pytest

from app.core.exceptions import ConfigError, StaleCacheError, TrainingDivergedError
from app.models.schemas import Dataset, DatasetConfig, OptimizerConfig, OptimizerKind
from app.services.nn import (
    accuracy,
    backward,
    fingerprint,
    forward_loss,
    init_mlp,
    make_blobs,
    train,
    train_model,
)


def _subset(data: Dataset, size: int) -> Dataset:
    return Dataset(inputs=data.inputs[:size], labels=data.labels[:size], classes=data.classes)


def test_make_blobs_is_deterministic_and_balanced():
    a = make_blobs(seed=3, n=103, classes=4, d=5, spread=1.0)
    b = make_blobs(seed=3, n=103, classes=4, d=5, spread=1.0)
    np.testing.assert_array_equal(a.inputs, b.inputs)
    np.testing.assert_array_equal(a.labels, b.labels)

    counts = np.bincount(a.labels, minlength=4)
    assert counts.max() - counts.min() <= 1
    assert a.inputs.shape == (103, 5)


def test_make_blobs_validation():
    with pytest.raises(ConfigError):
        make_blobs(seed=0, n=3, classes=4, d=2, spread=1.0)
    with pytest.raises(ConfigError):
        make_blobs(seed=0, n=10, classes=1, d=2, spread=1.0)


def test_uniform_logits_give_log_classes():
    data = make_blobs(seed=0, n=12, classes=3, d=4, spread=1.0)
    model = init_mlp(0, 4, 5, 3)
    model = model.with_parameters({**model.parameters(), "linear2.weight": np.zeros((3, 5))})
    loss, _ = forward_loss(model, data)
    assert loss == pytest.approx(np.log(3.0), rel=1e-14)


def test_confident_correct_logits_drive_loss_to_zero():
    data = Dataset(inputs=np.zeros((2, 1)), labels=np.array([0, 0]), classes=2)
    model = init_mlp(0, 1, 2, 2)
    model = model.with_parameters({**model.parameters(), "linear2.bias": np.array([[60.0, -60.0]])})
    loss, _ = forward_loss(model, data)
    assert 0.0 <= loss < 1e-40


def test_forward_loss_matches_per_sample_computation():
    data = make_blobs(seed=1, n=20, classes=4, d=6, spread=1.0)
    model = init_mlp(1, 6, 7, 4)
    loss, _ = forward_loss(model, data)

    losses = []
    for x, y in zip(data.inputs, data.labels):
        h = np.tanh(model.w1 @ x + model.b1[0])
        z = model.w2 @ h + model.b2[0]
        losses.append(np.log(np.sum(np.exp(z))) - z[y])
    assert loss == pytest.approx(np.mean(losses), abs=1e-12)


def test_backward_matches_finite_differences():
    data = _subset(make_blobs(seed=2, n=40, classes=3, d=4, spread=1.0), 5)
    model = init_mlp(2, 4, 6, 3)
    _, cache = forward_loss(model, data)
    grads = backward(model, cache)

    h = 1e-5
    params = model.parameters()
    for name, value in params.items():
        assert grads[name].shape == value.shape
        for idx in np.ndindex(value.shape):
            plus, minus = value.copy(), value.copy()
            plus[idx] += h
            minus[idx] -= h
            f_plus, _ = forward_loss(model.with_parameters({**params, name: plus}), data)
            f_minus, _ = forward_loss(model.with_parameters({**params, name: minus}), data)
            numeric = (f_plus - f_minus) / (2 * h)
            analytic = grads[name][idx]
            assert abs(analytic - numeric) <= 1e-4 * max(abs(analytic), abs(numeric), 1e-6), (name, idx)


def test_duplicated_batch_leaves_gradients_unchanged():
    data = make_blobs(seed=4, n=16, classes=2, d=3, spread=1.0)
    doubled = Dataset(
        inputs=np.vstack([data.inputs, data.inputs]),
        labels=np.concatenate([data.labels, data.labels]),
        classes=2,
    )
    model = init_mlp(4, 3, 5, 2)
    single = backward(model, forward_loss(model, data)[1])
    double = backward(model, forward_loss(model, doubled)[1])
    for name in single:
        np.testing.assert_allclose(single[name], double[name], rtol=1e-12, atol=1e-15)


def test_backward_rejects_stale_cache():
    data = make_blobs(seed=0, n=8, classes=2, d=3, spread=1.0)
    model = init_mlp(0, 3, 4, 2)
    _, cache = forward_loss(model, data)
    moved = model.with_parameters({**model.parameters(), "linear1.bias": np.ones((1, 4))})
    assert fingerprint(moved) != fingerprint(model)
    with pytest.raises(StaleCacheError):
        backward(moved, cache)


def test_forward_rejects_feature_mismatch():
    model = init_mlp(0, 3, 4, 2)
    with pytest.raises(ConfigError):
        forward_loss(model, make_blobs(seed=0, n=8, classes=2, d=5, spread=1.0))


def test_zero_learning_rate_keeps_loss_constant(small_run):
    run = small_run(optimizer=OptimizerConfig(kind=OptimizerKind.SGD_MOMENTUM, lr=0.0))
    losses = [record.loss for record in train(run).steps]
    assert len(set(losses)) == 1


def test_training_is_deterministic(small_run):
    a, b = train(small_run()), train(small_run())
    assert a.model_dump_json() == b.model_dump_json()


def test_default_auon_run_learns_and_logs_diagnostics(small_run):
    run = small_run(dataset=DatasetConfig(), hidden=32, steps=50, seed=42)
    log, model, data = train_model(run)

    assert [record.step for record in log.steps] == list(range(50))
    assert all(np.isfinite(record.loss) for record in log.steps)
    assert log.summary.final_loss < log.summary.initial_loss
    assert log.summary.kappa_median > 0.0
    assert log.summary.kappa_p10 > 0.0
    assert 0.9 < log.summary.sigma2_mean <= 1.0
    assert log.summary.final_accuracy == accuracy(model, data)

    for record in log.steps:
        assert set(record.rho_samples) == {"linear1.weight", "linear1.bias", "linear2.weight", "linear2.bias"}
        assert all(s < 1.0 for s in record.sigma2_samples.values())
        assert all(r >= 1.0 for r in record.rms_statistic.values())


def test_minibatch_training_is_seeded(small_run):
    a = train(small_run(batch_size=16))
    b = train(small_run(batch_size=16))
    assert [s.loss for s in a.steps] == [s.loss for s in b.steps]
    assert a.steps[0].loss != train(small_run()).steps[0].loss


def test_separable_blobs_train_to_a_vanishing_gradient(small_run):
    run = small_run(
        optimizer=OptimizerConfig(kind=OptimizerKind.ADAMW, lr=0.05),
        dataset=DatasetConfig(n=40, d=4, classes=2, spread=0.0),
        hidden=8,
        steps=300,
    )
    log, model, data = train_model(run)
    assert accuracy(model, data) == 1.0
    grads = backward(model, forward_loss(model, data)[1])
    total = np.sqrt(sum(np.sum(g ** 2) for g in grads.values()))
    assert total < 1e-3


@pytest.mark.parametrize("kind", list(OptimizerKind))
def test_default_learning_rates_stay_finite(small_run, kind):
    run = small_run(optimizer=OptimizerConfig(kind=kind), dataset=DatasetConfig(), hidden=32, steps=200)
    log = train(run)
    assert all(np.isfinite(record.loss) for record in log.steps)
    assert np.isfinite(log.summary.final_loss)


def test_divergence_aborts_with_last_finite_step(small_run):
    run = small_run(optimizer=OptimizerConfig(kind=OptimizerKind.SGD_MOMENTUM, lr=float("inf")), steps=5)
    with pytest.raises(TrainingDivergedError) as info:
        train(run)
    assert info.value.last_finite_step == 0
    assert np.isfinite(info.value.last_finite_loss)
