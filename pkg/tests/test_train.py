import numpy as np
import pytest

from phytaylor.datagen import example1_dataset
from phytaylor.editing import LayerPlan, build_model
from phytaylor.errors import DimensionMismatch, InvalidArgument, TrainingDiverged
from phytaylor.knowledge import KnowledgeSpec
from phytaylor.network import compliance_deviation
from phytaylor.train import (
    Adam,
    Dataset,
    TrainConfig,
    evaluate_loss,
    loss_and_grad,
    rollout,
    rollout_error,
    selfcorrecting_loss,
    train_model,
    train_selfcorrecting,
)


def test_adam_first_two_steps():
    lr, g1, g2 = 0.1, np.array([0.5, -2.0]), np.array([1.0, 1.0])
    p = np.zeros(2)
    opt = Adam([(2,)], lr)
    opt.step([p], [g1], [np.ones(2)])
    np.testing.assert_allclose(p, -lr * g1 / (np.abs(g1) + 1e-8), rtol=1e-12)
    before = p.copy()
    opt.step([p], [g2], [np.ones(2)])
    m = (0.9 * 0.1 * g1 + 0.1 * g2) / (1 - 0.9**2)
    v = (0.999 * 0.001 * g1**2 + 0.001 * g2**2) / (1 - 0.999**2)
    np.testing.assert_allclose(p, before - lr * m / (np.sqrt(v) + 1e-8), rtol=1e-12)


def test_adam_respects_mask():
    p = np.array([1.0, 2.0])
    Adam([(2,)], 0.1).step([p], [np.array([1.0, 1.0])], [np.array([0.0, 1.0])])
    assert p[0] == 1.0 and p[1] != 2.0


@pytest.mark.parametrize("kind,expected_loss", [("mse", 2.5), ("mae", 1.5)])
def test_losses(kind, expected_loss):
    y_hat, y = np.array([[1.0, 2.0]]), np.array([[0.0, 0.0]])
    loss, g = loss_and_grad(kind, y_hat, y)
    assert loss == expected_loss
    assert g.shape == y.shape


def test_config_validation():
    for bad in ({"optimizer": "rmsprop"}, {"loss": "huber"}, {"learning_rate": 0.0},
                {"batch_size": 0}):
        with pytest.raises(InvalidArgument):
            TrainConfig(**bad)


def test_dataset_validation():
    with pytest.raises(DimensionMismatch):
        Dataset(np.zeros((3, 2)), np.zeros((2, 1)))
    with pytest.raises(InvalidArgument):
        Dataset(np.zeros((1, 2)), np.zeros((1, 1)), split=["holdout"])


def _example1():
    data, spec = example1_dataset(400, seed=1)
    return data, build_model(spec, [LayerPlan(3, 2, "identity")], seed=0)


def test_training_reduces_loss_and_keeps_masks():
    data, model = _example1()
    frozen = [layer.W[layer.M == 0].copy() for layer in model.layers]
    before = evaluate_loss(model, data)
    hist = train_model(model, data, TrainConfig(learning_rate=1e-2, batch_size=50, epochs=40))
    assert hist.train_loss[-1] < 0.1 * before
    assert len(hist.epochs) == 40
    for layer, f in zip(model.layers, frozen):
        np.testing.assert_array_equal(layer.W[layer.M == 0], f)
    assert compliance_deviation(model, data.inputs[:20]) <= 1e-9


def test_training_deterministic():
    runs = []
    for _ in range(2):
        data, model = _example1()
        hist = train_model(model, data, TrainConfig(batch_size=32, epochs=5, seed=4))
        runs.append((model.layers[0].W.copy(), hist.train_loss))
    np.testing.assert_array_equal(runs[0][0], runs[1][0])
    assert runs[0][1] == runs[1][1]


def test_validation_scored_per_epoch():
    data, model = _example1()
    data.split[::5] = "val"
    hist = train_model(model, data, TrainConfig(epochs=3))
    assert all(v is not None for v in hist.val_loss)


def test_divergence_rolls_back():
    data, model = _example1()
    data.targets *= 1e200
    start = [w.copy() for w in model.weights()]
    with pytest.raises(TrainingDiverged) as exc:
        train_model(model, data, TrainConfig(learning_rate=1e3, epochs=5, optimizer="sgd"))
    for w, s in zip(model.weights(), start):
        np.testing.assert_array_equal(w, s)
    assert exc.value.history.epochs == []


def test_dimension_mismatch():
    _, model = _example1()
    with pytest.raises(DimensionMismatch):
        train_model(model, Dataset(np.zeros((4, 2)), np.zeros((4, 3))), TrainConfig(epochs=1))


def test_rollout_linear_map():
    A = np.array([[0.9, 0.1], [0.0, 0.8]])
    out = rollout(lambda x: A @ x, np.array([1.0, 1.0]), 3)
    np.testing.assert_allclose(out[-1], np.linalg.matrix_power(A, 3) @ [1.0, 1.0])


def test_rollout_error_values():
    # x(k+1) = x(k) truth versus a model that adds 0.1 per step to each of two states
    traj = np.zeros((4, 2))
    step = lambda x: x + 0.1  # noqa: E731
    # errors per step: 0.1*sqrt(2), 0.2*sqrt(2), 0.3*sqrt(2); mean / d
    plain = rollout_error(step, traj, 3)
    assert plain == pytest.approx(0.2 * np.sqrt(2) / 2, rel=1e-12)
    sq = rollout_error(step, traj, 3, squared=True)
    assert sq == pytest.approx((0.02 + 0.08 + 0.18) / 3 / 2, rel=1e-12)


def test_rollout_error_divergence_is_inf():
    model = build_model(KnowledgeSpec.unknown(1, 1, 2), [LayerPlan(1, 2, "identity")], seed=0)
    model.layers[0].W[0] = [0.0, 0.0, 10.0]
    assert rollout_error(model, np.full((40, 1), 2.0), 30) == float("inf")


def test_rollout_error_horizon_checked():
    with pytest.raises(InvalidArgument):
        rollout_error(lambda x: x, np.zeros((5, 2)), 5)


def _safety_pair(seed=0):
    policy = build_model(KnowledgeSpec.unknown(2, 3, 1), [LayerPlan(4, 1), LayerPlan(2, 1)], seed=seed)
    safety = build_model(KnowledgeSpec.unknown(2, 2, 2), [LayerPlan(2, 2, "identity")], seed=seed)
    return policy, safety


def test_selfcorrecting_gradient_fd(rng):
    policy, safety = _safety_pair()
    x = rng.normal(size=(5, 3))
    u, s = rng.normal(size=(5, 2)), rng.normal(size=(5, 2))
    _, gp, gs = selfcorrecting_loss(policy, safety, x, u, s, 0.7, 1.3)
    h = 1e-6
    for model, grads in ((policy, gp), (safety, gs)):
        for layer, g in zip(model.layers, grads):
            for idx in [(0, 0), (1, 1)]:
                orig = layer.W[idx]
                layer.W[idx] = orig + h
                up = selfcorrecting_loss(policy, safety, x, u, s, 0.7, 1.3)[0]
                layer.W[idx] = orig - h
                down = selfcorrecting_loss(policy, safety, x, u, s, 0.7, 1.3)[0]
                layer.W[idx] = orig
                assert g[idx] == pytest.approx((up - down) / (2 * h), rel=1e-5, abs=1e-9)


def test_selfcorrecting_training_reduces_loss(rng):
    policy, safety = _safety_pair(1)
    x = rng.uniform(-1, 1, (200, 3))
    u = np.tanh(x[:, :2])
    s = np.stack([u[:, 0] ** 2, u[:, 0] * u[:, 1]], axis=1)
    data = Dataset(x, np.hstack([u, s]))
    hist = train_selfcorrecting(policy, safety, data, TrainConfig(learning_rate=1e-2, batch_size=50,
                                                                  epochs=30))
    assert hist.train_loss[-1] < hist.train_loss[0]


def test_selfcorrecting_rejects_nonpolynomial_safety():
    policy, _ = _safety_pair()
    safety = build_model(KnowledgeSpec.unknown(2, 2, 2), [LayerPlan(2, 2, "tanh")], seed=0)
    with pytest.raises(InvalidArgument):
        train_selfcorrecting(policy, safety, Dataset(np.zeros((2, 3)), np.zeros((2, 4))),
                             TrainConfig(epochs=1))
