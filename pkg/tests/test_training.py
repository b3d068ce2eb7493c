import numpy as np
import pytest

from graspcount.errors import EmptyDataset, NonFiniteGradient, ShapeMismatch, ValidationError
from graspcount.network import Dense, NeuralModel, ReLU, Softmax, one_hot
from graspcount.training import TrainConfig, TrainingSet, adam_step, train, _oversampled_indices

XOR_X = np.array([[0, 0], [0, 1], [1, 0], [1, 1]], dtype=float)
XOR_Y = one_hot([0, 1, 1, 0], 2)


def test_zero_gradient_leaves_parameters_unchanged():
    model = NeuralModel([Dense(2, 2)]).init(0)
    before = [p.copy() for p in model.parameters()]
    grads = [np.zeros_like(p) for p in model.parameters()]
    adam_step(model, grads, TrainConfig())
    for a, b in zip(before, model.parameters()):
        assert np.array_equal(a, b)
    assert model.adam_state.t == 1


def test_first_adam_step_moves_by_learning_rate():
    model = NeuralModel([Dense(1, 1)])
    model.layers[0].weights[:] = 1.0
    grads = [np.array([[0.25]]), np.zeros(1)]
    adam_step(model, grads, TrainConfig(learning_rate=0.001))
    delta = 1.0 - model.layers[0].weights[0, 0]
    assert abs(delta - 0.001) <= 1e-6  # lr * sign(g), bias-corrected


def test_adam_rejects_bad_gradients():
    model = NeuralModel([Dense(2, 2)]).init(0)
    grads = [np.full((2, 2), np.nan), np.zeros(2)]
    with pytest.raises(NonFiniteGradient):
        adam_step(model, grads, TrainConfig())
    with pytest.raises(ShapeMismatch):
        adam_step(model, [np.zeros((2, 2))], TrainConfig())
    with pytest.raises(ShapeMismatch):
        adam_step(model, [np.zeros((3, 2)), np.zeros(2)], TrainConfig())


def test_quadratic_bowl_converges():
    model = NeuralModel([Dense(1, 1)]).init(0)
    data = TrainingSet(np.array([[1.0]]), np.array([[0.0]]))
    history = train(model, data, TrainConfig(learning_rate=0.01, epochs=500,
                                             batch_size=1, loss="mse", seed=0))
    assert history[-1] < 1e-6


def test_zero_epochs_is_a_no_op():
    model = NeuralModel([Dense(2, 2), Softmax()]).init(4)
    before = [p.copy() for p in model.parameters()]
    history = train(model, TrainingSet(XOR_X, XOR_Y),
                    TrainConfig(epochs=0, batch_size=4, loss="categorical_cross_entropy"))
    assert history == []
    for a, b in zip(before, model.parameters()):
        assert np.array_equal(a, b)


def test_xor_is_learnable():
    model = NeuralModel([Dense(2, 24), ReLU(), Dense(24, 2), Softmax()]).init(42)
    config = TrainConfig(learning_rate=0.001, epochs=2000, batch_size=4,
                         loss="categorical_cross_entropy", seed=1)
    history = train(model, TrainingSet(XOR_X, XOR_Y), config)
    assert len(history) == 2000
    assert history[-1] < 0.01


def test_oversampling_balances_classes():
    classes = np.array([0] * 90 + [1] * 10)
    rng = np.random.default_rng(3)
    for _ in range(5):
        idx = _oversampled_indices(classes, rng)
        assert len(idx) == 100
        freq = np.bincount(classes[idx], minlength=2) / 100.0
        assert np.abs(freq - 0.5).max() <= 0.05  # within 10% of uniform


def test_oversample_needs_class_labels():
    model = NeuralModel([Dense(2, 1)]).init(0)
    data = TrainingSet(XOR_X, np.zeros((4, 1)))
    config = TrainConfig(epochs=1, batch_size=2, loss="mse", oversample=True)
    with pytest.raises(ValidationError):
        train(model, data, config)
    # classification targets derive classes from the one-hot rows
    clf = NeuralModel([Dense(2, 2), Softmax()]).init(0)
    cfg = TrainConfig(epochs=2, batch_size=2, loss="categorical_cross_entropy",
                      oversample=True)
    assert len(train(clf, TrainingSet(XOR_X, XOR_Y), cfg)) == 2


def test_training_is_bit_deterministic():
    def run():
        model = NeuralModel([Dense(2, 8), ReLU(), Dense(8, 2), Softmax()]).init(3)
        train(model, TrainingSet(XOR_X, XOR_Y),
              TrainConfig(epochs=40, batch_size=2, loss="categorical_cross_entropy", seed=9))
        return model

    a, b = run(), run()
    assert a.to_json() == b.to_json()
    for pa, pb in zip(a.parameters(), b.parameters()):
        assert np.array_equal(pa, pb)


def test_empty_dataset_rejected():
    model = NeuralModel([Dense(2, 1)]).init(0)
    with pytest.raises(EmptyDataset):
        train(model, TrainingSet(np.zeros((0, 2)), np.zeros((0, 1))),
              TrainConfig(epochs=1, loss="mse"))


def test_config_validation():
    with pytest.raises(ValidationError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(ValidationError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValidationError):
        TrainConfig(loss="hinge")
    with pytest.raises(ShapeMismatch):
        TrainingSet(np.zeros((3, 2)), np.zeros((4, 1)))


def test_loss_history_length_matches_epochs():
    model = NeuralModel([Dense(2, 2), Softmax()]).init(1)
    history = train(model, TrainingSet(XOR_X, XOR_Y),
                    TrainConfig(epochs=7, batch_size=3, loss="categorical_cross_entropy"))
    assert len(history) == 7
    assert all(np.isfinite(v) for v in history)
