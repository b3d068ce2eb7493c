import numpy as np
import pytest

from graspcount.errors import ShapeMismatch, ValidationError
from graspcount.network import (
    Conv2D,
    ConvTranspose2D,
    Dense,
    Dropout,
    Flatten,
    MaxPool2x2,
    NeuralModel,
    ReLU,
    Reshape,
    Softmax,
    Upsample2x2,
    cross_entropy_loss,
    mse_loss,
    one_hot,
)

from oracles import max_param_grad_error


def test_identity_network_returns_input(rng):
    x = rng.normal(size=(3, 5))
    assert np.array_equal(NeuralModel([]).forward(x), x)


def test_softmax_uniform_on_zeros():
    out = NeuralModel([Softmax()]).forward(np.zeros((1, 5)))
    assert np.allclose(out, 0.2)


def test_softmax_simplex_property(rng):
    out = NeuralModel([Softmax()]).forward(rng.normal(size=(40, 5)) * 5)
    assert np.all(out > 0) and np.all(out < 1)
    assert np.abs(out.sum(axis=1) - 1.0).max() <= 1e-9


def test_maxpool_single_block():
    x = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 2, 2, 1)
    out = MaxPool2x2().forward(x, training=False, rng=None, record=False)
    assert out.shape == (1, 1, 1, 1)
    assert out[0, 0, 0, 0] == 4.0


def test_upsample_repeats_nearest():
    x = np.arange(4.0).reshape(1, 2, 2, 1)
    out = Upsample2x2().forward(x, training=False, rng=None, record=False)
    assert out.shape == (1, 4, 4, 1)
    assert np.array_equal(out[0, :2, :2, 0], np.full((2, 2), 0.0))
    assert np.array_equal(out[0, 2:, 2:, 0], np.full((2, 2), 3.0))


def test_dropout_eval_is_identity_and_train_scales(rng):
    layer = Dropout(0.5)
    x = rng.normal(size=(20, 30))
    assert np.array_equal(layer.forward(x, training=False, rng=None, record=False), x)
    out = layer.forward(x, training=True, rng=np.random.default_rng(0), record=True)
    kept = out != 0
    assert np.allclose(out[kept], 2.0 * x[kept])
    with pytest.raises(ValidationError):
        layer.forward(x, training=True, rng=None, record=False)
    with pytest.raises(ValidationError):
        Dropout(1.0)


def test_dense_gradients_zero_case():
    model = NeuralModel([Dense(3, 2)])
    x = np.zeros((4, 3))
    pred = model.forward(x, record=True)
    _, grad = mse_loss(pred, np.zeros((4, 2)))
    model.backward(grad)
    for g in model.gradients():
        assert np.allclose(g, 0.0)


def test_mlp_gradcheck(rng):
    model = NeuralModel([Dense(5, 8), ReLU(), Dense(8, 6), ReLU(), Dense(6, 4), Softmax()]).init(3)
    x = rng.normal(size=(6, 5))
    t = one_hot(rng.integers(0, 4, 6), 4)
    assert max_param_grad_error(model, x, t, cross_entropy_loss) <= 1e-4


def test_conv_stack_gradcheck(rng):
    model = NeuralModel([
        Reshape((6, 4, 1)), Conv2D(1, 3), ReLU(), MaxPool2x2(),
        Upsample2x2(), ConvTranspose2D(3, 2), Flatten(),
    ]).init(5)
    x = rng.normal(size=(4, 24))
    t = rng.normal(size=(4, 48))
    assert max_param_grad_error(model, x, t, mse_loss) <= 1e-4


def test_conv_transpose_is_adjoint_of_conv(rng):
    conv = Conv2D(3, 4)
    conv.init(np.random.default_rng(7))
    conv.bias[:] = 0.0
    tconv = ConvTranspose2D(4, 3)
    tconv.kernel = conv.kernel
    tconv.bias[:] = 0.0
    x = rng.normal(size=(2, 6, 4, 3))
    y = rng.normal(size=(2, 6, 4, 4))
    cx = conv.forward(x, training=False, rng=None, record=False)
    ty = tconv.forward(y, training=False, rng=None, record=False)
    lhs = float((cx * y).sum())
    rhs = float((x * ty).sum())
    assert abs(lhs - rhs) / max(abs(lhs), abs(rhs)) <= 1e-10


def test_loss_properties(rng):
    pred = rng.random((8, 5))
    pred /= pred.sum(axis=1, keepdims=True)
    target = one_hot(rng.integers(0, 5, 8), 5)
    ce, _ = cross_entropy_loss(pred, target)
    assert ce >= 0.0
    exact, _ = cross_entropy_loss(np.clip(target, 1e-15, 1.0), target)
    assert exact <= 1e-10

    a = rng.normal(size=(4, 7))
    mse_val, _ = mse_loss(a, a.copy())
    assert mse_val == 0.0
    mse_val, _ = mse_loss(a, a + 1.0)
    assert abs(mse_val - 1.0) <= 1e-12


def test_shape_mismatch_errors(rng):
    with pytest.raises(ShapeMismatch):
        NeuralModel([Dense(3, 2)]).forward(rng.normal(size=(4, 5)))
    with pytest.raises(ShapeMismatch):
        NeuralModel([Reshape((2, 3, 1))]).forward(rng.normal(size=(4, 5)))
    with pytest.raises(ShapeMismatch):
        NeuralModel([Reshape((3, 3, 1)), MaxPool2x2()]).forward(rng.normal(size=(2, 9)))
    with pytest.raises(ShapeMismatch):
        mse_loss(np.zeros((2, 3)), np.zeros((3, 2)))


def test_serialization_round_trip_is_byte_identical(tmp_path, rng):
    model = NeuralModel([
        Reshape((6, 4, 1)), Conv2D(1, 4), ReLU(), MaxPool2x2(), Flatten(),
        Dropout(0.5), Dense(24, 6), Dense(6, 36),
    ]).init(11)
    text = model.to_json()
    rebuilt = NeuralModel.from_json(text)
    assert rebuilt.to_json() == text
    for a, b in zip(model.parameters(), rebuilt.parameters()):
        assert np.array_equal(a, b)
    path = tmp_path / "model.json"
    model.save(path)
    assert NeuralModel.load(path).to_json() == text
    x = rng.normal(size=(3, 24))
    assert np.array_equal(model.forward(x), rebuilt.forward(x))
    with pytest.raises(ValidationError):
        NeuralModel.from_json('{"version": 2, "layer_specs": [], "parameters": []}')


def test_forward_without_record_does_not_mutate(rng):
    model = NeuralModel([Dense(4, 3), ReLU(), Softmax()]).init(2)
    x = rng.normal(size=(5, 4))
    model.forward(x, record=False)
    assert model.layers[0]._x is None
    assert model.layers[1]._mask is None
