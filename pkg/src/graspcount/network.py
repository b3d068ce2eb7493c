"""Minimal float64 neural-network engine: layers, losses, serialization.

Supported layers: dense, conv2d (3x3, stride 1, same padding),
conv_transpose2d (exact adjoint of conv2d), maxpool2x2, upsample2x2
(nearest neighbour), dropout (inverted scaling), relu, softmax, flatten,
reshape. Image tensors are NHWC.

Gradient semantics: `forward(..., record=True)` caches whatever the
layer's `backward` needs; a `record=False` forward mutates nothing, so
trained models can serve concurrent inference. Loss functions return
`(scalar_loss, grad_wrt_prediction)` and carry the 1/N averaging, so layer
backwards are plain adjoints.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import ShapeMismatch, ValidationError

MODEL_FORMAT_VERSION = 1
_LOG_EPS = 1e-12


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ShapeMismatch(msg)


class Layer:
    """Base layer: parameter-free identity."""

    kind = "identity"

    def spec(self) -> dict:
        return {"kind": self.kind}

    def params(self) -> list[np.ndarray]:
        return []

    def grads(self) -> list[np.ndarray]:
        return []

    def init(self, rng: np.random.Generator) -> None:
        pass

    def forward(self, x: np.ndarray, *, training: bool, rng, record: bool) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class Dense(Layer):
    kind = "dense"

    def __init__(self, in_dim: int, units: int):
        self.in_dim = int(in_dim)
        self.units = int(units)
        self.weights = np.zeros((self.in_dim, self.units))
        self.bias = np.zeros(self.units)
        self._dw = np.zeros_like(self.weights)
        self._db = np.zeros_like(self.bias)
        self._x = None

    def spec(self) -> dict:
        return {"kind": self.kind, "in_dim": self.in_dim, "units": self.units}

    def params(self):
        return [self.weights, self.bias]

    def grads(self):
        return [self._dw, self._db]

    def init(self, rng):
        limit = np.sqrt(6.0 / (self.in_dim + self.units))
        self.weights = rng.uniform(-limit, limit, size=self.weights.shape)
        self.bias = np.zeros(self.units)

    def forward(self, x, *, training, rng, record):
        _require(x.ndim == 2 and x.shape[1] == self.in_dim,
                 f"dense expects (N, {self.in_dim}), got {x.shape}")
        if record:
            self._x = x
        return x @ self.weights + self.bias

    def backward(self, grad):
        self._dw = self._x.T @ grad
        self._db = grad.sum(axis=0)
        return grad @ self.weights.T


class Conv2D(Layer):
    """3x3 correlation, stride 1, zero same-padding; kernel (3, 3, Cin, F)."""

    kind = "conv2d"

    def __init__(self, in_channels: int, filters: int):
        self.in_channels = int(in_channels)
        self.filters = int(filters)
        self.kernel = np.zeros((3, 3, self.in_channels, self.filters))
        self.bias = np.zeros(self.filters)
        self._dk = np.zeros_like(self.kernel)
        self._db = np.zeros_like(self.bias)
        self._xp = None

    def spec(self) -> dict:
        return {"kind": self.kind, "in_channels": self.in_channels, "filters": self.filters}

    def params(self):
        return [self.kernel, self.bias]

    def grads(self):
        return [self._dk, self._db]

    def init(self, rng):
        fan_in = 9 * self.in_channels
        fan_out = 9 * self.filters
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        self.kernel = rng.uniform(-limit, limit, size=self.kernel.shape)
        self.bias = np.zeros(self.filters)

    def forward(self, x, *, training, rng, record):
        _require(x.ndim == 4 and x.shape[3] == self.in_channels,
                 f"conv2d expects (N, H, W, {self.in_channels}), got {x.shape}")
        n, h, w, _ = x.shape
        xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
        if record:
            self._xp = xp
        out = np.zeros((n, h, w, self.filters))
        flat = out.reshape(-1, self.filters)
        for di in range(3):
            for dj in range(3):
                patch = np.ascontiguousarray(xp[:, di:di + h, dj:dj + w, :])
                flat += patch.reshape(-1, self.in_channels) @ self.kernel[di, dj]
        return out + self.bias

    def backward(self, grad):
        n, h, w, _ = grad.shape
        g2 = grad.reshape(-1, self.filters)
        self._db = g2.sum(axis=0)
        self._dk = np.zeros_like(self.kernel)
        gxp = np.zeros_like(self._xp)
        for di in range(3):
            for dj in range(3):
                patch = np.ascontiguousarray(self._xp[:, di:di + h, dj:dj + w, :])
                self._dk[di, dj] = patch.reshape(-1, self.in_channels).T @ g2
                gxp[:, di:di + h, dj:dj + w, :] += (
                    g2 @ self.kernel[di, dj].T).reshape(n, h, w, self.in_channels)
        return gxp[:, 1:h + 1, 1:w + 1, :]


class ConvTranspose2D(Layer):
    """Adjoint of Conv2D under the same kernel layout.

    The kernel is stored (3, 3, F, Cin) so that a ConvTranspose2D sharing a
    Conv2D's kernel array realizes exactly its transpose map.
    """

    kind = "conv_transpose2d"

    def __init__(self, in_channels: int, filters: int):
        self.in_channels = int(in_channels)
        self.filters = int(filters)
        self.kernel = np.zeros((3, 3, self.filters, self.in_channels))
        self.bias = np.zeros(self.filters)
        self._dk = np.zeros_like(self.kernel)
        self._db = np.zeros_like(self.bias)
        self._x = None

    def spec(self) -> dict:
        return {"kind": self.kind, "in_channels": self.in_channels, "filters": self.filters}

    def params(self):
        return [self.kernel, self.bias]

    def grads(self):
        return [self._dk, self._db]

    def init(self, rng):
        fan_in = 9 * self.in_channels
        fan_out = 9 * self.filters
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        self.kernel = rng.uniform(-limit, limit, size=self.kernel.shape)
        self.bias = np.zeros(self.filters)

    def forward(self, x, *, training, rng, record):
        _require(x.ndim == 4 and x.shape[3] == self.in_channels,
                 f"conv_transpose2d expects (N, H, W, {self.in_channels}), got {x.shape}")
        n, h, w, _ = x.shape
        if record:
            self._x = x
        x2 = x.reshape(-1, self.in_channels)
        buf = np.zeros((n, h + 2, w + 2, self.filters))
        for di in range(3):
            for dj in range(3):
                buf[:, di:di + h, dj:dj + w, :] += (
                    x2 @ self.kernel[di, dj].T).reshape(n, h, w, self.filters)
        return buf[:, 1:h + 1, 1:w + 1, :] + self.bias

    def backward(self, grad):
        n, h, w, _ = grad.shape
        self._db = grad.sum(axis=(0, 1, 2))
        self._dk = np.zeros_like(self.kernel)
        gp = np.pad(grad, ((0, 0), (1, 1), (1, 1), (0, 0)))
        x2 = self._x.reshape(-1, self.in_channels)
        gx2 = np.zeros_like(x2)
        for di in range(3):
            for dj in range(3):
                patch = np.ascontiguousarray(gp[:, di:di + h, dj:dj + w, :])
                p2 = patch.reshape(-1, self.filters)
                self._dk[di, dj] = p2.T @ x2
                gx2 += p2 @ self.kernel[di, dj]
        return gx2.reshape(self._x.shape)


class MaxPool2x2(Layer):
    kind = "maxpool2x2"

    def __init__(self):
        self._argmax = None
        self._in_shape = None

    def forward(self, x, *, training, rng, record):
        _require(x.ndim == 4 and x.shape[1] % 2 == 0 and x.shape[2] % 2 == 0,
                 f"maxpool2x2 needs even spatial dims, got {x.shape}")
        n, h, w, c = x.shape
        blocks = (x.reshape(n, h // 2, 2, w // 2, 2, c)
                  .transpose(0, 1, 3, 2, 4, 5)
                  .reshape(n, h // 2, w // 2, 4, c))
        if record:
            self._argmax = blocks.argmax(axis=3)
            self._in_shape = x.shape
        return blocks.max(axis=3)

    def backward(self, grad):
        n, h, w, c = self._in_shape
        buf = np.zeros((n, h // 2, w // 2, 4, c))
        np.put_along_axis(buf, self._argmax[:, :, :, None, :], grad[:, :, :, None, :], axis=3)
        return (buf.reshape(n, h // 2, w // 2, 2, 2, c)
                .transpose(0, 1, 3, 2, 4, 5)
                .reshape(n, h, w, c))


class Upsample2x2(Layer):
    """Nearest-neighbour 2x repetition in both spatial dims."""

    kind = "upsample2x2"

    def forward(self, x, *, training, rng, record):
        _require(x.ndim == 4, f"upsample2x2 expects NHWC, got {x.shape}")
        return x.repeat(2, axis=1).repeat(2, axis=2)

    def backward(self, grad):
        n, h, w, c = grad.shape
        return grad.reshape(n, h // 2, 2, w // 2, 2, c).sum(axis=(2, 4))


class Dropout(Layer):
    kind = "dropout"

    def __init__(self, rate: float = 0.5):
        if not 0.0 <= rate < 1.0:
            raise ValidationError("dropout rate must lie in [0, 1)")
        self.rate = float(rate)
        self._mask = None

    def spec(self) -> dict:
        return {"kind": self.kind, "rate": self.rate}

    def forward(self, x, *, training, rng, record):
        if not training or self.rate == 0.0:
            if record:
                self._mask = None
            return x
        if rng is None:
            raise ValidationError("training-mode dropout needs a seeded generator")
        mask = (rng.random(x.shape) >= self.rate) / (1.0 - self.rate)
        if record:
            self._mask = mask
        return x * mask

    def backward(self, grad):
        return grad if self._mask is None else grad * self._mask


class ReLU(Layer):
    kind = "relu"

    def __init__(self):
        self._mask = None

    def forward(self, x, *, training, rng, record):
        if record:
            self._mask = x > 0
        return np.maximum(x, 0.0)

    def backward(self, grad):
        return grad * self._mask


class Softmax(Layer):
    """Row-wise softmax over the last axis."""

    kind = "softmax"

    def __init__(self):
        self._out = None

    def forward(self, x, *, training, rng, record):
        z = x - x.max(axis=-1, keepdims=True)
        e = np.exp(z)
        out = e / e.sum(axis=-1, keepdims=True)
        if record:
            self._out = out
        return out

    def backward(self, grad):
        s = self._out
        return s * (grad - (grad * s).sum(axis=-1, keepdims=True))


class Flatten(Layer):
    kind = "flatten"

    def __init__(self):
        self._in_shape = None

    def forward(self, x, *, training, rng, record):
        if record:
            self._in_shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return grad.reshape(self._in_shape)


class Reshape(Layer):
    """Reshape each sample to a fixed target shape."""

    kind = "reshape"

    def __init__(self, shape: tuple[int, ...]):
        self.shape = tuple(int(s) for s in shape)
        self._in_shape = None

    def spec(self) -> dict:
        return {"kind": self.kind, "shape": list(self.shape)}

    def forward(self, x, *, training, rng, record):
        size = int(np.prod(self.shape))
        _require(int(np.prod(x.shape[1:])) == size,
                 f"cannot reshape {x.shape} to (N, {self.shape})")
        if record:
            self._in_shape = x.shape
        return x.reshape((x.shape[0],) + self.shape)

    def backward(self, grad):
        return grad.reshape(self._in_shape)


_LAYER_FACTORY = {
    "dense": lambda s: Dense(s["in_dim"], s["units"]),
    "conv2d": lambda s: Conv2D(s["in_channels"], s["filters"]),
    "conv_transpose2d": lambda s: ConvTranspose2D(s["in_channels"], s["filters"]),
    "maxpool2x2": lambda s: MaxPool2x2(),
    "upsample2x2": lambda s: Upsample2x2(),
    "dropout": lambda s: Dropout(s["rate"]),
    "relu": lambda s: ReLU(),
    "softmax": lambda s: Softmax(),
    "flatten": lambda s: Flatten(),
    "reshape": lambda s: Reshape(s["shape"]),
}


class AdamState:
    """First/second moment buffers plus the shared step counter."""

    def __init__(self, params: list[np.ndarray]):
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0


class NeuralModel:
    """An ordered layer stack with flat parameter access."""

    def __init__(self, layers: list[Layer]):
        self.layers = list(layers)
        self.adam_state: AdamState | None = None

    def init(self, seed: int) -> "NeuralModel":
        rng = np.random.default_rng(seed)
        for layer in self.layers:
            layer.init(rng)
        return self

    def parameters(self) -> list[np.ndarray]:
        return [p for layer in self.layers for p in layer.params()]

    def gradients(self) -> list[np.ndarray]:
        return [g for layer in self.layers for g in layer.grads()]

    def param_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def forward(self, x, *, training: bool = False, rng=None,
                record: bool | None = None, start: int = 0,
                end: int | None = None) -> np.ndarray:
        """Run layers [start, end); `record` defaults to `training`."""
        record = training if record is None else record
        out = np.asarray(x, dtype=float)
        for layer in self.layers[start:end]:
            out = layer.forward(out, training=training, rng=rng, record=record)
        return out

    def backward(self, grad: np.ndarray) -> np.ndarray:
        """Backpropagate from the loss gradient; fills per-layer grads."""
        g = grad
        for layer in reversed(self.layers):
            g = layer.backward(g)
        return g

    def ensure_adam_state(self) -> AdamState:
        if self.adam_state is None:
            self.adam_state = AdamState(self.parameters())
        return self.adam_state

    # -- persistence --------------------------------------------------

    def to_payload(self) -> dict:
        return {
            "version": MODEL_FORMAT_VERSION,
            "layer_specs": [layer.spec() for layer in self.layers],
            "parameters": [[p.ravel().tolist() for p in layer.params()]
                           for layer in self.layers],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_payload(), sort_keys=True)

    @classmethod
    def from_payload(cls, payload: dict) -> "NeuralModel":
        if payload.get("version") != MODEL_FORMAT_VERSION:
            raise ValidationError(f"unsupported model version {payload.get('version')!r}")
        model = cls([_LAYER_FACTORY[s["kind"]](s) for s in payload["layer_specs"]])
        for layer, flats in zip(model.layers, payload["parameters"]):
            tensors = layer.params()
            _require(len(tensors) == len(flats), "parameter group count mismatch")
            for tensor, flat in zip(tensors, flats):
                arr = np.asarray(flat, dtype=float)
                _require(arr.size == tensor.size,
                         f"parameter size {arr.size} != expected {tensor.size}")
                tensor[...] = arr.reshape(tensor.shape)
        return model

    @classmethod
    def from_json(cls, text: str) -> "NeuralModel":
        return cls.from_payload(json.loads(text))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "NeuralModel":
        return cls.from_json(Path(path).read_text())


# -- losses ----------------------------------------------------------------

def mse_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error over all tensor elements."""
    _require(pred.shape == target.shape, f"MSE shapes differ: {pred.shape} vs {target.shape}")
    diff = pred - target
    return float(np.mean(diff ** 2)), 2.0 * diff / diff.size


def cross_entropy_loss(probs: np.ndarray, onehot: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean categorical cross-entropy against one-hot rows of probabilities."""
    _require(probs.shape == onehot.shape,
             f"cross-entropy shapes differ: {probs.shape} vs {onehot.shape}")
    n = probs.shape[0]
    clipped = np.clip(probs, _LOG_EPS, None)
    loss = float(-(onehot * np.log(clipped)).sum() / n)
    return loss, -(onehot / clipped) / n


LOSSES = {"mse": mse_loss, "categorical_cross_entropy": cross_entropy_loss}


def one_hot(labels, n_classes: int) -> np.ndarray:
    lab = np.asarray(labels, dtype=int)
    if lab.ndim != 1 or np.any(lab < 0) or np.any(lab >= n_classes):
        raise ValidationError(f"labels must be integers in [0, {n_classes})")
    out = np.zeros((lab.size, n_classes))
    out[np.arange(lab.size), lab] = 1.0
    return out
