"""Adam optimization and the seeded mini-batch training loop."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyDataset, NonFiniteGradient, ShapeMismatch, ValidationError
from .network import LOSSES, NeuralModel

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    epochs: int = 100
    batch_size: int = 500
    loss: str = "mse"
    seed: int = 0
    oversample: bool = False

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ValidationError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be at least 1")
        if self.epochs < 0:
            raise ValidationError("epochs must be non-negative")
        if self.loss not in LOSSES:
            raise ValidationError(f"loss must be one of {sorted(LOSSES)}")


@dataclass
class TrainingSet:
    """Inputs and targets, with optional class labels for oversampling."""

    inputs: np.ndarray
    targets: np.ndarray
    classes: np.ndarray | None = field(default=None)

    def __post_init__(self) -> None:
        self.inputs = np.asarray(self.inputs, dtype=float)
        self.targets = np.asarray(self.targets, dtype=float)
        if len(self.inputs) != len(self.targets):
            raise ShapeMismatch("inputs and targets must have equal length")
        if self.classes is not None:
            self.classes = np.asarray(self.classes, dtype=int)
            if len(self.classes) != len(self.inputs):
                raise ShapeMismatch("classes must align with inputs")

    def __len__(self) -> int:
        return len(self.inputs)


def adam_step(model: NeuralModel, gradients: list[np.ndarray], config: TrainConfig) -> NeuralModel:
    """One in-place Adam update; increments the shared step counter.

    Raises:
        NonFiniteGradient: if any gradient entry is NaN or infinite.
        ShapeMismatch: if gradients do not mirror the parameter list.
    """
    params = model.parameters()
    if len(gradients) != len(params):
        raise ShapeMismatch(f"{len(gradients)} gradient tensors for {len(params)} parameters")
    for p, g in zip(params, gradients):
        if p.shape != g.shape:
            raise ShapeMismatch(f"gradient shape {g.shape} != parameter shape {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient("gradient contains NaN or infinite entries")
    state = model.ensure_adam_state()
    state.t += 1
    correct1 = 1.0 - ADAM_BETA1 ** state.t
    correct2 = 1.0 - ADAM_BETA2 ** state.t
    for p, g, m, v in zip(params, gradients, state.m, state.v):
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * g * g
        p -= config.learning_rate * (m / correct1) / (np.sqrt(v / correct2) + ADAM_EPS)
    return model


def _oversampled_indices(classes: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Resample one epoch's index list to near-uniform class frequency."""
    n = len(classes)
    present = np.unique(classes)
    per_class = int(np.ceil(n / len(present)))
    picks = [rng.choice(np.flatnonzero(classes == c), size=per_class, replace=True)
             for c in present]
    idx = np.concatenate(picks)
    rng.shuffle(idx)
    return idx[:n]


def _epoch_classes(data: TrainingSet, config: TrainConfig) -> np.ndarray:
    if data.classes is not None:
        return data.classes
    if config.loss == "categorical_cross_entropy":
        return data.targets.argmax(axis=1)
    raise ValidationError("oversampling needs class labels for non-classification targets")


def train(model: NeuralModel, data: TrainingSet, config: TrainConfig) -> list[float]:
    """Train in place with full-shuffle mini-batches; returns per-epoch loss.

    Each epoch reshuffles (and, when configured, class-balances) the sample
    order from a generator seeded by config.seed, so identical inputs yield
    bit-identical parameters.
    """
    if len(data) == 0:
        raise EmptyDataset("training set is empty")
    rng = np.random.default_rng(config.seed)
    loss_fn = LOSSES[config.loss]
    classes = _epoch_classes(data, config) if config.oversample else None
    model.ensure_adam_state()
    history: list[float] = []
    for _ in range(config.epochs):
        if config.oversample:
            order = _oversampled_indices(classes, rng)
        else:
            order = rng.permutation(len(data))
        total = 0.0
        for lo in range(0, len(order), config.batch_size):
            batch = order[lo:lo + config.batch_size]
            pred = model.forward(data.inputs[batch], training=True, rng=rng, record=True)
            loss, grad = loss_fn(pred, data.targets[batch])
            model.backward(grad)
            adam_step(model, model.gradients(), config)
            total += loss * len(batch)
        history.append(total / len(order))
    return history
