"""Learned count estimators: tactile autoencoders, three classifiers, ensemble.

The ensemble averages three member distributions: a raw-feature softmax
classifier (106 inputs), an encoded-feature softmax classifier (34 inputs),
and an encoded-feature scalar regressor whose output is spread over the two
nearest classes so the average is well-typed. Tactile codes come from three
convolutional autoencoders: palm, fixed finger, and one shared across both
moving fingers.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, EmptyDataset, InvalidDim, NonFiniteValue, ValidationError
from .kinematics import DEFAULT_LIMITS, REGION_SLICES, REGIONS, JointLimits
from .network import (
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
    one_hot,
)
from .simulator import GraspSample, child_seed, count_to_class
from .training import TrainConfig, TrainingSet, train

N_CLASSES = 5
CODE_DIM = 6
NAIVE_DIM = 106
ENCODED_DIM = 34
GRID_SHAPE = (6, 4)
ENCODER_LAYER_COUNT = 9  # layers [0:9) of an autoencoder form the encoder

AUTOENCODER_KEYS = ("palm", "fixed_finger", "moving_fingers")
BUNDLE_FORMAT_VERSION = 1


@dataclass(frozen=True)
class TactileGrid:
    """One region's 24 normalized readings as a 6x4 grid."""

    region: str
    values: np.ndarray
    scale: float  # max-force divisor that produced the normalized values

    def __post_init__(self) -> None:
        if self.region not in REGIONS:
            raise ValidationError(f"unknown region {self.region!r}")
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))
        if self.values.shape != GRID_SHAPE:
            raise ValidationError(f"grid must be {GRID_SHAPE}, got {self.values.shape}")

    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)


@dataclass(frozen=True)
class TactileEncoding:
    region: str
    code: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "code", np.asarray(self.code, dtype=float))
        if self.code.shape != (CODE_DIM,):
            raise ValidationError(f"code must have {CODE_DIM} values")


@dataclass(frozen=True)
class ClassDistribution:
    """Probabilities over the count classes {0, 1, 2, 3, >=4}."""

    probs: np.ndarray

    def __post_init__(self) -> None:
        p = np.asarray(self.probs, dtype=float)
        object.__setattr__(self, "probs", p)
        if p.shape != (N_CLASSES,):
            raise ValidationError(f"need {N_CLASSES} probabilities")
        if np.any(p < -1e-12) or np.any(p > 1.0 + 1e-12) or abs(p.sum() - 1.0) > 1e-9:
            raise ValidationError("probabilities must form a simplex")

    def predicted_class(self) -> int:
        """Argmax class; ties break toward the smaller count."""
        return int(np.argmax(self.probs))


@dataclass(frozen=True)
class FeatureVector:
    variant: str  # naive | encoded
    values: np.ndarray

    def __post_init__(self) -> None:
        expected = {"naive": NAIVE_DIM, "encoded": ENCODED_DIM}.get(self.variant)
        if expected is None:
            raise ValidationError(f"unknown variant {self.variant!r}")
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", v)
        if v.shape != (expected,):
            raise ValidationError(f"{self.variant} features must have {expected} values")


def tactile_grids(sample: GraspSample, scale: float = 1.0) -> dict[str, TactileGrid]:
    """Split a sample's 96 readings into the four region grids."""
    return {
        region: TactileGrid(region, sample.tactile[sl].reshape(GRID_SHAPE), scale)
        for region, sl in REGION_SLICES.items()
    }


# -- autoencoders ------------------------------------------------------------

def build_autoencoder(region: str, seed: int = 0) -> NeuralModel:
    """Convolutional autoencoder 24 -> 6 -> 24 for one tactile region."""
    if region not in REGIONS and region != "moving_fingers":
        raise ValidationError(f"unknown region {region!r}")
    layers = [
        Reshape((6, 4, 1)),
        Conv2D(1, 12), ReLU(),
        Conv2D(12, 6), ReLU(),
        MaxPool2x2(),
        Flatten(),
        Dropout(0.5),
        Dense(36, CODE_DIM),
        # decoder
        Dense(CODE_DIM, 36),
        Reshape((3, 2, 6)),
        ConvTranspose2D(6, 6), ReLU(),
        ConvTranspose2D(6, 12), ReLU(),
        Upsample2x2(),
        ConvTranspose2D(12, 1),
        Flatten(),
    ]
    return NeuralModel(layers).init(seed)


def encode(model: NeuralModel, frames: np.ndarray) -> np.ndarray:
    """Run the encoder half only: (N, 24) -> (N, 6), dropout inactive."""
    return model.forward(np.atleast_2d(frames), end=ENCODER_LAYER_COUNT)


def reconstruct(model: NeuralModel, frames: np.ndarray) -> np.ndarray:
    return model.forward(np.atleast_2d(frames))


@dataclass
class Autoencoders:
    """Palm and fixed-finger models plus one shared moving-finger model."""

    palm: NeuralModel
    fixed_finger: NeuralModel
    moving_fingers: NeuralModel

    def model_for(self, region: str) -> NeuralModel:
        if region == "palm":
            return self.palm
        if region == "fixed_finger":
            return self.fixed_finger
        if region in ("moving_finger_1", "moving_finger_2", "moving_fingers"):
            return self.moving_fingers
        raise ValidationError(f"unknown region {region!r}")

    def encode_region(self, region: str, frames: np.ndarray) -> np.ndarray:
        return encode(self.model_for(region), frames)

    def codes(self, tactile: np.ndarray) -> np.ndarray:
        """Concatenated region codes for a batch of 96-value readings."""
        t = np.atleast_2d(tactile)
        parts = [self.encode_region(r, t[:, REGION_SLICES[r]]) for r in REGIONS]
        return np.hstack(parts)


def region_frames(samples: list[GraspSample]) -> dict[str, np.ndarray]:
    """Training frames per autoencoder; both moving fingers pool together."""
    if not samples:
        raise EmptyDataset("no samples to slice into region frames")
    t = np.stack([s.tactile for s in samples])
    return {
        "palm": t[:, REGION_SLICES["palm"]],
        "fixed_finger": t[:, REGION_SLICES["fixed_finger"]],
        "moving_fingers": np.vstack(
            [t[:, REGION_SLICES["moving_finger_1"]], t[:, REGION_SLICES["moving_finger_2"]]]
        ),
    }


def train_autoencoders(
    samples: list[GraspSample],
    epochs: int = 3000,
    seed: int = 0,
    learning_rate: float = 0.001,
    batch_size: int = 500,
) -> tuple[Autoencoders, dict[str, list[float]]]:
    """Fit the three reconstruction models with MSE + Adam.

    Returns the models and per-model epoch loss histories.
    """
    frames = region_frames(samples)
    models: dict[str, NeuralModel] = {}
    histories: dict[str, list[float]] = {}
    for k, key in enumerate(AUTOENCODER_KEYS):
        model = build_autoencoder(key, seed=child_seed(seed, 101, k))
        config = TrainConfig(
            learning_rate=learning_rate, epochs=epochs, batch_size=batch_size,
            loss="mse", seed=child_seed(seed, 202, k), oversample=False,
        )
        histories[key] = train(model, TrainingSet(frames[key], frames[key]), config)
        models[key] = model
    return Autoencoders(**models), histories


# -- feature building --------------------------------------------------------

def normalize_pose(pose_vectors: np.ndarray, limits: JointLimits = DEFAULT_LIMITS) -> np.ndarray:
    """Scale each joint by its range so pose features live in [0, 1]."""
    scale = np.array([limits.spread_max] + [limits.proximal_max] * 3 + [limits.distal_max] * 3)
    return np.atleast_2d(pose_vectors) / scale


def naive_features(
    samples: list[GraspSample], limits: JointLimits = DEFAULT_LIMITS
) -> np.ndarray:
    """(N, 106) = normalized pose | tactile | strain."""
    if not samples:
        raise EmptyDataset("no samples to featurize")
    pose = normalize_pose(np.stack([s.pose.as_vector() for s in samples]), limits)
    tactile = np.stack([s.tactile for s in samples])
    strain = np.stack([s.strain for s in samples])
    out = np.hstack([pose, tactile, strain])
    if out.shape[1] != NAIVE_DIM:
        raise ValidationError(f"naive features must have {NAIVE_DIM} columns")
    return out


def encoded_features(
    samples: list[GraspSample],
    autoencoders: Autoencoders,
    limits: JointLimits = DEFAULT_LIMITS,
) -> np.ndarray:
    """(N, 34) = normalized pose | four 6-value region codes | strain."""
    if not samples:
        raise EmptyDataset("no samples to featurize")
    pose = normalize_pose(np.stack([s.pose.as_vector() for s in samples]), limits)
    codes = autoencoders.codes(np.stack([s.tactile for s in samples]))
    strain = np.stack([s.strain for s in samples])
    out = np.hstack([pose, codes, strain])
    if out.shape[1] != ENCODED_DIM:
        raise ValidationError(f"encoded features must have {ENCODED_DIM} columns")
    return out


def encode_features(
    sample: GraspSample,
    autoencoders: Autoencoders,
    limits: JointLimits = DEFAULT_LIMITS,
) -> FeatureVector:
    """The 34-value encoded feature vector for one sample."""
    return FeatureVector("encoded", encoded_features([sample], autoencoders, limits)[0])


# -- classifiers and ensemble -------------------------------------------------

CLASSIFIER_HEADS = ("softmax5", "regression1")


def build_classifier(input_dim: int, head: str, seed: int = 0) -> NeuralModel:
    """FC(256)-FC(128)-FC(64) stack with dropout and the requested head.

    Raises:
        InvalidDim: if input_dim is not 106 (naive) or 34 (encoded).
    """
    if input_dim not in (NAIVE_DIM, ENCODED_DIM):
        raise InvalidDim(f"input_dim must be {NAIVE_DIM} or {ENCODED_DIM}, got {input_dim}")
    if head not in CLASSIFIER_HEADS:
        raise ValidationError(f"head must be one of {CLASSIFIER_HEADS}")
    layers = [
        Dense(input_dim, 256), ReLU(), Dropout(0.5),
        Dense(256, 128), ReLU(), Dropout(0.5),
        Dense(128, 64), ReLU(),
    ]
    if head == "softmax5":
        layers += [Dense(64, N_CLASSES), Softmax()]
    else:
        layers += [Dense(64, 1)]
    return NeuralModel(layers).init(seed)


def regression_to_distribution(r: float) -> ClassDistribution:
    """Spread a scalar count onto its two nearest classes, keeping its mean.

    Raises:
        NonFiniteValue: if r is NaN or infinite.
    """
    if not math.isfinite(r):
        raise NonFiniteValue(f"regression output must be finite, got {r!r}")
    clamped = min(max(float(r), 0.0), float(N_CLASSES - 1))
    lo = int(math.floor(clamped))
    frac = clamped - lo
    probs = np.zeros(N_CLASSES)
    probs[lo] = 1.0 - frac
    if frac > 0.0:
        probs[lo + 1] = frac
    return ClassDistribution(probs)


@dataclass
class EnsembleBundle:
    """The three trained members plus their autoencoders and metadata."""

    naive: NeuralModel
    encoder_clf: NeuralModel
    encoder_reg: NeuralModel
    autoencoders: Autoencoders
    meta: dict = field(default_factory=dict)


def _member_distributions(
    samples: list[GraspSample], bundle: EnsembleBundle, limits: JointLimits
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    x_naive = naive_features(samples, limits)
    x_enc = encoded_features(samples, bundle.autoencoders, limits)
    p_naive = bundle.naive.forward(x_naive)
    p_encoder = bundle.encoder_clf.forward(x_enc)
    r = bundle.encoder_reg.forward(x_enc)[:, 0]
    p_reg = np.stack([regression_to_distribution(v).probs for v in r])
    return p_naive, p_encoder, p_reg


def bundle_limits(bundle: EnsembleBundle) -> JointLimits:
    jl = bundle.meta.get("normalization", {}).get("joint_limits")
    if not jl:
        return DEFAULT_LIMITS
    return JointLimits(spread_max=jl["spread_max"], proximal_max=jl["proximal_max"],
                       distal_max=jl["distal_max"])


def ensemble_predict_batch(
    samples: list[GraspSample], bundle: EnsembleBundle
) -> tuple[np.ndarray, np.ndarray]:
    """Mean member distribution and argmax class for every sample."""
    if not samples:
        raise EmptyDataset("no samples to predict")
    limits = bundle_limits(bundle)
    p_naive, p_encoder, p_reg = _member_distributions(samples, bundle, limits)
    probs = (p_naive + p_encoder + p_reg) / 3.0
    return probs, probs.argmax(axis=1)


def ensemble_predict(sample: GraspSample, bundle: EnsembleBundle) -> tuple[ClassDistribution, int]:
    probs, classes = ensemble_predict_batch([sample], bundle)
    dist = ClassDistribution(probs[0])
    return dist, int(classes[0])


def member_losses(samples: list[GraspSample], bundle: EnsembleBundle) -> dict[str, float]:
    """Each member's own loss on the given samples, plus their mean."""
    from .network import cross_entropy_loss, mse_loss

    if not samples:
        raise EmptyDataset("no samples to score")
    limits = bundle_limits(bundle)
    classes = np.array([count_to_class(s.label) for s in samples])
    targets = one_hot(classes, N_CLASSES)
    x_naive = naive_features(samples, limits)
    x_enc = encoded_features(samples, bundle.autoencoders, limits)
    ce_naive, _ = cross_entropy_loss(bundle.naive.forward(x_naive), targets)
    ce_encoder, _ = cross_entropy_loss(bundle.encoder_clf.forward(x_enc), targets)
    mse_reg, _ = mse_loss(bundle.encoder_reg.forward(x_enc),
                          classes[:, None].astype(float))
    return {
        "ce_naive": ce_naive,
        "ce_encoder": ce_encoder,
        "mse_regression": mse_reg,
        "mean": (ce_naive + ce_encoder + mse_reg) / 3.0,
    }


# -- training and transfer -----------------------------------------------------

def _classifier_sets(
    samples: list[GraspSample], autoencoders: Autoencoders, limits: JointLimits
) -> tuple[TrainingSet, TrainingSet, TrainingSet]:
    classes = np.array([count_to_class(s.label) for s in samples])
    onehot = one_hot(classes, N_CLASSES)
    x_naive = naive_features(samples, limits)
    x_enc = encoded_features(samples, autoencoders, limits)
    reg_targets = classes[:, None].astype(float)
    return (
        TrainingSet(x_naive, onehot, classes),
        TrainingSet(x_enc, onehot, classes),
        TrainingSet(x_enc, reg_targets, classes),
    )


def train_classifiers(
    samples: list[GraspSample],
    autoencoders: Autoencoders,
    epochs: int = 3000,
    seed: int = 0,
    learning_rate: float = 0.001,
    batch_size: int = 500,
    oversample: bool = True,
    meta: dict | None = None,
    limits: JointLimits = DEFAULT_LIMITS,
) -> tuple[EnsembleBundle, dict[str, list[float]]]:
    """Train the three ensemble members on frozen autoencoder features."""
    sets = _classifier_sets(samples, autoencoders, limits)
    builds = [
        ("naive", NAIVE_DIM, "softmax5", "categorical_cross_entropy"),
        ("encoder", ENCODED_DIM, "softmax5", "categorical_cross_entropy"),
        ("regression", ENCODED_DIM, "regression1", "mse"),
    ]
    models = []
    histories: dict[str, list[float]] = {}
    for k, ((name, dim, head, loss), data) in enumerate(zip(builds, sets)):
        model = build_classifier(dim, head, seed=child_seed(seed, 303, k))
        config = TrainConfig(learning_rate=learning_rate, epochs=epochs,
                             batch_size=batch_size, loss=loss,
                             seed=child_seed(seed, 404, k), oversample=oversample)
        histories[name] = train(model, data, config)
        models.append(model)
    bundle = EnsembleBundle(
        naive=models[0], encoder_clf=models[1], encoder_reg=models[2],
        autoencoders=autoencoders,
        meta=_bundle_meta(meta, epochs, seed, learning_rate, batch_size, oversample, limits),
    )
    return bundle, histories


def _bundle_meta(meta, epochs, seed, learning_rate, batch_size, oversample, limits) -> dict:
    training = {
        "epochs": epochs, "seed": seed, "learning_rate": learning_rate,
        "batch_size": batch_size, "oversample": oversample,
    }
    payload = dict(meta or {})
    normalization = dict(payload.pop("normalization", {}))
    normalization.setdefault("joint_limits", {
        "spread_max": limits.spread_max,
        "proximal_max": limits.proximal_max,
        "distal_max": limits.distal_max,
    })
    return {
        "version": BUNDLE_FORMAT_VERSION,
        "classes": list(range(N_CLASSES)),
        "class_mapping": "counts >= 4 collapse to class 4",
        "normalization": normalization,
        "training": training,
        "training_config_hash": hashlib.sha256(
            json.dumps(training, sort_keys=True).encode()
        ).hexdigest(),
        **payload,
    }


def copy_model(model: NeuralModel) -> NeuralModel:
    return NeuralModel.from_payload(model.to_payload())


def copy_bundle(bundle: EnsembleBundle) -> EnsembleBundle:
    return EnsembleBundle(
        naive=copy_model(bundle.naive),
        encoder_clf=copy_model(bundle.encoder_clf),
        encoder_reg=copy_model(bundle.encoder_reg),
        autoencoders=Autoencoders(
            palm=copy_model(bundle.autoencoders.palm),
            fixed_finger=copy_model(bundle.autoencoders.fixed_finger),
            moving_fingers=copy_model(bundle.autoencoders.moving_fingers),
        ),
        meta=json.loads(json.dumps(bundle.meta)),
    )


def fine_tune(
    bundle: EnsembleBundle,
    samples: list[GraspSample],
    epochs: int,
    seed: int = 0,
    learning_rate: float = 0.001,
    batch_size: int = 500,
    oversample: bool = True,
    retrain_autoencoders: bool = False,
) -> EnsembleBundle:
    """Continue training every member on a new domain from pretrained weights.

    No parameters are frozen. Autoencoders are reused as-is unless
    retrain_autoencoders is set; 0 epochs returns a bitwise-identical copy.
    """
    if not samples and epochs > 0:
        raise EmptyDataset("fine-tuning needs samples")
    adapted = copy_bundle(bundle)
    if epochs == 0:
        return adapted
    limits = bundle_limits(bundle)
    if retrain_autoencoders:
        frames = region_frames(samples)
        for k, key in enumerate(AUTOENCODER_KEYS):
            config = TrainConfig(learning_rate=learning_rate, epochs=epochs,
                                 batch_size=batch_size, loss="mse",
                                 seed=child_seed(seed, 505, k))
            train(adapted.autoencoders.model_for(key), TrainingSet(frames[key], frames[key]),
                  config)
    sets = _classifier_sets(samples, adapted.autoencoders, limits)
    members = [
        (adapted.naive, "categorical_cross_entropy"),
        (adapted.encoder_clf, "categorical_cross_entropy"),
        (adapted.encoder_reg, "mse"),
    ]
    for k, ((model, loss), data) in enumerate(zip(members, sets)):
        config = TrainConfig(learning_rate=learning_rate, epochs=epochs,
                             batch_size=batch_size, loss=loss,
                             seed=child_seed(seed, 606, k), oversample=oversample)
        train(model, data, config)
    adapted.meta = dict(adapted.meta)
    adapted.meta["fine_tuned"] = {"epochs": epochs, "seed": seed,
                                  "retrained_autoencoders": retrain_autoencoders}
    return adapted


# -- bundle persistence ---------------------------------------------------------

_BUNDLE_FILES = {
    "naive": "clf_naive.json",
    "encoder_clf": "clf_encoder.json",
    "encoder_reg": "clf_encoder_regression.json",
    "palm": "ae_palm.json",
    "fixed_finger": "ae_fixed_finger.json",
    "moving_fingers": "ae_moving_fingers.json",
}


def save_bundle(bundle: EnsembleBundle, directory: str | Path) -> None:
    """Write the six weight files and metadata.json into a directory."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    bundle.naive.save(directory / _BUNDLE_FILES["naive"])
    bundle.encoder_clf.save(directory / _BUNDLE_FILES["encoder_clf"])
    bundle.encoder_reg.save(directory / _BUNDLE_FILES["encoder_reg"])
    for key in AUTOENCODER_KEYS:
        bundle.autoencoders.model_for(key).save(directory / _BUNDLE_FILES[key])
    (directory / "metadata.json").write_text(
        json.dumps(bundle.meta, sort_keys=True, indent=2) + "\n")


def load_bundle(directory: str | Path) -> EnsembleBundle:
    directory = Path(directory)
    missing = [f for f in (*_BUNDLE_FILES.values(), "metadata.json")
               if not (directory / f).exists()]
    if missing:
        raise DataError(f"bundle at {directory} is missing {missing}")
    return EnsembleBundle(
        naive=NeuralModel.load(directory / _BUNDLE_FILES["naive"]),
        encoder_clf=NeuralModel.load(directory / _BUNDLE_FILES["encoder_clf"]),
        encoder_reg=NeuralModel.load(directory / _BUNDLE_FILES["encoder_reg"]),
        autoencoders=Autoencoders(
            palm=NeuralModel.load(directory / _BUNDLE_FILES["palm"]),
            fixed_finger=NeuralModel.load(directory / _BUNDLE_FILES["fixed_finger"]),
            moving_fingers=NeuralModel.load(directory / _BUNDLE_FILES["moving_fingers"]),
        ),
        meta=json.loads((directory / "metadata.json").read_text()),
    )
