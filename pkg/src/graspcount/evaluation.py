"""Evaluation metrics and reports: class-capped RMSE, confusion, violations.

Counts are compared on the 5 prediction classes {0, 1, 2, 3, >=4}; any
count of 4 or more is capped to class 4 before scoring. Classes absent
from the ground truth report no per-class RMSE (None, rendered N/A).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EmptyDataset, LengthMismatch, UntrainedModel, ValidationError
from .estimators import EnsembleBundle, ensemble_predict_batch
from .force import LinearCountModel, predict_count, vertical_force
from .geometry import ObjectSpec, grasp_volume_estimate
from .kinematics import DEFAULT_GEOMETRY, DEFAULT_LIMITS, HandGeometry, JointLimits
from .simulator import GraspSample, count_to_class

log = logging.getLogger(__name__)

N_CLASSES = 5


def _as_classes(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=int)
    if arr.ndim != 1:
        raise ValidationError(f"{name} must be a flat sequence of class indices")
    if arr.size and (arr.min() < 0 or arr.max() >= N_CLASSES):
        raise ValidationError(f"{name} must hold classes in [0, {N_CLASSES})")
    return arr


def rmse(predictions, truths) -> tuple[list[float | None], float]:
    """Per-class and overall RMSE over capped class indices.

    Per-class entries are restricted to rows with that ground truth; a class
    absent from the truths yields None (the tables' N/A convention).

    Raises:
        LengthMismatch: if the two sequences differ in length.
    """
    preds = _as_classes(predictions, "predictions")
    truth = _as_classes(truths, "truths")
    if preds.size != truth.size:
        raise LengthMismatch(f"{preds.size} predictions vs {truth.size} truths")
    if preds.size == 0:
        raise EmptyDataset("cannot score zero samples")
    sq = (preds - truth).astype(float) ** 2
    per_class: list[float | None] = []
    for c in range(N_CLASSES):
        mask = truth == c
        per_class.append(float(np.sqrt(sq[mask].mean())) if mask.any() else None)
    return per_class, float(np.sqrt(sq.mean()))


def confusion_matrix(predictions, truths) -> tuple[np.ndarray, float]:
    """5x5 matrix with entry [truth][prediction], plus trace accuracy."""
    preds = _as_classes(predictions, "predictions")
    truth = _as_classes(truths, "truths")
    if preds.size != truth.size:
        raise LengthMismatch(f"{preds.size} predictions vs {truth.size} truths")
    if preds.size == 0:
        raise EmptyDataset("cannot score zero samples")
    matrix = np.zeros((N_CLASSES, N_CLASSES), dtype=int)
    np.add.at(matrix, (truth, preds), 1)
    return matrix, float(np.trace(matrix) / preds.size)


def rmse_from_confusion(matrix: np.ndarray) -> float:
    """Overall RMSE implied by a confusion matrix of integer classes."""
    m = np.asarray(matrix, dtype=float)
    t, p = np.meshgrid(np.arange(N_CLASSES), np.arange(N_CLASSES), indexing="ij")
    total = m.sum()
    if total == 0:
        raise EmptyDataset("empty confusion matrix")
    return float(np.sqrt((m * (t - p) ** 2).sum() / total))


@dataclass
class EvalReport:
    """One estimator's scores on one sample set."""

    per_class_rmse: list[float | None]
    overall_rmse: float
    confusion: np.ndarray
    accuracy: float
    n_samples: int
    upper_bound_violation_rate: float | None = None
    estimator: str = ""

    def __post_init__(self) -> None:
        self.confusion = np.asarray(self.confusion, dtype=int)
        self.validate()

    def validate(self) -> None:
        if self.confusion.shape != (N_CLASSES, N_CLASSES):
            raise ValidationError("confusion matrix must be 5x5")
        if int(self.confusion.sum()) != self.n_samples:
            raise ValidationError("confusion total must equal n_samples")
        if not 0.0 <= self.accuracy <= 1.0:
            raise ValidationError("accuracy must lie in [0, 1]")
        if self.upper_bound_violation_rate is not None \
                and not 0.0 <= self.upper_bound_violation_rate <= 1.0:
            raise ValidationError("violation rate must lie in [0, 1]")
        if abs(rmse_from_confusion(self.confusion) - self.overall_rmse) > 1e-12:
            raise ValidationError("overall RMSE inconsistent with confusion matrix")

    def to_payload(self) -> dict:
        return {
            "estimator": self.estimator,
            "per_class_rmse": self.per_class_rmse,
            "overall_rmse": self.overall_rmse,
            "confusion": self.confusion.tolist(),
            "accuracy": self.accuracy,
            "upper_bound_violation_rate": self.upper_bound_violation_rate,
            "n_samples": self.n_samples,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_payload(), sort_keys=True, indent=2)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    def to_text(self) -> str:
        """Aligned table: one row per class plus the overall line."""
        def fmt(v: float | None) -> str:
            return "N/A" if v is None else f"{v:.4f}"

        rows = [("class", "RMSE", "n")]
        counts = self.confusion.sum(axis=1)
        for c in range(N_CLASSES):
            name = ">=4" if c == 4 else str(c)
            rows.append((name, fmt(self.per_class_rmse[c]), str(int(counts[c]))))
        rows.append(("overall", fmt(self.overall_rmse), str(self.n_samples)))
        widths = [max(len(r[i]) for r in rows) for i in range(3)]
        lines = ["  ".join(cell.rjust(w) for cell, w in zip(r, widths)) for r in rows]
        lines.append(f"accuracy: {self.accuracy:.4f}")
        if self.upper_bound_violation_rate is not None:
            lines.append(f"upper-bound violations: {self.upper_bound_violation_rate:.4%}")
        return "\n".join(lines)


# -- estimator adapters -------------------------------------------------------

@dataclass
class ForceEstimator:
    """Linear regressor on the summed vertical tactile force."""

    model: LinearCountModel | None
    force_scale: float
    geom: HandGeometry = DEFAULT_GEOMETRY
    limits: JointLimits = DEFAULT_LIMITS

    name = "force"

    def predict_counts(self, samples: list[GraspSample]) -> np.ndarray:
        if self.model is None:
            raise UntrainedModel("force estimator has no fitted model")
        counts = np.zeros(len(samples), dtype=int)
        for i, s in enumerate(samples):
            f = vertical_force(s.tactile * self.force_scale, s.pose, self.geom,
                               limits=self.limits)
            counts[i] = predict_count(self.model, f)
        return counts


@dataclass
class VolumeEstimator:
    """Packing upper bound from the grasp hull volume."""

    obj: ObjectSpec
    geom: HandGeometry = DEFAULT_GEOMETRY
    limits: JointLimits = DEFAULT_LIMITS

    name = "volume"

    def predict_counts(self, samples: list[GraspSample]) -> np.ndarray:
        cache: dict[tuple, int] = {}
        counts = np.zeros(len(samples), dtype=int)
        for i, s in enumerate(samples):
            key = tuple(s.pose.as_vector())
            if key not in cache:
                cache[key] = grasp_volume_estimate(s.pose, self.geom, self.obj, self.limits)
            counts[i] = cache[key]
        return counts


@dataclass
class EnsembleEstimator:
    """The trained three-member ensemble."""

    bundle: EnsembleBundle | None

    name = "ensemble"

    def predict_counts(self, samples: list[GraspSample]) -> np.ndarray:
        if self.bundle is None:
            raise UntrainedModel("ensemble estimator has no trained bundle")
        _, classes = ensemble_predict_batch(samples, self.bundle)
        return classes


def evaluate_estimator(estimator, samples: list[GraspSample]) -> EvalReport:
    """Score an estimator on labeled samples.

    The volume estimator additionally reports the fraction of samples whose
    true (uncapped) count exceeds its bound.

    Raises:
        EmptyDataset: when samples is empty (never a zero-filled report).
        UntrainedModel: when the estimator has nothing fitted.
    """
    if not samples:
        raise EmptyDataset("evaluation needs at least one sample")
    raw_preds = estimator.predict_counts(samples)
    raw_truths = np.array([s.label for s in samples])
    preds = np.minimum(raw_preds, N_CLASSES - 1)
    truths = np.array([count_to_class(t) for t in raw_truths])
    per_class, overall = rmse(preds, truths)
    matrix, accuracy = confusion_matrix(preds, truths)
    violation = None
    if isinstance(estimator, VolumeEstimator):
        violation = float(np.mean(raw_truths > raw_preds))
    if len(samples) > 1 and np.unique(raw_preds).size == 1:
        log.warning("estimator %s emitted the constant prediction %d for all %d samples",
                    estimator.name, int(raw_preds[0]), len(samples))
    return EvalReport(
        per_class_rmse=per_class,
        overall_rmse=overall,
        confusion=matrix,
        accuracy=accuracy,
        n_samples=len(samples),
        upper_bound_violation_rate=violation,
        estimator=estimator.name,
    )


def majority_class(truths) -> int:
    """Most frequent capped class; ties break toward the smaller count."""
    truth = _as_classes([count_to_class(t) for t in truths], "truths")
    if truth.size == 0:
        raise EmptyDataset("cannot take a majority over zero samples")
    return int(np.bincount(truth, minlength=N_CLASSES).argmax())


def constant_predictor_rmse(constant: int, truths) -> float:
    """Overall RMSE of always predicting one class (the baseline)."""
    capped = [count_to_class(t) for t in truths]
    _, overall = rmse([constant] * len(capped), capped)
    return overall
