"""Vertical contact-force summation and the linear force-to-count regressor."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DegenerateData, ValidationError
from .kinematics import (
    DEFAULT_GEOMETRY,
    DEFAULT_LIMITS,
    HandGeometry,
    HandPose,
    JointLimits,
    sensor_frames,
)

MODEL_FORMAT_VERSION = 1
TRAINING_STAGES = ("before_lift", "after_lift")


@dataclass(frozen=True)
class LinearCountModel:
    """Least-squares line from summed vertical force (N) to object count."""

    slope: float
    intercept: float
    trained_on: str  # before_lift | after_lift

    def __post_init__(self) -> None:
        if not (math.isfinite(self.slope) and math.isfinite(self.intercept)):
            raise ValidationError("model coefficients must be finite")
        if self.trained_on not in TRAINING_STAGES:
            raise ValidationError(f"trained_on must be one of {TRAINING_STAGES}")

    def to_json(self) -> str:
        payload = {
            "version": MODEL_FORMAT_VERSION,
            "slope": self.slope,
            "intercept": self.intercept,
            "trained_on": self.trained_on,
        }
        return json.dumps(payload, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "LinearCountModel":
        payload = json.loads(text)
        if payload.get("version") != MODEL_FORMAT_VERSION:
            raise ValidationError(f"unsupported model version {payload.get('version')!r}")
        return cls(
            slope=float(payload["slope"]),
            intercept=float(payload["intercept"]),
            trained_on=str(payload["trained_on"]),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "LinearCountModel":
        return cls.from_json(Path(path).read_text())


def vertical_force(
    tactile: np.ndarray,
    pose: HandPose,
    geom: HandGeometry = DEFAULT_GEOMETRY,
    hand_orientation: np.ndarray | None = None,
    limits: JointLimits = DEFAULT_LIMITS,
) -> float:
    """Sum of the world-vertical components of all tactile normal forces.

    Args:
        tactile: 96 non-negative normal-force magnitudes in newtons, in
            sensor serialization order.
        hand_orientation: 3x3 rotation taking palm-frame vectors to world;
            identity (palm up) when omitted.

    Can be negative when sensor normals oppose world-up.
    """
    t = np.asarray(tactile, dtype=float)
    if t.shape != (96,):
        raise ValidationError(f"expected 96 tactile readings, got shape {t.shape}")
    if np.any(t < 0) or not np.all(np.isfinite(t)):
        raise ValidationError("tactile readings must be finite and non-negative")
    rotation = np.eye(3) if hand_orientation is None else np.asarray(hand_orientation, dtype=float)
    if rotation.shape != (3, 3):
        raise ValidationError("hand_orientation must be a 3x3 rotation matrix")
    _, normals = sensor_frames(pose, geom, limits)
    up_world = np.array([0.0, 0.0, 1.0])
    return float(t @ ((normals @ rotation.T) @ up_world))


def fit_linear(samples, trained_on: str = "before_lift") -> LinearCountModel:
    """Ordinary least squares count = slope * force + intercept.

    Args:
        samples: iterable of (vertical_force, count) pairs; at least two
            with distinct forces.

    Raises:
        DegenerateData: if all forces are identical.
    """
    data = np.asarray(list(samples), dtype=float)
    if data.ndim != 2 or data.shape[1] != 2 or data.shape[0] < 2:
        raise DegenerateData("need at least 2 (force, count) samples")
    force, count = data[:, 0], data[:, 1]
    f_mean = force.mean()
    var = float(((force - f_mean) ** 2).sum())
    if var <= 0.0:
        raise DegenerateData("all forces identical; slope is undetermined")
    slope = float(((force - f_mean) * (count - count.mean())).sum() / var)
    intercept = float(count.mean() - slope * f_mean)
    return LinearCountModel(slope=slope, intercept=intercept, trained_on=trained_on)


def _round_half_away(x: float) -> int:
    return int(math.floor(x + 0.5)) if x >= 0 else int(math.ceil(x - 0.5))


def predict_count(model: LinearCountModel, force: float) -> int:
    """Predicted object count, rounded half away from zero and clamped at 0."""
    if not math.isfinite(force):
        raise ValidationError("force must be finite")
    return max(0, _round_half_away(model.slope * force + model.intercept))
