"""Keypoint kinematics for a three-fingered, Barrett-style hand.

Coordinate conventions (palm frame):
  +Z : palm normal, pointing into the grasp space
  +Y : toward the fixed finger's base
   O : palm centre; the palm surface is the z = 0 plane

The hand has seven joints serialized as [spread, p1, p2, p3, d1, d2, d3]:
one spread angle rotating fingers 1 and 2 symmetrically about the palm
normal, plus a proximal and a distal flexion angle per finger. Finger 3 is
fixed to the palm and does not spread. At spread 0 fingers 1 and 2 point
along -Y, directly opposing finger 3 (+Y); at spread pi they point along
+Y. Spread is treated modulo 2*pi.

Flexion lifts a finger out of the palm plane toward +Z: a link with planar
heading u and flexion angle a extends along cos(a)*u + sin(a)*z.

Tactile layout: 24 cells per region in a fixed serialization order
[palm | fixed finger | moving finger 1 | moving finger 2]. The palm carries
a 6x4 grid; each finger carries two stacked 3x4 grids (rows 0-2 on the
proximal link, rows 3-5 on the distal link), base to tip, row-major.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import JointLimitViolation, ValidationError

UP = np.array([0.0, 0.0, 1.0])

# Region slices into the 96-sensor serialization.
N_SENSORS = 96
PALM = slice(0, 24)
FIXED_FINGER = slice(24, 48)
MOVING_FINGER_1 = slice(48, 72)
MOVING_FINGER_2 = slice(72, 96)
REGION_SLICES = {
    "palm": PALM,
    "fixed_finger": FIXED_FINGER,
    "moving_finger_1": MOVING_FINGER_1,
    "moving_finger_2": MOVING_FINGER_2,
}
REGIONS = tuple(REGION_SLICES)

# Finger index (0-based, matching pose/strain order) per tactile region.
REGION_FINGER = {"fixed_finger": 2, "moving_finger_1": 0, "moving_finger_2": 1}
FINGER_REGION = {v: k for k, v in REGION_FINGER.items()}


@dataclass(frozen=True)
class JointLimits:
    """Upper joint bounds in radians; lower bounds are 0."""

    spread_max: float = 2.0 * math.pi
    proximal_max: float = math.radians(140.0)
    distal_max: float = math.radians(48.0)


DEFAULT_LIMITS = JointLimits()


@dataclass(frozen=True)
class HandPose:
    """Seven joint readings in radians: spread + per-finger flexion."""

    spread: float
    proximal: tuple[float, float, float]
    distal: tuple[float, float, float]

    def as_vector(self) -> np.ndarray:
        """Serialize as [spread, p1, p2, p3, d1, d2, d3]."""
        return np.array([self.spread, *self.proximal, *self.distal], dtype=float)

    @classmethod
    def from_vector(cls, vec) -> "HandPose":
        v = np.asarray(vec, dtype=float)
        if v.shape != (7,):
            raise ValidationError(f"pose vector must have 7 entries, got shape {v.shape}")
        return cls(spread=float(v[0]), proximal=tuple(v[1:4]), distal=tuple(v[4:7]))

    def validate(self, limits: JointLimits = DEFAULT_LIMITS) -> None:
        """Raise JointLimitViolation if any angle falls outside its range."""
        tol = 1e-12
        checks = [("spread", self.spread, limits.spread_max)]
        checks += [(f"proximal[{i}]", a, limits.proximal_max) for i, a in enumerate(self.proximal)]
        checks += [(f"distal[{i}]", a, limits.distal_max) for i, a in enumerate(self.distal)]
        for name, angle, upper in checks:
            if not math.isfinite(angle) or angle < -tol or angle > upper + tol:
                raise JointLimitViolation(
                    f"{name} = {angle!r} rad outside [0, {upper:.6f}]"
                )


@dataclass(frozen=True)
class HandGeometry:
    """Link lengths and palm layout in meters.

    finger_base_offsets holds the planar (x, y) position of each finger's
    proximal joint on the palm, in finger order 1..3.
    """

    palm_width: float = 0.08
    palm_depth: float = 0.08
    proximal_length: float = 0.07
    distal_length: float = 0.056
    finger_base_offsets: tuple[tuple[float, float], ...] = (
        (-0.04, 0.0),
        (0.04, 0.0),
        (0.0, 0.04),
    )
    distal_coupling_ratio: float = 1.0 / 3.0

    def __post_init__(self) -> None:
        for name in ("palm_width", "palm_depth", "proximal_length", "distal_length"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name} must be positive")
        if not 0.0 < self.distal_coupling_ratio <= 1.0:
            raise ValidationError("distal_coupling_ratio must lie in (0, 1]")
        if len(self.finger_base_offsets) != 3:
            raise ValidationError("expected 3 finger base offsets")

    def palm_corners(self) -> np.ndarray:
        w, d = self.palm_width / 2.0, self.palm_depth / 2.0
        return np.array(
            [[-w, -d, 0.0], [w, -d, 0.0], [w, d, 0.0], [-w, d, 0.0]]
        )


DEFAULT_GEOMETRY = HandGeometry()


@dataclass(frozen=True)
class HandKeypoints:
    """13 keypoints: knuckles M, distal joints D, fingertips P, 4 palm corners."""

    M: np.ndarray  # (3, 3) proximal joint positions, finger order 1..3
    D: np.ndarray  # (3, 3) distal joint positions
    P: np.ndarray  # (3, 3) fingertip positions
    palm_corners: np.ndarray  # (4, 3)

    def all_points(self) -> np.ndarray:
        pts = np.vstack([self.M, self.D, self.P, self.palm_corners])
        if pts.shape != (13, 3) or not np.all(np.isfinite(pts)):
            raise ValidationError("keypoint set must be 13 finite 3D points")
        return pts


def _finger_headings(spread: float) -> np.ndarray:
    """Planar unit heading of each finger; spread rotates fingers 1/2 about +Z."""
    s = math.fmod(spread, 2.0 * math.pi)
    return np.array(
        [
            [math.sin(s), -math.cos(s), 0.0],
            [-math.sin(s), -math.cos(s), 0.0],
            [0.0, 1.0, 0.0],
        ]
    )


def forward_kinematics(
    pose: HandPose,
    geom: HandGeometry = DEFAULT_GEOMETRY,
    limits: JointLimits = DEFAULT_LIMITS,
) -> HandKeypoints:
    """Compute the 13 hand keypoints in the palm frame.

    Raises:
        JointLimitViolation: if the pose is outside the configured limits.
    """
    pose.validate(limits)
    headings = _finger_headings(pose.spread)
    M = np.zeros((3, 3))
    D = np.zeros((3, 3))
    P = np.zeros((3, 3))
    for i in range(3):
        bx, by = geom.finger_base_offsets[i]
        u = headings[i]
        p = pose.proximal[i]
        a = p + pose.distal[i]
        M[i] = (bx, by, 0.0)
        D[i] = M[i] + geom.proximal_length * (math.cos(p) * u + math.sin(p) * UP)
        P[i] = D[i] + geom.distal_length * (math.cos(a) * u + math.sin(a) * UP)
    return HandKeypoints(M=M, D=D, P=P, palm_corners=geom.palm_corners())


def _link_grid(
    start: np.ndarray, along: np.ndarray, inward: np.ndarray, lateral: np.ndarray,
    length: float, span: float,
) -> tuple[np.ndarray, np.ndarray]:
    """3x4 sensor patch on one finger link, rows base-to-tip."""
    pos = np.zeros((12, 3))
    k = 0
    for r in range(3):
        t = (r + 0.5) / 3.0
        for c in range(4):
            off = ((c + 0.5) / 4.0 - 0.5) * span
            pos[k] = start + t * length * along + off * lateral
            k += 1
    return pos, np.tile(inward, (12, 1))


def sensor_frames(
    pose: HandPose,
    geom: HandGeometry = DEFAULT_GEOMETRY,
    limits: JointLimits = DEFAULT_LIMITS,
) -> tuple[np.ndarray, np.ndarray]:
    """Positions and inward unit normals of all 96 tactile cells.

    Returns:
        (positions, normals), each of shape (96, 3), serialized as
        [palm | fixed finger | moving finger 1 | moving finger 2].
    """
    pose.validate(limits)
    positions = np.zeros((96, 3))
    normals = np.zeros((96, 3))

    # Palm: 6 rows along y, 4 columns along x, normals along +Z.
    w, d = geom.palm_width, geom.palm_depth
    k = 0
    for r in range(6):
        y = -d / 2.0 + (r + 0.5) * d / 6.0
        for c in range(4):
            x = -w / 2.0 + (c + 0.5) * w / 4.0
            positions[k] = (x, y, 0.0)
            normals[k] = UP
            k += 1

    headings = _finger_headings(pose.spread)
    span = geom.palm_width / 4.0  # lateral footprint of a finger's sensor pad
    kp = forward_kinematics(pose, geom, limits)
    for region in ("fixed_finger", "moving_finger_1", "moving_finger_2"):
        i = REGION_FINGER[region]
        u = headings[i]
        lateral = np.cross(UP, u)
        p = pose.proximal[i]
        a = p + pose.distal[i]
        prox_along = math.cos(p) * u + math.sin(p) * UP
        prox_inward = -math.sin(p) * u + math.cos(p) * UP
        dist_along = math.cos(a) * u + math.sin(a) * UP
        dist_inward = -math.sin(a) * u + math.cos(a) * UP
        sl = REGION_SLICES[region]
        pos_p, nrm_p = _link_grid(kp.M[i], prox_along, prox_inward, lateral,
                                  geom.proximal_length, span)
        pos_d, nrm_d = _link_grid(kp.D[i], dist_along, dist_inward, lateral,
                                  geom.distal_length, span)
        positions[sl] = np.vstack([pos_p, pos_d])
        normals[sl] = np.vstack([nrm_p, nrm_d])
    return positions, normals


def sensor_finger_index() -> np.ndarray:
    """Finger index (0..2) per sensor; -1 for palm cells."""
    idx = np.full(N_SENSORS, -1, dtype=int)
    for region, finger in REGION_FINGER.items():
        idx[REGION_SLICES[region]] = finger
    return idx


# --- geometry config file -------------------------------------------------

_GEOM_KEYS = {
    "palm_width", "palm_depth", "proximal_length", "distal_length",
    "distal_coupling_ratio",
    "finger1_base_x", "finger1_base_y", "finger2_base_x", "finger2_base_y",
    "finger3_base_x", "finger3_base_y",
    "limit_spread", "limit_proximal", "limit_distal",
}


def load_hand_config(path: str | Path | None = None) -> tuple[HandGeometry, JointLimits]:
    """Load geometry and joint limits from a flat key-value file.

    Lines are `key = value` with # comments; unknown keys are rejected.
    Lengths are meters, angles radians. When path is None the packaged
    default configuration is used.
    """
    if path is None:
        text = resources.files("graspcount").joinpath("default_hand.cfg").read_text()
    else:
        text = Path(path).read_text()
    values: dict[str, float] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"config line {lineno}: expected 'key = value'")
        key, _, val = line.partition("=")
        key = key.strip()
        if key not in _GEOM_KEYS:
            raise ValidationError(f"config line {lineno}: unknown key {key!r}")
        try:
            values[key] = float(val)
        except ValueError as exc:
            raise ValidationError(f"config line {lineno}: bad number {val.strip()!r}") from exc

    g = DEFAULT_GEOMETRY
    offsets = list(g.finger_base_offsets)
    for i in range(3):
        offsets[i] = (
            values.get(f"finger{i + 1}_base_x", offsets[i][0]),
            values.get(f"finger{i + 1}_base_y", offsets[i][1]),
        )
    geom = HandGeometry(
        palm_width=values.get("palm_width", g.palm_width),
        palm_depth=values.get("palm_depth", g.palm_depth),
        proximal_length=values.get("proximal_length", g.proximal_length),
        distal_length=values.get("distal_length", g.distal_length),
        finger_base_offsets=tuple(offsets),
        distal_coupling_ratio=values.get("distal_coupling_ratio", g.distal_coupling_ratio),
    )
    limits = JointLimits(
        spread_max=values.get("limit_spread", DEFAULT_LIMITS.spread_max),
        proximal_max=values.get("limit_proximal", DEFAULT_LIMITS.proximal_max),
        distal_max=values.get("limit_distal", DEFAULT_LIMITS.distal_max),
    )
    return geom, limits
