"""Synthetic desk-scale grasp data: pre-grasp grids, piles, tactile synthesis.

A grasp is simulated quasi-statically, palm up, with the palm frame as the
world frame. Objects are rejection-placed in and around the grasp hull,
contacts are detected against the tactile cells, and each object's weight
is shared over whatever supports it (sensors, neighbours below, ground).
An object counts as retained after lifting when the hand alone cages it:
at least two contacts on opposing sides of the object, at least one of
them load-bearing, with the object close to the in-grasp space.

All randomness flows from per-sample seeds, so every sample, dataset, and
split is reproducible bit for bit.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import DataError, EmptyDataset, InvalidMapping, ValidationError
from .geometry import ConvexHull, DegenerateInput, ObjectSpec, convex_hull
from .kinematics import (
    DEFAULT_GEOMETRY,
    DEFAULT_LIMITS,
    HandGeometry,
    HandPose,
    JointLimits,
    forward_kinematics,
    sensor_frames,
    sensor_finger_index,
)

GRAVITY = 9.81
DOMAINS = ("sim_like", "real_like")
STAGES = ("before_lift", "after_lift")

# Force-sharing model constants.
LOAD_BEARING_MIN_UP = 0.1      # min up-component of a normal that can carry weight
OPPOSING_MAX_COS = -0.2        # contact directions at >101 deg apart oppose
HULL_MARGIN_FACTOR = 0.75      # placement: centre may sit this far (x size) outside
RETAIN_MARGIN_FACTOR = 0.3     # retained: centre at most this far (x size) outside
LIGHT_TOUCH_FRACTION = 0.25    # reading (x weight) for non-load-bearing touches
PILE_CONTACT_FACTOR = 1.15     # neighbour support reach (x size sum)
PLACEMENT_ATTEMPTS = 80
SQUEEZE_BIAS = 0.65            # fraction of placements pressed against a sensor
STUCK_CELL_PROB = 0.05         # real_like: chance a cell reads a constant offset
STUCK_CELL_OFFSET = 0.1

# Normalization divisors, in multiples of one object's weight.
FORCE_SCALE_WEIGHTS = 4.0
STRAIN_SCALE_WEIGHTS = 8.0

SPLIT_FRACTIONS = {"sim_like": (0.6, 0.2, 0.2), "real_like": (0.4, 0.1, 0.5)}

POSE_DIM, TACTILE_DIM, STRAIN_DIM = 7, 96, 3
FEATURE_DIM = POSE_DIM + TACTILE_DIM + STRAIN_DIM  # 106; +1 label = 107 on disk

DATASET_FORMAT_VERSION = 1


def unit_weight(obj: ObjectSpec) -> float:
    return obj.unit_mass * GRAVITY


def force_scale(obj: ObjectSpec) -> float:
    return FORCE_SCALE_WEIGHTS * unit_weight(obj)


def strain_scale(obj: ObjectSpec) -> float:
    return STRAIN_SCALE_WEIGHTS * unit_weight(obj)


def effective_noise(noise: float, domain: str) -> float:
    """Tactile noise std actually applied; real_like triples the configured std."""
    return 3.0 * noise if domain == "real_like" else noise


@dataclass(frozen=True)
class SceneConfig:
    """One synthetic pile: what is grasped, how much, how noisy."""

    object: ObjectSpec
    pile_size: int
    noise: float
    seed: int
    domain: str = "sim_like"

    def __post_init__(self) -> None:
        if self.pile_size < 0:
            raise ValidationError("pile_size must be non-negative")
        if self.noise < 0:
            raise ValidationError("noise must be non-negative")
        if self.domain not in DOMAINS:
            raise ValidationError(f"domain must be one of {DOMAINS}")
        if self.seed < 0:
            raise ValidationError("seed must be a non-negative integer")


@dataclass
class GraspSample:
    """One labeled observation: 7 pose + 96 tactile + 3 strain values + count."""

    pose: HandPose
    tactile: np.ndarray
    strain: np.ndarray
    label: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.tactile = np.asarray(self.tactile, dtype=float)
        self.strain = np.asarray(self.strain, dtype=float)
        if self.tactile.shape != (TACTILE_DIM,):
            raise ValidationError(f"tactile must have {TACTILE_DIM} values")
        if self.strain.shape != (STRAIN_DIM,):
            raise ValidationError(f"strain must have {STRAIN_DIM} values")
        if self.label < 0:
            raise ValidationError("label must be non-negative")

    def to_record(self) -> dict:
        return {
            "pose": self.pose.as_vector().tolist(),
            "tactile": self.tactile.tolist(),
            "strain": self.strain.tolist(),
            "label": int(self.label),
            "meta": dict(self.meta),
        }

    @classmethod
    def from_record(cls, record: dict) -> "GraspSample":
        try:
            pose = HandPose.from_vector(record["pose"])
            sample = cls(
                pose=pose,
                tactile=np.asarray(record["tactile"], dtype=float),
                strain=np.asarray(record["strain"], dtype=float),
                label=int(record["label"]),
                meta=dict(record.get("meta", {})),
            )
        except (KeyError, TypeError, ValidationError) as exc:
            raise DataError(f"malformed grasp record: {exc}") from exc
        return sample


# -- pre-grasp sampling ------------------------------------------------------

def pregrasp_grid(coupling_ratio: float = DEFAULT_GEOMETRY.distal_coupling_ratio) -> list[HandPose]:
    """The full sampling grid: 18 spread values x 11^3 finger flexions."""
    spreads = [math.radians(20.0 * k) for k in range(18)]
    flexions = [math.radians(30.0 + 6.0 * k) for k in range(11)]
    poses = []
    for s in spreads:
        for p1 in flexions:
            for p2 in flexions:
                for p3 in flexions:
                    prox = (p1, p2, p3)
                    dist = tuple(p * coupling_ratio for p in prox)
                    poses.append(HandPose(spread=s, proximal=prox, distal=dist))
    return poses


def select_poses(
    n: int,
    seed: int,
    obj: ObjectSpec,
    geom: HandGeometry = DEFAULT_GEOMETRY,
    limits: JointLimits = DEFAULT_LIMITS,
    pool_size: int | None = None,
) -> list[HandPose]:
    """Pick n promising pre-grasps: the largest-volume poses of a seeded pool.

    Grasps that enclose volume are the ones that capture objects, so data
    collection concentrates on them instead of the full deduped grid.
    """
    from .geometry import grasp_volume_estimate  # local import avoids a cycle

    deduped = dedupe_symmetric(pregrasp_grid(geom.distal_coupling_ratio))
    if n < 1 or n > len(deduped):
        raise ValidationError(f"n must lie in [1, {len(deduped)}]")
    pool_size = min(len(deduped), pool_size if pool_size is not None else max(6 * n, 300))
    rng = np.random.default_rng(seed)
    pool = sorted(int(i) for i in rng.choice(len(deduped), pool_size, replace=False))
    bounds = {i: grasp_volume_estimate(deduped[i], geom, obj, limits) for i in pool}
    ranked = sorted(pool, key=lambda i: (-bounds[i], i))
    return [deduped[i] for i in ranked[:n]]


def dedupe_symmetric(poses: list[HandPose]) -> list[HandPose]:
    """Collapse poses equivalent under swapping the two spread-coupled fingers.

    The survivor is the lexicographically smaller joint tuple; input order of
    first occurrence is preserved. Idempotent.
    """
    seen: dict[tuple, HandPose] = {}
    for pose in poses:
        key = tuple(pose.as_vector())
        p, d = pose.proximal, pose.distal
        swapped = (pose.spread, p[1], p[0], p[2], d[1], d[0], d[2])
        if swapped < key:
            key = swapped
            pose = HandPose(spread=pose.spread,
                            proximal=(p[1], p[0], p[2]),
                            distal=(d[1], d[0], d[2]))
        if key not in seen:
            seen[key] = pose
    return list(seen.values())


# -- grasp simulation --------------------------------------------------------

@dataclass
class _PoseContext:
    """Per-pose artifacts shared across trials."""

    positions: np.ndarray
    normals: np.ndarray
    finger_of_sensor: np.ndarray
    hull: ConvexHull | None

    @classmethod
    def build(cls, pose: HandPose, geom: HandGeometry, limits: JointLimits) -> "_PoseContext":
        positions, normals = sensor_frames(pose, geom, limits)
        try:
            hull = convex_hull(forward_kinematics(pose, geom, limits).all_points())
        except DegenerateInput:
            hull = None
        return cls(positions=positions, normals=normals,
                   finger_of_sensor=sensor_finger_index(), hull=hull)


def _rest_height(obj: ObjectSpec) -> float:
    return obj.characteristic_size if obj.kind == "sphere" else obj.characteristic_size / 2.0


def _overlaps(kind: str, size: float, center: np.ndarray, placed: np.ndarray) -> bool:
    if placed.size == 0:
        return False
    delta = placed - center
    if kind == "sphere":
        return bool((np.linalg.norm(delta, axis=1) < 2.0 * size).any())
    return bool((np.abs(delta).max(axis=1) < size).any())


def _place_pile(ctx: _PoseContext, scene: SceneConfig, rng: np.random.Generator) -> np.ndarray:
    """Seeded rejection placement of non-overlapping centres near the hull.

    A closed hand presses a pile against its inner surfaces, so most
    candidates are sampled just off a random sensor patch; the rest fall
    uniformly through the in-grasp region.
    """
    obj = scene.object
    size = obj.characteristic_size
    if ctx.hull is None or scene.pile_size == 0:
        return np.zeros((0, 3))
    lo = ctx.hull.vertices.min(axis=0) - size
    hi = ctx.hull.vertices.max(axis=0) + size
    rest = _rest_height(obj)
    lo[2] = max(lo[2], rest)
    hi[2] = max(hi[2], lo[2] + size)
    centers: list[np.ndarray] = []
    for _ in range(scene.pile_size):
        for _ in range(PLACEMENT_ATTEMPTS):
            if rng.random() < SQUEEZE_BIAS:
                k = int(rng.integers(0, TACTILE_DIM))
                direction = ctx.normals[k] + 0.35 * rng.normal(size=3)
                direction /= np.linalg.norm(direction)
                c = ctx.positions[k] + direction * (size * rng.uniform(0.85, 1.05))
            else:
                c = rng.uniform(lo, hi)
            if c[2] < rest:
                continue
            if ctx.hull.signed_distance(c)[0] > HULL_MARGIN_FACTOR * size:
                continue
            if _overlaps(obj.kind, size, c, np.asarray(centers)):
                continue
            centers.append(c)
            break
    return np.asarray(centers) if centers else np.zeros((0, 3))


def _contact_threshold(obj: ObjectSpec, geom: HandGeometry) -> float:
    # Sensor patches have finite extent; half the palm cell diagonal extends
    # the point-to-centre threshold so resting contacts register.
    half_diag = 0.5 * math.hypot(geom.palm_width / 4.0, geom.palm_depth / 6.0)
    return obj.characteristic_size + half_diag


def simulate_grasp(
    pose: HandPose,
    scene: SceneConfig,
    geom: HandGeometry = DEFAULT_GEOMETRY,
    limits: JointLimits = DEFAULT_LIMITS,
    stage: str = "before_lift",
    _ctx: _PoseContext | None = None,
) -> GraspSample:
    """Synthesize one labeled grasp observation, deterministic per scene seed.

    `stage` selects whose weight loads the sensors: before_lift shares each
    contacting object's weight with pile and ground supports; after_lift
    loads only retained objects, fully on the hand. The label is the
    retained count in both cases. Objects that cannot be placed within the
    attempt budget are skipped; a fully failed placement yields an
    empty-pile sample with label 0.
    """
    if stage not in STAGES:
        raise ValidationError(f"stage must be one of {STAGES}")
    ctx = _ctx if _ctx is not None else _PoseContext.build(pose, geom, limits)
    obj = scene.object
    rng = np.random.default_rng(scene.seed)
    centers = _place_pile(ctx, scene, rng)

    size = obj.characteristic_size
    weight = unit_weight(obj)
    threshold = _contact_threshold(obj, geom)
    up = np.array([0.0, 0.0, 1.0])
    up_component = ctx.normals @ up

    raw = np.zeros(TACTILE_DIM)
    retained = 0
    for i in range(len(centers)):
        center = centers[i]
        delta = ctx.positions - center
        dist = np.linalg.norm(delta, axis=1)
        facing = np.einsum("ij,ij->i", -delta, ctx.normals) > 0.0
        contacts = np.flatnonzero((dist <= threshold) & facing)
        if contacts.size == 0 and stage == "before_lift":
            continue
        bearing = contacts[up_component[contacts] >= LOAD_BEARING_MIN_UP]
        light = np.setdiff1d(contacts, bearing, assume_unique=True)

        is_retained = False
        if bearing.size > 0 and contacts.size >= 2:
            dirs = -delta[contacts] / dist[contacts][:, None]
            cos_min = (dirs @ dirs.T).min()
            near_hull = (ctx.hull is not None
                         and ctx.hull.signed_distance(center)[0] <= RETAIN_MARGIN_FACTOR * size)
            is_retained = bool(cos_min <= OPPOSING_MAX_COS and near_hull)
        retained += int(is_retained)

        if stage == "after_lift":
            if not is_retained:
                continue
            hand_share = weight
        elif is_retained:
            # A caged object is already lifted off the pile by the squeeze;
            # its weight routes through the hand even before the lift.
            hand_share = weight
            raw[light] += LIGHT_TOUCH_FRACTION * weight
        else:
            others = np.delete(centers, i, axis=0)
            gaps = np.linalg.norm(others - center, axis=1)
            below = (others[:, 2] < center[2] - 0.25 * size) if others.size else np.zeros(0, bool)
            n_pile = int(((gaps <= PILE_CONTACT_FACTOR * 2.0 * size) & below).sum())
            on_ground = center[2] <= _rest_height(obj) + 0.1 * size
            n_supports = int(on_ground) + n_pile + int(bearing.size > 0)
            if bearing.size == 0 or n_supports == 0:
                hand_share = 0.0
            else:
                hand_share = weight / n_supports
            raw[light] += LIGHT_TOUCH_FRACTION * weight
        if bearing.size > 0 and hand_share > 0.0:
            # Normal-force magnitudes chosen so vertical components sum to
            # the hand's share of the weight exactly.
            raw[bearing] += hand_share / up_component[bearing].sum()

    f_scale, s_scale = force_scale(obj), strain_scale(obj)
    sigma = effective_noise(scene.noise, scene.domain)
    tactile = np.clip(raw / f_scale, 0.0, 1.0)
    tactile = tactile + rng.normal(0.0, sigma, TACTILE_DIM) if sigma > 0 else tactile
    if scene.domain == "real_like":
        stuck = rng.random(TACTILE_DIM) < STUCK_CELL_PROB
        tactile = tactile + stuck * STUCK_CELL_OFFSET
    tactile = np.clip(tactile, 0.0, 1.0 + 3.0 * sigma)

    strain = np.zeros(STRAIN_DIM)
    for f in range(3):
        strain[f] = raw[ctx.finger_of_sensor == f].sum() / s_scale
    strain = np.clip(strain, 0.0, 1.0)
    strain = strain + rng.normal(0.0, sigma, STRAIN_DIM) if sigma > 0 else strain
    strain = np.clip(strain, 0.0, 1.0 + 3.0 * sigma)

    return GraspSample(
        pose=pose,
        tactile=tactile,
        strain=strain,
        label=retained,
        meta={"seed": int(scene.seed), "domain": scene.domain, "object": obj.kind},
    )


# -- tactile downsampling ----------------------------------------------------

def downsample_tactile(fine: np.ndarray, mapping: list[list[int]]) -> np.ndarray:
    """Average fine readings into 24 coarse cells per the neighbour mapping.

    Raises:
        InvalidMapping: if the mapping is not 24 non-empty valid index lists.
    """
    values = np.asarray(fine, dtype=float)
    if values.ndim != 1:
        raise InvalidMapping("fine readings must be a flat vector")
    if len(mapping) != 24:
        raise InvalidMapping(f"mapping must cover 24 cells, got {len(mapping)}")
    out = np.zeros(24)
    for cell, neighbors in enumerate(mapping):
        idx = np.asarray(neighbors, dtype=int)
        if idx.size == 0:
            raise InvalidMapping(f"cell {cell} has no mapped neighbours")
        if idx.min() < 0 or idx.max() >= values.size:
            raise InvalidMapping(f"cell {cell} maps outside the fine array")
        out[cell] = values[idx].mean()
    return out


# -- dataset assembly --------------------------------------------------------

@dataclass
class Dataset:
    """Samples plus sidecar metadata (normalization constants, splits)."""

    samples: list[GraspSample]
    meta: dict

    def __len__(self) -> int:
        return len(self.samples)

    def split(self, name: str) -> list[GraspSample]:
        if name == "all":
            return list(self.samples)
        try:
            idx = self.meta["splits"][name]
        except KeyError as exc:
            raise DataError(f"unknown split {name!r}") from exc
        return [self.samples[i] for i in idx]


def child_seed(*keys: int) -> int:
    """Stable 64-bit sub-seed derived from integer keys."""
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1, np.uint64)[0])


def count_to_class(label: int) -> int:
    """Map an object count onto the 5 prediction classes (>= 4 collapses)."""
    if label < 0:
        raise ValidationError("count must be non-negative")
    return min(int(label), 4)


def generate_dataset(
    scenes: list[SceneConfig],
    poses: list[HandPose],
    trials_per_pose: int,
    geom: HandGeometry = DEFAULT_GEOMETRY,
    limits: JointLimits = DEFAULT_LIMITS,
    stage: str = "before_lift",
) -> Dataset:
    """Simulate trials_per_pose grasps per (scene, pose) and split the result.

    All scenes must share object and domain. Sub-seeds are derived from each
    scene's seed and the (scene, pose, trial) indices, so regeneration is
    exact. Splits are 60/20/20 for sim_like data, 40/10/50 for real_like.
    """
    if not scenes or not poses or trials_per_pose < 1:
        raise EmptyDataset("need at least one scene, one pose, and one trial")
    first = scenes[0]
    for scene in scenes[1:]:
        if scene.object != first.object or scene.domain != first.domain:
            raise ValidationError("all scenes in a dataset must share object and domain")

    contexts = [_PoseContext.build(p, geom, limits) for p in poses]
    samples: list[GraspSample] = []
    for si, scene in enumerate(scenes):
        for pi, pose in enumerate(poses):
            for trial in range(trials_per_pose):
                sub = replace(scene, seed=child_seed(scene.seed, si, pi, trial))
                samples.append(simulate_grasp(pose, sub, geom, limits, stage, _ctx=contexts[pi]))

    n = len(samples)
    fractions = SPLIT_FRACTIONS[first.domain]
    order = np.random.default_rng(child_seed(first.seed, 0xB117)).permutation(n)
    n_train = int(n * fractions[0])
    n_val = int(n * fractions[1])
    splits = {
        "train": sorted(int(i) for i in order[:n_train]),
        "val": sorted(int(i) for i in order[n_train:n_train + n_val]),
        "test": sorted(int(i) for i in order[n_train + n_val:]),
    }
    histogram = [0] * 5
    for s in samples:
        histogram[count_to_class(s.label)] += 1

    meta = {
        "version": DATASET_FORMAT_VERSION,
        "object": first.object.kind,
        "object_size": first.object.characteristic_size,
        "object_mass": first.object.unit_mass,
        "packing_density": first.object.packing_density,
        "domain": first.domain,
        "stage": stage,
        "noise": max(s.noise for s in scenes),
        "seed": first.seed,
        "force_scale": force_scale(first.object),
        "strain_scale": strain_scale(first.object),
        "joint_limits": {
            "spread_max": limits.spread_max,
            "proximal_max": limits.proximal_max,
            "distal_max": limits.distal_max,
        },
        "class_histogram": histogram,
        "splits": splits,
    }
    return Dataset(samples=samples, meta=meta)


def object_from_meta(meta: dict) -> ObjectSpec:
    return ObjectSpec(
        kind=meta["object"],
        characteristic_size=float(meta["object_size"]),
        unit_mass=float(meta["object_mass"]),
        packing_density=float(meta["packing_density"]),
    )


def _meta_path(path: Path) -> Path:
    return path.with_suffix(".meta.json")


def save_dataset(dataset: Dataset, path: str | Path) -> None:
    """Write JSON-lines samples plus the sidecar metadata file."""
    path = Path(path)
    with path.open("w") as fh:
        for sample in dataset.samples:
            fh.write(json.dumps(sample.to_record(), sort_keys=True) + "\n")
    _meta_path(path).write_text(json.dumps(dataset.meta, sort_keys=True, indent=2) + "\n")


def load_dataset(path: str | Path) -> Dataset:
    """Load a JSON-lines dataset, auditing the 106+1 value contract per row."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"dataset file not found: {path}")
    samples = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            if len(record.get("pose", ())) != POSE_DIM \
                    or len(record.get("tactile", ())) != TACTILE_DIM \
                    or len(record.get("strain", ())) != STRAIN_DIM \
                    or "label" not in record:
                raise DataError(f"{path}:{lineno}: record is not 106 features + 1 label")
            samples.append(GraspSample.from_record(record))
    meta_file = _meta_path(path)
    if not meta_file.exists():
        raise DataError(f"sidecar metadata not found: {meta_file}")
    meta = json.loads(meta_file.read_text())
    return Dataset(samples=samples, meta=meta)
