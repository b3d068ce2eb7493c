import math

import numpy as np
import pytest

from graspcount.errors import DataError, EmptyDataset, InvalidMapping, ValidationError
from graspcount.force import vertical_force
from graspcount.geometry import ObjectSpec, grasp_volume_estimate
from graspcount.kinematics import DEFAULT_GEOMETRY, DEFAULT_LIMITS, HandPose
from graspcount.simulator import (
    GraspSample,
    SceneConfig,
    _PoseContext,
    _place_pile,
    child_seed,
    count_to_class,
    dedupe_symmetric,
    downsample_tactile,
    effective_noise,
    generate_dataset,
    load_dataset,
    pregrasp_grid,
    save_dataset,
    select_poses,
    simulate_grasp,
)


@pytest.fixture(scope="module")
def grid():
    return pregrasp_grid()


@pytest.fixture(scope="module")
def deduped(grid):
    return dedupe_symmetric(grid)


def a_pose(deduped):
    return deduped[4201]


def test_grid_has_exactly_23958_poses(grid):
    assert len(grid) == 18 * 11 ** 3 == 23958


def test_grid_poses_pass_joint_limits(grid):
    for pose in grid[::701]:
        pose.validate()
    # full sweep is cheap enough to do once
    for pose in grid:
        pose.validate(DEFAULT_LIMITS)


def test_grid_is_order_stable(grid):
    again = pregrasp_grid()
    assert [p.as_vector().tolist() for p in grid] == [p.as_vector().tolist() for p in again]


def test_dedupe_fixed_point_and_swap(deduped):
    p_sym = HandPose(0.1, (0.5, 0.5, 0.7), (0.1, 0.1, 0.2))
    assert dedupe_symmetric([p_sym]) == [p_sym]
    a = HandPose(0.1, (math.radians(30), math.radians(36), 0.9), (0.1, 0.2, 0.3))
    b = HandPose(0.1, (math.radians(36), math.radians(30), 0.9), (0.2, 0.1, 0.3))
    out = dedupe_symmetric([a, b])
    assert len(out) == 1
    assert out[0] == a  # lexicographically smaller representative


def test_dedupe_shrinks_and_is_idempotent(grid, deduped):
    assert len(deduped) < len(grid)
    assert dedupe_symmetric(deduped) == deduped


def test_empty_pile_sample(deduped):
    obj = ObjectSpec.sphere()
    clean = simulate_grasp(a_pose(deduped), SceneConfig(obj, 0, 0.0, seed=3))
    assert clean.label == 0
    assert np.array_equal(clean.tactile, np.zeros(96))
    assert np.array_equal(clean.strain, np.zeros(3))

    noisy = simulate_grasp(a_pose(deduped), SceneConfig(obj, 0, 0.02, seed=3))
    assert noisy.label == 0
    assert noisy.tactile.max() <= 1.0 + 3 * 0.02


def test_sample_is_byte_deterministic(deduped):
    scene = SceneConfig(ObjectSpec.sphere(), 6, 0.02, seed=991)
    a = simulate_grasp(a_pose(deduped), scene)
    b = simulate_grasp(a_pose(deduped), scene)
    assert a.tactile.tobytes() == b.tactile.tobytes()
    assert a.strain.tobytes() == b.strain.tobytes()
    assert a.label == b.label and a.meta == b.meta


def test_signal_range_invariant(deduped):
    for domain in ("sim_like", "real_like"):
        for seed in range(8):
            scene = SceneConfig(ObjectSpec.sphere(), 9, 0.03, seed=seed, domain=domain)
            s = simulate_grasp(a_pose(deduped), scene)
            bound = 1.0 + 3.0 * effective_noise(0.03, domain)
            assert s.tactile.min() >= 0.0 and s.tactile.max() <= bound
            assert s.strain.min() >= 0.0 and s.strain.max() <= bound


def test_placement_has_no_overlaps(deduped):
    for obj in (ObjectSpec.sphere(), ObjectSpec.cube()):
        ctx = _PoseContext.build(a_pose(deduped), DEFAULT_GEOMETRY, DEFAULT_LIMITS)
        centers = _place_pile(ctx, SceneConfig(obj, 12, 0.0, seed=7),
                              np.random.default_rng(7))
        size = obj.characteristic_size
        for i in range(len(centers)):
            for j in range(i + 1, len(centers)):
                delta = centers[i] - centers[j]
                if obj.kind == "sphere":
                    assert np.linalg.norm(delta) >= 2 * size - 1e-12
                else:
                    assert np.abs(delta).max() >= size - 1e-12


def test_upper_bound_dominance_sampled(deduped):
    obj = ObjectSpec.sphere()
    rng = np.random.default_rng(5)
    poses = select_poses(20, seed=29, obj=obj, pool_size=150)
    violations = total = 0
    for pi, pose in enumerate(poses):
        bound = grasp_volume_estimate(pose, obj=obj)
        for trial in range(10):
            scene = SceneConfig(obj, int(rng.integers(0, 12)), 0.01,
                                seed=child_seed(8, pi, trial))
            total += 1
            violations += simulate_grasp(pose, scene).label > bound
    assert violations / total <= 0.01


def test_vertical_force_matches_retained_weight(deduped):
    # palm up, no noise: the hand bears exactly the weight it retains
    obj = ObjectSpec.sphere()
    scale = 4.0 * obj.unit_mass * 9.81
    checked = 0
    for seed in range(30):
        scene = SceneConfig(obj, 8, 0.0, seed=seed)
        s = simulate_grasp(a_pose(deduped), scene, stage="after_lift")
        force = vertical_force(s.tactile * scale, s.pose)
        assert abs(force - s.label * obj.unit_mass * 9.81) <= 1e-9
        checked += s.label > 0
    assert checked > 0


def test_before_lift_reads_at_least_after_lift(deduped):
    obj = ObjectSpec.sphere()
    scene = SceneConfig(obj, 10, 0.0, seed=1234)
    before = simulate_grasp(a_pose(deduped), scene, stage="before_lift")
    after = simulate_grasp(a_pose(deduped), scene, stage="after_lift")
    assert before.label == after.label
    assert before.tactile.sum() >= after.tactile.sum() - 1e-12
    with pytest.raises(ValidationError):
        simulate_grasp(a_pose(deduped), scene, stage="mid_lift")


def test_after_lift_regression_beats_before_lift():
    # after lifting, only retained objects load the sensors, so the linear
    # force regressor sees a much cleaner signal
    from graspcount.force import fit_linear, predict_count
    from graspcount.evaluation import rmse

    obj = ObjectSpec.sphere()
    poses = select_poses(20, seed=17, obj=obj, pool_size=150)
    scenes = [SceneConfig(obj, ps, 0.01, seed=child_seed(91, k))
              for k, ps in enumerate([0, 3, 6, 9, 12])]
    scale = 4.0 * obj.unit_mass * 9.81

    def stage_rmse(stage):
        ds = generate_dataset(scenes, poses, 4, stage=stage)
        forces = np.array([vertical_force(s.tactile * scale, s.pose) for s in ds.samples])
        labels = np.array([s.label for s in ds.samples])
        tr, te = ds.meta["splits"]["train"], ds.meta["splits"]["test"]
        model = fit_linear(zip(forces[tr], labels[tr]), trained_on=stage)
        preds = [min(predict_count(model, f), 4) for f in forces[te]]
        _, overall = rmse(preds, [count_to_class(v) for v in labels[te]])
        return overall

    assert stage_rmse("after_lift") < stage_rmse("before_lift")


def test_downsample_uniform_and_one_hot():
    mapping = [[i, i + 1] for i in range(24)]
    uniform = np.full(34, 0.7)
    assert np.allclose(downsample_tactile(uniform, mapping), 0.7)

    fine = np.zeros(34)
    fine[5] = 2.4
    mapping = [[k] for k in range(24)]
    mapping[3] = [5, 6, 7]  # cell 3 averages three neighbours
    mapping[5] = [8]        # index 5 feeds only cell 3
    out = downsample_tactile(fine, mapping)
    assert np.isclose(out[3], 2.4 / 3)
    assert np.allclose(np.delete(out, 3), 0.0)


def test_downsample_matches_per_cell_oracle(rng):
    fine = rng.random(34)
    mapping = [sorted(rng.choice(34, size=int(rng.integers(1, 5)), replace=False).tolist())
               for _ in range(24)]
    out = downsample_tactile(fine, mapping)
    for cell in range(24):
        assert np.isclose(out[cell], np.mean([fine[j] for j in mapping[cell]]))


def test_downsample_invalid_mappings():
    with pytest.raises(InvalidMapping):
        downsample_tactile(np.zeros(34), [[0]] * 23)
    bad = [[0]] * 24
    bad[7] = []
    with pytest.raises(InvalidMapping):
        downsample_tactile(np.zeros(34), bad)
    bad[7] = [40]
    with pytest.raises(InvalidMapping):
        downsample_tactile(np.zeros(34), bad)


def test_dataset_sizes_and_splits(deduped):
    obj = ObjectSpec.sphere()
    poses = deduped[:115]
    scenes = [SceneConfig(obj, 5, 0.01, seed=31)]
    ds = generate_dataset(scenes, poses, trials_per_pose=10)
    assert len(ds) == 1150
    splits = ds.meta["splits"]
    assert len(splits["train"]) == 690 and len(splits["val"]) == 230
    assert len(splits["test"]) == 230
    all_idx = sorted(splits["train"] + splits["val"] + splits["test"])
    assert all_idx == list(range(1150))


def test_real_like_split_fractions(deduped):
    obj = ObjectSpec.sphere()
    scenes = [SceneConfig(obj, 4, 0.01, seed=3, domain="real_like")]
    ds = generate_dataset(scenes, deduped[:20], trials_per_pose=5)
    splits = ds.meta["splits"]
    assert len(splits["train"]) == 40 and len(splits["val"]) == 10
    assert len(splits["test"]) == 50


def test_dataset_reproducibility(deduped):
    obj = ObjectSpec.cube()
    scenes = [SceneConfig(obj, 6, 0.02, seed=77)]
    a = generate_dataset(scenes, deduped[:6], 3)
    b = generate_dataset(scenes, deduped[:6], 3)
    assert a.meta == b.meta
    for sa, sb in zip(a.samples, b.samples):
        assert sa.to_record() == sb.to_record()


def test_dataset_requires_consistent_scenes(deduped):
    scenes = [
        SceneConfig(ObjectSpec.sphere(), 3, 0.01, seed=1),
        SceneConfig(ObjectSpec.cube(), 3, 0.01, seed=2),
    ]
    with pytest.raises(ValidationError):
        generate_dataset(scenes, deduped[:2], 1)
    with pytest.raises(EmptyDataset):
        generate_dataset([], deduped[:2], 1)


def test_dataset_round_trip_and_audit(tmp_path, small_dataset):
    path = tmp_path / "data.jsonl"
    save_dataset(small_dataset, path)
    loaded = load_dataset(path)
    assert loaded.meta == small_dataset.meta
    assert len(loaded) == len(small_dataset)
    for a, b in zip(loaded.samples, small_dataset.samples):
        assert a.to_record() == b.to_record()

    # dimension audit at load: a corrupted row must be rejected
    lines = path.read_text().splitlines()
    import json as _json

    bad = _json.loads(lines[0])
    bad["tactile"] = bad["tactile"][:-1]
    (tmp_path / "bad.jsonl").write_text(_json.dumps(bad) + "\n")
    (tmp_path / "bad.meta.json").write_text(_json.dumps(small_dataset.meta))
    with pytest.raises(DataError):
        load_dataset(tmp_path / "bad.jsonl")
    with pytest.raises(DataError):
        load_dataset(tmp_path / "missing.jsonl")


def test_scene_and_sample_validation():
    obj = ObjectSpec.sphere()
    with pytest.raises(ValidationError):
        SceneConfig(obj, -1, 0.0, seed=0)
    with pytest.raises(ValidationError):
        SceneConfig(obj, 1, -0.1, seed=0)
    with pytest.raises(ValidationError):
        SceneConfig(obj, 1, 0.1, seed=0, domain="dreamlike")
    with pytest.raises(ValidationError):
        GraspSample(pose=HandPose(0, (0, 0, 0), (0, 0, 0)),
                    tactile=np.zeros(95), strain=np.zeros(3), label=0)
    assert count_to_class(0) == 0
    assert count_to_class(3) == 3
    assert count_to_class(9) == 4
    with pytest.raises(ValidationError):
        count_to_class(-1)
