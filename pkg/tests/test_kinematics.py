import math

import numpy as np
import pytest

from graspcount.errors import JointLimitViolation, ValidationError
from graspcount.kinematics import (
    DEFAULT_GEOMETRY,
    DEFAULT_LIMITS,
    REGION_SLICES,
    HandPose,
    forward_kinematics,
    load_hand_config,
    sensor_frames,
)

from oracles import chain_keypoints, chain_link_normals


def pose_deg(spread, prox, dist=None):
    prox = [math.radians(p) for p in prox]
    if dist is None:
        dist = [p / 3.0 for p in prox]
    else:
        dist = [math.radians(d) for d in dist]
    return HandPose(spread=math.radians(spread), proximal=tuple(prox), distal=tuple(dist))


def random_pose(rng):
    return HandPose(
        spread=float(rng.uniform(0, 2 * math.pi)),
        proximal=tuple(rng.uniform(0, math.radians(140), 3)),
        distal=tuple(rng.uniform(0, math.radians(48), 3)),
    )


def test_zero_flexion_keeps_fingers_in_palm_plane():
    kp = forward_kinematics(pose_deg(0, [0, 0, 0], [0, 0, 0]))
    assert np.allclose(kp.all_points()[:, 2], 0.0)


def test_spread_mirror_symmetry():
    for spread in (0.0, 35.0, 120.0, 250.0):
        pose = pose_deg(spread, [50, 50, 70])
        kp = forward_kinematics(pose)
        mirror = np.array([-1.0, 1.0, 1.0])
        assert np.allclose(kp.M[0], kp.M[1] * mirror, atol=1e-12)
        assert np.allclose(kp.D[0], kp.D[1] * mirror, atol=1e-12)
        assert np.allclose(kp.P[0], kp.P[1] * mirror, atol=1e-12)


def test_keypoints_match_transform_chain_oracle(rng):
    poses = [pose_deg(40, [60, 60, 60])] + [random_pose(rng) for _ in range(10)]
    for pose in poses:
        kp = forward_kinematics(pose)
        M, D, P = chain_keypoints(pose, DEFAULT_GEOMETRY)
        assert np.allclose(kp.M, M, atol=1e-12)
        assert np.allclose(kp.D, D, atol=1e-12)
        assert np.allclose(kp.P, P, atol=1e-12)


def test_keypoint_count_and_finiteness(rng):
    pts = forward_kinematics(random_pose(rng)).all_points()
    assert pts.shape == (13, 3)
    assert np.all(np.isfinite(pts))


def test_link_lengths_are_pose_invariant(rng):
    g = DEFAULT_GEOMETRY
    for _ in range(20):
        kp = forward_kinematics(random_pose(rng), g)
        assert np.allclose(np.linalg.norm(kp.D - kp.M, axis=1), g.proximal_length, atol=1e-12)
        assert np.allclose(np.linalg.norm(kp.P - kp.D, axis=1), g.distal_length, atol=1e-12)


def test_lipschitz_continuity_under_joint_perturbation(rng):
    g = DEFAULT_GEOMETRY
    chain = max(math.hypot(*off) for off in g.finger_base_offsets) \
        + g.proximal_length + g.distal_length
    eps = 1e-6
    for _ in range(10):
        pose = pose_deg(100, [50, 60, 70], [15, 18, 21])
        base = forward_kinematics(pose).all_points()
        for j in range(7):
            vec = pose.as_vector()
            vec[j] += eps
            moved = forward_kinematics(HandPose.from_vector(vec)).all_points()
            assert np.linalg.norm(moved - base, axis=1).max() <= chain * eps * (1 + 1e-6)


def test_joint_limit_violations():
    with pytest.raises(JointLimitViolation):
        forward_kinematics(HandPose(-0.1, (0.1, 0.1, 0.1), (0.0, 0.0, 0.0)))
    with pytest.raises(JointLimitViolation):
        forward_kinematics(HandPose(0.0, (math.radians(141), 0.1, 0.1), (0, 0, 0)))
    with pytest.raises(JointLimitViolation):
        forward_kinematics(HandPose(0.0, (0.1, 0.1, 0.1), (math.radians(49), 0, 0)))
    with pytest.raises(JointLimitViolation):
        sensor_frames(HandPose(float("nan"), (0, 0, 0), (0, 0, 0)))


def test_pose_vector_round_trip(rng):
    pose = random_pose(rng)
    assert pose == HandPose.from_vector(pose.as_vector())
    with pytest.raises(ValidationError):
        HandPose.from_vector([0.0] * 6)


def test_flat_palm_sensor_normals():
    positions, normals = sensor_frames(pose_deg(0, [0, 0, 0], [0, 0, 0]))
    assert positions.shape == (96, 3) and normals.shape == (96, 3)
    assert np.allclose(normals, [0.0, 0.0, 1.0])


def test_sensor_normals_are_unit_length(rng):
    for _ in range(10):
        _, normals = sensor_frames(random_pose(rng))
        assert np.abs(np.linalg.norm(normals, axis=1) - 1.0).max() <= 1e-12


def test_distal_sensor_normals_match_chain_oracle(rng):
    pose = pose_deg(55, [70, 40, 85])
    _, normals = sensor_frames(pose)
    for region, finger in (("fixed_finger", 2), ("moving_finger_1", 0), ("moving_finger_2", 1)):
        block = normals[REGION_SLICES[region]]
        prox_n, dist_n = chain_link_normals(pose, DEFAULT_GEOMETRY, finger)
        assert np.allclose(block[:12], prox_n, atol=1e-12)
        assert np.allclose(block[12:], dist_n, atol=1e-12)


def test_palm_sensors_form_6x4_grid_on_palm():
    positions, _ = sensor_frames(pose_deg(30, [40, 40, 40]))
    palm = positions[REGION_SLICES["palm"]]
    assert np.allclose(palm[:, 2], 0.0)
    assert len({round(v, 9) for v in palm[:, 1]}) == 6
    assert len({round(v, 9) for v in palm[:, 0]}) == 4


def test_load_hand_config_defaults_and_overrides(tmp_path):
    geom, limits = load_hand_config(None)
    assert geom == DEFAULT_GEOMETRY
    assert limits == DEFAULT_LIMITS

    cfg = tmp_path / "hand.cfg"
    cfg.write_text("palm_width = 0.1\nlimit_spread = 3.2\nfinger1_base_x = -0.05\n")
    geom, limits = load_hand_config(cfg)
    assert geom.palm_width == 0.1
    assert geom.finger_base_offsets[0] == (-0.05, 0.0)
    assert limits.spread_max == 3.2

    bad = tmp_path / "bad.cfg"
    bad.write_text("palm_girth = 1\n")
    with pytest.raises(ValidationError):
        load_hand_config(bad)


def test_geometry_validation():
    from graspcount.kinematics import HandGeometry

    with pytest.raises(ValidationError):
        HandGeometry(palm_width=-1.0)
    with pytest.raises(ValidationError):
        HandGeometry(distal_coupling_ratio=0.0)
