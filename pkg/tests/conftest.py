import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from graspcount.geometry import ObjectSpec
from graspcount.simulator import SceneConfig, child_seed, generate_dataset, select_poses


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)


@pytest.fixture(scope="session")
def sphere():
    return ObjectSpec.sphere()


@pytest.fixture(scope="session")
def small_dataset(sphere):
    """A shared ~320-sample sphere dataset for estimator/evaluation tests."""
    poses = select_poses(16, seed=3, obj=sphere, pool_size=150)
    scenes = [SceneConfig(sphere, ps, 0.01, seed=child_seed(21, k))
              for k, ps in enumerate([0, 3, 6, 9, 12])]
    return generate_dataset(scenes, poses, trials_per_pose=4)
