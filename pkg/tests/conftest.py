import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from tcdepth.synth import TrajectorySpec, kitti_like_intrinsics, make_trajectory, preset_scene, render

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_k():
    return kitti_like_intrinsics(160, 48)


@pytest.fixture(scope="session")
def box_pair(small_k):
    """Two renders of the box scene, the second camera 0.3 m to the right."""
    scene = preset_scene("box")
    poses = make_trajectory(TrajectorySpec("translate-x", 2, 0.3))
    return scene, poses, [render(scene, p, small_k, 160, 48) for p in poses]
