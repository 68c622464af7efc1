"""Shared fixtures: small scenes, intrinsics, and random splat maps."""

import numpy as np
import pytest

from splatscan.gaussians import GaussianMap
from splatscan.geometry import PinholeIntrinsics, look_at
from splatscan.scene import SceneSpec, generate_scene


@pytest.fixture(scope="session")
def one_room_scene():
    return generate_scene(SceneSpec(n_rooms=1), seed=1)


@pytest.fixture(scope="session")
def two_room_scene():
    return generate_scene(SceneSpec(n_rooms=2), seed=7)


@pytest.fixture
def small_intrinsics():
    return PinholeIntrinsics.from_fov(32, 32, 90.0)


def random_map(rng: np.random.Generator, n: int, *, lo=-1.0, hi=1.0,
               depth_range=(1.0, 4.0), opacity_range=(0.1, 0.95)) -> GaussianMap:
    """Splats scattered in a box in front of the +z axis of the identity pose."""
    centers = np.column_stack([
        rng.uniform(lo, hi, n),
        rng.uniform(lo, hi, n),
        rng.uniform(*depth_range, n),
    ])
    return GaussianMap(
        centers=centers,
        colors=rng.uniform(0.0, 1.0, (n, 3)),
        radii=rng.uniform(0.05, 0.4, n),
        opacities=rng.uniform(*opacity_range, n),
    )


def random_pose(rng: np.random.Generator):
    """Camera a little off origin, looking at a jittered forward target."""
    position = rng.uniform(-0.3, 0.3, 3)
    target = np.array([rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5),
                       rng.uniform(2.0, 3.0)])
    return look_at(position, target)
