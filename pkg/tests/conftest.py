"""Shared fixtures and scene helpers for the person_locator test suite."""

import numpy as np
import pytest

from person_locator.camera_models import CameraModel
from person_locator.config import JointHeights, SolverBounds, SolverConfig, WeightConfig
from person_locator.errors import BehindCamera
from person_locator.evalkit import SyntheticSceneConfig
from person_locator.pose_solver import PoseState, camera_frame_points, forward_project


@pytest.fixture
def heights() -> JointHeights:
    return JointHeights(neck=1.5, hip=1.0, knee=0.5, ankle=0.1)


@pytest.fixture
def weights() -> WeightConfig:
    return WeightConfig()


@pytest.fixture
def solver_config() -> SolverConfig:
    return SolverConfig()


@pytest.fixture
def pinhole() -> CameraModel:
    return CameraModel.pinhole(640, 480, 500.0, 500.0, 320.0, 240.0)


@pytest.fixture
def level_state() -> PoseState:
    """Level camera, person 4 m ahead on the optical axis."""
    return PoseState(x_f=0.0, z_f=4.0, h_c=0.5, theta=0.0, phi=0.0)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240611)


def shrunk_bounds(bounds: SolverBounds, fraction: float):
    lower, upper = bounds.as_arrays()
    center = 0.5 * (lower + upper)
    half = 0.5 * (upper - lower) * fraction
    return center - half, center + half


def sample_states(rng, count, heights, bounds=None, fraction=0.9, max_angle_deg=None,
                  depth_range=(1.5, 10.0), max_normalized=2.0):
    """
    Rejection-sample states whose four model points are all visible.

    Every point must lie at a depth inside depth_range and project within
    max_normalized of the optical axis.
    """
    bounds = bounds or SolverBounds()
    lower, upper = shrunk_bounds(bounds, fraction)
    if max_angle_deg is not None:
        limit = np.deg2rad(max_angle_deg)
        lower[3:] = np.maximum(lower[3:], -limit)
        upper[3:] = np.minimum(upper[3:], limit)

    states = []
    while len(states) < count:
        vector = rng.uniform(lower, upper)
        vector[1] = rng.uniform(max(lower[1], depth_range[0]), min(upper[1], depth_range[1]))
        state = PoseState.from_vector(vector)
        points = camera_frame_points(state, heights)
        depths = points[:, 2]
        if np.any(depths < depth_range[0]) or np.any(depths > depth_range[1]):
            continue
        try:
            obs = forward_project(state, heights)
        except BehindCamera:
            continue
        if np.max(np.abs(obs.points)) > max_normalized:
            continue
        states.append(state)
    return states


def scene_config(**overrides):
    """Small noiseless scene: one person standing 3 m ahead of a level pinhole camera."""
    data = {
        "duration": 2.0,
        "frame_rate": 10.0,
        "persons": [{"person": 0, "waypoints": [[0.3, 3.0]], "speed": 0.0}],
        "camera": {"variant": "pinhole", "width": 1280, "height": 960,
                   "fx": 500.0, "fy": 500.0, "cx": 640.0, "cy": 480.0},
        "heights": {"neck": 1.5, "hip": 1.0, "knee": 0.5, "ankle": 0.1},
        "noise_px": 0.0,
        "seed": 1,
    }
    data.update(overrides)
    return SyntheticSceneConfig.model_validate(data)
