"""
person_locator - локализация человека по одной камере с оценкой крена и тангажа камеры.
"""

__version__ = "0.1.0"

from person_locator.camera_models import CameraModel, back_project, project_camera_point, project_to_pixel
from person_locator.config import JointHeights, RunConfig, SolverConfig, WeightConfig
from person_locator.errors import PersonLocatorError
from person_locator.observation import FourPointObservation, RawJointFrame, reduce_to_four_points
from person_locator.pose_solver import LocalizationResult, PoseState, forward_project, solve_localization

__all__ = [
    "__version__",
    "CameraModel",
    "FourPointObservation",
    "JointHeights",
    "LocalizationResult",
    "PersonLocatorError",
    "PoseState",
    "RawJointFrame",
    "RunConfig",
    "SolverConfig",
    "WeightConfig",
    "back_project",
    "forward_project",
    "project_camera_point",
    "project_to_pixel",
    "reduce_to_four_points",
    "solve_localization",
]
