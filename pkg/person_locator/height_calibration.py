"""
Калибровка высот суставов человека на этапе инициализации.

При известной ориентации (theta, phi) и высоте камеры h_C каждая видимая
точка даёт два уравнения, линейных по неизвестным (X_F, Z_F каждого кадра и
общим высотам суставов), если домножить проекцию на глубину:

    (m1 - n_x * m3) . (X_F, h_C - h_i, Z_F) = 0
    (m2 - n_y * m3) . (X_F, h_C - h_i, Z_F) = 0

где m1, m2, m3 - строки R^T. Система решается через SVD.

Масштаб: замена (X_F, Z_F, h_C - h_i) -> lambda * (X_F, Z_F, h_C - h_i) не меняет
нормализованные точки, поэтому у системы всегда есть одномерное ядро.
Калибровка фиксируется якорем: известной высотой одного сустава (по умолчанию
лодыжка, 0.10 м) или известной дальностью до следа в первом кадре.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.linalg import svd

from person_locator.config import JOINT_NAMES, CalibrationConfig, JointHeights, WeightConfig
from person_locator.errors import InsufficientData, NonPhysicalHeights, RankDeficient
from person_locator.observation import FourPointObservation
from person_locator.pose_solver import rotation_from_angles

logger = logging.getLogger(__name__)


@dataclass
class ConditionReport:
    singular_values: np.ndarray
    condition_number: float

    @property
    def smallest(self) -> float:
        return float(self.singular_values[-1]) if self.singular_values.size else 0.0


@dataclass
class CalibrationSystem:
    """
    Линейная система калибровки A u = b.

    Порядок неизвестных: (X_F, Z_F) для каждого кадра, затем свободные высоты суставов.
    """

    matrix: np.ndarray
    rhs: np.ndarray
    frame_count: int
    height_joints: Tuple[str, ...]
    anchor_joint: Optional[str] = None
    anchor_height: Optional[float] = None

    @property
    def unknown_count(self) -> int:
        return self.matrix.shape[1]


@dataclass
class CalibrationResult:
    heights: JointHeights
    footprints: List[Tuple[float, float]]
    residual_rms: float
    condition: ConditionReport
    frame_ids: List[int] = field(default_factory=list)


def condition_report(system: Union[CalibrationSystem, np.ndarray]) -> ConditionReport:
    """
    Сингулярный спектр системы и число обусловленности.

    Args:
        system: собранная система или её матрица

    Returns:
        ConditionReport; для вырожденной матрицы число обусловленности равно inf
    """
    matrix = system.matrix if isinstance(system, CalibrationSystem) else np.asarray(system, dtype=float)
    singular_values = svd(matrix, compute_uv=False)
    if singular_values.size == 0 or singular_values[-1] <= 0.0:
        return ConditionReport(singular_values, float("inf"))
    return ConditionReport(singular_values, float(singular_values[0] / singular_values[-1]))


def build_calibration_system(observations: Sequence[FourPointObservation],
                             known_attitude: Tuple[float, float],
                             known_h_c: float,
                             weights: Optional[WeightConfig] = None,
                             anchor_joint: Optional[str] = "ankle",
                             anchor_height: float = 0.10) -> CalibrationSystem:
    """
    Сборка линейной системы калибровки.

    Args:
        observations: кадры со всеми четырьмя видимыми точками
        known_attitude: (theta, phi) в радианах
        known_h_c: высота камеры, м
        weights: веса точек; строки масштабируются на sqrt(w_i)
        anchor_joint: сустав с известной высотой; None - все высоты неизвестны
        anchor_height: высота сустава-якоря, м

    Returns:
        CalibrationSystem
    """
    weights = weights or WeightConfig()
    if not observations:
        raise InsufficientData("нет кадров для калибровки")
    for obs in observations:
        if not obs.visible.all():
            raise InsufficientData(f"кадр {obs.frame_id}: для калибровки нужны все четыре точки")

    theta, phi = known_attitude
    m = rotation_from_angles(theta, phi).T
    sqrt_w = np.sqrt(weights.as_array())

    height_joints = tuple(name for name in JOINT_NAMES if name != anchor_joint)
    frame_count = len(observations)
    n_unknowns = 2 * frame_count + len(height_joints)

    rows = []
    rhs = []
    for j, obs in enumerate(observations):
        for i, name in enumerate(JOINT_NAMES):
            for axis in (0, 1):
                coeffs = m[axis] - obs.points[i, axis] * m[2]
                a, b, c = coeffs
                row = np.zeros(n_unknowns)
                row[2 * j] = a
                row[2 * j + 1] = c
                # a X + c Z + b (h_C - h_i) = 0
                if name == anchor_joint:
                    value = -b * (known_h_c - anchor_height)
                else:
                    row[2 * frame_count + height_joints.index(name)] = -b
                    value = -b * known_h_c
                rows.append(sqrt_w[i] * row)
                rhs.append(sqrt_w[i] * value)

    return CalibrationSystem(
        matrix=np.array(rows),
        rhs=np.array(rhs),
        frame_count=frame_count,
        height_joints=height_joints,
        anchor_joint=anchor_joint,
        anchor_height=anchor_height if anchor_joint is not None else None,
    )


def _svd_solve(matrix: np.ndarray, rhs: np.ndarray):
    U, s, Vt = svd(matrix, full_matrices=False)
    tol = max(matrix.shape) * np.finfo(float).eps * (s[0] if s.size else 0.0)
    rank = int(np.count_nonzero(s > tol))
    coeffs = (U[:, :rank].T @ rhs) / s[:rank]
    return Vt[:rank].T @ coeffs, rank, Vt


def _unpack(system: CalibrationSystem, solution: np.ndarray):
    f = system.frame_count
    footprints = [(float(solution[2 * j]), float(solution[2 * j + 1])) for j in range(f)]
    values = {}
    for k, name in enumerate(system.height_joints):
        values[name] = float(solution[2 * f + k])
    if system.anchor_joint is not None:
        values[system.anchor_joint] = float(system.anchor_height)
    return footprints, np.array([values[name] for name in JOINT_NAMES])


def _is_physical(h: np.ndarray) -> bool:
    return bool(h[0] > h[1] > h[2] > h[3] >= 0.0)


def calibrate_heights(observations: Sequence[FourPointObservation],
                      known_attitude: Tuple[float, float] = (0.0, 0.0),
                      known_h_c: float = 0.5,
                      weights: Optional[WeightConfig] = None,
                      config: Optional[CalibrationConfig] = None) -> CalibrationResult:
    """
    Оценка высот суставов и положения человека в каждом кадре калибровки.

    Args:
        observations: статичные кадры со всеми четырьмя видимыми точками
        known_attitude: (theta, phi) камеры в радианах
        known_h_c: высота камеры, м
        weights: веса точек
        config: якорь масштаба и порог предупреждения об обусловленности

    Returns:
        CalibrationResult с высотами, следами (X_F, Z_F) и отчётом об обусловленности
    """
    config = config or CalibrationConfig()
    anchor = None if config.known_distance is not None else config.anchor_joint
    system = build_calibration_system(observations, known_attitude, known_h_c, weights,
                                      anchor_joint=anchor, anchor_height=config.anchor_height)

    report = condition_report(system)
    expected_rank = system.unknown_count - (1 if anchor is None else 0)
    solution, rank, Vt = _svd_solve(system.matrix, system.rhs)
    if rank < expected_rank:
        raise RankDeficient(f"ранг системы калибровки {rank} меньше требуемого {expected_rank}")

    if anchor is None:
        solution = _fix_distance_gauge(system, solution, Vt[-1], config.known_distance)
    elif report.condition_number > config.warn_condition:
        logger.warning("[!] Плохая обусловленность калибровки: %.3e", report.condition_number)

    footprints, h = _unpack(system, solution)
    if not _is_physical(h):
        raise NonPhysicalHeights(
            "высоты не удовлетворяют h_neck > h_hip > h_knee > h_ankle >= 0: "
            + ", ".join(f"{name}={value:.3f}" for name, value in zip(JOINT_NAMES, h))
        )

    residual = system.matrix @ solution - system.rhs
    residual_rms = float(np.sqrt(np.mean(residual ** 2)))
    logger.info("[+] Калибровка по %d кадрам: высоты %s, невязка %.3e",
                system.frame_count, np.round(h, 4).tolist(), residual_rms)

    return CalibrationResult(
        heights=JointHeights.from_array(h),
        footprints=footprints,
        residual_rms=residual_rms,
        condition=report,
        frame_ids=[obs.frame_id for obs in observations],
    )


def _fix_distance_gauge(system: CalibrationSystem, particular: np.ndarray,
                        null_vector: np.ndarray, distance: float) -> np.ndarray:
    """Выбор точки на прямой решений, при которой след первого кадра на дальности distance."""
    p = particular[:2]
    q = null_vector[:2]
    # ||p + t q||^2 = d^2
    a = float(q @ q)
    b = 2.0 * float(p @ q)
    c = float(p @ p) - distance ** 2
    if a < 1e-15:
        raise RankDeficient("направление масштаба не затрагивает след первого кадра")
    disc = b * b - 4 * a * c
    if disc < 0:
        raise RankDeficient("дальность не достижима на прямой решений калибровки")

    candidates = []
    for t in ((-b + np.sqrt(disc)) / (2 * a), (-b - np.sqrt(disc)) / (2 * a)):
        solution = particular + t * null_vector
        _, h = _unpack(system, solution)
        candidates.append((solution[1] > 0, _is_physical(h), solution))
    candidates.sort(key=lambda item: (item[0], item[1]), reverse=True)
    return candidates[0][2]


if __name__ == "__main__":
    from person_locator.pose_solver import PoseState, forward_project

    truth = JointHeights(neck=1.5, hip=1.0, knee=0.5, ankle=0.1)
    frames = [forward_project(PoseState(0.2 * k, z, 0.5), truth, frame_id=k) for k, z in enumerate((2.0, 3.0, 4.0))]
    result = calibrate_heights(frames)
    print(f"Высоты:           {result.heights.as_array()}")
    print(f"Следы:            {result.footprints}")
    print(f"Обусловленность:  {result.condition.condition_number:.2f}")
