"""
Покадровая оценка положения человека и ориентации камеры.

Состояние s = (X_F, Z_F, h_C, theta, phi): след человека F на виртуальной
плоскости, высота камеры над плоскостью, тангаж и крен камеры.
Модель человека: четыре точки (шея, бёдра, колени, лодыжки) на известных
высотах над F. Точка i в системе робота: CP_i = (X_F, h_C - h_i, Z_F),
в системе камеры: P_i = R^T * CP_i, где R = Rz(phi) * Rx(theta).

Знак тангажа следует из матрицы Rx: оптическая ось в системе робота равна
(0, -sin(theta), cos(theta)), то есть положительный theta наклоняет ось вверх.
"""

import logging
import time
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.linalg import svd

from person_locator.camera_models import project_camera_point
from person_locator.config import JointHeights, SolverConfig, WeightConfig
from person_locator.dogbox import CauchyLoss, clamp_inward, dogbox_minimize
from person_locator.errors import BehindCamera, DegenerateObservation, InsufficientObservations
from person_locator.observation import FourPointObservation

logger = logging.getLogger(__name__)

TRANSLATION_BLOCK = np.array([0, 1, 2])
ROTATION_BLOCK = np.array([3, 4])
MIN_VISIBLE_POINTS = 3
DEFAULT_NOMINAL_H_C = 0.5


@dataclass(frozen=True)
class PoseState:
    """Вектор состояния: метры и радианы."""

    x_f: float
    z_f: float
    h_c: float
    theta: float = 0.0
    phi: float = 0.0

    def as_vector(self) -> np.ndarray:
        return np.array([self.x_f, self.z_f, self.h_c, self.theta, self.phi], dtype=float)

    @classmethod
    def from_vector(cls, vector) -> "PoseState":
        x_f, z_f, h_c, theta, phi = (float(v) for v in vector)
        return cls(x_f=x_f, z_f=z_f, h_c=h_c, theta=theta, phi=phi)

    @classmethod
    def from_degrees(cls, x_f: float, z_f: float, h_c: float, theta_deg: float = 0.0, phi_deg: float = 0.0):
        return cls(x_f, z_f, h_c, float(np.deg2rad(theta_deg)), float(np.deg2rad(phi_deg)))

    @property
    def theta_deg(self) -> float:
        return float(np.rad2deg(self.theta))

    @property
    def phi_deg(self) -> float:
        return float(np.rad2deg(self.phi))

    def within(self, bounds: Tuple[np.ndarray, np.ndarray]) -> bool:
        vector = self.as_vector()
        return bool(np.all(vector >= bounds[0]) and np.all(vector <= bounds[1]))


@dataclass
class LocalizationResult:
    state: PoseState
    final_cost: float
    per_point_residual_norms: np.ndarray
    converged: bool
    iterations_used: int
    outer_iterations: int = 0
    elapsed_s: float = 0.0
    frame_id: int = 0
    timestamp: float = 0.0
    person_id: int = 0


def _rx(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def _rz(phi: float) -> np.ndarray:
    c, s = np.cos(phi), np.sin(phi)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _drx(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[0.0, 0.0, 0.0], [0.0, -s, -c], [0.0, c, -s]])


def _drz(phi: float) -> np.ndarray:
    c, s = np.cos(phi), np.sin(phi)
    return np.array([[-s, -c, 0.0], [c, -s, 0.0], [0.0, 0.0, 0.0]])


def rotation_from_angles(theta: float, phi: float) -> np.ndarray:
    """
    Матрица ориентации камеры R = Rz(phi) * Rx(theta).

    Положительный theta наклоняет оптическую ось вверх: при прочих равных
    точки модели смещаются на изображении вниз.

    Args:
        theta: тангаж, радианы
        phi: крен, радианы

    Returns:
        ортонормированная матрица 3x3 с определителем +1
    """
    return _rz(phi) @ _rx(theta)


def robot_frame_points(state: PoseState, heights: JointHeights) -> np.ndarray:
    """Точки CP_i модели в системе робота, массив (4, 3)."""
    h = heights.as_array()
    return np.column_stack([np.full(4, state.x_f), state.h_c - h, np.full(4, state.z_f)])


def camera_frame_points(state: PoseState, heights: JointHeights) -> np.ndarray:
    """Точки P_i = R^T * CP_i в системе камеры, массив (4, 3)."""
    R = rotation_from_angles(state.theta, state.phi)
    # Строка CP_i, умноженная справа на R, есть (R^T * CP_i)^T
    return robot_frame_points(state, heights) @ R


def forward_project(state: PoseState, heights: JointHeights, **meta) -> FourPointObservation:
    """
    Прямая модель: состояние и высоты суставов -> наблюдение без шума.

    Raises:
        BehindCamera: если хотя бы одна точка имеет неположительную глубину
    """
    points = [project_camera_point(p) for p in camera_frame_points(state, heights)]
    return FourPointObservation(points=np.array(points), visible=np.ones(4, dtype=bool), **meta)


class _ReprojectionProblem:
    """Невязки и якобиан для фиксированного наблюдения; вектор состояния в порядке PoseState."""

    def __init__(self, obs: FourPointObservation, heights: JointHeights, weights: WeightConfig):
        self.mask = obs.visible & (weights.as_array() > 0)
        self.measured = obs.points[self.mask]
        self.heights = heights.as_array()[self.mask]
        self.sqrt_w = np.sqrt(weights.as_array()[self.mask])

    def _points(self, vector: np.ndarray):
        x_f, z_f, h_c, theta, phi = vector
        R = rotation_from_angles(theta, phi)
        k = len(self.heights)
        cp = np.column_stack([np.full(k, x_f), h_c - self.heights, np.full(k, z_f)])
        return cp, cp @ R, R

    def residuals(self, vector: np.ndarray) -> np.ndarray:
        _, p, _ = self._points(vector)
        if np.any(p[:, 2] <= 0):
            return np.full(2 * len(self.heights), np.nan)
        projected = p[:, :2] / p[:, 2:3]
        return (self.sqrt_w[:, None] * (self.measured - projected)).ravel()

    def jacobian(self, vector: np.ndarray) -> np.ndarray:
        _, _, _, theta, phi = vector
        cp, p, R = self._points(vector)
        k = len(self.heights)

        # dP/ds для каждой точки: (k, 3, 5)
        dp = np.empty((k, 3, 5))
        dp[:, :, 0] = R[0]
        dp[:, :, 1] = R[2]
        dp[:, :, 2] = R[1]
        dp[:, :, 3] = cp @ (_rz(phi) @ _drx(theta))
        dp[:, :, 4] = cp @ (_drz(phi) @ _rx(theta))

        z = p[:, 2]
        dpi = np.zeros((k, 2, 3))
        dpi[:, 0, 0] = 1.0 / z
        dpi[:, 1, 1] = 1.0 / z
        dpi[:, 0, 2] = -p[:, 0] / z ** 2
        dpi[:, 1, 2] = -p[:, 1] / z ** 2

        jac = -self.sqrt_w[:, None, None] * np.einsum("kij,kjl->kil", dpi, dp)
        return jac.reshape(2 * k, 5)


def reprojection_cost(state: PoseState,
                      obs: FourPointObservation,
                      heights: JointHeights,
                      weights: WeightConfig,
                      cauchy_scale: Optional[float] = 0.01) -> Tuple[float, np.ndarray]:
    """
    Взвешенная робастная ошибка репроекции.

    Args:
        state: состояние
        obs: наблюдение (учитываются только видимые точки)
        heights: высоты суставов
        weights: веса точек
        cauchy_scale: масштаб функции Коши; None - квадратичная стоимость

    Returns:
        стоимость sum(rho(||r_i||^2)) и вектор невязок r_i = sqrt(w_i) * (n_i - pi(P_i));
        если точка оказывается позади камеры - стоимость inf
    """
    problem = _ReprojectionProblem(obs, heights, weights)
    residuals = problem.residuals(state.as_vector())
    if not np.all(np.isfinite(residuals)):
        return float("inf"), residuals

    squared = np.sum(residuals.reshape(-1, 2) ** 2, axis=1)
    if cauchy_scale is None:
        return float(np.sum(squared)), residuals
    rho, _, _ = CauchyLoss(cauchy_scale)(squared)
    return float(np.sum(rho)), residuals


def analytic_jacobian(state: PoseState,
                      obs: FourPointObservation,
                      heights: JointHeights,
                      weights: WeightConfig) -> np.ndarray:
    """
    Точный якобиан невязок (без функции потерь) по (X_F, Z_F, h_C, theta, phi).

    Returns:
        матрица (2 * число видимых точек, 5)
    """
    problem = _ReprojectionProblem(obs, heights, weights)
    vector = state.as_vector()
    _, p, _ = problem._points(vector)
    if np.any(p[:, 2] <= 0):
        raise BehindCamera("якобиан не определён: точка позади камеры")
    return problem.jacobian(vector)


def initialize_state(obs: FourPointObservation,
                     heights: JointHeights,
                     nominal_h_c: float = DEFAULT_NOMINAL_H_C,
                     config: Optional[SolverConfig] = None) -> PoseState:
    """
    Начальное приближение в предположении горизонтальной камеры.

    theta = phi = 0, h_C = nominal_h_c, глубина по видимой высоте самого
    длинного видимого отрезка, X_F по медиане x видимых точек.
    """
    config = config or SolverConfig()
    lower, upper = config.bounds.as_arrays()

    idx = np.flatnonzero(obs.visible)
    if len(idx) < 2:
        raise DegenerateObservation("для начального приближения нужны хотя бы две видимые точки")

    h = heights.as_array()
    ys = obs.points[idx, 1]
    if np.ptp(ys) < 1e-12:
        raise DegenerateObservation("все видимые точки имеют одинаковую координату y")

    # Пары (a выше b) по убыванию разницы высот
    pairs = sorted(
        ((a, b) for i, a in enumerate(idx) for b in idx[i + 1:]),
        key=lambda pair: h[pair[0]] - h[pair[1]],
        reverse=True,
    )
    z_f = None
    for a, b in pairs:
        dy = obs.points[b, 1] - obs.points[a, 1]
        if abs(dy) > 1e-12:
            z_f = (h[a] - h[b]) / abs(dy)
            break
    if z_f is None:
        raise DegenerateObservation("нет пары видимых точек с ненулевой видимой высотой")

    z_f = float(np.clip(z_f, lower[1], upper[1]))
    x_f = float(np.clip(z_f * np.median(obs.points[idx, 0]), lower[0], upper[0]))
    h_c = float(np.clip(nominal_h_c, lower[2], upper[2]))
    return PoseState(x_f=x_f, z_f=z_f, h_c=h_c, theta=0.0, phi=0.0)


def linear_initialization(obs: FourPointObservation,
                          heights: JointHeights,
                          weights: Optional[WeightConfig] = None,
                          config: Optional[SolverConfig] = None) -> Optional[PoseState]:
    """
    Начальное приближение из линейной системы без предположения о горизонтальной камере.

    Точки модели лежат на одной вертикали: P_i = A + h_i * B, где
    A = R^T * (X_F, h_C, Z_F) и B = -R^T * (0, 1, 0). Умножение n_i на глубину
    даёт два однородных уравнения на (A, B) для каждой видимой точки; решение -
    последний правый сингулярный вектор, масштаб фиксирует условие |B| = 1.
    На наблюдении без шума с тремя и более точками результат точный.

    Returns:
        состояние внутри границ или None, если система вырождена или решение нефизично
    """
    weights = weights or WeightConfig()
    config = config or SolverConfig()
    lower, upper = config.bounds.as_arrays()

    mask = obs.visible & (weights.as_array() > 0)
    if np.count_nonzero(mask) < MIN_VISIBLE_POINTS:
        return None
    n = obs.points[mask]
    h = heights.as_array()[mask]
    sqrt_w = np.sqrt(weights.as_array()[mask])

    ones, zeros = np.ones(len(h)), np.zeros(len(h))
    rows = np.empty((2 * len(h), 6))
    rows[0::2] = np.column_stack([ones, zeros, -n[:, 0], h, zeros, -n[:, 0] * h])
    rows[1::2] = np.column_stack([zeros, ones, -n[:, 1], zeros, h, -n[:, 1] * h])
    rows *= np.repeat(sqrt_w, 2)[:, None]

    _, singular_values, vt = svd(rows)
    if singular_values[-2] <= 1e-12 * singular_values[0]:
        logger.debug("линейное приближение: ядро системы больше одномерного")
        return None

    a, b = vt[-1, :3], vt[-1, 3:]
    scale = float(np.linalg.norm(b))
    if scale < 1e-12:
        return None
    a, b = a / scale, b / scale
    depths = a[2] + h * b[2]
    if np.sum(depths) < 0:
        a, b, depths = -a, -b, -depths
    if np.any(depths <= 0):
        return None

    # -B - вторая строка R: (sin(phi), cos(phi) cos(theta), -cos(phi) sin(theta))
    down = -b
    if down[1] <= 0:
        return None
    phi = float(np.arcsin(np.clip(down[0], -1.0, 1.0)))
    theta = float(np.arctan2(-down[2], down[1]))
    x_f, h_c, z_f = rotation_from_angles(theta, phi) @ a

    vector = np.clip(np.array([x_f, z_f, h_c, theta, phi]), lower, upper)
    return PoseState.from_vector(vector)


def _block_functions(problem: _ReprojectionProblem, full: np.ndarray, block: np.ndarray):
    def fun(xb):
        vector = full.copy()
        vector[block] = xb
        return problem.residuals(vector)

    def jac(xb):
        vector = full.copy()
        vector[block] = xb
        return problem.jacobian(vector)[:, block]

    return fun, jac


@dataclass
class _Candidate:
    x: np.ndarray
    cost: float
    converged: bool
    iterations: int
    outer: int


def _solve_from(problem: _ReprojectionProblem,
                x0: np.ndarray,
                loss: CauchyLoss,
                config: SolverConfig,
                total_cost) -> _Candidate:
    """Совместный dogbox от x0, затем чередование блоков сдвига и поворота."""
    lower, upper = config.bounds.as_arrays()
    x = x0.copy()
    iterations = 0

    if config.joint_refinement:
        report = dogbox_minimize(problem.residuals, problem.jacobian, x, (lower, upper), config,
                                 loss=loss, group_size=2, max_iterations=config.max_refinement_iterations)
        x = report.x.copy()
        iterations += report.iterations

    cost = total_cost(x)
    converged = False
    outer = 0
    for outer in range(1, config.max_outer_alternations + 1):
        blocks_converged = True
        for block in (TRANSLATION_BLOCK, ROTATION_BLOCK):
            fun, jac = _block_functions(problem, x, block)
            report = dogbox_minimize(fun, jac, x[block], (lower[block], upper[block]), config,
                                     loss=loss, group_size=2)
            x[block] = report.x
            iterations += report.iterations
            blocks_converged = blocks_converged and report.converged

        new_cost = total_cost(x)
        logger.debug("чередование %d: стоимость %.3e -> %.3e", outer, cost, new_cost)
        change = abs(cost - new_cost)
        cost = new_cost
        # Остановка засчитывается только если оба блока сошлись, а не исчерпали лимит
        if blocks_converged and (change <= config.ftol * cost or cost == 0.0):
            converged = True
            break

    return _Candidate(x=x, cost=cost, converged=converged, iterations=iterations, outer=outer)


def solve_localization(obs: FourPointObservation,
                       heights: JointHeights,
                       weights: Optional[WeightConfig] = None,
                       config: Optional[SolverConfig] = None,
                       nominal_h_c: float = DEFAULT_NOMINAL_H_C,
                       initial: Optional[PoseState] = None) -> LocalizationResult:
    """
    Оценка состояния по одному наблюдению.

    Стартовые точки по очереди: переданное initial, линейное приближение
    (linear_initialization), горизонтальное приближение (initialize_state).
    От каждой: совместное уточнение пяти параметров (если включено), затем
    попеременная минимизация по блоку сдвига {X_F, Z_F, h_C} и блоку поворота
    {theta, phi} до относительного изменения стоимости меньше ftol или
    max_outer_alternations. Перебор стартов заканчивается на первом решении,
    которое сошлось и у которого среднеквадратичная невязка точки не больше
    cauchy_scale; иначе возвращается решение с наименьшей стоимостью.

    Args:
        obs: четырёхточечное наблюдение
        heights: откалиброванные высоты суставов
        weights: веса точек
        config: настройки решателя
        nominal_h_c: номинальная высота камеры для горизонтального приближения
        initial: дополнительное начальное приближение, проверяется первым

    Returns:
        LocalizationResult; если ни один старт не сошёлся с малой невязкой -
        converged=False с лучшим найденным состоянием
    """
    weights = weights or WeightConfig()
    config = config or SolverConfig()
    started = time.perf_counter()

    usable = int(np.count_nonzero(obs.visible & (weights.as_array() > 0)))
    if usable < MIN_VISIBLE_POINTS:
        raise InsufficientObservations(
            f"кадр {obs.frame_id}, человек {obs.person_id}: видимых точек {usable}, нужно не меньше {MIN_VISIBLE_POINTS}"
        )

    starts = [] if initial is None else [initial]
    if config.linear_start:
        linear = linear_initialization(obs, heights, weights, config)
        if linear is not None:
            starts.append(linear)
    starts.append(initialize_state(obs, heights, nominal_h_c, config))

    lower, upper = config.bounds.as_arrays()
    problem = _ReprojectionProblem(obs, heights, weights)
    loss = CauchyLoss(config.cauchy_scale)

    def total_cost(vector: np.ndarray) -> float:
        residuals = problem.residuals(vector)
        if not np.all(np.isfinite(residuals)):
            return float("inf")
        rho, _, _ = loss(np.sum(residuals.reshape(-1, 2) ** 2, axis=1))
        return float(np.sum(rho))

    def fits(vector: np.ndarray) -> bool:
        squared = np.sum(problem.residuals(vector).reshape(-1, 2) ** 2, axis=1)
        return bool(np.sqrt(np.mean(squared)) <= config.cauchy_scale)

    best: Optional[_Candidate] = None
    iterations = 0
    for start in starts:
        x0 = clamp_inward(start.as_vector(), lower, upper)
        if not np.isfinite(total_cost(x0)):
            continue
        candidate = _solve_from(problem, x0, loss, config, total_cost)
        candidate.converged = candidate.converged and fits(candidate.x)
        iterations += candidate.iterations
        if best is None or candidate.cost < best.cost:
            best = candidate
        if candidate.converged:
            best = candidate
            break
        logger.debug("кадр %s: старт %s не дал решения (стоимость %.3e)", obs.frame_id, start, candidate.cost)

    if best is None:
        raise DegenerateObservation("начальное приближение выводит точки модели за камеру")

    residuals = problem.residuals(best.x)
    norms = np.full(4, np.nan)
    norms[problem.mask] = np.linalg.norm(residuals.reshape(-1, 2), axis=1)

    elapsed = time.perf_counter() - started
    if not best.converged:
        logger.info("кадр %s, человек %s: решатель не сошёлся (стоимость %.3e)", obs.frame_id, obs.person_id, best.cost)

    return LocalizationResult(
        state=PoseState.from_vector(best.x),
        final_cost=best.cost,
        per_point_residual_norms=norms,
        converged=best.converged,
        iterations_used=iterations,
        outer_iterations=best.outer,
        elapsed_s=elapsed,
        frame_id=obs.frame_id,
        timestamp=obs.timestamp,
        person_id=obs.person_id,
    )


if __name__ == "__main__":
    heights = JointHeights(neck=1.5, hip=1.0, knee=0.5, ankle=0.1)
    truth = PoseState.from_degrees(0.8, 4.0, 0.55, theta_deg=10.0, phi_deg=-5.0)
    obs = forward_project(truth, heights)
    result = solve_localization(obs, heights)
    s = result.state
    print(f"Истинное:   X={truth.x_f:.3f} Z={truth.z_f:.3f} h={truth.h_c:.3f} "
          f"theta={truth.theta_deg:.2f} phi={truth.phi_deg:.2f}")
    print(f"Оценка:     X={s.x_f:.3f} Z={s.z_f:.3f} h={s.h_c:.3f} "
          f"theta={s.theta_deg:.2f} phi={s.phi_deg:.2f}")
    print(f"Стоимость:  {result.final_cost:.3e}, итераций {result.iterations_used}, {result.elapsed_s * 1000:.2f} мс")
