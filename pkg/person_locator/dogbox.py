"""
Dogbox: метод доверительной области dogleg с прямоугольной областью для
нелинейных наименьших квадратов с ограничениями-коробками.

Переменные, прижатые к границе, у которых градиент выталкивает наружу,
исключаются из подпространства шага. Робастная функция потерь учитывается
масштабированием невязок и строк якобиана (IRLS) по группам невязок.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np
from scipy.linalg import lstsq

from person_locator.config import SolverConfig
from person_locator.errors import SingularNormalEquations

logger = logging.getLogger(__name__)

INWARD_FRACTION = 1e-9
MIN_GAIN_RATIO = 1e-4

STATUS_MESSAGES = {
    0: "исчерпан лимит итераций",
    1: "норма проекции градиента меньше gtol",
    2: "относительное изменение стоимости меньше ftol",
    3: "норма шага меньше xtol",
    4: "выполнены ftol и xtol",
}


class CauchyLoss:
    """
    Функция потерь Коши rho(s) = c^2 * ln(1 + s / c^2) от квадрата нормы невязки.

    Args:
        scale: масштаб c (в единицах нормализованной плоскости)
    """

    def __init__(self, scale: float):
        if scale <= 0:
            raise ValueError("масштаб функции Коши должен быть положительным")
        self.scale = scale
        self.c2 = scale * scale

    def __call__(self, s: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        Returns:
            rho(s), rho'(s), rho''(s)
        """
        s = np.asarray(s, dtype=float)
        z = s / self.c2
        rho = self.c2 * np.log1p(z)
        drho = 1.0 / (1.0 + z)
        d2rho = -drho * drho / self.c2
        return rho, drho, d2rho


@dataclass
class DogboxReport:
    x: np.ndarray
    cost: float
    status: int
    iterations: int
    accepted_steps: int
    cost_history: List[float] = field(default_factory=list)
    x_history: List[np.ndarray] = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.status > 0

    @property
    def message(self) -> str:
        return STATUS_MESSAGES[self.status]


def _robust_terms(f: np.ndarray, loss: Optional[CauchyLoss], group_size: int) -> Tuple[float, np.ndarray]:
    """Стоимость 0.5 * sum(rho) и корни весов IRLS для каждой невязки."""
    if loss is None:
        return 0.5 * float(np.dot(f, f)), np.ones_like(f)
    s = np.sum(f.reshape(-1, group_size) ** 2, axis=1)
    rho, drho, _ = loss(s)
    return 0.5 * float(np.sum(rho)), np.repeat(np.sqrt(drho), group_size)


def _step_size_to_bound(x: np.ndarray, s: np.ndarray, lb: np.ndarray, ub: np.ndarray) -> Tuple[float, np.ndarray]:
    """Наибольший шаг вдоль s до ближайшей границы и признаки задетых границ."""
    non_zero = np.nonzero(s)
    steps = np.full_like(x, np.inf)
    with np.errstate(over="ignore", invalid="ignore"):
        steps[non_zero] = np.maximum((lb - x)[non_zero] / s[non_zero], (ub - x)[non_zero] / s[non_zero])
    min_step = float(np.min(steps)) if steps.size else np.inf
    return min_step, np.equal(steps, min_step) * np.sign(s).astype(int)


def _minimize_quadratic_1d(a: float, b: float, lb: float, ub: float) -> float:
    """Минимум a*t^2 + b*t на отрезке [lb, ub]."""
    candidates = [lb, ub]
    if a != 0:
        extremum = -0.5 * b / a
        if lb < extremum < ub:
            candidates.append(extremum)
    candidates = np.asarray(candidates)
    values = candidates * (a * candidates + b)
    return float(candidates[np.argmin(values)])


def _dogleg_step(x, newton_step, g, a, b, radius, lb, ub):
    """
    Шаг dogleg в пересечении доверительной области с допустимой коробкой.

    Returns:
        шаг, признаки попадания на исходные границы (-1/0/1), признак касания области доверия
    """
    lb_centered = lb - x
    ub_centered = ub - x
    lb_total = np.maximum(lb_centered, -radius)
    ub_total = np.minimum(ub_centered, radius)
    orig_l = np.equal(lb_total, lb_centered)
    orig_u = np.equal(ub_total, ub_centered)
    tr_l = np.equal(lb_total, -radius)
    tr_u = np.equal(ub_total, radius)

    bound_hits = np.zeros_like(x, dtype=int)
    if newton_step is not None and np.all((newton_step >= lb_total) & (newton_step <= ub_total)):
        return newton_step, bound_hits, False

    to_bounds, cauchy_hits = _step_size_to_bound(np.zeros_like(x), -g, lb_total, ub_total)
    t = _minimize_quadratic_1d(a, b, 0.0, to_bounds)
    cauchy_step = -t * g

    if newton_step is None:
        if t == to_bounds:
            bound_hits[(cauchy_hits < 0) & orig_l] = -1
            bound_hits[(cauchy_hits > 0) & orig_u] = 1
            tr_hit = bool(np.any(((cauchy_hits < 0) & tr_l) | ((cauchy_hits > 0) & tr_u)))
        else:
            tr_hit = False
        return cauchy_step, bound_hits, tr_hit

    step_diff = newton_step - cauchy_step
    step_size, hits = _step_size_to_bound(cauchy_step, step_diff, lb_total, ub_total)
    bound_hits[(hits < 0) & orig_l] = -1
    bound_hits[(hits > 0) & orig_u] = 1
    tr_hit = bool(np.any(((hits < 0) & tr_l) | ((hits > 0) & tr_u)))
    return cauchy_step + step_size * step_diff, bound_hits, tr_hit


def _update_radius(radius: float, actual: float, predicted: float, step_norm: float, bound_hit: bool):
    if predicted > 0:
        ratio = actual / predicted
    elif predicted == actual == 0:
        ratio = 1.0
    else:
        ratio = 0.0

    if ratio < 0.25:
        radius = 0.25 * step_norm
    elif ratio > 0.75 and bound_hit:
        radius *= 2.0
    return radius, ratio


def _check_termination(d_cost: float, cost: float, step_norm: float, x_norm: float,
                       ratio: float, ftol: float, xtol: float) -> Optional[int]:
    ftol_satisfied = d_cost < ftol * cost and ratio > 0.25
    xtol_satisfied = step_norm < xtol * (xtol + x_norm)
    if ftol_satisfied and xtol_satisfied:
        return 4
    if ftol_satisfied:
        return 2
    if xtol_satisfied:
        return 3
    return None


def clamp_inward(x0: np.ndarray, lower: np.ndarray, upper: np.ndarray) -> np.ndarray:
    """Сдвиг начальной точки строго внутрь коробки на долю 1e-9 ширины диапазона."""
    x = np.array(x0, dtype=float)
    span = upper - lower
    finite_span = np.isfinite(span)
    margin = np.where(finite_span, INWARD_FRACTION * span, INWARD_FRACTION * np.maximum(1.0, np.abs(x)))
    low_side = x <= lower
    high_side = x >= upper
    x[low_side] = (lower + margin)[low_side]
    x[high_side] = (upper - margin)[high_side]
    return x


def dogbox_minimize(fun: Callable[[np.ndarray], np.ndarray],
                    jac: Callable[[np.ndarray], np.ndarray],
                    x0,
                    bounds: Tuple[np.ndarray, np.ndarray],
                    config: Optional[SolverConfig] = None,
                    loss: Optional[CauchyLoss] = None,
                    group_size: int = 1,
                    max_iterations: Optional[int] = None) -> DogboxReport:
    """
    Минимизация 0.5 * sum(rho(||f_g(x)||^2)) по группам невязок при ограничениях lb <= x <= ub.

    Args:
        fun: невязки f(x); неконечные значения считаются бесконечной стоимостью (шаг отвергается)
        jac: якобиан невязок (m x n) без учёта функции потерь
        x0: начальная точка
        bounds: пара массивов (lb, ub), допускаются бесконечности
        config: допуски и лимиты (ftol, xtol, gtol, max_inner_iterations, initial_trust_radius)
        loss: робастная функция потерь; None - квадратичная
        group_size: размер группы невязок под одной функцией потерь
        max_iterations: лимит пробных шагов вместо config.max_inner_iterations

    Returns:
        отчёт о сходимости с найденной точкой
    """
    config = config or SolverConfig()
    lb = np.asarray(bounds[0], dtype=float)
    ub = np.asarray(bounds[1], dtype=float)
    if np.any(lb >= ub):
        raise ValueError("каждая нижняя граница должна быть меньше верхней")
    max_iter = max_iterations if max_iterations is not None else config.max_inner_iterations

    x = clamp_inward(np.asarray(x0, dtype=float), lb, ub)
    f = np.asarray(fun(x), dtype=float)
    if not np.all(np.isfinite(f)):
        raise ValueError("невязки в начальной точке не конечны")

    cost, weights = _robust_terms(f, loss, group_size)
    J = np.asarray(jac(x), dtype=float) * weights[:, None]
    fs = f * weights
    g = J.T @ fs

    radius = config.initial_trust_radius or (float(np.linalg.norm(x, ord=np.inf)) or 1.0)
    on_bound = np.zeros_like(x, dtype=int)
    on_bound[np.equal(x, lb)] = -1
    on_bound[np.equal(x, ub)] = 1

    status: Optional[int] = None
    iterations = 0
    accepted = 0
    cost_history = [cost]
    x_history = [x.copy()]

    while True:
        active = on_bound * g < 0
        free = ~active
        g_free = g[free]
        g_projected = g.copy()
        g_projected[active] = 0.0

        if np.linalg.norm(g_projected, ord=np.inf) < config.gtol:
            status = 1
        if status is not None or iterations >= max_iter:
            break

        x_free = x[free]
        lb_free = lb[free]
        ub_free = ub[free]
        J_free = J[:, free]

        newton_step, _, rank, _ = lstsq(J_free, -fs)
        rank_deficient = rank < int(free.sum())
        if rank_deficient:
            logger.debug("dogbox: вырожденная система Гаусса-Ньютона (ранг %d), шаг наискорейшего спуска", rank)
            newton_step = None

        v = J_free @ g_free
        a = 0.5 * float(np.dot(v, v))
        b = -float(np.dot(g_free, g_free))

        accepted_step = False
        step = np.zeros_like(x)
        while not accepted_step and iterations < max_iter:
            step_free, on_bound_free, tr_hit = _dogleg_step(x_free, newton_step, g_free, a, b, radius, lb_free, ub_free)
            step.fill(0.0)
            step[free] = step_free

            Js = J_free @ step_free
            predicted_reduction = -(0.5 * float(np.dot(Js, Js)) + float(np.dot(g_free, step_free)))

            x_new = np.clip(x + step, lb, ub)
            f_new = np.asarray(fun(x_new), dtype=float)
            iterations += 1

            step_h_norm = float(np.linalg.norm(step, ord=np.inf))
            if not np.all(np.isfinite(f_new)):
                # Бесконечная стоимость: сжимаем область доверия
                radius = 0.25 * step_h_norm
                continue

            cost_new, _ = _robust_terms(f_new, loss, group_size)
            actual_reduction = cost - cost_new
            radius, ratio = _update_radius(radius, actual_reduction, predicted_reduction, step_h_norm, tr_hit)
            # Шаг принимается только при заметном согласии с квадратичной моделью
            accepted_step = actual_reduction > 0 and ratio > MIN_GAIN_RATIO

            step_norm = float(np.linalg.norm(step))
            status = _check_termination(actual_reduction, cost, step_norm, float(np.linalg.norm(x)),
                                        ratio, config.ftol, config.xtol)
            if status is not None:
                break

        if accepted_step:
            on_bound[free] = on_bound_free
            x = x_new
            x[on_bound == -1] = lb[on_bound == -1]
            x[on_bound == 1] = ub[on_bound == 1]
            f = f_new
            cost, weights = _robust_terms(f, loss, group_size)
            J = np.asarray(jac(x), dtype=float) * weights[:, None]
            fs = f * weights
            g = J.T @ fs
            accepted += 1
            cost_history.append(cost)
            x_history.append(x.copy())
            logger.debug("dogbox: итерация %d, стоимость %.3e, радиус %.3e", iterations, cost, radius)
        elif rank_deficient and status == 3:
            raise SingularNormalEquations(
                "система Гаусса-Ньютона вырождена, а шаг наискорейшего спуска не уменьшает стоимость"
            )

    if status is None:
        status = 0

    return DogboxReport(
        x=x,
        cost=cost,
        status=status,
        iterations=iterations,
        accepted_steps=accepted,
        cost_history=cost_history,
        x_history=x_history,
    )
