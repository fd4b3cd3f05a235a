"""
Модели камер: перевод пикселей на нормализованную плоскость изображения и обратно.

Соглашение о системе координат камеры (единое для всего пакета):
x - вправо, y - вниз, z - вперёд по оптической оси. Направление "вверх"
для человека - это -y, что совпадает с V0 = (0, -1, 0).

Поддерживаются три геометрии:
- pinhole - радиально-тангенциальная дисторсия (k1, k2, p1, p2);
- fisheye - эквидистантная модель Kannala-Brandt (k1..k4);
- equirectangular - панорама: u -> долгота в [-pi, pi), v -> широта в [-pi/2, pi/2].

Все функции чистые и не имеют общего состояния.
"""

import math
from pathlib import Path
from typing import Literal, NamedTuple, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from person_locator.config import load_config_file, validate_model
from person_locator.errors import BehindCamera, DistortionDivergence, OutOfBounds

UNDISTORT_TOL = 1e-10
UNDISTORT_MAX_ITER = 20
DEFAULT_MAX_NORMALIZED = 20.0


class PixelPoint(NamedTuple):
    u: float
    v: float


class NormalizedPoint(NamedTuple):
    """Точка на плоскости z = 1 в системе камеры."""

    x: float
    y: float


class CameraFramePoint(NamedTuple):
    x: float
    y: float
    z: float


class CameraModel(BaseModel):
    """Внутренние параметры камеры и тип проекции."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    variant: Literal["pinhole", "fisheye", "equirectangular"]
    width: int = Field(ge=1)
    height: int = Field(ge=1)
    fx: Optional[float] = None
    fy: Optional[float] = None
    cx: Optional[float] = None
    cy: Optional[float] = None
    distortion: Tuple[float, ...] = ()

    @model_validator(mode="after")
    def _check_intrinsics(self) -> "CameraModel":
        intrinsics = {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy}
        if self.variant == "equirectangular":
            for name, value in intrinsics.items():
                if value is not None:
                    raise ValueError(f"параметр {name} не используется для equirectangular")
            if self.distortion:
                raise ValueError("дисторсия не используется для equirectangular")
            return self

        for name, value in intrinsics.items():
            if value is None:
                raise ValueError(f"для {self.variant} требуется параметр {name}")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("fx и fy должны быть положительными")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("главная точка должна лежать внутри изображения")
        if len(self.distortion) > 4:
            raise ValueError("ожидается не более 4 коэффициентов дисторсии")
        return self

    @property
    def coefficients(self) -> np.ndarray:
        """Коэффициенты дисторсии, дополненные нулями до четырёх."""
        coeffs = np.zeros(4)
        coeffs[:len(self.distortion)] = self.distortion
        return coeffs

    @classmethod
    def pinhole(cls, width: int, height: int, fx: float, fy: float, cx: float, cy: float,
                distortion=()) -> "CameraModel":
        return cls(variant="pinhole", width=width, height=height,
                   fx=fx, fy=fy, cx=cx, cy=cy, distortion=tuple(distortion))

    @classmethod
    def fisheye(cls, width: int, height: int, fx: float, fy: float, cx: float, cy: float,
                distortion=()) -> "CameraModel":
        return cls(variant="fisheye", width=width, height=height,
                   fx=fx, fy=fy, cx=cx, cy=cy, distortion=tuple(distortion))

    @classmethod
    def equirectangular(cls, width: int, height: int) -> "CameraModel":
        return cls(variant="equirectangular", width=width, height=height)


def load_camera(path: Union[str, Path]) -> CameraModel:
    """
    Загрузка модели камеры из файла TOML/JSON.

    Args:
        path: путь к файлу конфигурации камеры

    Returns:
        модель камеры; неизвестные поля отклоняются с указанием имени поля
    """
    return validate_model(CameraModel, load_config_file(path), str(path))


# --- Радиально-тангенциальная дисторсия ---

def _distort_radtan(x: float, y: float, coeffs: np.ndarray) -> Tuple[float, float]:
    k1, k2, p1, p2 = coeffs
    r2 = x * x + y * y
    radial = 1.0 + k1 * r2 + k2 * r2 * r2
    dx = 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x)
    dy = p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y
    return x * radial + dx, y * radial + dy


def _undistort_radtan(xd: float, yd: float, coeffs: np.ndarray) -> Tuple[float, float]:
    """Обращение дисторсии методом простой итерации."""
    k1, k2, p1, p2 = coeffs
    x, y = xd, yd
    for _ in range(UNDISTORT_MAX_ITER):
        r2 = x * x + y * y
        radial = 1.0 + k1 * r2 + k2 * r2 * r2
        if radial <= 0:
            break
        dx = 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x)
        dy = p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y
        x_new = (xd - dx) / radial
        y_new = (yd - dy) / radial
        if max(abs(x_new - x), abs(y_new - y)) < UNDISTORT_TOL:
            return x_new, y_new
        x, y = x_new, y_new
    raise DistortionDivergence(
        f"обращение дисторсии не сошлось за {UNDISTORT_MAX_ITER} итераций для ({xd:.6f}, {yd:.6f})"
    )


# --- Kannala-Brandt ---

def _kb_theta_d(theta: float, coeffs: np.ndarray) -> float:
    k1, k2, k3, k4 = coeffs
    t2 = theta * theta
    return theta * (1.0 + t2 * (k1 + t2 * (k2 + t2 * (k3 + t2 * k4))))


def _kb_solve_theta(theta_d: float, coeffs: np.ndarray) -> float:
    """Решение theta_d(theta) = theta_d методом Ньютона."""
    k1, k2, k3, k4 = coeffs
    theta = theta_d
    for _ in range(UNDISTORT_MAX_ITER):
        t2 = theta * theta
        residual = _kb_theta_d(theta, coeffs) - theta_d
        slope = 1.0 + t2 * (3 * k1 + t2 * (5 * k2 + t2 * (7 * k3 + t2 * 9 * k4)))
        if slope <= 0:
            break
        step = residual / slope
        theta -= step
        if abs(step) < UNDISTORT_TOL:
            if theta < 0:
                break
            return theta
    raise DistortionDivergence(f"обращение модели fisheye не сошлось для theta_d={theta_d:.6f}")


# --- Основные операции ---

def _check_pixel(camera: CameraModel, u: float, v: float) -> None:
    if not (math.isfinite(u) and math.isfinite(v)):
        raise OutOfBounds(f"пиксель ({u}, {v}) не конечен")
    if not (0.0 <= u <= camera.width and 0.0 <= v <= camera.height):
        raise OutOfBounds(f"пиксель ({u:.3f}, {v:.3f}) вне изображения {camera.width}x{camera.height}")


def back_project(camera: CameraModel, pixel, max_normalized: float = DEFAULT_MAX_NORMALIZED) -> NormalizedPoint:
    """
    Обратная проекция пикселя на нормализованную плоскость изображения.

    Args:
        camera: модель камеры
        pixel: пара (u, v) в пикселях
        max_normalized: допустимый модуль нормализованных координат

    Returns:
        точка (x, y), луч (x, y, 1) которой проецируется обратно в pixel
    """
    u, v = float(pixel[0]), float(pixel[1])
    _check_pixel(camera, u, v)

    if camera.variant == "pinhole":
        xd = (u - camera.cx) / camera.fx
        yd = (v - camera.cy) / camera.fy
        x, y = _undistort_radtan(xd, yd, camera.coefficients)
    elif camera.variant == "fisheye":
        xd = (u - camera.cx) / camera.fx
        yd = (v - camera.cy) / camera.fy
        theta_d = math.hypot(xd, yd)
        if theta_d < 1e-12:
            x, y = xd, yd
        else:
            theta = _kb_solve_theta(theta_d, camera.coefficients)
            if theta >= math.pi / 2:
                raise BehindCamera(f"луч пикселя ({u:.1f}, {v:.1f}) не направлен вперёд")
            scale = math.tan(theta) / theta_d
            x, y = xd * scale, yd * scale
    else:
        lon = (u - camera.width / 2.0) / camera.width * 2.0 * math.pi
        lat = (v - camera.height / 2.0) / camera.height * math.pi
        cos_lon = math.cos(lon)
        if cos_lon <= 0 or abs(lat) >= math.pi / 2:
            raise BehindCamera(f"луч пикселя ({u:.1f}, {v:.1f}) имеет z <= 0")
        x = math.tan(lon)
        y = math.tan(lat) / cos_lon

    if not (math.isfinite(x) and math.isfinite(y)) or max(abs(x), abs(y)) > max_normalized:
        raise BehindCamera(f"луч пикселя ({u:.1f}, {v:.1f}) почти параллелен плоскости изображения")
    return NormalizedPoint(x, y)


def project_to_pixel(camera: CameraModel, n) -> PixelPoint:
    """
    Прямая проекция нормализованной точки в пиксели.

    Args:
        camera: модель камеры
        n: пара (x, y) на плоскости z = 1

    Returns:
        пиксель (u, v)
    """
    x, y = float(n[0]), float(n[1])
    if not (math.isfinite(x) and math.isfinite(y)):
        raise OutOfBounds(f"нормализованная точка ({x}, {y}) не конечна")

    if camera.variant == "pinhole":
        xd, yd = _distort_radtan(x, y, camera.coefficients)
        u = camera.fx * xd + camera.cx
        v = camera.fy * yd + camera.cy
    elif camera.variant == "fisheye":
        r = math.hypot(x, y)
        if r < 1e-12:
            xd, yd = x, y
        else:
            scale = _kb_theta_d(math.atan(r), camera.coefficients) / r
            xd, yd = x * scale, y * scale
        u = camera.fx * xd + camera.cx
        v = camera.fy * yd + camera.cy
    else:
        lon = math.atan(x)
        lat = math.atan2(y, math.hypot(x, 1.0))
        u = lon / (2.0 * math.pi) * camera.width + camera.width / 2.0
        v = lat / math.pi * camera.height + camera.height / 2.0

    _check_pixel(camera, u, v)
    return PixelPoint(u, v)


def project_camera_point(p) -> NormalizedPoint:
    """
    Проекция pi: точка в системе камеры -> нормализованная плоскость.

    Общая для всех типов камер, так как оценивание ведётся на нормализованной плоскости.
    """
    x, y, z = float(p[0]), float(p[1]), float(p[2])
    if z <= 0:
        raise BehindCamera(f"точка ({x:.3f}, {y:.3f}, {z:.3f}) позади камеры")
    return NormalizedPoint(x / z, y / z)


def back_project_many(camera: CameraModel, pixels, max_normalized: float = DEFAULT_MAX_NORMALIZED) -> np.ndarray:
    """
    Пакетная обратная проекция.

    Returns:
        массив (N, 2); для пикселей без корректного луча - NaN
    """
    pixels = np.asarray(pixels, dtype=float).reshape(-1, 2)
    result = np.full(pixels.shape, np.nan)
    for i, pixel in enumerate(pixels):
        try:
            result[i] = back_project(camera, pixel, max_normalized)
        except (OutOfBounds, BehindCamera, DistortionDivergence):
            continue
    return result


def project_to_pixel_many(camera: CameraModel, points) -> np.ndarray:
    """
    Пакетная прямая проекция.

    Returns:
        массив (N, 2); для точек вне изображения - NaN
    """
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    result = np.full(points.shape, np.nan)
    for i, n in enumerate(points):
        try:
            result[i] = project_to_pixel(camera, n)
        except OutOfBounds:
            continue
    return result


if __name__ == "__main__":
    cam = CameraModel.pinhole(640, 480, 500.0, 500.0, 320.0, 240.0, distortion=(-0.1, 0.0, 0.0, 0.0))
    n = back_project(cam, (420.0, 240.0))
    print(f"Нормализованная точка: {n}")
    print(f"Обратно в пиксели:     {project_to_pixel(cam, n)}")

    pano = CameraModel.equirectangular(1280, 720)
    print(f"Центр панорамы:        {back_project(pano, (640.0, 360.0))}")
