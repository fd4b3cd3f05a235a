"""
Конфигурация person_locator.
Pydantic-модели всех настроек запуска, загрузка TOML/JSON и переменных окружения.

Все значения по умолчанию собраны здесь, в одном месте; файл
data/run_config.toml повторяет их как пример.
"""

import hashlib
import json
import os
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Any, Dict, Literal, Optional, Tuple, Type, TypeVar, Union

import numpy as np
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from person_locator.errors import ConfigInvalid, ConfigMissing

JOINT_NAMES = ("neck", "hip", "knee", "ankle")

ModelT = TypeVar("ModelT", bound=BaseModel)


def load_environment() -> None:
    """Загрузка переменных окружения из .env (корень проекта или текущая директория)."""
    env_path = Path(__file__).parent.parent / ".env"
    if env_path.exists():
        load_dotenv(env_path)
    else:
        load_dotenv()


class StrictModel(BaseModel):
    """Базовая модель: неизвестные поля запрещены."""

    model_config = ConfigDict(extra="forbid", populate_by_name=True)


class JointHeights(StrictModel):
    """Высоты четырёх точек модели человека над следом F, в метрах."""

    h_neck: float = Field(alias="neck")
    h_hip: float = Field(alias="hip")
    h_knee: float = Field(alias="knee")
    h_ankle: float = Field(alias="ankle")

    @model_validator(mode="after")
    def _check_order(self) -> "JointHeights":
        if not (self.h_neck > self.h_hip > self.h_knee > self.h_ankle >= 0.0):
            raise ValueError("требуется h_neck > h_hip > h_knee > h_ankle >= 0")
        return self

    def as_array(self) -> np.ndarray:
        return np.array([self.h_neck, self.h_hip, self.h_knee, self.h_ankle], dtype=float)

    @classmethod
    def from_array(cls, values) -> "JointHeights":
        neck, hip, knee, ankle = (float(v) for v in values)
        return cls(h_neck=neck, h_hip=hip, h_knee=knee, h_ankle=ankle)


class WeightConfig(StrictModel):
    """Веса точек в ошибке репроекции (подвижным точкам - меньший вес)."""

    w_neck: float = 1.0
    w_hip: float = 1.0
    w_knee: float = 0.7
    w_ankle: float = 0.5

    @model_validator(mode="after")
    def _check_weights(self) -> "WeightConfig":
        weights = self.as_array()
        if np.any(weights < 0):
            raise ValueError("веса должны быть неотрицательными")
        if np.count_nonzero(weights > 0) < 3:
            raise ValueError("нужно как минимум три положительных веса")
        return self

    def as_array(self) -> np.ndarray:
        return np.array([self.w_neck, self.w_hip, self.w_knee, self.w_ankle], dtype=float)


Interval = Tuple[float, float]


class SolverBounds(StrictModel):
    """Границы компонент состояния; углы задаются в градусах."""

    x_f: Interval = (-30.0, 30.0)
    z_f: Interval = (0.3, 30.0)
    h_c: Interval = (0.2, 1.2)
    theta_deg: Interval = (-45.0, 45.0)
    phi_deg: Interval = (-45.0, 45.0)

    @model_validator(mode="after")
    def _check_intervals(self) -> "SolverBounds":
        for name in ("x_f", "z_f", "h_c", "theta_deg", "phi_deg"):
            low, high = getattr(self, name)
            if not low < high:
                raise ValueError(f"{name}: нижняя граница должна быть меньше верхней")
        if self.z_f[0] <= 0 or self.h_c[0] <= 0:
            raise ValueError("границы Z_F и h_C должны быть положительными")
        return self

    def as_arrays(self) -> Tuple[np.ndarray, np.ndarray]:
        """Границы в порядке (X_F, Z_F, h_C, theta, phi), углы в радианах."""
        lower = np.array([
            self.x_f[0], self.z_f[0], self.h_c[0],
            np.deg2rad(self.theta_deg[0]), np.deg2rad(self.phi_deg[0]),
        ])
        upper = np.array([
            self.x_f[1], self.z_f[1], self.h_c[1],
            np.deg2rad(self.theta_deg[1]), np.deg2rad(self.phi_deg[1]),
        ])
        return lower, upper


class SolverConfig(StrictModel):
    """Настройки ограниченного dogleg-решателя и схемы чередования блоков."""

    bounds: SolverBounds = Field(default_factory=SolverBounds)
    cauchy_scale: float = Field(default=0.01, gt=0)
    ftol: float = Field(default=1e-8, gt=0)
    xtol: float = Field(default=1e-8, gt=0)
    gtol: float = Field(default=1e-8, gt=0)
    max_inner_iterations: int = Field(default=50, ge=1)
    max_outer_alternations: int = Field(default=10, ge=1)
    initial_trust_radius: Optional[float] = Field(default=1.0, gt=0)
    # Старт из линейной системы по всем видимым точкам (кроме горизонтального старта)
    linear_start: bool = True
    joint_refinement: bool = True
    max_refinement_iterations: int = Field(default=100, ge=1)


class ObservationConfig(StrictModel):
    confidence_threshold: float = Field(default=0.3, ge=0.0, le=1.0)
    max_normalized: float = Field(default=20.0, gt=0)


class CalibrationConfig(StrictModel):
    """Статическая поза камеры на этапе калибровки и якорь калибровки."""

    theta_deg: float = 0.0
    phi_deg: float = 0.0
    h_c: float = Field(default=0.5, gt=0)
    anchor_joint: Literal["neck", "hip", "knee", "ankle"] = "ankle"
    anchor_height: float = Field(default=0.10, ge=0)
    # Если задано, якорем служит дальность следа в первом кадре, а все высоты свободны
    known_distance: Optional[float] = Field(default=None, gt=0)
    warn_condition: float = Field(default=1e6, gt=0)


class TrackerConfig(StrictModel):
    process_noise_accel: float = Field(default=2.0, ge=0)
    measurement_noise: float = Field(default=0.01, gt=0)
    gate_radius: float = Field(default=1.0, gt=0)
    miss_limit: int = Field(default=15, ge=0)
    confirm_hits: int = Field(default=3, ge=1)
    initial_velocity_std: float = Field(default=2.0, gt=0)


class RunConfig(StrictModel):
    """Полная конфигурация запуска."""

    observation: ObservationConfig = Field(default_factory=ObservationConfig)
    solver: SolverConfig = Field(default_factory=SolverConfig)
    weights: WeightConfig = Field(default_factory=WeightConfig)
    calibration: CalibrationConfig = Field(default_factory=CalibrationConfig)
    tracker: TrackerConfig = Field(default_factory=TrackerConfig)
    nominal_h_c: float = Field(default=0.5, gt=0)


class PersonProfile(StrictModel):
    """Профиль человека: результат калибровки высот."""

    person: int
    heights: JointHeights
    meta: Optional[Dict[str, Any]] = Field(default=None, alias="_meta")

    @field_validator("person")
    @classmethod
    def _check_person(cls, value: int) -> int:
        if value < 0:
            raise ValueError("идентификатор человека должен быть неотрицательным")
        return value


def load_config_file(path: Union[str, Path]) -> Dict[str, Any]:
    """
    Чтение файла конфигурации TOML или JSON.

    Args:
        path: путь к файлу (.toml или .json)

    Returns:
        словарь с содержимым файла
    """
    path = Path(path)
    if not path.exists():
        raise ConfigMissing(f"Файл конфигурации {path} не найден")

    try:
        if path.suffix.lower() == ".json":
            with open(path, "r", encoding="utf-8") as f:
                data = json.load(f)
        else:
            with open(path, "rb") as f:
                data = tomllib.load(f)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError, UnicodeDecodeError) as e:
        raise ConfigInvalid(f"{path}: файл не разбирается: {e}")

    if not isinstance(data, dict):
        raise ConfigInvalid(f"{path}: ожидается объект верхнего уровня")
    return data


def validate_model(model_cls: Type[ModelT], data: Dict[str, Any], source: str) -> ModelT:
    """
    Проверка словаря по pydantic-модели с понятным сообщением об ошибке.

    Args:
        model_cls: класс модели
        data: исходные данные
        source: источник данных для сообщения (обычно путь к файлу)

    Returns:
        экземпляр модели
    """
    try:
        return model_cls.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        field = ".".join(str(part) for part in first["loc"]) or "<root>"
        raise ConfigInvalid(f"{source}: поле '{field}': {first['msg']}")


def load_run_config(path: Optional[Union[str, Path]] = None) -> RunConfig:
    """
    Загрузка конфигурации запуска.

    Если путь не указан, используется PERSON_LOCATOR_CONFIG из окружения,
    а при его отсутствии - значения по умолчанию.
    """
    if path is None:
        path = os.getenv("PERSON_LOCATOR_CONFIG")
    if not path:
        return RunConfig()
    return validate_model(RunConfig, load_config_file(path), str(path))


def load_profile(path: Union[str, Path]) -> PersonProfile:
    """Загрузка профиля человека (JSON)."""
    return validate_model(PersonProfile, load_config_file(path), str(path))


def config_hash(*parts: Union[BaseModel, Dict[str, Any], None]) -> str:
    """
    Хеш эффективной конфигурации для заголовка воспроизводимости.

    Args:
        parts: модели или словари, входящие в конфигурацию запуска

    Returns:
        SHA-256 канонического JSON
    """
    payload = []
    for part in parts:
        if isinstance(part, BaseModel):
            payload.append(part.model_dump(mode="json"))
        else:
            payload.append(part)
    normalized = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(normalized.encode()).hexdigest()
