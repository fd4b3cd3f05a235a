"""
Наблюдения: чтение покадровых 2D-суставов и сведение их к четырёхточечной модели.

Точки модели: шея, центр бёдер, центр коленей, центр лодыжек. Центр пары
левый/правый берётся как медиана (для двух значений - середина), затем
пиксели переводятся на нормализованную плоскость изображения.
"""

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple, Type, TypeVar, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from person_locator.camera_models import CameraModel, NormalizedPoint, back_project, DEFAULT_MAX_NORMALIZED
from person_locator.config import JOINT_NAMES
from person_locator.errors import (
    BehindCamera,
    DistortionDivergence,
    FrameParseError,
    FrameSchemaError,
    InputMissing,
    NoVisiblePoints,
    OutOfBounds,
)

logger = logging.getLogger(__name__)

DEFAULT_CONFIDENCE_THRESHOLD = 0.3

# Пары суставов, из которых строятся центры бёдер, коленей и лодыжек
JOINT_PAIRS = {
    "hip": ("left_hip", "right_hip"),
    "knee": ("left_knee", "right_knee"),
    "ankle": ("left_ankle", "right_ankle"),
}
SHOULDER_PAIR = ("left_shoulder", "right_shoulder")

RecordT = TypeVar("RecordT", bound=BaseModel)


class RawJointFrame(BaseModel):
    """Сырые 2D-суставы одного человека в одном кадре (выход детектора)."""

    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    frame_id: int = Field(alias="frame")
    timestamp: float = Field(alias="t")
    person_id: int = Field(alias="person")
    joints: Dict[str, Tuple[float, float, float]]

    @field_validator("joints")
    @classmethod
    def _check_joints(cls, joints: Dict[str, Tuple[float, float, float]]):
        for name, (u, v, confidence) in joints.items():
            if not (math.isfinite(u) and math.isfinite(v)):
                raise ValueError(f"{name}: координаты должны быть конечными")
            if not 0.0 <= confidence <= 1.0:
                raise ValueError(f"{name}: уверенность должна лежать в [0, 1]")
        return joints


class GroundTruthRecord(BaseModel):
    """Эталон: положение таза в системе камеры или только дальность (UWB)."""

    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    frame_id: int = Field(alias="frame")
    person_id: int = Field(alias="person")
    pelvis_xyz: Optional[Tuple[float, float, float]] = None
    distance: Optional[float] = Field(default=None, ge=0)

    @model_validator(mode="after")
    def _check_payload(self) -> "GroundTruthRecord":
        if (self.pelvis_xyz is None) == (self.distance is None):
            raise ValueError("нужно ровно одно из полей pelvis_xyz или distance")
        return self

    @property
    def true_distance(self) -> float:
        if self.distance is not None:
            return self.distance
        return float(np.linalg.norm(self.pelvis_xyz))


@dataclass(frozen=True, eq=False)
class FourPointObservation:
    """
    Измерения четырёх точек на нормализованной плоскости.

    Attributes:
        points: массив (4, 2) в порядке шея, бёдра, колени, лодыжки; NaN для невидимых
        visible: массив (4,) флагов видимости
    """

    points: np.ndarray
    visible: np.ndarray
    frame_id: int = 0
    timestamp: float = 0.0
    person_id: int = 0

    def __post_init__(self):
        points = np.array(self.points, dtype=float).reshape(4, 2)
        visible = np.array(self.visible, dtype=bool).reshape(4)
        if not visible.any():
            raise NoVisiblePoints(f"кадр {self.frame_id}, человек {self.person_id}: нет видимых точек")
        if not np.all(np.isfinite(points[visible])):
            raise ValueError("видимые точки должны иметь конечные координаты")
        points[~visible] = np.nan
        points.setflags(write=False)
        visible.setflags(write=False)
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "visible", visible)

    @classmethod
    def from_points(cls, points, visible=None, **meta) -> "FourPointObservation":
        points = np.asarray(points, dtype=float).reshape(4, 2)
        if visible is None:
            visible = np.isfinite(points).all(axis=1)
        return cls(points=points, visible=visible, **meta)

    @property
    def visible_count(self) -> int:
        return int(self.visible.sum())

    @property
    def is_ordered(self) -> bool:
        """Флаг физически правдоподобного прямостоящего наблюдения: y строго растёт от шеи к лодыжкам."""
        if not self.visible.all():
            return False
        return bool(np.all(np.diff(self.points[:, 1]) > 0))

    def point(self, name: str) -> Optional[NormalizedPoint]:
        index = JOINT_NAMES.index(name)
        if not self.visible[index]:
            return None
        return NormalizedPoint(*self.points[index])

    def without(self, *names: str) -> "FourPointObservation":
        """Копия наблюдения со скрытыми точками."""
        visible = self.visible.copy()
        for name in names:
            visible[JOINT_NAMES.index(name)] = False
        return FourPointObservation(
            points=self.points.copy(), visible=visible,
            frame_id=self.frame_id, timestamp=self.timestamp, person_id=self.person_id,
        )


def _confident(joints: Dict[str, Tuple[float, float, float]], name: str, threshold: float) -> Optional[np.ndarray]:
    joint = joints.get(name)
    if joint is None or joint[2] <= threshold:
        return None
    return np.array(joint[:2], dtype=float)


def _pair_pixel(joints, left: str, right: str, threshold: float, allow_single: bool = True) -> Optional[np.ndarray]:
    """Центр пары суставов: медиана двух сторон или одна сторона при частичной окклюзии."""
    sides = [p for p in (_confident(joints, left, threshold), _confident(joints, right, threshold)) if p is not None]
    if len(sides) == 2:
        return np.median(np.stack(sides), axis=0)
    if len(sides) == 1 and allow_single:
        return sides[0]
    return None


def four_point_pixels(frame: RawJointFrame, confidence_threshold: float = DEFAULT_CONFIDENCE_THRESHOLD) -> np.ndarray:
    """
    Пиксельные координаты четырёх точек модели.

    Returns:
        массив (4, 2); для невидимых точек - NaN
    """
    pixels = np.full((4, 2), np.nan)

    neck = _confident(frame.joints, "neck", confidence_threshold)
    if neck is None:
        neck = _pair_pixel(frame.joints, *SHOULDER_PAIR, confidence_threshold, allow_single=False)
    if neck is not None:
        pixels[0] = neck

    for index, name in enumerate(JOINT_NAMES[1:], start=1):
        center = _pair_pixel(frame.joints, *JOINT_PAIRS[name], confidence_threshold)
        if center is not None:
            pixels[index] = center
    return pixels


def reduce_to_four_points(frame: RawJointFrame,
                          camera: CameraModel,
                          confidence_threshold: float = DEFAULT_CONFIDENCE_THRESHOLD,
                          max_normalized: float = DEFAULT_MAX_NORMALIZED) -> FourPointObservation:
    """
    Сведение сырых суставов к четырёхточечному наблюдению на нормализованной плоскости.

    Args:
        frame: суставы одного человека в кадре
        camera: модель камеры
        confidence_threshold: порог уверенности детектора
        max_normalized: допустимый модуль нормализованных координат

    Returns:
        наблюдение FourPointObservation
    """
    pixels = four_point_pixels(frame, confidence_threshold)
    points = np.full((4, 2), np.nan)
    visible = np.zeros(4, dtype=bool)

    for index, pixel in enumerate(pixels):
        if not np.all(np.isfinite(pixel)):
            continue
        try:
            points[index] = back_project(camera, pixel, max_normalized)
            visible[index] = True
        except (BehindCamera, OutOfBounds, DistortionDivergence) as e:
            logger.debug("кадр %s, точка %s скрыта: %s", frame.frame_id, JOINT_NAMES[index], e)

    if not visible.any():
        raise NoVisiblePoints(f"кадр {frame.frame_id}, человек {frame.person_id}: нет видимых точек")

    return FourPointObservation(
        points=points, visible=visible,
        frame_id=frame.frame_id, timestamp=frame.timestamp, person_id=frame.person_id,
    )


def _read_jsonl(path: Union[str, Path], model: Type[RecordT]) -> Iterator[RecordT]:
    path = Path(path)
    if not path.exists():
        raise InputMissing(f"Файл {path} не найден")

    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise FrameParseError(str(path), line_no, e.msg)

            if not isinstance(record, dict):
                raise FrameSchemaError(str(path), line_no, "<root>", "ожидается JSON-объект")
            # Заголовок воспроизводимости
            if set(record) == {"_meta"}:
                continue

            try:
                yield model.model_validate(record)
            except ValidationError as e:
                first = e.errors()[0]
                field = ".".join(str(part) for part in first["loc"]) or "<root>"
                raise FrameSchemaError(str(path), line_no, field, first["msg"])


def load_frames(path: Union[str, Path]) -> List[RawJointFrame]:
    """
    Загрузка кадров из файла JSON-lines.

    Args:
        path: путь к файлу; одна строка - один человек в одном кадре

    Returns:
        список кадров в порядке файла
    """
    frames = list(_read_jsonl(path, RawJointFrame))
    logger.info("[+] Загружено %d записей суставов из %s", len(frames), path)
    return frames


def load_ground_truth(path: Union[str, Path]) -> List[GroundTruthRecord]:
    """Загрузка эталона (положение таза или дальность) из файла JSON-lines."""
    records = list(_read_jsonl(path, GroundTruthRecord))
    logger.info("[+] Загружено %d эталонных записей из %s", len(records), path)
    return records


def _dump_jsonl(records: Sequence[BaseModel], path: Union[str, Path], meta: Optional[Dict[str, Any]]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        if meta is not None:
            f.write(json.dumps({"_meta": meta}, sort_keys=True) + "\n")
        for record in records:
            payload = record.model_dump(by_alias=True, exclude_none=True)
            f.write(json.dumps(payload, separators=(",", ":")) + "\n")


def dump_frames(frames: Sequence[RawJointFrame], path: Union[str, Path], meta: Optional[Dict[str, Any]] = None) -> None:
    """Запись кадров в JSON-lines (с необязательным заголовком воспроизводимости)."""
    _dump_jsonl(frames, path, meta)


def dump_ground_truth(records: Sequence[GroundTruthRecord], path: Union[str, Path],
                      meta: Optional[Dict[str, Any]] = None) -> None:
    """Запись эталона в JSON-lines."""
    _dump_jsonl(records, path, meta)
