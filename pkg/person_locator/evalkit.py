"""
Оценка качества локализации и генератор синтетических сцен.

Метрики:
- ALE / ADE - средняя ошибка положения таза / средняя ошибка дальности, м;
- VLE / VDE - дисперсии (по генеральной совокупности, деление на N)
  покадровых рядов этих ошибок, м^2.

Положение человека - таз (центр бёдер) в системе камеры, дальность - его L2-норма.

Генератор сцен - эталон для всех сквозных проверок: для каждого кадра
задаёт положение человека и движение камеры, строит проекцию модели,
переводит точки в пиксели, добавляет гауссов шум и пишет сырые суставы.
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import Field, model_validator

from person_locator import __version__
from person_locator.camera_models import CameraFramePoint, CameraModel, project_camera_point, project_to_pixel
from person_locator.config import JointHeights, SolverBounds, StrictModel
from person_locator.errors import BehindCamera, NoMatchedFrames, OutOfBounds, StateOutOfBounds
from person_locator.observation import (
    GroundTruthRecord,
    JOINT_PAIRS,
    SHOULDER_PAIR,
    RawJointFrame,
    dump_frames,
    dump_ground_truth,
)
from person_locator.pose_solver import PoseState, camera_frame_points, rotation_from_angles

logger = logging.getLogger(__name__)

PELVIS_COLUMNS = ["pelvis_x", "pelvis_y", "pelvis_z"]
TRUE_STATE_COLUMNS = [
    "frame", "t", "person", "X_F", "Z_F", "h_C", "theta_deg", "phi_deg",
    "pelvis_x", "pelvis_y", "pelvis_z", "distance",
]
HIP_INDEX = 1


# --- Таблицы с заголовком воспроизводимости ---

def header_line(meta: Dict[str, Any]) -> str:
    return f"# person_locator {meta.get('version', __version__)} config_hash={meta.get('config_hash', '')} seed={meta.get('seed')}"


def write_table(df: pd.DataFrame, path: Union[str, Path], meta: Optional[Dict[str, Any]] = None) -> None:
    """Запись CSV; первая строка - заголовок воспроизводимости."""
    with open(path, "w", encoding="utf-8", newline="") as f:
        if meta is not None:
            f.write(header_line(meta) + "\n")
        df.to_csv(f, index=False, float_format="%.10g", lineterminator="\n")


def read_table(path: Union[str, Path]) -> pd.DataFrame:
    """Чтение CSV, записанного write_table (строки-комментарии пропускаются)."""
    return pd.read_csv(path, comment="#")


# --- Метрики ---

def pelvis_location(state: PoseState, heights: JointHeights) -> CameraFramePoint:
    """
    Положение таза в системе камеры: P_hip = R^T * (X_F, h_C - h_hip, Z_F).

    Дальность до человека - L2-норма этой точки.
    """
    return CameraFramePoint(*camera_frame_points(state, heights)[HIP_INDEX])


@dataclass
class MetricReport:
    ade: float
    vde: float
    frame_count: int
    ale: Optional[float] = None
    vle: Optional[float] = None
    errors: pd.DataFrame = field(default_factory=pd.DataFrame)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "ale": self.ale,
            "ade": self.ade,
            "vle": self.vle,
            "vde": self.vde,
            "frame_count": self.frame_count,
        }


def ground_truth_table(records: Sequence[GroundTruthRecord]) -> pd.DataFrame:
    """Эталонные записи в виде таблицы frame, person, pelvis_x/y/z, distance."""
    rows = []
    for record in records:
        pelvis = record.pelvis_xyz or (np.nan, np.nan, np.nan)
        rows.append({
            "frame": record.frame_id,
            "person": record.person_id,
            "pelvis_x": pelvis[0],
            "pelvis_y": pelvis[1],
            "pelvis_z": pelvis[2],
            "distance": record.true_distance,
        })
    return pd.DataFrame(rows, columns=["frame", "person", *PELVIS_COLUMNS, "distance"])


def _distance_column(df: pd.DataFrame) -> pd.Series:
    if "distance" in df:
        return df["distance"]
    return pd.Series(np.linalg.norm(df[PELVIS_COLUMNS].to_numpy(dtype=float), axis=1), index=df.index)


def compute_metrics(estimates: pd.DataFrame,
                    ground_truth: Union[pd.DataFrame, Sequence[GroundTruthRecord]]) -> MetricReport:
    """
    Сопоставление оценок с эталоном по (frame, person) и расчёт ALE/ADE/VLE/VDE.

    Args:
        estimates: таблица с колонками frame, person и pelvis_x/y/z и/или distance;
                   строки без оценки (NaN) не участвуют
        ground_truth: таблица того же вида или записи GroundTruthRecord

    Returns:
        MetricReport; при эталоне только по дальности ALE и VLE отсутствуют
    """
    if not isinstance(ground_truth, pd.DataFrame):
        ground_truth = ground_truth_table(ground_truth)

    est = estimates.copy()
    gt = ground_truth.copy()
    for df in (est, gt):
        if "person" not in df:
            df["person"] = 0
        df["distance"] = _distance_column(df)

    est = est[np.isfinite(est["distance"].to_numpy(dtype=float))]
    merged = est.merge(gt, on=["frame", "person"], suffixes=("_est", "_gt"), how="inner")
    if merged.empty:
        raise NoMatchedFrames("нет кадров, общих для оценок и эталона")

    errors = pd.DataFrame({"frame": merged["frame"], "person": merged["person"]})
    errors["distance_error"] = (merged["distance_est"] - merged["distance_gt"]).abs()

    ale = vle = None
    if all(f"{c}_est" in merged and f"{c}_gt" in merged for c in PELVIS_COLUMNS):
        diff = (merged[[f"{c}_est" for c in PELVIS_COLUMNS]].to_numpy(dtype=float)
                - merged[[f"{c}_gt" for c in PELVIS_COLUMNS]].to_numpy(dtype=float))
        errors["location_error"] = np.linalg.norm(diff, axis=1)
        location = errors["location_error"].dropna()
        if not location.empty:
            ale = float(location.mean())
            vle = float(np.var(location.to_numpy()))

    distance_errors = errors["distance_error"].to_numpy(dtype=float)
    return MetricReport(
        ade=float(distance_errors.mean()),
        vde=float(np.var(distance_errors)),
        frame_count=len(errors),
        ale=ale,
        vle=vle,
        errors=errors.reset_index(drop=True),
    )


def boxplot_summary(series) -> Dict[str, float]:
    """Квартили и усы (1.5 IQR, в пределах данных) ряда ошибок."""
    values = np.asarray(series, dtype=float)
    values = values[np.isfinite(values)]
    if values.size == 0:
        return {"n": 0}
    q1, median, q3 = np.percentile(values, [25, 50, 75])
    iqr = q3 - q1
    inside = values[(values >= q1 - 1.5 * iqr) & (values <= q3 + 1.5 * iqr)]
    return {
        "n": int(values.size),
        "min": float(values.min()),
        "q1": float(q1),
        "median": float(median),
        "q3": float(q3),
        "max": float(values.max()),
        "whisker_low": float(inside.min()),
        "whisker_high": float(inside.max()),
        "outliers": int(values.size - inside.size),
    }


def scene_statistics(true_states: pd.DataFrame) -> pd.DataFrame:
    """Среднее и СКО дальности, высоты камеры, тангажа и крена по сцене."""
    columns = {"distance": "distance", "h_C": "camera_height", "theta_deg": "pitch_deg", "phi_deg": "roll_deg"}
    stats = true_states[list(columns)].agg(["mean", "std"]).T
    stats.index = [columns[c] for c in stats.index]
    return stats


def latency_summary(results) -> Dict[str, float]:
    """
    Сводка времени решения.

    Args:
        results: LocalizationResult или длительности в секундах
    """
    times = np.array([getattr(r, "elapsed_s", r) for r in results], dtype=float)
    if times.size == 0:
        return {"count": 0}
    return {
        "count": int(times.size),
        "median_s": float(np.median(times)),
        "mean_s": float(times.mean()),
        "p95_s": float(np.percentile(times, 95)),
        "max_s": float(times.max()),
    }


# --- Синтетические сцены ---

class PersonTrajectory(StrictModel):
    """Человек идёт по ломаной с постоянной скоростью и останавливается в последней точке."""

    person: int = Field(default=0, ge=0)
    waypoints: List[Tuple[float, float]] = Field(min_length=1)
    speed: float = Field(default=1.0, ge=0)

    def position(self, t: float) -> Tuple[float, float]:
        points = np.asarray(self.waypoints, dtype=float)
        if len(points) == 1:
            return float(points[0, 0]), float(points[0, 1])
        segments = np.diff(points, axis=0)
        lengths = np.linalg.norm(segments, axis=1)
        travelled = min(self.speed * t, float(lengths.sum()))
        for start, segment, length in zip(points[:-1], segments, lengths):
            if travelled <= length and length > 0:
                x, z = start + segment * (travelled / length)
                return float(x), float(z)
            travelled -= length
        return float(points[-1, 0]), float(points[-1, 1])


class EgoMotionSpec(StrictModel):
    """Колебания камеры: синусоиды тангажа, крена и высоты плюс случайное блуждание углов."""

    theta_offset_deg: float = 0.0
    theta_amplitude_deg: float = 0.0
    theta_frequency: float = Field(default=0.0, ge=0)
    phi_offset_deg: float = 0.0
    phi_amplitude_deg: float = 0.0
    phi_frequency: float = Field(default=0.0, ge=0)
    h_c_mean: float = Field(default=0.5, gt=0)
    h_c_amplitude: float = Field(default=0.0, ge=0)
    h_c_frequency: float = Field(default=0.0, ge=0)
    # СКО приращения угла за секунду, градусы
    random_walk_deg: float = Field(default=0.0, ge=0)


class SyntheticSceneConfig(StrictModel):
    duration: float = Field(gt=0)
    frame_rate: float = Field(default=30.0, gt=0)
    persons: List[PersonTrajectory] = Field(min_length=1)
    ego_motion: EgoMotionSpec = Field(default_factory=EgoMotionSpec)
    noise_px: float = Field(default=0.0, ge=0)
    camera: CameraModel
    heights: JointHeights
    seed: int = Field(default=0, ge=0)
    half_width: float = Field(default=0.15, ge=0)
    walking_deformation: bool = False
    deformation_amplitude: float = Field(default=0.05, ge=0)
    stride_frequency: float = Field(default=1.5, ge=0)
    emit_neck: bool = True
    confidence: float = Field(default=0.9, ge=0, le=1)
    ground_truth: Literal["pelvis", "distance"] = "pelvis"
    bounds: SolverBounds = Field(default_factory=SolverBounds)

    @model_validator(mode="after")
    def _check_persons(self) -> "SyntheticSceneConfig":
        ids = [p.person for p in self.persons]
        if len(set(ids)) != len(ids):
            raise ValueError("идентификаторы людей должны быть уникальны")
        return self

    @property
    def frame_count(self) -> int:
        return int(round(self.duration * self.frame_rate))


@dataclass
class SyntheticScene:
    frames: List[RawJointFrame]
    ground_truth: List[GroundTruthRecord]
    true_states: pd.DataFrame


def frame_rng(seed: int, frame_id: int) -> np.random.Generator:
    """Генератор шума кадра: зависит только от (seed, frame_id), не от порядка обработки."""
    return np.random.default_rng(np.random.SeedSequence([seed, frame_id]))


def _ego_states(config: SyntheticSceneConfig) -> np.ndarray:
    """Траектория (theta, phi, h_C) для всех кадров, углы в радианах."""
    ego = config.ego_motion
    t = np.arange(config.frame_count) / config.frame_rate
    theta = ego.theta_offset_deg + ego.theta_amplitude_deg * np.sin(2 * np.pi * ego.theta_frequency * t)
    phi = ego.phi_offset_deg + ego.phi_amplitude_deg * np.sin(2 * np.pi * ego.phi_frequency * t)
    h_c = ego.h_c_mean + ego.h_c_amplitude * np.sin(2 * np.pi * ego.h_c_frequency * t)

    if ego.random_walk_deg > 0 and config.frame_count > 1:
        walk_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 2**31 - 1]))
        steps = walk_rng.normal(0.0, ego.random_walk_deg / math.sqrt(config.frame_rate), size=(config.frame_count, 2))
        steps[0] = 0.0
        walk = np.cumsum(steps, axis=0)
        theta = theta + walk[:, 0]
        phi = phi + walk[:, 1]

    return np.column_stack([np.deg2rad(theta), np.deg2rad(phi), h_c])


def _deformed_heights(config: SyntheticSceneConfig, t: float) -> np.ndarray:
    h = config.heights.as_array()
    if config.walking_deformation:
        wave = config.deformation_amplitude * math.sin(2 * math.pi * config.stride_frequency * t)
        h = h.copy()
        h[2] += wave
        h[3] += max(0.0, wave)
    return h


def _joint_pixels(config: SyntheticSceneConfig, state: PoseState, heights: np.ndarray) -> Dict[str, np.ndarray]:
    """Пиксели суставов без шума; левый/правый симметричны относительно центральной точки."""
    R = rotation_from_angles(state.theta, state.phi)
    lateral = np.array([config.half_width, 0.0, 0.0])
    pixels: Dict[str, np.ndarray] = {}

    for index, name in enumerate(("neck", "hip", "knee", "ankle")):
        cp = np.array([state.x_f, state.h_c - heights[index], state.z_f])
        try:
            center = np.array(project_to_pixel(config.camera, project_camera_point(cp @ R)))
            side = np.array(project_to_pixel(config.camera, project_camera_point((cp + lateral) @ R)))
        except (BehindCamera, OutOfBounds):
            continue
        offset = side - center

        if name == "neck":
            if config.emit_neck:
                pixels["neck"] = center
                continue
            left, right = SHOULDER_PAIR
        else:
            left, right = JOINT_PAIRS[name]
        pixels[left] = center - offset
        pixels[right] = center + offset
    return pixels


def generate_scene(config: SyntheticSceneConfig) -> SyntheticScene:
    """
    Генерация синтетической сцены.

    Args:
        config: параметры сцены

    Returns:
        сырые суставы, эталон и истинные состояния по кадрам
    """
    lower, upper = config.bounds.as_arrays()
    ego = _ego_states(config)
    base_heights = config.heights

    frames: List[RawJointFrame] = []
    truth: List[GroundTruthRecord] = []
    rows = []

    for frame_id in range(config.frame_count):
        t = frame_id / config.frame_rate
        theta, phi, h_c = ego[frame_id]
        rng = frame_rng(config.seed, frame_id)
        heights = _deformed_heights(config, t)

        for person in config.persons:
            x_f, z_f = person.position(t)
            state = PoseState(x_f=x_f, z_f=z_f, h_c=float(h_c), theta=float(theta), phi=float(phi))
            vector = state.as_vector()
            if np.any(vector < lower) or np.any(vector > upper):
                raise StateOutOfBounds(
                    f"кадр {frame_id}, человек {person.person}: состояние {np.round(vector, 4).tolist()} вне границ решателя"
                )

            joints = {}
            for name, pixel in _joint_pixels(config, state, heights).items():
                noise = rng.normal(0.0, config.noise_px, size=2) if config.noise_px > 0 else np.zeros(2)
                u, v = pixel + noise
                if 0.0 <= u <= config.camera.width and 0.0 <= v <= config.camera.height:
                    joints[name] = (float(u), float(v), config.confidence)

            frames.append(RawJointFrame(frame_id=frame_id, timestamp=t, person_id=person.person, joints=joints))

            pelvis = pelvis_location(state, base_heights)
            distance = float(np.linalg.norm(pelvis))
            if config.ground_truth == "pelvis":
                truth.append(GroundTruthRecord(frame_id=frame_id, person_id=person.person, pelvis_xyz=tuple(pelvis)))
            else:
                truth.append(GroundTruthRecord(frame_id=frame_id, person_id=person.person, distance=distance))

            rows.append({
                "frame": frame_id, "t": t, "person": person.person,
                "X_F": x_f, "Z_F": z_f, "h_C": float(h_c),
                "theta_deg": state.theta_deg, "phi_deg": state.phi_deg,
                "pelvis_x": pelvis.x, "pelvis_y": pelvis.y, "pelvis_z": pelvis.z,
                "distance": distance,
            })

    logger.info("[+] Сгенерировано %d кадров, %d записей суставов", config.frame_count, len(frames))
    return SyntheticScene(frames=frames, ground_truth=truth, true_states=pd.DataFrame(rows, columns=TRUE_STATE_COLUMNS))


def write_scene(scene: SyntheticScene, output_dir: Union[str, Path], meta: Optional[Dict[str, Any]] = None) -> Dict[str, Path]:
    """
    Запись сцены: frames.jsonl, ground_truth.jsonl, true_states.csv.

    Returns:
        пути к записанным файлам
    """
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "frames": output_dir / "frames.jsonl",
        "ground_truth": output_dir / "ground_truth.jsonl",
        "true_states": output_dir / "true_states.csv",
    }
    dump_frames(scene.frames, paths["frames"], meta)
    dump_ground_truth(scene.ground_truth, paths["ground_truth"], meta)
    write_table(scene.true_states, paths["true_states"], meta)
    return paths


def print_metric_report(report: MetricReport) -> None:
    """Вывод отчёта о метриках в консоль."""
    print("\n" + "=" * 70)
    print("РЕЗУЛЬТАТЫ ОЦЕНКИ ЛОКАЛИЗАЦИИ")
    print("=" * 70)
    print(f"\n[ОБЩИЕ МЕТРИКИ] (сопоставлено {report.frame_count} кадров):")
    if report.ale is not None:
        print(f"   Средняя ошибка положения (ALE):    {report.ale:.4f} м")
        print(f"   Дисперсия ошибки положения (VLE):  {report.vle:.6f} м^2")
    else:
        print("   Эталон содержит только дальность: ALE/VLE не вычисляются")
    print(f"   Средняя ошибка дальности (ADE):    {report.ade:.4f} м")
    print(f"   Дисперсия ошибки дальности (VDE):  {report.vde:.6f} м^2")

    summary = boxplot_summary(report.errors["distance_error"])
    if summary.get("n"):
        print(f"\n{'─' * 70}")
        print(f"[ОШИБКА ДАЛЬНОСТИ] медиана {summary['median']:.4f} м, "
              f"квартили [{summary['q1']:.4f}, {summary['q3']:.4f}], выбросов {summary['outliers']}")
    print("\n" + "=" * 70)
