"""
Сопровождение людей на виртуальной плоскости.

Фильтр Калмана с моделью постоянной скорости, состояние (x, z, vx, vz),
наблюдается только положение (X_F, Z_F). Сопоставление детекций с треками -
жадное по возрастанию евклидова расстояния с порогом gate_radius.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
from filterpy.common import Q_discrete_white_noise
from filterpy.kalman import predict as kf_predict
from filterpy.kalman import update as kf_update
from scipy.spatial.distance import cdist

from person_locator.config import TrackerConfig

logger = logging.getLogger(__name__)

TENTATIVE = "tentative"
CONFIRMED = "confirmed"
LOST = "lost"

H = np.array([[1.0, 0.0, 0.0, 0.0],
              [0.0, 1.0, 0.0, 0.0]])


@dataclass(frozen=True)
class Track:
    """Снимок трека; все операции возвращают новый экземпляр."""

    track_id: int
    mean: np.ndarray
    covariance: np.ndarray
    last_update_time: float
    time: float
    missed_count: int = 0
    hits: int = 1
    status: str = TENTATIVE

    @property
    def position(self) -> np.ndarray:
        return self.mean[:2]

    @property
    def velocity(self) -> np.ndarray:
        return self.mean[2:]


def _transition(dt: float) -> np.ndarray:
    F = np.eye(4)
    F[0, 2] = dt
    F[1, 3] = dt
    return F


def new_track(track_id: int, measurement, timestamp: float, config: Optional[TrackerConfig] = None) -> Track:
    config = config or TrackerConfig()
    mean = np.array([measurement[0], measurement[1], 0.0, 0.0], dtype=float)
    covariance = np.diag([
        config.measurement_noise, config.measurement_noise,
        config.initial_velocity_std ** 2, config.initial_velocity_std ** 2,
    ])
    status = CONFIRMED if config.confirm_hits <= 1 else TENTATIVE
    return Track(track_id=track_id, mean=mean, covariance=covariance,
                 last_update_time=timestamp, time=timestamp, status=status)


def predict(track: Track, dt: float, process_noise_accel: float) -> Track:
    """
    Прогноз по модели постоянной скорости.

    Args:
        track: трек
        dt: шаг по времени, с (dt >= 0)
        process_noise_accel: СКО белого шума ускорения, м/с^2

    Returns:
        новый трек с прогнозным средним и ковариацией
    """
    if dt < 0:
        raise ValueError("шаг по времени должен быть неотрицательным")
    if dt == 0:
        return track
    Q = Q_discrete_white_noise(dim=2, dt=dt, var=process_noise_accel ** 2, block_size=2, order_by_dim=False)
    mean, covariance = kf_predict(track.mean, track.covariance, F=_transition(dt), Q=Q)
    return replace(track, mean=mean, covariance=0.5 * (covariance + covariance.T), time=track.time + dt)


def update(track: Track, measurement, measurement_noise: float, timestamp: Optional[float] = None) -> Track:
    """
    Коррекция по измерению положения (X_F, Z_F).

    Args:
        track: трек после прогноза
        measurement: пара (X_F, Z_F)
        measurement_noise: дисперсия измерения, м^2

    Returns:
        новый трек; missed_count сбрасывается в 0
    """
    z = np.asarray(measurement, dtype=float)
    if not np.all(np.isfinite(z)):
        raise ValueError("измерение должно быть конечным")
    R = np.eye(2) * measurement_noise
    mean, covariance = kf_update(track.mean, track.covariance, z, R, H)
    when = track.time if timestamp is None else timestamp
    return replace(
        track,
        mean=mean,
        covariance=0.5 * (covariance + covariance.T),
        last_update_time=when,
        time=when,
        missed_count=0,
    )


@dataclass
class AssociationResult:
    matches: List[Tuple[int, int]] = field(default_factory=list)
    unmatched_detections: List[int] = field(default_factory=list)
    unmatched_tracks: List[int] = field(default_factory=list)


def associate(detections: Sequence, tracks: Sequence[Track], gate_radius: float) -> AssociationResult:
    """
    Жадное сопоставление детекций и треков.

    Пары перебираются по возрастанию расстояния; пары дальше gate_radius не
    сопоставляются, каждая детекция и каждый трек используются не более одного раза.

    Returns:
        пары (индекс детекции, индекс трека) и несопоставленные индексы
    """
    if gate_radius <= 0:
        raise ValueError("gate_radius должен быть положительным")
    n_det, n_trk = len(detections), len(tracks)
    result = AssociationResult()
    if n_det and n_trk:
        distances = cdist(np.asarray(detections, dtype=float).reshape(n_det, 2),
                          np.array([t.position for t in tracks]))
        used_det = set()
        used_trk = set()
        for flat in np.argsort(distances, axis=None, kind="stable"):
            d, t = np.unravel_index(flat, distances.shape)
            if distances[d, t] > gate_radius:
                break
            if d in used_det or t in used_trk:
                continue
            used_det.add(int(d))
            used_trk.add(int(t))
            result.matches.append((int(d), int(t)))
    matched_det = {d for d, _ in result.matches}
    matched_trk = {t for _, t in result.matches}
    result.unmatched_detections = [d for d in range(n_det) if d not in matched_det]
    result.unmatched_tracks = [t for t in range(n_trk) if t not in matched_trk]
    return result


class Tracker:
    """
    Многотрековый фильтр; кадры подаются строго по порядку времени.

    Жизненный цикл: tentative -> confirmed после confirm_hits подряд
    сопоставлений; трек без сопоставления больше miss_limit кадров подряд -> lost.
    """

    def __init__(self, config: Optional[TrackerConfig] = None):
        self.config = config or TrackerConfig()
        self.tracks: List[Track] = []
        self.lost: List[Track] = []
        self._next_id = 1
        self._last_time: Optional[float] = None

    def step(self, timestamp: float, detections: Iterable) -> List[Track]:
        """
        Обработка одного кадра.

        Args:
            timestamp: время кадра, с
            detections: положения (X_F, Z_F) людей в кадре

        Returns:
            снимки треков, обновлённых в этом кадре (включая ставшие lost)
        """
        if self._last_time is not None and timestamp < self._last_time:
            raise ValueError(f"кадры должны идти по времени: {timestamp} < {self._last_time}")
        self._last_time = timestamp
        detections = [np.asarray(d, dtype=float) for d in detections]
        cfg = self.config

        predicted = [predict(t, timestamp - t.time, cfg.process_noise_accel) for t in self.tracks]
        assoc = associate(detections, predicted, cfg.gate_radius)

        survivors: List[Track] = []
        snapshot: List[Track] = []
        for d, t in assoc.matches:
            track = update(predicted[t], detections[d], cfg.measurement_noise, timestamp)
            hits = track.hits + 1
            status = track.status
            if status == TENTATIVE and hits >= cfg.confirm_hits:
                status = CONFIRMED
                logger.info("[+] Трек %d подтверждён", track.track_id)
            track = replace(track, hits=hits, status=status)
            survivors.append(track)

        for t in assoc.unmatched_tracks:
            track = predicted[t]
            missed = track.missed_count + 1
            if missed > cfg.miss_limit:
                track = replace(track, missed_count=missed, hits=0, status=LOST)
                self.lost.append(track)
                snapshot.append(track)
                logger.info("[-] Трек %d потерян", track.track_id)
            else:
                survivors.append(replace(track, missed_count=missed, hits=0))

        for d in assoc.unmatched_detections:
            track = new_track(self._next_id, detections[d], timestamp, cfg)
            self._next_id += 1
            survivors.append(track)
            logger.debug("новый трек %d в (%.2f, %.2f)", track.track_id, *detections[d])

        survivors.sort(key=lambda t: t.track_id)
        self.tracks = survivors
        snapshot.extend(survivors)
        snapshot.sort(key=lambda t: t.track_id)
        return snapshot

    @property
    def confirmed(self) -> List[Track]:
        return [t for t in self.tracks if t.status == CONFIRMED]


def select_target(tracks: Sequence[Track],
                  prior: Optional[Tuple[float, float]] = None,
                  track_id: Optional[int] = None) -> Optional[Track]:
    """
    Выбор сопровождаемого человека: по номеру трека или ближайший к априорной точке.

    Учитываются подтверждённые треки, а при их отсутствии - любые не потерянные.
    Без априорной точки выбирается ближайший к камере.
    """
    alive = [t for t in tracks if t.status != LOST]
    if track_id is not None:
        return next((t for t in alive if t.track_id == track_id), None)
    pool = [t for t in alive if t.status == CONFIRMED] or alive
    if not pool:
        return None
    anchor = np.zeros(2) if prior is None else np.asarray(prior, dtype=float)
    return min(pool, key=lambda t: float(np.linalg.norm(t.position - anchor)))
