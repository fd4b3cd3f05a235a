"""
Покадровый конвейер локализации.
Управляет потоком: сырые суставы -> четыре точки -> решатель -> таз и дальность.
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Any, Dict, Iterable, List, Optional

import numpy as np
import pandas as pd

from person_locator.camera_models import CameraModel
from person_locator.config import JointHeights, RunConfig
from person_locator.errors import PersonLocatorError
from person_locator.evalkit import latency_summary, pelvis_location
from person_locator.observation import RawJointFrame, reduce_to_four_points
from person_locator.pose_solver import LocalizationResult, solve_localization

logger = logging.getLogger(__name__)

ESTIMATE_COLUMNS = [
    "frame", "t", "person", "X_F", "Z_F", "h_C", "theta_deg", "phi_deg",
    "pelvis_x", "pelvis_y", "pelvis_z", "distance", "cost", "converged", "skipped",
]

NO_PROFILE = "no_profile"


@dataclass
class FrameOutcome:
    """Результат обработки одной записи: решение или причина пропуска."""

    frame_id: int
    timestamp: float
    person_id: int
    result: Optional[LocalizationResult] = None
    skipped: str = ""

    def to_row(self, heights: Optional[JointHeights]) -> Dict[str, Any]:
        row = {"frame": self.frame_id, "t": self.timestamp, "person": self.person_id}
        if self.result is None:
            row.update({c: np.nan for c in ESTIMATE_COLUMNS[3:-2]})
            row.update({"converged": False, "skipped": self.skipped})
            return row

        s = self.result.state
        pelvis = pelvis_location(s, heights)
        row.update({
            "X_F": s.x_f, "Z_F": s.z_f, "h_C": s.h_c,
            "theta_deg": s.theta_deg, "phi_deg": s.phi_deg,
            "pelvis_x": pelvis.x, "pelvis_y": pelvis.y, "pelvis_z": pelvis.z,
            "distance": float(np.linalg.norm(pelvis)),
            "cost": self.result.final_cost,
            "converged": self.result.converged,
            "skipped": "",
        })
        return row


def _solve_frame(frame: RawJointFrame, camera: CameraModel, heights: Optional[JointHeights],
                 config: RunConfig) -> FrameOutcome:
    outcome = FrameOutcome(frame.frame_id, frame.timestamp, frame.person_id)
    if heights is None:
        outcome.skipped = NO_PROFILE
        return outcome
    try:
        obs = reduce_to_four_points(frame, camera, config.observation.confidence_threshold,
                                    config.observation.max_normalized)
        outcome.result = solve_localization(obs, heights, config.weights, config.solver, config.nominal_h_c)
    except PersonLocatorError as e:
        outcome.skipped = e.category
    return outcome


def _solve_frame_packed(args) -> FrameOutcome:
    return _solve_frame(*args)


class LocalizationPipeline:
    """Конвейер локализации с необязательным пулом процессов."""

    def __init__(self,
                 camera: CameraModel,
                 profiles: Dict[Optional[int], JointHeights],
                 config: Optional[RunConfig] = None,
                 workers: int = 1):
        """
        Инициализация конвейера.

        Args:
            camera: модель камеры
            profiles: высоты суставов по идентификатору человека; ключ None - для всех остальных
            config: конфигурация запуска
            workers: число процессов; 1 - обработка в текущем процессе
        """
        self.camera = camera
        self.profiles = dict(profiles)
        self.config = config or RunConfig()
        self.workers = max(1, workers)
        self._executor: Optional[ProcessPoolExecutor] = None
        if self.workers > 1:
            self._executor = ProcessPoolExecutor(max_workers=self.workers)
        self._outcomes: List[FrameOutcome] = []

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.close()

    def close(self):
        """Остановка пула процессов."""
        if self._executor is not None:
            self._executor.shutdown()
            self._executor = None

    def heights_for(self, person_id: int) -> Optional[JointHeights]:
        return self.profiles.get(person_id, self.profiles.get(None))

    def process_frame(self, frame: RawJointFrame) -> FrameOutcome:
        outcome = _solve_frame(frame, self.camera, self.heights_for(frame.person_id), self.config)
        self._record(outcome)
        return outcome

    def run(self, frames: Iterable[RawJointFrame]) -> List[FrameOutcome]:
        """
        Обработка последовательности записей; порядок результатов совпадает с порядком входа.

        Args:
            frames: записи суставов в порядке файла

        Returns:
            список FrameOutcome
        """
        frames = list(frames)
        if self._executor is None:
            return [self.process_frame(frame) for frame in frames]

        tasks = [(frame, self.camera, self.heights_for(frame.person_id), self.config) for frame in frames]
        outcomes = list(self._executor.map(_solve_frame_packed, tasks, chunksize=32))
        for outcome in outcomes:
            self._record(outcome)
        return outcomes

    def _record(self, outcome: FrameOutcome) -> None:
        self._outcomes.append(outcome)
        if outcome.skipped:
            logger.info("[-] Кадр %d, человек %d пропущен: %s", outcome.frame_id, outcome.person_id, outcome.skipped)

    def to_table(self, outcomes: Iterable[FrameOutcome]) -> pd.DataFrame:
        rows = [o.to_row(self.heights_for(o.person_id)) for o in outcomes]
        return pd.DataFrame(rows, columns=ESTIMATE_COLUMNS)

    def get_stats(self) -> Dict[str, Any]:
        """
        Статистика обработанных записей.

        Returns:
            словарь: решено, пропущено (по причинам), не сошлось, сводка времени решения
        """
        solved = [o.result for o in self._outcomes if o.result is not None]
        reasons: Dict[str, int] = {}
        for o in self._outcomes:
            if o.skipped:
                reasons[o.skipped] = reasons.get(o.skipped, 0) + 1
        return {
            "total": len(self._outcomes),
            "solved": len(solved),
            "not_converged": sum(1 for r in solved if not r.converged),
            "skipped": reasons,
            "latency": latency_summary(solved),
            "workers": self.workers,
        }
