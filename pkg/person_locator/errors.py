"""
Иерархия исключений person_locator.
Каждое исключение несёт машинно-читаемую категорию и код выхода CLI.
"""

from typing import Optional


class PersonLocatorError(Exception):
    """Базовое исключение библиотеки."""

    category = "error"
    exit_code = 1

    def __init__(self, message: str, category: Optional[str] = None):
        super().__init__(message)
        if category is not None:
            self.category = category


# --- Конфигурация (код выхода 2) ---

class ConfigError(PersonLocatorError):
    category = "config_invalid"
    exit_code = 2


class ConfigMissing(ConfigError):
    category = "config_missing"


class ConfigInvalid(ConfigError):
    category = "config_invalid"


# --- Данные (код выхода 3) ---

class DataError(PersonLocatorError):
    category = "data_error"
    exit_code = 3


class FrameParseError(DataError):
    """Строка JSON-lines не разбирается как JSON."""

    category = "parse_error"

    def __init__(self, path: str, line: int, detail: str):
        super().__init__(f"{path}:{line}: некорректный JSON ({detail})")
        self.path = path
        self.line = line


class FrameSchemaError(DataError):
    """Запись не соответствует схеме (отсутствует или неверно поле)."""

    category = "schema_error"

    def __init__(self, path: str, line: int, field: str, detail: str):
        super().__init__(f"{path}:{line}: поле '{field}': {detail}")
        self.path = path
        self.line = line
        self.field = field


class OutOfBounds(DataError):
    category = "out_of_bounds"


class BehindCamera(DataError):
    category = "behind_camera"


class NoVisiblePoints(DataError):
    category = "no_visible_points"


class InsufficientObservations(DataError):
    category = "insufficient_observations"


class DegenerateObservation(DataError):
    category = "degenerate_observation"


class NoMatchedFrames(DataError):
    category = "no_matched_frames"


class StateOutOfBounds(DataError):
    category = "state_out_of_bounds"


class InsufficientData(DataError):
    category = "insufficient_data"


class InputMissing(DataError):
    category = "input_missing"


# --- Численные сбои (код выхода 4) ---

class NumericalError(PersonLocatorError):
    category = "numerical_failure"
    exit_code = 4


class DistortionDivergence(NumericalError):
    category = "distortion_divergence"


class SingularNormalEquations(NumericalError):
    category = "singular_normal_equations"


class RankDeficient(NumericalError):
    category = "rank_deficient"


class NonPhysicalHeights(NumericalError):
    category = "non_physical_heights"
