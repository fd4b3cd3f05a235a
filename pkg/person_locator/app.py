"""
Консольное приложение person_locator.

Подкоманды:
    calibrate  - калибровка высот суставов по статичным кадрам
    localize   - покадровая оценка положения человека и ориентации камеры
    track      - сопровождение людей по результатам локализации
    eval       - метрики ALE/ADE/VLE/VDE относительно эталона
    synth      - генерация синтетической сцены
"""

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Type

import numpy as np
import pandas as pd

from person_locator import __version__
from person_locator.camera_models import load_camera
from person_locator.config import (
    PersonProfile,
    RunConfig,
    config_hash,
    load_config_file,
    load_environment,
    load_profile,
    load_run_config,
    validate_model,
)
from person_locator.errors import ConfigInvalid, ConfigMissing, InputMissing, InsufficientData, NoVisiblePoints, PersonLocatorError
from person_locator.evalkit import (
    SyntheticSceneConfig,
    boxplot_summary,
    compute_metrics,
    generate_scene,
    print_metric_report,
    read_table,
    write_scene,
    write_table,
)
from person_locator.height_calibration import calibrate_heights
from person_locator.observation import load_frames, load_ground_truth, reduce_to_four_points
from person_locator.pipeline import LocalizationPipeline
from person_locator.tracking import Tracker, select_target

logger = logging.getLogger("person_locator")

TRACK_COLUMNS = ["frame", "t", "track_id", "x", "z", "vx", "vz", "status"]


def print_banner(command: str):
    """Вывод заголовка запуска."""
    print("=" * 60)
    print(f"person_locator {__version__}: {command}")
    print("=" * 60)


def setup_logging(level: Optional[str]) -> None:
    level = (level or os.getenv("PERSON_LOCATOR_LOG_LEVEL") or "INFO").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )


def _meta(args: argparse.Namespace, *parts) -> Dict[str, Any]:
    return {
        "version": __version__,
        "config_hash": config_hash(*parts),
        "seed": args.seed if args.seed is not None else 0,
    }


def _require(path: Optional[str], what: str, error: Type[PersonLocatorError] = InputMissing) -> Path:
    if not path:
        raise error(f"не указан {what}")
    return Path(path)


def _write_json(payload: Dict[str, Any], path: Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, ensure_ascii=False, indent=2, sort_keys=True)
        f.write("\n")


def _load_profiles(paths: Sequence[str]) -> Dict[Optional[int], Any]:
    """Высоты по человеку; единственный профиль применяется ко всем людям."""
    profiles = [load_profile(p) for p in paths]
    heights: Dict[Optional[int], Any] = {p.person: p.heights for p in profiles}
    if len(profiles) == 1:
        heights[None] = profiles[0].heights
    return heights


# --- Подкоманды ---

def run_calibrate(args: argparse.Namespace) -> int:
    """Калибровка высот суставов; пишет профиль человека (JSON)."""
    camera = load_camera(_require(args.camera, "--camera", ConfigMissing))
    config = load_run_config(args.config)
    frames = load_frames(_require(args.frames, "--frames"))
    output = _require(args.output, "--output")

    person = args.person
    if person is None and frames:
        person = frames[0].person_id

    observations = []
    for frame in frames:
        if frame.person_id != person:
            continue
        try:
            obs = reduce_to_four_points(frame, camera, config.observation.confidence_threshold,
                                        config.observation.max_normalized)
        except NoVisiblePoints:
            continue
        if obs.visible.all():
            observations.append(obs)
    if not observations:
        raise InsufficientData("нет кадров, где видны все четыре точки")

    print(f"[*] Калибровка по {len(observations)} кадрам, человек {person}")
    calib = config.calibration
    result = calibrate_heights(
        observations,
        known_attitude=(float(np.deg2rad(calib.theta_deg)), float(np.deg2rad(calib.phi_deg))),
        known_h_c=calib.h_c,
        weights=config.weights,
        config=calib,
    )

    meta = _meta(args, config, camera)
    profile = PersonProfile(person=person, heights=result.heights, meta=meta)
    _write_json(profile.model_dump(by_alias=True, mode="json"), output)

    print("[+] Высоты: " + ", ".join(f"{k}={v:.4f}" for k, v in profile.heights.model_dump(by_alias=True).items()))
    print(f"[+] Число обусловленности: {result.condition.condition_number:.3e}")
    print(f"    Сингулярные числа: {np.array2string(result.condition.singular_values, precision=4)}")
    print(f"[+] Профиль сохранён в {output}")
    return 0


def _localize(args: argparse.Namespace, config: RunConfig):
    camera = load_camera(_require(args.camera, "--camera", ConfigMissing))
    if not args.profile:
        raise InputMissing("не указан ни один --profile")
    profiles = _load_profiles(args.profile)
    frames = load_frames(_require(args.frames, "--frames"))

    with LocalizationPipeline(camera, profiles, config, workers=args.workers) as pipeline:
        outcomes = pipeline.run(frames)
        table = pipeline.to_table(outcomes)
        stats = pipeline.get_stats()

    meta = _meta(args, config, camera, {str(k): v.model_dump() for k, v in profiles.items()})
    return table, stats, meta


def run_localize(args: argparse.Namespace) -> int:
    """Покадровая локализация; пишет CSV оценок."""
    output = _require(args.output, "--output")
    config = load_run_config(args.config)
    table, stats, meta = _localize(args, config)
    write_table(table, output, meta)

    print(f"[+] Решено {stats['solved']} из {stats['total']} записей, не сошлось {stats['not_converged']}")
    if stats["skipped"]:
        print(f"[-] Пропущено: {stats['skipped']}")
    latency = stats["latency"]
    if latency.get("count"):
        print(f"[*] Время решения: медиана {latency['median_s'] * 1000:.2f} мс, p95 {latency['p95_s'] * 1000:.2f} мс")
    print(f"[+] Оценки сохранены в {output}")
    return 0


def _parse_prior(text: Optional[str]):
    if text is None:
        return None
    try:
        x, z = (float(v) for v in text.split(","))
    except ValueError:
        raise ConfigInvalid(f"--target-prior: ожидается 'x,z', получено '{text}'")
    return x, z


def run_track(args: argparse.Namespace) -> int:
    """Сопровождение; пишет таблицу треков frame,t,track_id,x,z,vx,vz,status."""
    output = _require(args.output, "--output")
    config = load_run_config(args.config)
    prior = _parse_prior(args.target_prior)

    if args.estimates:
        if not Path(args.estimates).exists():
            raise InputMissing(f"Файл {args.estimates} не найден")
        estimates = read_table(args.estimates)
        meta = _meta(args, config, {"estimates": Path(args.estimates).name})
    else:
        estimates, _, meta = _localize(args, config)

    tracker = Tracker(config.tracker)
    rows: List[Dict[str, Any]] = []
    target = None
    if not estimates.empty:
        # Порядок кадров - порядок файла
        for frame_id, group in estimates.groupby("frame", sort=False):
            solved = group[group["X_F"].notna()]
            detections = solved[["X_F", "Z_F"]].to_numpy(dtype=float)
            timestamp = float(group["t"].iloc[0])
            for track in tracker.step(timestamp, detections):
                rows.append({
                    "frame": int(frame_id), "t": timestamp, "track_id": track.track_id,
                    "x": track.mean[0], "z": track.mean[1], "vx": track.mean[2], "vz": track.mean[3],
                    "status": track.status,
                })
            target = select_target(tracker.tracks, prior=prior, track_id=args.target_track)

    write_table(pd.DataFrame(rows, columns=TRACK_COLUMNS), output, meta)
    confirmed = {r["track_id"] for r in rows if r["status"] == "confirmed"}
    print(f"[+] Подтверждённых треков: {len(confirmed)}")
    if target is not None:
        print(f"[+] Цель: трек {target.track_id} в ({target.mean[0]:.2f}, {target.mean[1]:.2f})")
    else:
        print("[-] Цель не выбрана")
    print(f"[+] Треки сохранены в {output}")
    return 0


def run_eval(args: argparse.Namespace) -> int:
    """Метрики; пишет отчёт JSON и покадровые ошибки CSV."""
    output = _require(args.output, "--output")
    estimates_path = _require(args.estimates, "--estimates")
    if not estimates_path.exists():
        raise InputMissing(f"Файл {estimates_path} не найден")
    estimates = read_table(estimates_path)
    truth = load_ground_truth(_require(args.ground_truth, "--ground-truth"))

    report = compute_metrics(estimates, truth)
    meta = _meta(args, {"estimates": estimates_path.name, "ground_truth": Path(args.ground_truth).name})

    payload = report.to_dict()
    payload["distance_error_summary"] = boxplot_summary(report.errors["distance_error"])
    if "location_error" in report.errors:
        payload["location_error_summary"] = boxplot_summary(report.errors["location_error"])
    payload["_meta"] = meta
    _write_json(payload, output)

    errors_path = Path(args.errors) if args.errors else output.with_name(output.stem + "_errors.csv")
    write_table(report.errors, errors_path, meta)

    print_metric_report(report)
    print(f"[+] Отчёт сохранён в {output}, ошибки по кадрам - в {errors_path}")
    return 0


def run_synth(args: argparse.Namespace) -> int:
    """Синтетическая сцена; пишет frames.jsonl, ground_truth.jsonl, true_states.csv."""
    output = _require(args.output, "--output")
    scene_path = _require(args.scene, "--scene", ConfigMissing)
    data = load_config_file(scene_path)
    if args.camera:
        data["camera"] = load_camera(args.camera).model_dump()
    if args.seed is not None:
        data["seed"] = args.seed
    scene_config = validate_model(SyntheticSceneConfig, data, str(scene_path))

    scene = generate_scene(scene_config)
    meta = {"version": __version__, "config_hash": config_hash(scene_config), "seed": scene_config.seed}
    paths = write_scene(scene, output, meta)
    print(f"[+] Сгенерировано {scene_config.frame_count} кадров для {len(scene_config.persons)} человек")
    for name, path in paths.items():
        print(f"    {name}: {path}")
    return 0


COMMANDS = {
    "calibrate": run_calibrate,
    "localize": run_localize,
    "track": run_track,
    "eval": run_eval,
    "synth": run_synth,
}


def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--camera", help="файл конфигурации камеры (TOML/JSON)")
    shared.add_argument("--config", help="файл конфигурации запуска (TOML/JSON)")
    shared.add_argument("--seed", type=int, default=None, help="зерно генератора случайных чисел")
    shared.add_argument("--output", help="выходной файл или директория")
    shared.add_argument("--log-level", default=None, help="уровень логирования (DEBUG, INFO, WARNING)")

    parser = argparse.ArgumentParser(prog="person_locator", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", parents=[shared], help="калибровка высот суставов")
    p.add_argument("--frames", help="кадры JSON-lines")
    p.add_argument("--person", type=int, default=None, help="идентификатор человека (по умолчанию первый в файле)")

    p = sub.add_parser("localize", parents=[shared], help="покадровая локализация")
    p.add_argument("--frames", help="кадры JSON-lines")
    p.add_argument("--profile", action="append", default=[], help="профиль человека (можно несколько)")
    p.add_argument("--workers", type=int, default=1, help="число процессов")

    p = sub.add_parser("track", parents=[shared], help="сопровождение")
    p.add_argument("--estimates", help="CSV оценок от localize")
    p.add_argument("--frames", help="кадры JSON-lines (если нет --estimates)")
    p.add_argument("--profile", action="append", default=[], help="профиль человека")
    p.add_argument("--workers", type=int, default=1, help="число процессов")
    p.add_argument("--target-prior", default=None, help="априорное положение цели 'x,z'")
    p.add_argument("--target-track", type=int, default=None, help="номер трека цели")

    p = sub.add_parser("eval", parents=[shared], help="метрики качества")
    p.add_argument("--estimates", help="CSV оценок от localize")
    p.add_argument("--ground-truth", help="эталон JSON-lines")
    p.add_argument("--errors", default=None, help="CSV покадровых ошибок")

    p = sub.add_parser("synth", parents=[shared], help="синтетическая сцена")
    p.add_argument("--scene", help="конфигурация сцены (TOML/JSON)")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Точка входа.

    Returns:
        код выхода: 0 - успех, 2 - ошибка конфигурации, 3 - ошибка данных, 4 - численный сбой
    """
    load_environment()
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level)
    print_banner(args.command)

    try:
        return COMMANDS[args.command](args)
    except PersonLocatorError as e:
        message = str(e).replace('"', "'")
        print(f'error category={e.category} message="{message}"', file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
