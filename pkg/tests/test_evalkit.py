"""Tests for metrics, result tables and the synthetic scene generator."""

import time
from pathlib import Path

import numpy as np
import pandas as pd
import pytest
from conftest import scene_config

from person_locator.config import load_config_file
from person_locator.errors import NoMatchedFrames, StateOutOfBounds
from person_locator.evalkit import (
    PersonTrajectory,
    SyntheticSceneConfig,
    boxplot_summary,
    compute_metrics,
    generate_scene,
    ground_truth_table,
    header_line,
    latency_summary,
    pelvis_location,
    read_table,
    scene_statistics,
    write_scene,
    write_table,
)
from person_locator.observation import GroundTruthRecord, load_frames, reduce_to_four_points
from person_locator.pipeline import LocalizationPipeline
from person_locator.pose_solver import PoseState, forward_project

DATA_DIR = Path(__file__).parent.parent / "person_locator" / "data"


def pelvis_frame(rows):
    return pd.DataFrame(rows, columns=["frame", "person", "pelvis_x", "pelvis_y", "pelvis_z"])


class TestComputeMetrics:
    def test_identical_series(self):
        df = pelvis_frame([(0, 0, 0.1, -0.5, 3.0), (1, 0, 0.2, -0.5, 3.5)])
        report = compute_metrics(df, df)
        assert (report.ale, report.ade, report.vle, report.vde) == (0.0, 0.0, 0.0, 0.0)
        assert report.frame_count == 2

    def test_single_frame(self):
        report = compute_metrics(pelvis_frame([(0, 0, 0.0, 0.0, 3.0)]), pelvis_frame([(0, 0, 0.0, 0.0, 4.0)]))
        assert report.ale == pytest.approx(1.0)
        assert report.ade == pytest.approx(1.0)
        assert report.vle == 0.0 and report.vde == 0.0

    def test_population_variance(self):
        est = pelvis_frame([(0, 0, 0, 0, 3.0), (1, 0, 0, 0, 5.0)])
        gt = pelvis_frame([(0, 0, 0, 0, 4.0), (1, 0, 0, 0, 4.0)])
        report = compute_metrics(est, gt)
        assert report.ade == 1.0
        assert report.vde == 0.0
        est = pelvis_frame([(0, 0, 0, 0, 4.0), (1, 0, 0, 0, 6.0)])
        report = compute_metrics(est, gt)
        assert report.ade == 1.0
        assert report.vde == pytest.approx(1.0)

    def test_distance_only_truth(self):
        est = pelvis_frame([(0, 0, 0.0, 0.0, 3.0)])
        truth = [GroundTruthRecord(frame=0, person=0, distance=3.5)]
        report = compute_metrics(est, truth)
        assert report.ade == pytest.approx(0.5)
        assert report.ale is None and report.vle is None
        assert report.to_dict()["ale"] is None

    def test_unsolved_rows_ignored(self):
        est = pelvis_frame([(0, 0, 0.0, 0.0, 4.0), (1, 0, np.nan, np.nan, np.nan)])
        gt = pelvis_frame([(0, 0, 0.0, 0.0, 4.0), (1, 0, 0.0, 0.0, 4.0)])
        assert compute_metrics(est, gt).frame_count == 1

    def test_matched_by_person(self):
        est = pelvis_frame([(0, 1, 0.0, 0.0, 2.0), (0, 2, 0.0, 0.0, 6.0)])
        gt = pelvis_frame([(0, 2, 0.0, 0.0, 6.0), (0, 1, 0.0, 0.0, 2.0)])
        assert compute_metrics(est, gt).ade == 0.0

    def test_no_overlap(self):
        with pytest.raises(NoMatchedFrames):
            compute_metrics(pelvis_frame([(0, 0, 0, 0, 1.0)]), pelvis_frame([(5, 0, 0, 0, 1.0)]))

    def test_distance_error_bounded_by_location_error(self, rng):
        n = 200
        est = pelvis_frame([(k, 0, *rng.normal(size=2), rng.uniform(2, 6)) for k in range(n)])
        gt = pelvis_frame([(k, 0, *rng.normal(size=2), rng.uniform(2, 6)) for k in range(n)])
        report = compute_metrics(est, gt)
        assert np.all(report.errors["distance_error"] <= report.errors["location_error"] + 1e-12)
        assert report.ade <= report.ale

    def test_ground_truth_table(self):
        table = ground_truth_table([GroundTruthRecord(frame=0, person=0, pelvis_xyz=(0.0, 3.0, 4.0))])
        assert table.loc[0, "distance"] == 5.0


class TestSummaries:
    def test_boxplot(self):
        summary = boxplot_summary([1.0, 2.0, 3.0, 4.0, 100.0, np.nan])
        assert summary["n"] == 5
        assert summary["median"] == 3.0
        assert summary["outliers"] == 1
        assert summary["whisker_high"] == 4.0

    def test_boxplot_empty(self):
        assert boxplot_summary([]) == {"n": 0}

    def test_latency(self):
        summary = latency_summary([0.001, 0.002, 0.003])
        assert summary["count"] == 3
        assert summary["median_s"] == 0.002
        assert latency_summary([]) == {"count": 0}

    def test_scene_statistics(self):
        stats = scene_statistics(generate_scene(scene_config()).true_states)
        assert list(stats.index) == ["distance", "camera_height", "pitch_deg", "roll_deg"]
        assert stats.loc["camera_height", "mean"] == pytest.approx(0.5)


class TestTables:
    def test_header_and_round_trip(self, tmp_path):
        df = pd.DataFrame({"frame": [0, 1], "distance": [1.25, 2.5]})
        path = tmp_path / "table.csv"
        write_table(df, path, {"version": "0.1.0", "config_hash": "abc", "seed": 3})
        first = path.read_text(encoding="utf-8").splitlines()[0]
        assert first == "# person_locator 0.1.0 config_hash=abc seed=3"
        pd.testing.assert_frame_equal(read_table(path), df)

    def test_header_line_defaults(self):
        assert header_line({"config_hash": "x", "seed": 0}).startswith("# person_locator ")


class TestPelvis:
    def test_level_camera(self, heights, level_state):
        assert tuple(pelvis_location(level_state, heights)) == pytest.approx((0.0, -0.5, 4.0))


class TestTrajectory:
    def test_piecewise_linear(self):
        person = PersonTrajectory(waypoints=[(0.0, 2.0), (0.0, 4.0), (2.0, 4.0)], speed=1.0)
        assert person.position(0.0) == (0.0, 2.0)
        assert person.position(1.0) == pytest.approx((0.0, 3.0))
        assert person.position(3.0) == pytest.approx((1.0, 4.0))
        assert person.position(100.0) == (2.0, 4.0)

    def test_duplicate_person_ids(self):
        with pytest.raises(ValueError, match="уникальны"):
            scene_config(persons=[{"person": 0, "waypoints": [[0, 3]]}, {"person": 0, "waypoints": [[1, 3]]}])


class TestGenerateScene:
    def test_noiseless_static_scene_matches_forward_model(self, heights):
        config = scene_config()
        scene = generate_scene(config)
        assert len(scene.frames) == config.frame_count == 20
        expected = forward_project(PoseState(0.3, 3.0, 0.5), heights)
        for frame in scene.frames:
            obs = reduce_to_four_points(frame, config.camera)
            np.testing.assert_allclose(obs.points, expected.points, atol=1e-9)

    def test_seed_reproducible(self):
        config = scene_config(noise_px=2.0)
        first = generate_scene(config)
        second = generate_scene(config)
        assert [f.joints for f in first.frames] == [f.joints for f in second.frames]
        other = generate_scene(scene_config(noise_px=2.0, seed=2))
        assert first.frames[0].joints != other.frames[0].joints

    def test_noise_independent_of_duration(self):
        short = generate_scene(scene_config(noise_px=2.0, duration=1.0))
        long = generate_scene(scene_config(noise_px=2.0, duration=2.0))
        assert [f.joints for f in short.frames] == [f.joints for f in long.frames[:len(short.frames)]]

    def test_random_walk_reproducible(self):
        ego = {"random_walk_deg": 1.0}
        first = generate_scene(scene_config(ego_motion=ego)).true_states
        second = generate_scene(scene_config(ego_motion=ego)).true_states
        pd.testing.assert_frame_equal(first, second)
        assert first["theta_deg"].abs().max() > 0.0

    def test_shoulders_instead_of_neck(self, heights):
        config = scene_config(emit_neck=False)
        frame = generate_scene(config).frames[0]
        assert "neck" not in frame.joints
        assert {"left_shoulder", "right_shoulder"} <= set(frame.joints)
        obs = reduce_to_four_points(frame, config.camera)
        expected = forward_project(PoseState(0.3, 3.0, 0.5), heights)
        np.testing.assert_allclose(obs.points[0], expected.points[0], atol=1e-9)

    def test_distance_ground_truth(self):
        scene = generate_scene(scene_config(ground_truth="distance"))
        record = scene.ground_truth[0]
        assert record.pelvis_xyz is None
        assert record.distance == pytest.approx(np.hypot(0.3, np.hypot(0.5, 3.0)))

    def test_out_of_bounds_state(self):
        with pytest.raises(StateOutOfBounds):
            generate_scene(scene_config(persons=[{"person": 0, "waypoints": [[0.0, 50.0]]}]))

    def test_write_scene(self, tmp_path):
        paths = write_scene(generate_scene(scene_config()), tmp_path / "scene", {"seed": 1, "config_hash": "h"})
        assert len(load_frames(paths["frames"])) == 20
        assert paths["true_states"].read_text(encoding="utf-8").startswith("# person_locator")
        assert len(read_table(paths["true_states"])) == 20

    def test_bundled_scene_config(self):
        config = SyntheticSceneConfig.model_validate(load_config_file(DATA_DIR / "scene_config.toml"))
        assert config.frame_count == 1800
        assert config.ego_motion.theta_amplitude_deg == 15.0


def walking_config(**overrides):
    data = {
        "duration": 6.0,
        "persons": [{"person": 0, "waypoints": [[0.0, 2.0], [0.5, 5.0]], "speed": 0.5}],
        "ego_motion": {"theta_amplitude_deg": 10.0, "theta_frequency": 0.5,
                       "phi_amplitude_deg": 5.0, "phi_frequency": 0.3,
                       "h_c_mean": 0.5, "h_c_amplitude": 0.03, "h_c_frequency": 0.5},
    }
    data.update(overrides)
    return scene_config(**data)


class TestEndToEnd:
    def test_noiseless_pipeline_recovers_pelvis(self):
        config = walking_config()
        scene = generate_scene(config)
        with LocalizationPipeline(config.camera, {None: config.heights}) as pipeline:
            table = pipeline.to_table(pipeline.run(scene.frames))
        report = compute_metrics(table, scene.ground_truth)
        assert report.frame_count == 60
        assert report.errors["location_error"].max() < 1e-3

    @pytest.mark.slow
    def test_noisy_regression(self):
        started = time.perf_counter()
        config = SyntheticSceneConfig.model_validate(load_config_file(DATA_DIR / "scene_config.toml"))
        scene = generate_scene(config)
        with LocalizationPipeline(config.camera, {None: config.heights}) as pipeline:
            outcomes = pipeline.run(scene.frames)
            table = pipeline.to_table(outcomes)
        report = compute_metrics(table, scene.ground_truth)
        assert report.frame_count >= 0.95 * config.frame_count
        assert report.ade < 0.15
        assert report.vde < 0.01
        assert report.ade <= report.ale
        assert time.perf_counter() - started < 60.0
