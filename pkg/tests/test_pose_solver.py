"""Tests for the forward model, reprojection cost, the linear start and the pose solver."""

import math

import numpy as np
import pytest
from conftest import sample_states

from person_locator.config import SolverConfig, WeightConfig
from person_locator.errors import BehindCamera, DegenerateObservation, InsufficientObservations
from person_locator.observation import FourPointObservation
from person_locator.pose_solver import (
    PoseState,
    analytic_jacobian,
    camera_frame_points,
    forward_project,
    initialize_state,
    linear_initialization,
    reprojection_cost,
    robot_frame_points,
    rotation_from_angles,
    solve_localization,
)

POSITION_TOL = 1e-3
ANGLE_TOL = math.radians(0.1)


def recovered(result, truth: PoseState) -> bool:
    est = result.state
    return (abs(est.x_f - truth.x_f) < POSITION_TOL
            and abs(est.z_f - truth.z_f) < POSITION_TOL
            and abs(est.h_c - truth.h_c) < POSITION_TOL
            and abs(est.theta - truth.theta) < ANGLE_TOL
            and abs(est.phi - truth.phi) < ANGLE_TOL)


def numeric_jacobian(state, obs, heights, weights, step=1e-6):
    base = state.as_vector()
    columns = []
    for k in range(5):
        delta = np.zeros(5)
        delta[k] = step
        _, plus = reprojection_cost(PoseState.from_vector(base + delta), obs, heights, weights)
        _, minus = reprojection_cost(PoseState.from_vector(base - delta), obs, heights, weights)
        columns.append((plus - minus) / (2 * step))
    return np.column_stack(columns)


class TestRotation:
    def test_identity(self):
        np.testing.assert_array_equal(rotation_from_angles(0.0, 0.0), np.eye(3))

    def test_quarter_pitch(self):
        R = rotation_from_angles(math.pi / 2, 0.0)
        np.testing.assert_allclose(R @ np.array([0.0, -1.0, 0.0]), [0.0, 0.0, -1.0], atol=1e-15)

    def test_orthonormal(self, rng):
        for theta, phi in rng.uniform(-math.pi, math.pi, size=(50, 2)):
            R = rotation_from_angles(theta, phi)
            np.testing.assert_allclose(R.T @ R, np.eye(3), atol=1e-12)
            assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-12)

    def test_factor_order(self):
        theta, phi = 0.3, -0.2
        rx = np.array([[1, 0, 0], [0, math.cos(theta), -math.sin(theta)], [0, math.sin(theta), math.cos(theta)]])
        rz = np.array([[math.cos(phi), -math.sin(phi), 0], [math.sin(phi), math.cos(phi), 0], [0, 0, 1]])
        np.testing.assert_allclose(rotation_from_angles(theta, phi), rz @ rx, atol=1e-15)


class TestForwardProject:
    def test_level_camera(self, heights, level_state):
        obs = forward_project(level_state, heights)
        np.testing.assert_allclose(obs.points, [[0, -0.25], [0, -0.125], [0, 0.0], [0, 0.1]], atol=1e-15)
        assert obs.visible.all()

    def test_lateral_offset(self, heights):
        obs = forward_project(PoseState(2.0, 4.0, 0.5), heights)
        np.testing.assert_allclose(obs.points[:, 0], 0.5)

    def test_pitched_against_direct_evaluation(self, heights):
        theta = math.radians(10.0)
        state = PoseState(0.3, 4.0, 0.5, theta, 0.0)
        obs = forward_project(state, heights)
        c, s = math.cos(theta), math.sin(theta)
        for i, h in enumerate(heights.as_array()):
            x, y, z = 0.3, 0.5 - h, 4.0
            # R^T = Rx(theta)^T for phi = 0
            px, py, pz = x, c * y + s * z, -s * y + c * z
            assert obs.points[i, 0] == pytest.approx(px / pz, abs=1e-14)
            assert obs.points[i, 1] == pytest.approx(py / pz, abs=1e-14)

    def test_positive_pitch_raises_axis(self, heights):
        level = forward_project(PoseState(0.0, 4.0, 0.5), heights)
        pitched = forward_project(PoseState.from_degrees(0.0, 4.0, 0.5, theta_deg=10.0), heights)
        # Looking up moves the person down in the image
        assert np.all(pitched.points[:, 1] > level.points[:, 1])

    def test_rays_rotate_back_to_level(self, heights, rng):
        for _ in range(20):
            state = PoseState(rng.uniform(-1, 1), rng.uniform(3, 6), rng.uniform(0.3, 0.8),
                              rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3))
            obs = forward_project(state, heights)
            level = forward_project(PoseState(state.x_f, state.z_f, state.h_c), heights)
            R = rotation_from_angles(state.theta, state.phi)
            rays = np.column_stack([obs.points, np.ones(4)]) @ R.T
            np.testing.assert_allclose(rays[:, :2] / rays[:, 2:], level.points, atol=1e-12)

    def test_camera_points_are_rotated_robot_points(self, heights):
        state = PoseState.from_degrees(0.5, 3.0, 0.6, 12.0, -7.0)
        R = rotation_from_angles(state.theta, state.phi)
        np.testing.assert_allclose(camera_frame_points(state, heights) @ R.T,
                                   robot_frame_points(state, heights), atol=1e-14)

    def test_behind_camera(self, heights):
        with pytest.raises(BehindCamera):
            forward_project(PoseState(0.0, -2.0, 0.5), heights)


class TestReprojectionCost:
    def test_zero_at_truth(self, heights, weights, level_state):
        cost, residuals = reprojection_cost(level_state, forward_project(level_state, heights), heights, weights)
        assert cost == 0.0
        np.testing.assert_array_equal(residuals, 0.0)

    def test_term_by_term(self, heights, weights, level_state):
        obs = forward_project(level_state, heights)
        perturbed = PoseState(0.0, 4.5, 0.5)
        cost, _ = reprojection_cost(perturbed, obs, heights, weights, cauchy_scale=0.01)

        expected = 0.0
        for n, h, w in zip(obs.points, heights.as_array(), weights.as_array()):
            predicted = np.array([0.0, (0.5 - h) / 4.5])
            s = w * np.sum((n - predicted) ** 2)
            expected += 1e-4 * math.log(1.0 + s / 1e-4)
        assert cost == pytest.approx(expected, rel=1e-12)

    def test_quadratic_limit(self, heights, level_state):
        obs = FourPointObservation.from_points([[0.01, -0.25], [np.nan, np.nan], [np.nan, np.nan], [np.nan, np.nan]])
        single = WeightConfig(w_neck=1.0, w_hip=1.0, w_knee=1.0, w_ankle=1.0)
        quadratic, _ = reprojection_cost(level_state, obs, heights, single, cauchy_scale=None)
        wide, _ = reprojection_cost(level_state, obs, heights, single, cauchy_scale=1e4)
        assert quadratic == pytest.approx(1e-4, rel=1e-9)
        assert wide == pytest.approx(quadratic, rel=1e-9)

    def test_invisible_points_ignored(self, heights, weights, level_state):
        obs = forward_project(level_state, heights)
        shifted = FourPointObservation.from_points(obs.points + [[0, 0], [0, 0], [0, 0], [5.0, 5.0]])
        cost, residuals = reprojection_cost(level_state, shifted.without("ankle"), heights, weights)
        assert cost == 0.0
        assert residuals.shape == (6,)

    def test_behind_camera_is_infinite(self, heights, weights, level_state):
        obs = forward_project(level_state, heights)
        cost, _ = reprojection_cost(PoseState(0.0, -1.0, 0.5), obs, heights, weights)
        assert cost == math.inf

    def test_cauchy_bounded_by_quadratic(self, heights, weights, level_state, rng):
        obs = forward_project(level_state, heights)
        for _ in range(20):
            state = PoseState(rng.uniform(-1, 1), rng.uniform(2, 8), 0.5)
            robust, _ = reprojection_cost(state, obs, heights, weights)
            quadratic, _ = reprojection_cost(state, obs, heights, weights, cauchy_scale=None)
            assert robust <= quadratic


class TestAnalyticJacobian:
    def test_level_closed_form(self, heights, weights, level_state):
        obs = forward_project(level_state, heights)
        jac = analytic_jacobian(level_state, obs, heights, weights)
        sqrt_w = np.sqrt(weights.as_array())
        np.testing.assert_allclose(jac[0::2, 0], -sqrt_w / 4.0)
        np.testing.assert_allclose(jac[1::2, 2], -sqrt_w / 4.0)

    def test_matches_finite_differences(self, heights, weights, rng):
        for state in sample_states(rng, 50, heights):
            obs = forward_project(state, heights)
            np.testing.assert_allclose(analytic_jacobian(state, obs, heights, weights),
                                       numeric_jacobian(state, obs, heights, weights), rtol=1e-5, atol=1e-7)

    @pytest.mark.slow
    def test_matches_finite_differences_many(self, heights, weights, rng):
        for state in sample_states(rng, 1000, heights):
            obs = forward_project(state, heights)
            np.testing.assert_allclose(analytic_jacobian(state, obs, heights, weights),
                                       numeric_jacobian(state, obs, heights, weights), rtol=1e-5, atol=1e-7)

    def test_rows_only_for_visible(self, heights, weights, level_state):
        obs = forward_project(level_state, heights).without("knee")
        assert analytic_jacobian(level_state, obs, heights, weights).shape == (6, 5)


class TestInitializeState:
    def test_exact_at_level_view(self, heights, level_state):
        init = initialize_state(forward_project(level_state, heights), heights, nominal_h_c=0.45)
        assert init.x_f == pytest.approx(0.0, abs=1e-12)
        assert init.z_f == pytest.approx(4.0, abs=1e-12)
        assert init.h_c == 0.45
        assert init.theta == 0.0 and init.phi == 0.0

    def test_two_points(self, heights):
        obs = FourPointObservation.from_points([[0, -0.25], [np.nan, np.nan], [np.nan, np.nan], [0, 0.1]])
        assert initialize_state(obs, heights).z_f == pytest.approx(1.4 / 0.35)

    def test_depth_clamped(self, heights):
        obs = FourPointObservation.from_points([[0, -1e-4], [0, -5e-5], [0, 0.0], [0, 1e-5]])
        assert initialize_state(obs, heights).z_f == 30.0

    def test_coincident_heights(self, heights):
        obs = FourPointObservation.from_points([[0, 0.1], [0.1, 0.1], [0.2, 0.1], [0.3, 0.1]])
        with pytest.raises(DegenerateObservation):
            initialize_state(obs, heights)

    def test_single_point(self, heights):
        obs = FourPointObservation.from_points([[0, 0.1], [np.nan, np.nan], [np.nan, np.nan], [np.nan, np.nan]])
        with pytest.raises(DegenerateObservation):
            initialize_state(obs, heights)


class TestLinearInitialization:
    def test_exact_on_noiseless(self, heights, rng):
        for state in sample_states(rng, 50, heights):
            init = linear_initialization(forward_project(state, heights), heights)
            np.testing.assert_allclose(init.as_vector(), state.as_vector(), atol=1e-6)

    @pytest.mark.parametrize("missing", ["ankle", "neck"])
    def test_exact_with_three_points(self, heights, rng, missing):
        for state in sample_states(rng, 20, heights):
            obs = forward_project(state, heights).without(missing)
            np.testing.assert_allclose(linear_initialization(obs, heights).as_vector(), state.as_vector(), atol=1e-6)

    def test_level_view(self, heights, level_state):
        init = linear_initialization(forward_project(level_state, heights), heights)
        np.testing.assert_allclose(init.as_vector(), level_state.as_vector(), atol=1e-12)

    def test_two_points(self, heights, level_state):
        obs = forward_project(level_state, heights).without("knee", "ankle")
        assert linear_initialization(obs, heights) is None

    def test_result_within_bounds(self, heights):
        truth = PoseState(0.0, 4.0, 1.6)
        config = SolverConfig()
        init = linear_initialization(forward_project(truth, heights), heights, config=config)
        assert init.within(config.bounds.as_arrays())
        assert init.h_c == 1.2


class TestSolveLocalization:
    def test_recovers_pitched_and_rolled(self, heights):
        truth = PoseState.from_degrees(0.8, 4.0, 0.55, theta_deg=10.0, phi_deg=-5.0)
        result = solve_localization(forward_project(truth, heights), heights)
        assert result.converged
        assert recovered(result, truth)
        assert result.final_cost < 1e-12
        assert np.all(result.per_point_residual_norms < 1e-6)

    def test_far_lateral_pitched_up(self, heights):
        truth = PoseState.from_degrees(9.576, 8.743, 0.45, theta_deg=23.6, phi_deg=-12.0)
        result = solve_localization(forward_project(truth, heights), heights)
        assert result.converged
        assert recovered(result, truth)

    def test_three_points(self, heights):
        truth = PoseState.from_degrees(-0.5, 3.5, 0.45, theta_deg=-8.0, phi_deg=6.0)
        obs = forward_project(truth, heights).without("ankle")
        result = solve_localization(obs, heights)
        assert recovered(result, truth)
        assert math.isnan(result.per_point_residual_norms[3])

    def test_three_points_without_neck(self, heights):
        truth = PoseState.from_degrees(1.2, 5.0, 0.6, theta_deg=12.0, phi_deg=-9.0)
        obs = forward_project(truth, heights).without("neck")
        result = solve_localization(obs, heights)
        assert result.converged
        assert recovered(result, truth)
        assert math.isnan(result.per_point_residual_norms[0])

    def test_starts_at_optimum(self, heights):
        truth = PoseState.from_degrees(0.2, 5.0, 0.5, theta_deg=4.0, phi_deg=2.0)
        result = solve_localization(forward_project(truth, heights), heights, initial=truth)
        assert result.final_cost == 0.0
        assert result.outer_iterations == 1
        assert result.converged
        assert result.state == truth

    def test_identifiability(self, heights, rng):
        states = sample_states(rng, 200, heights)
        hits = sum(recovered(solve_localization(forward_project(s, heights), heights), s) for s in states)
        assert hits / len(states) >= 0.995

    @pytest.mark.parametrize("missing", ["ankle", "neck"])
    def test_identifiability_three_points(self, heights, rng, missing):
        states = sample_states(rng, 100, heights)
        hits = sum(
            recovered(solve_localization(forward_project(s, heights).without(missing), heights), s)
            for s in states
        )
        assert hits / len(states) >= 0.99

    @pytest.mark.slow
    def test_identifiability_full_box(self, heights, rng):
        states = sample_states(rng, 1000, heights)
        results = [solve_localization(forward_project(s, heights), heights) for s in states]
        hits = sum(recovered(result, s) for result, s in zip(results, states))
        assert hits / len(states) >= 0.995
        assert np.median([result.elapsed_s for result in results]) <= 0.005

    @pytest.mark.slow
    @pytest.mark.parametrize("missing", ["ankle", "neck"])
    def test_identifiability_three_points_full(self, heights, rng, missing):
        states = sample_states(rng, 1000, heights)
        hits = sum(
            recovered(solve_localization(forward_project(s, heights).without(missing), heights), s)
            for s in states
        )
        assert hits / len(states) >= 0.99

    def test_iterates_stay_in_bounds(self, heights, rng):
        config = SolverConfig()
        bounds = config.bounds.as_arrays()
        for state in sample_states(rng, 20, heights):
            obs = forward_project(state, heights)
            noisy = FourPointObservation.from_points(obs.points + rng.normal(scale=0.004, size=(4, 2)))
            result = solve_localization(noisy, heights, config=config)
            assert result.state.within(bounds)
            assert np.isfinite(result.final_cost)

    def test_iteration_exhaustion_reported(self, heights):
        truth = PoseState.from_degrees(1.0, 6.0, 0.7, theta_deg=20.0, phi_deg=-15.0)
        config = SolverConfig(max_inner_iterations=1, max_outer_alternations=1,
                              linear_start=False, joint_refinement=False)
        result = solve_localization(forward_project(truth, heights), heights, config=config)
        assert not result.converged
        assert result.final_cost > 0.0
        assert result.iterations_used <= 2

    def test_poor_fit_not_converged(self, heights):
        # Zig-zag image points: no vertical line of model points projects onto them
        obs = FourPointObservation.from_points([[0.5, -0.3], [-0.5, -0.1], [0.5, 0.1], [-0.5, 0.3]])
        result = solve_localization(obs, heights)
        assert not result.converged
        assert np.isfinite(result.final_cost)

    def test_two_points_rejected(self, heights, level_state):
        obs = forward_project(level_state, heights).without("knee", "ankle")
        with pytest.raises(InsufficientObservations):
            solve_localization(obs, heights)

    def test_zero_weight_counts_as_missing(self, heights, level_state):
        obs = forward_project(level_state, heights).without("ankle")
        with pytest.raises(InsufficientObservations):
            solve_localization(obs, heights, weights=WeightConfig(w_neck=0.0))

    def test_metadata_carried(self, heights, level_state):
        obs = forward_project(level_state, heights, frame_id=7, timestamp=0.7, person_id=2)
        result = solve_localization(obs, heights)
        assert (result.frame_id, result.timestamp, result.person_id) == (7, 0.7, 2)
        assert result.elapsed_s >= 0.0
