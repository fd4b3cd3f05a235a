"""Tests for the bounded dogleg least-squares solver."""

import numpy as np
import pytest
from scipy.optimize import least_squares

from person_locator.dogbox import CauchyLoss, clamp_inward, dogbox_minimize

UNBOUNDED = (np.full(2, -np.inf), np.full(2, np.inf))


def rosenbrock(x):
    return np.array([10.0 * (x[1] - x[0] ** 2), 1.0 - x[0]])


def rosenbrock_jac(x):
    return np.array([[-20.0 * x[0], 10.0], [-1.0, 0.0]])


class TestCauchyLoss:
    def test_values(self):
        loss = CauchyLoss(0.5)
        rho, drho, d2rho = loss(np.array([0.0, 0.25]))
        np.testing.assert_allclose(rho, [0.0, 0.25 * np.log(2.0)])
        np.testing.assert_allclose(drho, [1.0, 0.5])
        np.testing.assert_allclose(d2rho, [-4.0, -1.0])

    def test_nearly_quadratic_for_small_residuals(self):
        rho, _, _ = CauchyLoss(1.0)(np.array([1e-6]))
        assert rho[0] == pytest.approx(1e-6, rel=1e-5)

    def test_scale_must_be_positive(self):
        with pytest.raises(ValueError):
            CauchyLoss(0.0)


class TestClampInward:
    def test_moves_off_bounds(self):
        x = clamp_inward(np.array([0.0, 5.0, 2.0]), np.array([0.0, 0.0, 0.0]), np.array([1.0, 5.0, 4.0]))
        np.testing.assert_allclose(x, [1e-9, 5.0 - 5e-9, 2.0])

    def test_infinite_bounds_untouched(self):
        x = clamp_inward(np.array([3.0]), np.array([-np.inf]), np.array([np.inf]))
        assert x[0] == 3.0


class TestDogboxMinimize:
    def test_solution_on_bound(self):
        report = dogbox_minimize(lambda x: x - 3.0, lambda x: np.ones((1, 1)), [0.5],
                                 bounds=(np.array([0.0]), np.array([2.0])))
        assert report.x[0] == 2.0
        assert report.status == 1
        assert report.converged
        assert report.cost == pytest.approx(0.5)

    def test_rosenbrock(self):
        report = dogbox_minimize(rosenbrock, rosenbrock_jac, [-1.2, 1.0], bounds=UNBOUNDED, max_iterations=200)
        np.testing.assert_allclose(report.x, [1.0, 1.0], atol=1e-6)
        assert report.converged

    def test_linear_problem_exact(self, rng):
        A = rng.normal(size=(6, 5)) + 3.0 * np.eye(6, 5)
        x_true = np.array([0.3, -0.2, 0.5, 0.1, -0.4])
        b = A @ x_true
        bounds = (np.full(5, -np.inf), np.full(5, np.inf))
        report = dogbox_minimize(lambda x: A @ x - b, lambda x: A, np.zeros(5), bounds=bounds)
        np.testing.assert_allclose(report.x, x_true, atol=1e-8)

    def test_rank_deficient_uses_gradient_step(self):
        report = dogbox_minimize(lambda x: np.array([x[0] + x[1] - 1.0]), lambda x: np.array([[1.0, 1.0]]),
                                 [0.0, 0.0], bounds=UNBOUNDED)
        assert report.converged
        assert report.x.sum() == pytest.approx(1.0)
        np.testing.assert_allclose(report.x, [0.5, 0.5])

    def test_cost_monotone_and_feasible(self):
        lower, upper = np.array([-2.0, -0.5]), np.array([0.8, 2.0])
        report = dogbox_minimize(rosenbrock, rosenbrock_jac, [-1.2, 1.0], bounds=(lower, upper),
                                 max_iterations=200)
        assert np.all(np.diff(report.cost_history) <= 0)
        for x in report.x_history:
            assert np.all(x >= lower) and np.all(x <= upper)
        assert report.x[0] == pytest.approx(0.8)

    def test_matches_scipy_dogbox(self, rng):
        t = np.linspace(0.0, 3.0, 30)
        y = 2.0 * np.exp(-1.3 * t) + 0.01 * rng.normal(size=t.size)
        lower, upper = np.array([0.0, -1.0]), np.array([3.0, 0.5])

        def residuals(p):
            return p[0] * np.exp(p[1] * t) - y

        def jacobian(p):
            e = np.exp(p[1] * t)
            return np.column_stack([e, p[0] * t * e])

        ours = dogbox_minimize(residuals, jacobian, [1.0, 0.0], bounds=(lower, upper), max_iterations=200)
        reference = least_squares(residuals, [1.0, 0.0], jac=jacobian, bounds=(lower, upper), method="dogbox")
        np.testing.assert_allclose(ours.x, reference.x, atol=1e-5)
        assert ours.x[1] == pytest.approx(-1.0, abs=1e-9)

    def test_cauchy_loss_resists_outlier(self):
        t = np.linspace(0.0, 1.0, 20)
        y = 1.0 + 2.0 * t
        y[10] += 50.0

        def residuals(p):
            return p[0] + p[1] * t - y

        def jacobian(p):
            return np.column_stack([np.ones_like(t), t])

        plain = dogbox_minimize(residuals, jacobian, [0.0, 0.0], bounds=UNBOUNDED, max_iterations=200)
        robust = dogbox_minimize(residuals, jacobian, [0.0, 0.0], bounds=UNBOUNDED,
                                 loss=CauchyLoss(1.0), max_iterations=200)
        assert np.abs(plain.x - [1.0, 2.0]).max() > 1.0
        np.testing.assert_allclose(robust.x, [1.0, 2.0], atol=0.1)

    def test_grouped_cost(self):
        loss = CauchyLoss(1.0)
        report = dogbox_minimize(lambda x: np.array([x[0] - 1.0, x[1] + 2.0]), lambda x: np.eye(2), [0.0, 0.0],
                                 bounds=UNBOUNDED, loss=loss, group_size=2, max_iterations=200)
        np.testing.assert_allclose(report.x, [1.0, -2.0], atol=1e-6)
        assert report.cost < 1e-12

    def test_non_finite_step_rejected(self):
        def residuals(x):
            return np.array([np.nan if x[0] > 1.5 else x[0] - 3.0])

        report = dogbox_minimize(residuals, lambda x: np.ones((1, 1)), [0.0],
                                 bounds=(np.array([-np.inf]), np.array([np.inf])), max_iterations=100)
        assert report.x[0] <= 1.5
        assert np.all(np.isfinite(report.cost_history))

    def test_low_gain_step_rejected(self):
        # The supplied derivative overstates the slope 1e7 times: every trial step
        # lowers the cost, but by a tiny fraction of the model prediction
        def residuals(x):
            return np.array([1.0 - 1e-7 * x[0]])

        report = dogbox_minimize(residuals, lambda x: -np.ones((1, 1)), [0.0],
                                 bounds=(np.array([-10.0]), np.array([10.0])), max_iterations=5)
        assert report.accepted_steps == 0
        assert report.x[0] == 0.0
        assert report.cost_history == [0.5]

    def test_iteration_limit(self):
        report = dogbox_minimize(rosenbrock, rosenbrock_jac, [-1.2, 1.0], bounds=UNBOUNDED, max_iterations=2)
        assert report.iterations <= 2
        assert report.status == 0
        assert not report.converged

    def test_invalid_bounds(self):
        with pytest.raises(ValueError):
            dogbox_minimize(lambda x: x, lambda x: np.eye(1), [0.0], bounds=(np.array([1.0]), np.array([1.0])))

    def test_non_finite_start(self):
        with pytest.raises(ValueError):
            dogbox_minimize(lambda x: np.array([np.inf]), lambda x: np.eye(1), [0.0],
                            bounds=(np.array([-np.inf]), np.array([np.inf])))
