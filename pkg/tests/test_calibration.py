import math
import unittest

import numpy as np

from roughcheb.calibration import (
    POLICY_CLAMP,
    POLICY_PRICER_FALLBACK,
    CalibrationConfig,
    calibrate,
    loss,
    loss_gradient,
    rmse,
    rmse_quantiles,
    surrogate_surface,
)
from roughcheb.chebyshev import ChebyshevGrid, FullChebyshevTensor, build_full_tensor
from roughcheb.errors import InvalidArgument, InvalidState, OutOfDomain, UndefinedResult
from roughcheb.models import SurfaceSpec, VolSurface
from roughcheb.surrogate import Surrogate

BOUNDS = [(0.01, 0.1), (0.5, 2.5), (-0.9, -0.1), (0.05, 0.4), (0.1, 2.0), (0.7, 1.3)]
SPEC = SurfaceSpec((0.5, 1.0, 1.5), (0.8, 0.9, 1.0, 1.1, 1.2))


def smile(x) -> float:
    xi, eta, rho, hurst, t, k = x
    return 0.1 + 2.0 * xi + 0.05 * eta * (1.0 - k) - 0.1 * rho * (k - 1.0) ** 2 + 0.2 * hurst * t


def make_surrogate() -> Surrogate:
    return Surrogate(build_full_tensor(smile, ChebyshevGrid.from_bounds(BOUNDS, [3] * 6)))


def theta_independent_surrogate() -> Surrogate:
    # Two nodes per axis sit on the box corners, so the (T, K) table is reproduced exactly.
    bounds = [(0.01, 0.1), (0.5, 2.5), (-0.9, -0.1), (0.05, 0.4), (0.5, 1.0), (0.9, 1.1)]
    grid = ChebyshevGrid.from_bounds(bounds, [2] * 6)
    table = np.array([[0.22, 0.3], [0.25, 0.30]])
    return Surrogate(FullChebyshevTensor(grid, np.broadcast_to(table, grid.shape)))


class TestLoss(unittest.TestCase):
    def test_two_by_two_example(self) -> None:
        s = theta_independent_surrogate()
        q = VolSurface(SurfaceSpec((0.5, 1.0), (0.9, 1.1)), [[0.2, 0.3], [0.25, 0.35]])
        self.assertAlmostEqual(loss([0.05, 1.0, -0.5, 0.2], q, s), 0.0029, places=12)

    def test_zero_weights_give_zero_loss(self) -> None:
        s = theta_independent_surrogate()
        q = VolSurface(SurfaceSpec((0.5, 1.0), (0.9, 1.1)), [[0.2, 0.3], [0.25, 0.35]])
        self.assertEqual(loss([0.05, 1.0, -0.5, 0.2], q.with_weights(np.zeros((2, 2))), s), 0.0)

    def test_invalid_cells_are_skipped(self) -> None:
        s = theta_independent_surrogate()
        q = VolSurface(SurfaceSpec((0.5, 1.0), (0.9, 1.1)), [[0.2, 0.3], [0.25, math.nan]])
        self.assertAlmostEqual(loss([0.05, 1.0, -0.5, 0.2], q, s), 0.0004, places=12)

    def test_gradient_matches_finite_difference(self) -> None:
        s = make_surrogate()
        q = surrogate_surface(s, [0.05, 1.0, -0.4, 0.3], VolSurface(SPEC, np.full(SPEC.shape, 0.2)))
        theta = np.array([0.04, 1.5, -0.6, 0.2])
        grad = loss_gradient(theta, q, s)
        for j in range(4):
            h = 1e-6 * (BOUNDS[j][1] - BOUNDS[j][0])
            e = np.zeros(4)
            e[j] = h
            fd = (loss(theta + e, q, s) - loss(theta - e, q, s)) / (2 * h)
            self.assertAlmostEqual(grad[j], fd, delta=1e-7 + 1e-6 * abs(fd))

    def test_policies_outside_the_box(self) -> None:
        s = make_surrogate()
        q = VolSurface(SPEC, np.full(SPEC.shape, 0.2))
        outside = [0.2, 1.5, -0.5, 0.2]
        with self.assertRaises(OutOfDomain):
            loss(outside, q, s)
        self.assertEqual(loss(outside, q, s, policy=POLICY_CLAMP), loss([0.1, 1.5, -0.5, 0.2], q, s))
        with self.assertRaises(InvalidState):
            loss(outside, q, s, policy=POLICY_PRICER_FALLBACK)


class TestRmse(unittest.TestCase):
    def test_one_by_two_example(self) -> None:
        spec = SurfaceSpec((1.0,), (0.9, 1.1))
        self.assertAlmostEqual(rmse(VolSurface(spec, [[0.2, 0.4]]), VolSurface(spec, [[0.2, 0.3]])), 0.070711, places=6)

    def test_constant_offset(self) -> None:
        base = np.linspace(0.15, 0.3, 15).reshape(SPEC.shape)
        self.assertAlmostEqual(rmse(VolSurface(SPEC, base), VolSurface(SPEC, base + 0.01)), 0.01, places=12)

    def test_undefined_and_mismatched(self) -> None:
        spec = SurfaceSpec((1.0,), (1.0,))
        with self.assertRaises(UndefinedResult):
            rmse(VolSurface(spec, [[math.nan]]), VolSurface(spec, [[0.2]]))
        with self.assertRaises(InvalidArgument):
            rmse(VolSurface(spec, [[0.2]]), VolSurface(SurfaceSpec((2.0,), (1.0,)), [[0.2]]))

    def test_quantiles_monotone(self) -> None:
        q = rmse_quantiles(np.random.default_rng(0).exponential(0.003, size=200))
        self.assertEqual(q["count"], 200)
        self.assertLessEqual(q["q50"], q["q90"])
        self.assertLessEqual(q["q90"], q["q99"])
        self.assertLessEqual(q["q99"], q["max"])
        with self.assertRaises(UndefinedResult):
            rmse_quantiles([])

    def test_metric_properties(self) -> None:
        rng = np.random.default_rng(2)
        for _ in range(50):
            a, b, c = (VolSurface(SPEC, rng.uniform(0.1, 0.5, SPEC.shape)) for _ in range(3))
            self.assertEqual(rmse(a, b), rmse(b, a))
            self.assertEqual(rmse(a, a), 0.0)
            self.assertLessEqual(rmse(a, c), rmse(a, b) + rmse(b, c) + 1e-12)


class TestCalibrate(unittest.TestCase):
    def setUp(self) -> None:
        self.s = make_surrogate()
        self.truth = [0.04, 1.5, -0.5, 0.2]
        self.target = surrogate_surface(self.s, self.truth, VolSurface(SPEC, np.full(SPEC.shape, 0.2)))

    def test_round_trip(self) -> None:
        res = calibrate(self.target, self.s)
        self.assertLess(res.loss, 1e-10)
        self.assertLess(res.rmse, 1e-5)
        np.testing.assert_allclose(res.theta, self.truth, atol=1e-4)
        self.assertEqual(res.pricer_calls, 0)
        self.assertEqual(res.out_of_box_evaluations, 0)
        self.assertEqual(len(res.start_losses), 5)
        self.assertGreater(res.surrogate_calls, 5)
        traj = np.array(res.loss_trajectory)
        self.assertTrue(np.all(np.diff(traj) <= 0.0))
        self.assertAlmostEqual(res.theta_star.hurst, res.theta[3])
        self.assertNotIn("wall_time_s", res.to_json())

    def test_collapsed_bound_is_held(self) -> None:
        lo = [0.01, 0.5, -0.9, 0.2]
        hi = [0.1, 2.5, -0.1, 0.2]
        res = calibrate(self.target, self.s, bounds=(lo, hi), cfg=CalibrationConfig(starts=2))
        self.assertEqual(res.theta[3], 0.2)
        self.assertLess(res.loss, 1e-10)

    def test_fully_collapsed_box(self) -> None:
        res = calibrate(self.target, self.s, bounds=(self.truth, self.truth))
        self.assertEqual(res.termination, "fixed-point")
        self.assertEqual(res.theta, tuple(self.truth))
        self.assertLess(res.loss, 1e-20)

    def test_bounds_checked(self) -> None:
        with self.assertRaises(InvalidArgument):
            calibrate(self.target, self.s, bounds=([0.0, 0.5, -0.9, 0.05], [0.1, 2.5, -0.1, 0.4]))
        with self.assertRaises(InvalidArgument):
            calibrate(self.target, self.s, bounds=([0.05, 0.5, -0.9, 0.05], [0.04, 2.5, -0.1, 0.4]))
        with self.assertRaises(InvalidArgument):
            calibrate(self.target, self.s, bounds=([0.01], [0.1]))

    def test_empty_surface(self) -> None:
        empty = VolSurface(SPEC, np.full(SPEC.shape, math.nan))
        with self.assertRaises(UndefinedResult):
            calibrate(empty, self.s)

    def test_same_seed_same_result(self) -> None:
        noisy = VolSurface(SPEC, self.target.quotes + 0.002 * np.random.default_rng(1).standard_normal(SPEC.shape))
        a = calibrate(noisy, self.s, cfg=CalibrationConfig(seed=3))
        b = calibrate(noisy, self.s, cfg=CalibrationConfig(seed=3))
        self.assertEqual(a.theta, b.theta)
        self.assertEqual(a.loss, b.loss)

    def test_common_weight_factor_leaves_the_fit_unchanged(self) -> None:
        rng = np.random.default_rng(4)
        noisy = VolSurface(SPEC, self.target.quotes + 0.002 * rng.standard_normal(SPEC.shape))
        weighted = noisy.with_weights(rng.uniform(0.5, 2.0, SPEC.shape))
        base = calibrate(weighted, self.s)

        c = 2.0 ** -20
        scaled = calibrate(weighted.with_weights(c * weighted.weights), self.s)
        self.assertEqual(scaled.theta, base.theta)
        self.assertEqual(scaled.iterations, base.iterations)
        self.assertEqual(scaled.surrogate_calls, base.surrogate_calls)
        self.assertEqual(scaled.loss, c * base.loss)
        np.testing.assert_array_equal(np.array(scaled.loss_trajectory), c * np.array(base.loss_trajectory))

        tiny = calibrate(weighted.with_weights(1e-6 * weighted.weights), self.s)
        np.testing.assert_allclose(tiny.theta, base.theta, rtol=1e-6, atol=1e-8)
        self.assertAlmostEqual(tiny.loss / base.loss, 1e-6, delta=1e-12)

    def test_config_validation(self) -> None:
        with self.assertRaises(InvalidArgument):
            CalibrationConfig(starts=0)
        with self.assertRaises(InvalidArgument):
            CalibrationConfig(policy="ignore")


if __name__ == "__main__":
    unittest.main()
