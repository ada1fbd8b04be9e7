import math
import unittest

import numpy as np

from roughcheb.errors import InvalidArgument
from roughcheb.models import (
    STANDARD_MATURITIES,
    STANDARD_STRIKES,
    ForwardVarianceCurve,
    RoughBergomiParams,
    SurfaceSpec,
    VolSurface,
)


class TestForwardVarianceCurve(unittest.TestCase):
    def test_constant_curve(self) -> None:
        c = ForwardVarianceCurve.constant(0.04)
        self.assertTrue(c.is_constant)
        np.testing.assert_array_equal(c([0.0, 0.5, 3.0]), [0.04, 0.04, 0.04])
        self.assertAlmostEqual(c.integral(2.0), 0.08, places=15)

    def test_uniform_pillars_left_continuous(self) -> None:
        c = ForwardVarianceCurve.uniform([0.01, 0.02, 0.03, 0.04], 2.0)
        self.assertEqual(c.times, (0.5, 1.0, 1.5, 2.0))
        # Pillar i covers (t_{i-1}, t_i].
        np.testing.assert_array_equal(c([0.0, 0.5, 0.5000001, 1.0, 1.7, 2.0, 5.0]), [0.01, 0.01, 0.02, 0.02, 0.04, 0.04, 0.04])

    def test_integral_piecewise(self) -> None:
        c = ForwardVarianceCurve.uniform([0.01, 0.02], 1.0)
        self.assertAlmostEqual(c.integral(0.25), 0.0025, places=15)
        self.assertAlmostEqual(c.integral(1.0), 0.005 + 0.01, places=15)
        # Flat extrapolation past the last pillar.
        self.assertAlmostEqual(c.integral(2.0), 0.015 + 0.02, places=15)

    def test_rejects_bad_curves(self) -> None:
        with self.assertRaises(InvalidArgument):
            ForwardVarianceCurve((1.0, 0.5), (0.01, 0.02))
        with self.assertRaises(InvalidArgument):
            ForwardVarianceCurve((1.0,), (-0.01,))
        with self.assertRaises(InvalidArgument):
            ForwardVarianceCurve((), ())


class TestRoughBergomiParams(unittest.TestCase):
    def test_vector_round_trip_constant(self) -> None:
        p = RoughBergomiParams.from_vector([0.04, 1.5, -0.7, 0.1])
        self.assertEqual(p.dimension, 4)
        np.testing.assert_array_equal(p.to_vector(), [0.04, 1.5, -0.7, 0.1])

    def test_term_structure_needs_pillar_times(self) -> None:
        theta = [0.01 * (i + 1) for i in range(8)] + [1.5, -0.7, 0.1]
        with self.assertRaises(InvalidArgument):
            RoughBergomiParams.from_vector(theta)
        times = tuple(0.25 * (i + 1) for i in range(8))
        p = RoughBergomiParams.from_vector(theta, pillar_times=times)
        self.assertEqual(p.dimension, 11)
        self.assertEqual(p.xi.times, times)

    def test_parameter_bounds(self) -> None:
        xi = ForwardVarianceCurve.constant(0.04)
        with self.assertRaises(InvalidArgument):
            RoughBergomiParams(xi, 0.0, -0.5, 0.1)
        with self.assertRaises(InvalidArgument):
            RoughBergomiParams(xi, 1.0, -1.5, 0.1)
        with self.assertRaises(InvalidArgument):
            RoughBergomiParams(xi, 1.0, -0.5, 1.0)

    def test_json_round_trip(self) -> None:
        p = RoughBergomiParams(ForwardVarianceCurve.uniform([0.02, 0.03], 2.0), 2.0, -0.3, 0.2)
        self.assertEqual(RoughBergomiParams.from_json(p.to_json()), p)
        with self.assertRaises(InvalidArgument):
            RoughBergomiParams.from_json({"eta": 1.0})


class TestSurfaceSpec(unittest.TestCase):
    def test_default_grid(self) -> None:
        spec = SurfaceSpec.standard()
        self.assertEqual(spec.shape, (7, 13))
        self.assertEqual(spec.maturities, STANDARD_MATURITIES)
        self.assertEqual(spec.strikes[0], 0.7)
        self.assertEqual(spec.strikes[-1], 1.3)
        self.assertEqual(len(STANDARD_STRIKES), 13)

    def test_rejects_unordered(self) -> None:
        with self.assertRaises(InvalidArgument):
            SurfaceSpec((0.5, 0.3), (1.0,))
        with self.assertRaises(InvalidArgument):
            SurfaceSpec((0.5,), (0.0, 1.0))


class TestVolSurface(unittest.TestCase):
    def test_invalid_cells_masked(self) -> None:
        spec = SurfaceSpec((0.5, 1.0), (0.9, 1.1))
        s = VolSurface(spec, [[0.2, math.nan], [0.25, -1.0]])
        self.assertEqual(s.valid_count, 2)
        self.assertTrue(math.isnan(s.quotes[1, 1]))
        np.testing.assert_array_equal(s.weights, np.ones((2, 2)))

    def test_valid_mask_must_point_at_quotes(self) -> None:
        spec = SurfaceSpec((0.5,), (1.0,))
        with self.assertRaises(InvalidArgument):
            VolSurface(spec, [[math.nan]], valid=[[True]])
        with self.assertRaises(InvalidArgument):
            VolSurface(spec, [[0.2]], weights=[[-1.0]])

    def test_with_weights(self) -> None:
        spec = SurfaceSpec((0.5,), (0.9, 1.1))
        s = VolSurface(spec, [[0.2, 0.3]]).with_weights(np.array([[2.0, 0.0]]))
        np.testing.assert_array_equal(s.weights, [[2.0, 0.0]])
        self.assertEqual(s.valid_count, 2)


if __name__ == "__main__":
    unittest.main()
