import math
import unittest

from roughcheb.black_scholes import (
    CALL,
    PUT,
    bs_price,
    bs_vega,
    implied_vol,
    no_arbitrage_band,
    otm_implied_vol,
)
from roughcheb.errors import InvalidArgument, NoSolution


class TestBlackScholes(unittest.TestCase):
    def test_at_the_money_price(self) -> None:
        self.assertAlmostEqual(bs_price(1.0, 1.0, 0.2), 0.07965567, places=8)

    def test_put_call_parity(self) -> None:
        c = bs_price(0.9, 0.5, 0.3)
        p = bs_price(0.9, 0.5, 0.3, kind=PUT)
        self.assertAlmostEqual(c - p, 1.0 - 0.9, places=14)

    def test_zero_vol_is_intrinsic(self) -> None:
        self.assertAlmostEqual(bs_price(0.8, 1.0, 0.0), 0.2, places=15)
        self.assertEqual(bs_price(1.2, 1.0, 0.0), 0.0)

    def test_vega_matches_finite_difference(self) -> None:
        h = 1e-6
        fd = (bs_price(1.1, 0.7, 0.25 + h) - bs_price(1.1, 0.7, 0.25 - h)) / (2 * h)
        self.assertAlmostEqual(bs_vega(1.1, 0.7, 0.25), fd, places=7)

    def test_bad_inputs(self) -> None:
        with self.assertRaises(InvalidArgument):
            bs_price(-1.0, 1.0, 0.2)
        with self.assertRaises(InvalidArgument):
            bs_price(1.0, 1.0, -0.2)
        with self.assertRaises(InvalidArgument):
            bs_price(1.0, 1.0, 0.2, kind="digital")


class TestImpliedVol(unittest.TestCase):
    def test_round_trip(self) -> None:
        price = bs_price(0.9, 0.5, 0.35)
        self.assertAlmostEqual(implied_vol(price, 0.9, 0.5), 0.35, delta=1e-10)

    def test_round_trip_grid(self) -> None:
        for k in (0.7, 0.85, 1.0, 1.15, 1.3):
            for t in (0.3, 1.2, 2.0):
                for vol in (0.15, 0.2, 0.6):
                    got = otm_implied_vol(bs_price(k, t, vol), k, t)
                    self.assertAlmostEqual(got, vol, delta=1e-8, msg=f"K={k} T={t} vol={vol}")

    def test_put_inversion(self) -> None:
        price = bs_price(0.8, 1.0, 0.25, kind=PUT)
        self.assertAlmostEqual(implied_vol(price, 0.8, 1.0, kind=PUT), 0.25, delta=1e-10)

    def test_price_at_intrinsic_has_no_solution(self) -> None:
        with self.assertRaises(NoSolution) as ctx:
            implied_vol(1.0 - 0.7 + 1e-15, 0.7, 1.0)
        self.assertAlmostEqual(ctx.exception.band[0], 0.3, places=15)
        self.assertEqual(ctx.exception.band[1], 1.0)

    def test_price_above_spot_has_no_solution(self) -> None:
        with self.assertRaises(NoSolution):
            implied_vol(1.0, 1.0, 1.0)
        with self.assertRaises(NoSolution):
            implied_vol(math.nan, 1.0, 1.0)

    def test_band(self) -> None:
        self.assertEqual(no_arbitrage_band(0.8), (0.19999999999999996, 1.0))
        self.assertEqual(no_arbitrage_band(1.2, kind=PUT), (0.19999999999999996, 1.2))
        self.assertEqual(no_arbitrage_band(1.2, kind=CALL), (0.0, 1.0))


if __name__ == "__main__":
    unittest.main()
