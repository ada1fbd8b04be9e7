"""Black-Scholes prices with unit spot and zero rates, and their implied-vol inverse."""

from __future__ import annotations

import math
from typing import Tuple

from scipy.stats import norm

from roughcheb.errors import InvalidArgument, NoSolution, SolverFailure


VOL_LO = 1e-4
VOL_HI = 5.0
MAX_ITERATIONS = 200
# A price within this distance of the band edge has no usable time value.
BAND_SLACK = 1e-14

CALL = "call"
PUT = "put"


def _check_inputs(strike: float, maturity: float, spot: float, kind: str) -> None:
    if not (strike > 0 and maturity > 0 and spot > 0):
        raise InvalidArgument(f"strike, maturity and spot must be positive, got {strike}, {maturity}, {spot}")
    if kind not in (CALL, PUT):
        raise InvalidArgument(f"option kind must be 'call' or 'put', got {kind!r}")


def bs_price(strike: float, maturity: float, vol: float, spot: float = 1.0, *, kind: str = CALL) -> float:
    _check_inputs(strike, maturity, spot, kind)
    if vol < 0:
        raise InvalidArgument(f"vol must be >= 0, got {vol}")
    if vol == 0:
        call = max(spot - strike, 0.0)
    else:
        sd = vol * math.sqrt(maturity)
        d1 = (math.log(spot / strike) + 0.5 * sd * sd) / sd
        call = spot * norm.cdf(d1) - strike * norm.cdf(d1 - sd)
    return call if kind == CALL else call - spot + strike


def bs_vega(strike: float, maturity: float, vol: float, spot: float = 1.0) -> float:
    sd = vol * math.sqrt(maturity)
    d1 = (math.log(spot / strike) + 0.5 * sd * sd) / sd
    return spot * norm.pdf(d1) * math.sqrt(maturity)


def no_arbitrage_band(strike: float, spot: float = 1.0, *, kind: str = CALL) -> Tuple[float, float]:
    if kind == CALL:
        return (max(spot - strike, 0.0), spot)
    return (max(strike - spot, 0.0), strike)


def implied_vol(
    price: float,
    strike: float,
    maturity: float,
    spot: float = 1.0,
    *,
    kind: str = CALL,
    lo: float = VOL_LO,
    hi: float = VOL_HI,
) -> float:
    """
    Safeguarded Newton iteration on [lo, hi]: a Newton step that leaves the current
    bracket is replaced by bisection.
    """
    _check_inputs(strike, maturity, spot, kind)
    band = no_arbitrage_band(strike, spot, kind=kind)
    if not math.isfinite(price) or price <= band[0] + BAND_SLACK or price >= band[1]:
        raise NoSolution(f"price {price!r} outside no-arbitrage band {band}", band=band)

    a, b = lo, hi
    fa = bs_price(strike, maturity, a, spot, kind=kind) - price
    fb = bs_price(strike, maturity, b, spot, kind=kind) - price
    if fa > 0 or fb < 0:
        raise NoSolution(f"price {price!r} not attained for vols in [{lo}, {hi}]", band=band)

    vol = min(max(math.sqrt(2.0 * abs(math.log(spot / strike)) / maturity), 0.2), hi)
    for _ in range(MAX_ITERATIONS):
        f = bs_price(strike, maturity, vol, spot, kind=kind) - price
        if abs(f) <= 1e-16 * spot:
            return vol
        if f > 0:
            b = vol
        else:
            a = vol
        vega = bs_vega(strike, maturity, vol, spot)
        step = f / vega if vega > 0 else math.inf
        candidate = vol - step
        if not a < candidate < b:
            candidate = 0.5 * (a + b)
        if abs(candidate - vol) <= 1e-13 * vol or b - a <= 1e-15 * max(1.0, b):
            return candidate
        vol = candidate
    raise SolverFailure(
        f"implied vol did not converge in {MAX_ITERATIONS} iterations (price {price}, strike {strike}, maturity {maturity})",
        iterations=MAX_ITERATIONS,
    )


def otm_implied_vol(call_price: float, strike: float, maturity: float, spot: float = 1.0) -> float:
    """Invert through the out-of-the-money option: puts below the spot, calls at or above."""
    if strike < spot:
        return implied_vol(call_price - spot + strike, strike, maturity, spot, kind=PUT)
    return implied_vol(call_price, strike, maturity, spot, kind=CALL)
