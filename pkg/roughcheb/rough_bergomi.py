"""
Monte Carlo pricing of European calls under rough Bergomi.

With zero rates and unit spot the log-price X solves

    dX_t = -V_t/2 dt + sqrt(V_t) dW_t,   V_t = xi(t) * exp(eta * Y_t - eta^2 t^(2H) / 2),
    Y_t  = sqrt(2H) * int_0^t (t - s)^(H - 1/2) dZ_s,

where W = rho Z + sqrt(1 - rho^2) B. The default scheme samples (Y, Z) on the time grid
exactly from their joint Gaussian law; the hybrid scheme (first kernel cell exact, the rest
by Riemann sums at optimal points) is the faster alternative.
"""

from __future__ import annotations

import logging
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import toeplitz
from scipy.special import hyp2f1

from roughcheb.black_scholes import otm_implied_vol
from roughcheb.errors import InvalidArgument, NoSolution, SimulationFailure, SolverFailure
from roughcheb.models import RoughBergomiParams, SurfaceSpec, VolSurface


logger = logging.getLogger(__name__)

SCHEMES = ("exact", "hybrid")
COVARIANCE_JITTER = 1e-12


@dataclass(frozen=True)
class MCConfig:
    paths: int = 60_000
    time_steps_per_year: int = 120
    rng_seed: int = 0
    scheme: str = "exact"
    antithetic: bool = False
    block_size: int = 4096
    workers: int = 1

    def __post_init__(self) -> None:
        if self.paths < 2:
            raise InvalidArgument(f"paths must be >= 2, got {self.paths}")
        if self.time_steps_per_year < 1:
            raise InvalidArgument(f"time_steps_per_year must be >= 1, got {self.time_steps_per_year}")
        if self.scheme not in SCHEMES:
            raise InvalidArgument(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if self.block_size < 2 or self.workers < 1:
            raise InvalidArgument(f"block_size must be >= 2 and workers >= 1, got {self.block_size}, {self.workers}")
        if self.antithetic and (self.paths % 2 or self.block_size % 2):
            raise InvalidArgument("antithetic sampling needs an even path count and block size")


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t_i = i / steps_per_year, i = 0..steps."""

    steps_per_year: int
    steps: int

    @classmethod
    def covering(cls, horizon: float, steps_per_year: int) -> "TimeGrid":
        if not horizon > 0:
            raise InvalidArgument(f"horizon must be positive, got {horizon}")
        return cls(steps_per_year, max(1, math.ceil(horizon * steps_per_year - 1e-9)))

    @property
    def dt(self) -> float:
        return 1.0 / self.steps_per_year

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.steps + 1) * self.dt

    def snap(self, t: float) -> int:
        """Index of the grid time nearest to t (never 0)."""
        return int(min(max(round(t * self.steps_per_year), 1), self.steps))


def volterra_covariance(hurst: float, times: np.ndarray) -> np.ndarray:
    """
    Covariance of (Y_{t_1..t_n}, Z_{t_1..t_n}) for positive times t, as a 2n x 2n matrix.
    """
    t = np.asarray(times, dtype=float)
    n = t.size
    h = float(hurst)
    gamma = 0.5 - h
    s_mat = np.minimum.outer(t, t)
    l_mat = np.maximum.outer(t, t)
    ratio = s_mat / l_mat
    cyy = s_mat ** (2 * h) * (2 * h / (h + 0.5)) * ratio ** gamma * hyp2f1(1.0, gamma, 1.0 + (h + 0.5), ratio)
    np.fill_diagonal(cyy, t ** (2 * h))
    # Cov(Y_t, Z_s) for row t, column s.
    tt = t[:, None]
    cyz = math.sqrt(2 * h) / (h + 0.5) * (tt ** (h + 0.5) - (tt - np.minimum(tt, t[None, :])) ** (h + 0.5))
    czz = s_mat
    cov = np.empty((2 * n, 2 * n))
    cov[:n, :n] = cyy
    cov[:n, n:] = cyz
    cov[n:, :n] = cyz.T
    cov[n:, n:] = czz
    return cov


@lru_cache(maxsize=32)
def _exact_factor(hurst: float, steps_per_year: int, steps: int) -> np.ndarray:
    grid = TimeGrid(steps_per_year, steps)
    cov = volterra_covariance(hurst, grid.times[1:])
    cov[np.diag_indices_from(cov)] += COVARIANCE_JITTER
    try:
        factor = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        # Y and Z coincide at H = 1/2, so the matrix is singular but still PSD.
        w, v = np.linalg.eigh(cov)
        if w[0] < -1e-10 * max(w[-1], 1.0):
            raise SimulationFailure(
                f"Volterra covariance not positive semi-definite for H={hurst} (min eigenvalue {w[0]:.3e})"
            )
        factor = v * np.sqrt(np.clip(w, 0.0, None))
    factor.setflags(write=False)
    return factor


def _hybrid_weights(hurst: float, grid: TimeGrid) -> Tuple[np.ndarray, np.ndarray]:
    """(2x2 Cholesky factor of the per-step pair, Riemann-sum Toeplitz matrix)."""
    a = hurst - 0.5
    n = grid.steps_per_year
    cov = np.array(
        [
            [1.0 / n, 1.0 / ((a + 1.0) * n ** (a + 1.0))],
            [1.0 / ((a + 1.0) * n ** (a + 1.0)), 1.0 / ((2.0 * a + 1.0) * n ** (2.0 * a + 1.0))],
        ]
    )
    chol = np.linalg.cholesky(cov + COVARIANCE_JITTER * np.eye(2))
    k = np.arange(grid.steps + 1, dtype=float)
    kernel = np.zeros(grid.steps + 1)
    if grid.steps >= 2 and a != 0.0:
        kk = k[2:]
        optimal = ((kk ** (a + 1.0) - (kk - 1.0) ** (a + 1.0)) / (a + 1.0)) ** (1.0 / a)
        kernel[2:] = (optimal / n) ** a
    first_col = np.zeros(grid.steps)
    return chol, toeplitz(first_col, kernel)


def _normals(rng: np.random.Generator, rows: int, cols: int, antithetic: bool) -> np.ndarray:
    if not antithetic:
        return rng.standard_normal((rows, cols))
    half = rng.standard_normal((rows // 2, cols))
    out = np.empty((rows, cols))
    out[0::2] = half
    out[1::2] = -half
    return out


def _block_volterra(
    hurst: float, grid: TimeGrid, rows: int, mc: MCConfig, rng: np.random.Generator
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(Y on t_0..t_N, Z increments, independent B increments) for one block of paths."""
    n = grid.steps
    y = np.zeros((rows, n + 1))
    if mc.scheme == "exact":
        factor = _exact_factor(float(hurst), grid.steps_per_year, n)
        g = _normals(rng, rows, 2 * n, mc.antithetic) @ factor.T
        y[:, 1:] = g[:, :n]
        z = np.concatenate([np.zeros((rows, 1)), g[:, n:]], axis=1)
        dz = np.diff(z, axis=1)
    else:
        chol, riemann = _hybrid_weights(float(hurst), grid)
        pairs = _normals(rng, rows, 2 * n, mc.antithetic).reshape(rows, n, 2) @ chol.T
        dz = pairs[:, :, 0]
        if hurst == 0.5:
            y[:, 1:] = np.cumsum(dz, axis=1)
        else:
            y[:, 1:] = pairs[:, :, 1]
            y += dz @ riemann
            y *= math.sqrt(2.0 * hurst)
    db = _normals(rng, rows, n, mc.antithetic) * math.sqrt(grid.dt)
    return y, dz, db


def _block_sizes(mc: MCConfig) -> List[int]:
    full, rest = divmod(mc.paths, mc.block_size)
    return [mc.block_size] * full + ([rest] if rest else [])


def _block_generators(mc: MCConfig, count: int) -> List[np.random.Generator]:
    # One counter-based stream per block: results do not depend on the worker count.
    return [np.random.Generator(np.random.Philox(s)) for s in np.random.SeedSequence(mc.rng_seed).spawn(count)]


def _run_blocks(mc: MCConfig, job) -> List[np.ndarray]:
    sizes = _block_sizes(mc)
    gens = _block_generators(mc, len(sizes))
    if mc.workers > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(max_workers=mc.workers) as pool:
            return list(pool.map(job, sizes, gens))
    return [job(rows, gen) for rows, gen in zip(sizes, gens)]


def simulate_volterra(hurst: float, horizon: float, mc: MCConfig) -> Tuple[np.ndarray, np.ndarray]:
    """Grid times and simulated Volterra paths Y (paths x (steps + 1)), with Y_0 = 0."""
    if not 0.0 < hurst < 1.0:
        raise InvalidArgument(f"hurst must be in (0, 1), got {hurst}")
    grid = TimeGrid.covering(horizon, mc.time_steps_per_year)
    blocks = _run_blocks(mc, lambda rows, rng: _block_volterra(hurst, grid, rows, mc, rng)[0])
    return grid.times, np.concatenate(blocks, axis=0)


def simulate_terminal_log_prices(
    p: RoughBergomiParams, maturities: Sequence[float], mc: MCConfig
) -> np.ndarray:
    """Log-prices (paths x maturities), each maturity snapped to the nearest grid time."""
    mats = [float(t) for t in maturities]
    if not mats or min(mats) <= 0:
        raise InvalidArgument(f"maturities must be positive, got {mats}")
    grid = TimeGrid.covering(max(mats), mc.time_steps_per_year)
    cols = np.array([grid.snap(t) for t in mats]) - 1
    times = grid.times[:-1]
    xi = p.xi(times)
    compensator = 0.5 * p.eta ** 2 * times ** (2 * p.hurst)
    rho_bar = math.sqrt(max(1.0 - p.rho ** 2, 0.0))

    def job(rows: int, rng: np.random.Generator) -> np.ndarray:
        y, dz, db = _block_volterra(p.hurst, grid, rows, mc, rng)
        v = xi * np.exp(p.eta * y[:, :-1] - compensator)
        dx = -0.5 * v * grid.dt + np.sqrt(v) * (p.rho * dz + rho_bar * db)
        return np.cumsum(dx, axis=1)[:, cols]

    out = np.concatenate(_run_blocks(mc, job), axis=0)
    if not np.all(np.isfinite(out)):
        raise SimulationFailure(f"non-finite log-prices for parameters {p.to_json()}")
    return out


def snapped_maturities(maturities: Sequence[float], mc: MCConfig) -> Tuple[float, ...]:
    grid = TimeGrid.covering(max(maturities), mc.time_steps_per_year)
    return tuple(grid.snap(t) * grid.dt for t in maturities)


@dataclass(frozen=True, eq=False)
class PriceSurface:
    spec: SurfaceSpec
    prices: np.ndarray
    std_errors: np.ndarray
    simulated_maturities: Tuple[float, ...]


def price_call_surface(p: RoughBergomiParams, spec: SurfaceSpec, mc: MCConfig) -> PriceSurface:
    """Every (maturity, strike) cell is priced from one shared set of paths."""
    log_prices = simulate_terminal_log_prices(p, spec.maturities, mc)
    spots = np.exp(log_prices)
    strikes = np.asarray(spec.strikes)
    prices = np.empty(spec.shape)
    errors = np.empty(spec.shape)
    for i in range(len(spec.maturities)):
        payoff = np.maximum(spots[:, i, None] - strikes[None, :], 0.0)
        if mc.antithetic:
            payoff = 0.5 * (payoff[0::2] + payoff[1::2])
        prices[i] = payoff.mean(axis=0)
        errors[i] = payoff.std(axis=0, ddof=1) / math.sqrt(payoff.shape[0])
    return PriceSurface(spec, prices, errors, snapped_maturities(spec.maturities, mc))


def implied_vols_from_prices(prices: PriceSurface) -> VolSurface:
    """Invert each cell; cells without a solution are marked invalid instead of filled."""
    spec = prices.spec
    vols = np.full(spec.shape, np.nan)
    for i, t in enumerate(spec.maturities):
        for j, k in enumerate(spec.strikes):
            try:
                vols[i, j] = otm_implied_vol(float(prices.prices[i, j]), k, t)
            except (NoSolution, SolverFailure) as e:
                logger.debug("cell (T=%s, K=%s) invalid: %s", t, k, e)
    surface = VolSurface(spec, vols)
    if surface.valid_count == 0:
        raise SimulationFailure("every cell of the implied-vol surface is invalid")
    return surface


def implied_vol_surface(p: RoughBergomiParams, spec: SurfaceSpec, mc: MCConfig) -> VolSurface:
    return implied_vols_from_prices(price_call_surface(p, spec, mc))


class RoughBergomiPricer:
    """
    Parameter vector -> implied-vol surface, counting calls.

    Every call uses the same seed, so neighbouring parameter points share their random
    numbers and the resulting map is smooth in theta.
    """

    def __init__(
        self, spec: SurfaceSpec, mc: MCConfig, *, pillar_times: Optional[Sequence[float]] = None
    ) -> None:
        self.spec = spec
        self.mc = mc
        self.pillar_times = tuple(pillar_times) if pillar_times is not None else None
        self._lock = threading.Lock()
        self._calls = 0

    @property
    def calls(self) -> int:
        with self._lock:
            return self._calls

    def params(self, theta: Sequence[float]) -> RoughBergomiParams:
        return RoughBergomiParams.from_vector(theta, pillar_times=self.pillar_times)

    def __call__(self, theta: Sequence[float]) -> VolSurface:
        with self._lock:
            self._calls += 1
        return implied_vol_surface(self.params(theta), self.spec, self.mc)
