"""
Surrogate-based calibration of rough Bergomi parameters to an implied-vol surface.

Loss is sum over valid cells of w_ij * (q_ij - v_ij(theta))^2. The optimizer is a
bound-constrained trust-region least-squares solve on the weighted residuals, started from
Latin-hypercube points, with the Jacobian taken from the surrogate's derivative rows.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import least_squares
from scipy.stats import qmc

from roughcheb.errors import InvalidArgument, InvalidState, OutOfDomain, UndefinedResult
from roughcheb.models import RoughBergomiParams, VolSurface
from roughcheb.surrogate import Surrogate


logger = logging.getLogger(__name__)

POLICY_REJECT = "reject"
POLICY_CLAMP = "clamp"
POLICY_PRICER_FALLBACK = "pricer-fallback"
POLICIES = (POLICY_REJECT, POLICY_CLAMP, POLICY_PRICER_FALLBACK)


@dataclass(frozen=True)
class CalibrationConfig:
    starts: int = 5
    seed: int = 0
    policy: str = POLICY_REJECT
    gtol: float = 1e-10
    xtol: float = 1e-12
    ftol: float = 1e-15
    max_nfev: int = 500

    def __post_init__(self) -> None:
        if self.starts < 1:
            raise InvalidArgument(f"starts must be >= 1, got {self.starts}")
        if self.policy not in POLICIES:
            raise InvalidArgument(f"policy must be one of {POLICIES}, got {self.policy!r}")
        if self.max_nfev < 1:
            raise InvalidArgument(f"max_nfev must be >= 1, got {self.max_nfev}")


@dataclass
class _Counters:
    """Per-calibration counters."""

    surrogate_calls: int = 0
    out_of_box: int = 0
    trajectory: List[float] = field(default_factory=list)


@dataclass(frozen=True)
class CalibrationResult:
    theta_star: RoughBergomiParams
    theta: Tuple[float, ...]
    rmse: float
    loss: float
    loss_trajectory: Tuple[float, ...]
    start_losses: Tuple[Tuple[float, float], ...]
    iterations: int
    surrogate_calls: int
    pricer_calls: int
    out_of_box_evaluations: int
    termination: str
    wall_time_s: float = 0.0

    def to_json(self, *, include_timing: bool = False) -> Dict[str, Any]:
        out: Dict[str, Any] = {
            "theta_star": self.theta_star.to_json(),
            "theta": list(self.theta),
            "rmse": self.rmse,
            "loss": self.loss,
            "loss_trajectory": list(self.loss_trajectory),
            "start_losses": [list(p) for p in self.start_losses],
            "iterations": self.iterations,
            "surrogate_calls": self.surrogate_calls,
            "pricer_calls": self.pricer_calls,
            "out_of_box_evaluations": self.out_of_box_evaluations,
            "termination": self.termination,
        }
        if include_timing:
            out["wall_time_s"] = self.wall_time_s
        return out


def _resolve_theta(theta: Sequence[float], s: Surrogate, policy: str, counters: Optional[_Counters]) -> np.ndarray:
    th = np.asarray(theta, dtype=float).reshape(-1)
    if s.contains_theta(th):
        return th
    if counters is not None:
        counters.out_of_box += 1
    if policy == POLICY_CLAMP:
        lo, hi = s.theta_bounds
        return np.clip(th, lo, hi)
    if policy == POLICY_PRICER_FALLBACK:
        raise InvalidState("pricer fallback outside the surrogate domain is not implemented")
    raise OutOfDomain(f"theta {tuple(th.tolist())} outside surrogate box", point=tuple(th.tolist()))


def _residuals(
    theta: Sequence[float], surface: VolSurface, s: Surrogate, policy: str, counters: Optional[_Counters] = None
) -> np.ndarray:
    th = _resolve_theta(theta, s, policy, counters)
    v = s.surface(th, surface.spec.maturities, surface.spec.strikes)
    if counters is not None:
        counters.surrogate_calls += 1
    m = surface.valid
    return np.sqrt(surface.weights[m]) * (v[m] - surface.quotes[m])


def _residual_jacobian(
    theta: Sequence[float], surface: VolSurface, s: Surrogate, policy: str, counters: Optional[_Counters] = None
) -> np.ndarray:
    th = _resolve_theta(theta, s, policy, counters)
    jac = s.surface_jacobian(th, surface.spec.maturities, surface.spec.strikes)
    if counters is not None:
        counters.surrogate_calls += 1
    m = surface.valid
    return np.sqrt(surface.weights[m])[:, None] * jac[m]


def loss(theta: Sequence[float], surface: VolSurface, s: Surrogate, *, policy: str = POLICY_REJECT) -> float:
    r = _residuals(theta, surface, s, policy)
    return float(np.dot(r, r))


def loss_gradient(
    theta: Sequence[float], surface: VolSurface, s: Surrogate, *, policy: str = POLICY_REJECT
) -> np.ndarray:
    r = _residuals(theta, surface, s, policy)
    jac = _residual_jacobian(theta, surface, s, policy)
    # d/dtheta sum r^2 = 2 J^T r, with r = sqrt(w) (v - q).
    return 2.0 * jac.T @ r


def rmse(a: VolSurface, b: VolSurface) -> float:
    if a.spec != b.spec:
        raise InvalidArgument("surfaces have different maturity/strike specs")
    m = a.valid & b.valid
    if not np.any(m):
        raise UndefinedResult("surfaces share no valid cell")
    diff = a.quotes[m] - b.quotes[m]
    return float(np.sqrt(np.mean(diff * diff)))


def surrogate_surface(s: Surrogate, theta: Sequence[float], like: VolSurface) -> VolSurface:
    vols = s.surface(theta, like.spec.maturities, like.spec.strikes)
    return VolSurface(like.spec, vols)


def _start_points(lo: np.ndarray, hi: np.ndarray, count: int, seed: int) -> np.ndarray:
    if lo.size == 0:
        return np.zeros((1, 0))
    unit = qmc.LatinHypercube(d=lo.size, seed=seed).random(count)
    return qmc.scale(unit, lo, hi)


def calibrate(
    surface: VolSurface,
    s: Surrogate,
    bounds: Optional[Tuple[Sequence[float], Sequence[float]]] = None,
    cfg: CalibrationConfig = CalibrationConfig(),
) -> CalibrationResult:
    """Best of cfg.starts bounded least-squares runs; every evaluated point stays inside `bounds`."""
    t0 = time.perf_counter()
    dom_lo, dom_hi = s.theta_bounds
    lo = np.asarray(bounds[0], dtype=float) if bounds is not None else dom_lo.copy()
    hi = np.asarray(bounds[1], dtype=float) if bounds is not None else dom_hi.copy()
    if lo.shape != dom_lo.shape or hi.shape != dom_hi.shape:
        raise InvalidArgument(f"bounds must have {s.theta_dim} entries")
    if np.any(lo > hi):
        raise InvalidArgument("lower bound above upper bound")
    if not (s.contains_theta(lo) and s.contains_theta(hi)):
        raise InvalidArgument("calibration bounds must lie inside the surrogate domain")
    if surface.valid_count == 0:
        raise UndefinedResult("surface has no valid quote")

    free = lo < hi
    fixed_values = lo.copy()
    counters = _Counters()
    # The optimizer sees weights normalised to unit total, so a common weight factor
    # leaves its tolerances and path unchanged; reported losses use the caller's weights.
    total_weight = float(np.sum(surface.weights[surface.valid]))
    if total_weight <= 0.0:
        total_weight = 1.0
    unit = surface.with_weights(surface.weights / total_weight)

    def full_theta(x: np.ndarray) -> np.ndarray:
        th = fixed_values.copy()
        th[free] = x
        return th

    def fun(x: np.ndarray) -> np.ndarray:
        r = _residuals(full_theta(x), unit, s, cfg.policy, counters)
        value = total_weight * float(np.dot(r, r))
        best = min(counters.trajectory[-1], value) if counters.trajectory else value
        counters.trajectory.append(best)
        return r

    def jac(x: np.ndarray) -> np.ndarray:
        return _residual_jacobian(full_theta(x), unit, s, cfg.policy, counters)[:, free]

    starts = _start_points(lo[free], hi[free], cfg.starts, cfg.seed)
    best_x: Optional[np.ndarray] = None
    best_loss = np.inf
    best_reason = ""
    iterations = 0
    start_losses: List[Tuple[float, float]] = []

    for k, x0 in enumerate(starts):
        r0 = fun(x0)
        initial = total_weight * float(np.dot(r0, r0))
        if not free.any():
            x, final, reason = x0, initial, "fixed-point"
        else:
            res = least_squares(
                fun,
                x0,
                jac=jac,
                bounds=(lo[free], hi[free]),
                method="trf",
                gtol=cfg.gtol,
                xtol=cfg.xtol,
                ftol=cfg.ftol,
                max_nfev=cfg.max_nfev,
            )
            x = np.clip(res.x, lo[free], hi[free])
            final = total_weight * 2.0 * float(res.cost)
            reason = str(res.message)
            iterations += int(res.nfev)
        start_losses.append((initial, final))
        logger.debug("start %d: loss %.3e -> %.3e (%s)", k, initial, final, reason)
        if final < best_loss:
            best_x, best_loss, best_reason = x, final, reason
        if not free.any():
            break

    assert best_x is not None
    if best_loss >= min(i for i, _ in start_losses) and free.any() and best_loss > 0:
        best_reason = "no-progress"
    theta = full_theta(best_x)
    fitted = surrogate_surface(s, theta, surface)
    result = CalibrationResult(
        theta_star=s.params(theta),
        theta=tuple(float(v) for v in theta),
        rmse=rmse(surface, fitted),
        loss=best_loss,
        loss_trajectory=tuple(counters.trajectory),
        start_losses=tuple(start_losses),
        iterations=iterations,
        surrogate_calls=counters.surrogate_calls,
        pricer_calls=0,
        out_of_box_evaluations=counters.out_of_box,
        termination=best_reason,
        wall_time_s=time.perf_counter() - t0,
    )
    logger.info("calibrated: loss %.3e, rmse %.3e, %d evaluations", result.loss, result.rmse, iterations)
    return result


def rmse_quantiles(values: Sequence[float]) -> Dict[str, float]:
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        raise UndefinedResult("no RMSE values to summarise")
    q50, q90, q99 = np.quantile(arr, [0.5, 0.9, 0.99])
    return {"count": int(arr.size), "q50": float(q50), "q90": float(q90), "q99": float(q99), "max": float(arr.max())}
