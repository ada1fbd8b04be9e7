from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from roughcheb.errors import InvalidArgument


STANDARD_MATURITIES: Tuple[float, ...] = (0.3, 0.6, 0.9, 1.2, 1.5, 1.8, 2.0)
STANDARD_STRIKES: Tuple[float, ...] = (
    0.7, 0.75, 0.8, 0.85, 0.9, 0.95, 1.0, 1.05, 1.1, 1.15, 1.2, 1.25, 1.3,
)


def _strictly_increasing(xs: Sequence[float]) -> bool:
    return all(b > a for a, b in zip(xs, xs[1:]))


@dataclass(frozen=True)
class ForwardVarianceCurve:
    """
    Piecewise-constant, left-continuous forward variance.

    Pillar i holds `values[i]` on (times[i-1], times[i]]; the first pillar also covers
    [0, times[0]] and the last value is extended beyond the final pillar time.
    """

    times: Tuple[float, ...]
    values: Tuple[float, ...]

    def __post_init__(self) -> None:
        times = tuple(float(t) for t in self.times)
        values = tuple(float(v) for v in self.values)
        if not times or len(times) != len(values):
            raise InvalidArgument(f"need matching, non-empty pillar times/values, got {len(times)}/{len(values)}")
        if times[0] < 0 or not _strictly_increasing(times):
            raise InvalidArgument(f"pillar times must be >= 0 and strictly increasing, got {times}")
        if not all(math.isfinite(v) and v > 0 for v in values):
            raise InvalidArgument(f"forward variances must be positive, got {values}")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    @classmethod
    def constant(cls, value: float) -> "ForwardVarianceCurve":
        return cls((0.0,), (float(value),))

    @classmethod
    def uniform(cls, values: Sequence[float], horizon: float) -> "ForwardVarianceCurve":
        """Pillars evenly spaced on (0, horizon]."""
        m = len(values)
        if m == 0 or not horizon > 0:
            raise InvalidArgument(f"need values and a positive horizon, got {m} values, horizon {horizon}")
        return cls(tuple(horizon * (i + 1) / m for i in range(m)), tuple(values))

    @property
    def pillar_count(self) -> int:
        return len(self.values)

    @property
    def is_constant(self) -> bool:
        return self.pillar_count == 1

    def __call__(self, t) -> np.ndarray:
        pos = np.searchsorted(np.asarray(self.times), np.asarray(t, dtype=float), side="left")
        return np.asarray(self.values)[np.minimum(pos, self.pillar_count - 1)]

    def integral(self, t: float) -> float:
        """Integral of the curve over [0, t]."""
        total, prev = 0.0, 0.0
        for i, (end, v) in enumerate(zip(self.times, self.values)):
            if i == self.pillar_count - 1:
                end = max(end, t)
            seg_end = min(end, t)
            if seg_end > prev:
                total += v * (seg_end - prev)
                prev = seg_end
            if prev >= t:
                break
        return total


@dataclass(frozen=True)
class RoughBergomiParams:
    """Model point theta; flattened as (xi pillar values..., eta, rho, hurst)."""

    xi: ForwardVarianceCurve
    eta: float
    rho: float
    hurst: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.eta) and self.eta > 0):
            raise InvalidArgument(f"eta must be > 0, got {self.eta}")
        if not -1.0 <= self.rho <= 1.0:
            raise InvalidArgument(f"rho must be in [-1, 1], got {self.rho}")
        if not 0.0 < self.hurst < 1.0:
            raise InvalidArgument(f"hurst must be in (0, 1), got {self.hurst}")

    @property
    def dimension(self) -> int:
        return self.xi.pillar_count + 3

    def to_vector(self) -> np.ndarray:
        return np.array(list(self.xi.values) + [self.eta, self.rho, self.hurst], dtype=float)

    @classmethod
    def from_vector(
        cls, theta: Sequence[float], *, pillar_times: Optional[Sequence[float]] = None
    ) -> "RoughBergomiParams":
        vec = [float(v) for v in theta]
        if len(vec) < 4:
            raise InvalidArgument(f"parameter vector needs at least 4 entries, got {len(vec)}")
        xi_values = vec[:-3]
        if pillar_times is None:
            if len(xi_values) != 1:
                raise InvalidArgument("pillar times are required for a term-structured forward variance")
            curve = ForwardVarianceCurve.constant(xi_values[0])
        else:
            curve = ForwardVarianceCurve(tuple(pillar_times), tuple(xi_values))
        return cls(curve, vec[-3], vec[-2], vec[-1])

    def to_json(self) -> dict:
        return {
            "xi_times": list(self.xi.times),
            "xi_values": list(self.xi.values),
            "eta": self.eta,
            "rho": self.rho,
            "hurst": self.hurst,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "RoughBergomiParams":
        try:
            curve = ForwardVarianceCurve(tuple(obj["xi_times"]), tuple(obj["xi_values"]))
            return cls(curve, float(obj["eta"]), float(obj["rho"]), float(obj["hurst"]))
        except (KeyError, TypeError, ValueError) as e:
            raise InvalidArgument(f"malformed parameter record: {e}") from e


@dataclass(frozen=True)
class SurfaceSpec:
    maturities: Tuple[float, ...]
    strikes: Tuple[float, ...]

    def __post_init__(self) -> None:
        mats = tuple(float(t) for t in self.maturities)
        strikes = tuple(float(k) for k in self.strikes)
        if not mats or not strikes:
            raise InvalidArgument("surface needs at least one maturity and one strike")
        if mats[0] <= 0 or not _strictly_increasing(mats):
            raise InvalidArgument(f"maturities must be positive and increasing, got {mats}")
        if strikes[0] <= 0 or not _strictly_increasing(strikes):
            raise InvalidArgument(f"strikes must be positive and increasing, got {strikes}")
        object.__setattr__(self, "maturities", mats)
        object.__setattr__(self, "strikes", strikes)

    @classmethod
    def standard(cls) -> "SurfaceSpec":
        return cls(STANDARD_MATURITIES, STANDARD_STRIKES)

    @property
    def shape(self) -> Tuple[int, int]:
        return (len(self.maturities), len(self.strikes))

    def to_json(self) -> dict:
        return {"maturities": list(self.maturities), "strikes": list(self.strikes)}

    @classmethod
    def from_json(cls, obj: dict) -> "SurfaceSpec":
        try:
            return cls(tuple(obj["maturities"]), tuple(obj["strikes"]))
        except (KeyError, TypeError) as e:
            raise InvalidArgument(f"malformed surface spec: {e}") from e


@dataclass(frozen=True, eq=False)
class VolSurface:
    """Implied vols by (maturity row, strike column) with weights and a validity mask."""

    spec: SurfaceSpec
    quotes: np.ndarray
    weights: Optional[np.ndarray] = None
    valid: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        shape = self.spec.shape
        q = np.array(self.quotes, dtype=float).reshape(shape)
        w = np.ones(shape) if self.weights is None else np.array(self.weights, dtype=float).reshape(shape)
        if self.valid is None:
            m = np.isfinite(q) & (q > 0)
        else:
            m = np.array(self.valid, dtype=bool).reshape(shape)
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise InvalidArgument("weights must be finite and >= 0")
        if np.any(m & ~(np.isfinite(q) & (q > 0))):
            raise InvalidArgument("valid quotes must be positive and finite")
        # Invalid cells never carry a number.
        q = np.where(m, q, np.nan)
        for name, arr in (("quotes", q), ("weights", w), ("valid", m)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def valid_count(self) -> int:
        return int(np.count_nonzero(self.valid))

    def with_weights(self, weights: np.ndarray) -> "VolSurface":
        return VolSurface(self.spec, self.quotes, weights, self.valid)
