from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple

import numpy as np

from roughcheb.calibration import CalibrationConfig
from roughcheb.chebyshev import ChebyshevGrid
from roughcheb.completion import CompletionConfig
from roughcheb.errors import InvalidArgument
from roughcheb.models import STANDARD_MATURITIES, STANDARD_STRIKES, SurfaceSpec
from roughcheb.rough_bergomi import MCConfig
from roughcheb.storage import read_json


ENV_ROUGHCHEB_PROFILE = "ROUGHCHEB_PROFILE"
ENV_ROUGHCHEB_THREADS = "ROUGHCHEB_THREADS"

DEFAULT_PROFILE = "desk"
PROFILES: Dict[str, Dict[str, Any]] = {
    "desk": {"n_surfaces": 50, "mc": {"paths": 20_000}},
    "full": {"n_surfaces": 1_000, "mc": {"paths": 60_000}},
}

# Independent random streams derived from the root seed.
STREAMS = {"surfaces": 1, "pricer": 2, "completion": 3, "calibration": 4, "surface_pricer": 5}

Range = Tuple[float, float]


def derive_seed(root: int, stream: str) -> int:
    """Seed of a named stream: first 64-bit word of SeedSequence([root, stream id])."""
    if stream not in STREAMS:
        raise InvalidArgument(f"unknown random stream {stream!r}")
    return int(np.random.SeedSequence([int(root), STREAMS[stream]]).generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True)
class ExperimentConfig:
    profile: str = DEFAULT_PROFILE
    xi_pillars: int = 1
    xi_range: Range = (0.01, 0.16)
    eta_range: Range = (0.5, 4.0)
    rho_range: Range = (-0.95, -0.1)
    hurst_range: Range = (0.025, 0.5)
    maturity_range: Range = (0.3, 2.0)
    strike_range: Range = (0.7, 1.3)
    maturities: Tuple[float, ...] = STANDARD_MATURITIES
    strikes: Tuple[float, ...] = STANDARD_STRIKES
    direct_counts: Tuple[int, ...] = (5, 5, 3, 4, 6, 8)
    tt_points: int = 7
    n_surfaces: int = 50
    seed: int = 0
    out_dir: str = "runs"
    threads: int = 1
    fill_invalid: bool = True
    benchmark_surrogate_evals: int = 10_000
    benchmark_pricer_calls: int = 10
    mc: MCConfig = field(default_factory=lambda: MCConfig(paths=20_000))
    completion: CompletionConfig = field(default_factory=CompletionConfig)
    calibration: CalibrationConfig = field(default_factory=CalibrationConfig)

    def __post_init__(self) -> None:
        if self.profile not in PROFILES:
            raise InvalidArgument(f"unknown profile {self.profile!r}; choose from {sorted(PROFILES)}")
        if self.xi_pillars < 1:
            raise InvalidArgument(f"xi_pillars must be >= 1, got {self.xi_pillars}")
        for name in ("xi_range", "eta_range", "rho_range", "hurst_range", "maturity_range", "strike_range"):
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise InvalidArgument(f"{name} must have lo < hi, got {(lo, hi)}")
        if self.n_surfaces < 0 or self.threads < 1 or self.tt_points < 2:
            raise InvalidArgument("n_surfaces must be >= 0, threads >= 1 and tt_points >= 2")
        if self.benchmark_surrogate_evals < 1 or self.benchmark_pricer_calls < 1:
            raise InvalidArgument("benchmark counts must be >= 1")
        spec = self.spec
        if spec.maturities[0] < self.maturity_range[0] or spec.maturities[-1] > self.maturity_range[1]:
            raise InvalidArgument("surface maturities fall outside maturity_range")
        if spec.strikes[0] < self.strike_range[0] or spec.strikes[-1] > self.strike_range[1]:
            raise InvalidArgument("surface strikes fall outside strike_range")

    @property
    def theta_dim(self) -> int:
        return self.xi_pillars + 3

    @property
    def theta_bounds(self) -> List[Range]:
        return [self.xi_range] * self.xi_pillars + [self.eta_range, self.rho_range, self.hurst_range]

    @property
    def pillar_times(self) -> Optional[Tuple[float, ...]]:
        if self.xi_pillars == 1:
            return None
        horizon = self.maturity_range[1]
        return tuple(horizon * (i + 1) / self.xi_pillars for i in range(self.xi_pillars))

    @property
    def spec(self) -> SurfaceSpec:
        return SurfaceSpec(self.maturities, self.strikes)

    @property
    def grid_bounds(self) -> List[Range]:
        return self.theta_bounds + [self.maturity_range, self.strike_range]

    def direct_grid(self) -> ChebyshevGrid:
        if len(self.direct_counts) != self.theta_dim + 2:
            raise InvalidArgument(
                f"direct_counts needs {self.theta_dim + 2} entries for {self.xi_pillars} pillar(s), got {len(self.direct_counts)}"
            )
        return ChebyshevGrid.from_bounds(self.grid_bounds, self.direct_counts)

    def tt_grid(self) -> ChebyshevGrid:
        return ChebyshevGrid.from_bounds(self.grid_bounds, [self.tt_points] * (self.theta_dim + 2))

    def seed_for(self, stream: str) -> int:
        return derive_seed(self.seed, stream)

    def pricer_mc(self, stream: str = "pricer") -> MCConfig:
        """MC settings seeded from `stream`: "pricer" for builds, "surface_pricer" for test surfaces."""
        return dataclasses.replace(self.mc, rng_seed=self.seed_for(stream), workers=self.threads)

    def to_json(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)


def _is_positive_int(v: Optional[str]) -> bool:
    return v is not None and v.strip().isdigit() and int(v) > 0


def resolve_profile(
    *, explicit: Optional[str] = None, from_file: Optional[str] = None, env: Mapping[str, str] = os.environ
) -> str:
    """
    Priority:
    - explicit arg (--profile)
    - "profile" key of the config file
    - $ROUGHCHEB_PROFILE
    - default: desk
    """
    for v in (explicit, from_file, env.get(ENV_ROUGHCHEB_PROFILE)):
        if v:
            if v not in PROFILES:
                raise InvalidArgument(f"unknown profile {v!r}; choose from {sorted(PROFILES)}")
            return v
    return DEFAULT_PROFILE


def _build(cls, values: Dict[str, Any], where: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - names)
    if unknown:
        raise InvalidArgument(f"unknown {where} keys: {', '.join(unknown)}")
    try:
        return cls(**values)
    except TypeError as e:
        raise InvalidArgument(f"bad {where} settings: {e}") from e


_SECTIONS = {"mc": MCConfig, "completion": CompletionConfig, "calibration": CalibrationConfig}
_TUPLE_KEYS = {
    "xi_range", "eta_range", "rho_range", "hurst_range", "maturity_range", "strike_range",
    "maturities", "strikes", "direct_counts",
}


def experiment_config_from_dict(
    raw: Mapping[str, Any],
    *,
    profile: Optional[str] = None,
    seed: Optional[int] = None,
    out_dir: Optional[str] = None,
    env: Mapping[str, str] = os.environ,
) -> ExperimentConfig:
    data = dict(raw)
    file_profile = data.pop("profile", None)
    if file_profile is not None and not isinstance(file_profile, str):
        raise InvalidArgument("profile must be a string")
    chosen = resolve_profile(explicit=profile, from_file=file_profile, env=env)

    merged: Dict[str, Any] = {k: v for k, v in PROFILES[chosen].items() if k not in _SECTIONS}
    sections: Dict[str, Dict[str, Any]] = {k: dict(PROFILES[chosen].get(k, {})) for k in _SECTIONS}
    for key, value in data.items():
        if key in _SECTIONS:
            if not isinstance(value, dict):
                raise InvalidArgument(f"{key} must be an object")
            sections[key].update(value)
        elif key in _TUPLE_KEYS:
            if not isinstance(value, (list, tuple)):
                raise InvalidArgument(f"{key} must be a list")
            merged[key] = tuple(value)
        else:
            merged[key] = value

    if seed is not None:
        merged["seed"] = int(seed)
    if out_dir is not None:
        merged["out_dir"] = str(out_dir)
    env_threads = env.get(ENV_ROUGHCHEB_THREADS)
    if env_threads is not None:
        if not _is_positive_int(env_threads):
            raise InvalidArgument(f"{ENV_ROUGHCHEB_THREADS} must be a positive integer, got {env_threads!r}")
        merged["threads"] = int(env_threads)

    for key, cls in _SECTIONS.items():
        merged[key] = _build(cls, sections[key], key)
    merged["profile"] = chosen
    return _build(ExperimentConfig, merged, "config")


def load_experiment_config(
    path: Optional[Path],
    *,
    profile: Optional[str] = None,
    seed: Optional[int] = None,
    out_dir: Optional[str] = None,
    env: Mapping[str, str] = os.environ,
) -> ExperimentConfig:
    raw = read_json(path) if path is not None else {}
    return experiment_config_from_dict(raw, profile=profile, seed=seed, out_dir=out_dir, env=env)
