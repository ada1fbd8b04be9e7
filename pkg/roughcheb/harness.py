"""
End-to-end pipeline: synthetic surfaces, surrogate builds, accuracy, batch calibration and
timing. Every operation writes deterministic JSON/CSV under an output directory; wall-clock
measurements go to separate timing files so that reports stay byte-identical across runs.
"""

from __future__ import annotations

import dataclasses
import logging
import math
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from roughcheb.calibration import CalibrationResult, calibrate, rmse_quantiles, surrogate_surface
from roughcheb.chebyshev import ChebyshevGrid, FullChebyshevTensor
from roughcheb.completion import CompletionReport, GridSampler, sample_adaptive
from roughcheb.config import ExperimentConfig
from roughcheb.errors import BuildFailure, InvalidArgument, OutOfDomain, RoughChebError
from roughcheb.models import RoughBergomiParams, SurfaceSpec, VolSurface
from roughcheb.rough_bergomi import RoughBergomiPricer
from roughcheb.storage import (
    load_surface,
    read_json,
    save_surface,
    surface_matrix_csv,
    write_csv,
    write_json,
)
from roughcheb.surrogate import Surrogate
from roughcheb.tensor_train import TTTensor


logger = logging.getLogger(__name__)

# theta -> surface on the pricer's own maturity/strike spec
Pricer = Callable[[Sequence[float]], VolSurface]

MAX_DIRECT_THETA_DIM = 4


def make_pricer(
    cfg: ExperimentConfig, spec: SurfaceSpec, *, workers: Optional[int] = None, stream: str = "pricer"
) -> RoughBergomiPricer:
    mc = cfg.pricer_mc(stream)
    if workers is not None:
        mc = dataclasses.replace(mc, workers=workers)
    return RoughBergomiPricer(spec, mc, pillar_times=cfg.pillar_times)


def _map(fn, items: Sequence[Any], threads: int) -> List[Any]:
    if threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def fill_invalid_cells(surface: VolSurface) -> Tuple[np.ndarray, int]:
    """
    Replace invalid cells by the nearest valid strike in the same maturity row (lower strike
    on ties); rows with no valid cell copy the nearest filled row.
    """
    q = np.array(surface.quotes, dtype=float)
    valid = surface.valid
    n_rows, n_cols = q.shape
    filled = 0
    empty_rows = []
    for i in range(n_rows):
        ok = np.flatnonzero(valid[i])
        if ok.size == 0:
            empty_rows.append(i)
            continue
        for j in np.flatnonzero(~valid[i]):
            q[i, j] = q[i, ok[np.argmin(np.abs(ok - j))]]
            filled += 1
    full_rows = [i for i in range(n_rows) if i not in empty_rows]
    if not full_rows:
        raise BuildFailure("surface has no valid cell to fill from")
    for i in empty_rows:
        src = min(full_rows, key=lambda r: (abs(r - i), r))
        q[i] = q[src]
        filled += n_cols
    return q, filled


# ----------------------------------------------------------------------------------------
# generate_surfaces
# ----------------------------------------------------------------------------------------


def sample_parameters(cfg: ExperimentConfig, count: int) -> np.ndarray:
    rng = np.random.default_rng(cfg.seed_for("surfaces"))
    lo = np.array([b[0] for b in cfg.theta_bounds])
    hi = np.array([b[1] for b in cfg.theta_bounds])
    return lo + (hi - lo) * rng.random((count, cfg.theta_dim))


def generate_surfaces(
    cfg: ExperimentConfig, out_dir: Path, *, pricer: Optional[Pricer] = None
) -> Dict[str, Any]:
    """Price cfg.n_surfaces uniformly drawn parameter points; failures are recorded and skipped."""
    t0 = time.perf_counter()
    out_dir = Path(out_dir)
    thetas = sample_parameters(cfg, cfg.n_surfaces)
    price = pricer if pricer is not None else make_pricer(cfg, cfg.spec, workers=1, stream="surface_pricer")

    def one(i: int) -> Dict[str, Any]:
        theta = thetas[i]
        entry: Dict[str, Any] = {"index": i, "theta": theta.tolist()}
        try:
            params = RoughBergomiParams.from_vector(theta, pillar_times=cfg.pillar_times)
            surface = price(theta)
        except RoughChebError as e:
            logger.warning("surface %d failed: %s", i, e)
            entry.update(status="failed", error=str(e))
            return entry
        name = f"surface_{i:05d}.json"
        save_surface(out_dir / name, surface, params)
        csv_name = f"surface_{i:05d}.csv"
        surface_matrix_csv(out_dir / csv_name, surface.spec, surface.quotes)
        entry.update(status="ok", file=name, csv=csv_name, valid_cells=surface.valid_count)
        return entry

    entries = _map(one, list(range(cfg.n_surfaces)), cfg.threads)
    manifest = {
        "count": sum(1 for e in entries if e["status"] == "ok"),
        "failed": sum(1 for e in entries if e["status"] != "ok"),
        "seed": cfg.seed,
        "spec": cfg.spec.to_json(),
        "pillar_times": list(cfg.pillar_times) if cfg.pillar_times else None,
        "surfaces": entries,
    }
    write_json(out_dir / "manifest.json", manifest)
    write_json(out_dir / "timing.json", {"wall_time_s": time.perf_counter() - t0, "threads": cfg.threads})
    logger.info("generated %d surfaces (%d failed)", manifest["count"], manifest["failed"])
    return manifest


def load_surface_set(surface_dir: Path) -> List[Tuple[int, VolSurface, RoughBergomiParams]]:
    surface_dir = Path(surface_dir)
    manifest = read_json(surface_dir / "manifest.json")
    out = []
    for entry in manifest.get("surfaces", []):
        if entry.get("status") != "ok":
            continue
        surface, params = load_surface(surface_dir / entry["file"])
        if params is None:
            raise InvalidArgument(f"{entry['file']}: surface has no generating parameters")
        out.append((int(entry["index"]), surface, params))
    return out


# ----------------------------------------------------------------------------------------
# build_direct / build_tt
# ----------------------------------------------------------------------------------------


@dataclass(frozen=True)
class DirectBuildReport:
    theta_points: int
    stored_values: int
    pricer_calls: int
    filled_cells: int
    memory_bytes: int

    def to_json(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)


def _node_spec(grid: ChebyshevGrid, theta_dim: int) -> SurfaceSpec:
    return SurfaceSpec(tuple(grid.nodes[theta_dim]), tuple(grid.nodes[theta_dim + 1]))


def _surface_block(surface: VolSurface, fill: bool, theta_index: Tuple[int, ...]) -> Tuple[np.ndarray, int]:
    if surface.valid_count == surface.quotes.size:
        return np.array(surface.quotes), 0
    if not fill:
        i, j = (int(v) for v in np.argwhere(~surface.valid)[0])
        idx = tuple(theta_index) + (i, j)
        raise BuildFailure(f"pricer returned an invalid implied vol at multi-index {idx}", multi_index=idx)
    return fill_invalid_cells(surface)


def build_direct(
    cfg: ExperimentConfig, *, pricer: Optional[Pricer] = None
) -> Tuple[FullChebyshevTensor, DirectBuildReport]:
    """One pricer call per theta node; each call fills the whole maturity x strike block."""
    if cfg.theta_dim > MAX_DIRECT_THETA_DIM:
        raise InvalidArgument(
            f"direct build supports at most {MAX_DIRECT_THETA_DIM} model parameters, got {cfg.theta_dim}; use build-tt"
        )
    grid = cfg.direct_grid()
    th = cfg.theta_dim
    spec = _node_spec(grid, th)
    price = pricer if pricer is not None else make_pricer(cfg, spec, workers=1)
    theta_indices = list(np.ndindex(*grid.shape[:th]))
    calls = [0]
    lock = threading.Lock()

    def one(idx: Tuple[int, ...]) -> Tuple[np.ndarray, int]:
        theta = [float(grid.nodes[a][j]) for a, j in enumerate(idx)]
        with lock:
            calls[0] += 1
        try:
            surface = price(theta)
        except RoughChebError as e:
            raise BuildFailure(f"pricer failed at theta multi-index {idx}: {e}", multi_index=tuple(idx)) from e
        return _surface_block(surface, cfg.fill_invalid, idx)

    blocks = _map(one, theta_indices, cfg.threads)
    values = np.stack([b for b, _ in blocks]).reshape(grid.shape)
    filled = sum(n for _, n in blocks)
    if filled:
        logger.warning("filled %d invalid implied-vol cells from neighbouring strikes", filled)
    tensor = FullChebyshevTensor(grid, values)
    report = DirectBuildReport(
        theta_points=len(theta_indices),
        stored_values=grid.total_points,
        pricer_calls=calls[0],
        filled_cells=filled,
        memory_bytes=tensor.memory_bytes,
    )
    logger.info("direct tensor: %d pricer calls, %d values", report.pricer_calls, report.stored_values)
    return tensor, report


class GridPointEvaluator:
    """
    Implied vol at TT grid multi-indices, pricing each distinct theta node once and caching
    its whole maturity x strike block.
    """

    def __init__(self, cfg: ExperimentConfig, grid: ChebyshevGrid, pricer: Optional[Pricer] = None) -> None:
        self.cfg = cfg
        self.grid = grid
        self.theta_dim = cfg.theta_dim
        self.pricer = pricer if pricer is not None else make_pricer(cfg, _node_spec(grid, cfg.theta_dim), workers=1)
        self.blocks: Dict[Tuple[int, ...], np.ndarray] = {}
        self.filled_cells = 0
        self.pricer_calls = 0

    def _price(self, key: Tuple[int, ...]) -> Tuple[Tuple[int, ...], np.ndarray, int]:
        theta = [float(self.grid.nodes[a][j]) for a, j in enumerate(key)]
        try:
            surface = self.pricer(theta)
        except RoughChebError as e:
            raise BuildFailure(f"pricer failed at theta multi-index {key}: {e}", multi_index=key) from e
        block, filled = _surface_block(surface, self.cfg.fill_invalid, key)
        return key, block, filled

    def __call__(self, indices: np.ndarray) -> np.ndarray:
        idx = np.asarray(indices, dtype=np.int64)
        keys = sorted({tuple(int(v) for v in row[: self.theta_dim]) for row in idx} - set(self.blocks))
        for key, block, filled in _map(self._price, keys, self.cfg.threads):
            self.blocks[key] = block
            self.filled_cells += filled
        self.pricer_calls += len(keys)
        return np.array(
            [self.blocks[tuple(int(v) for v in row[: self.theta_dim])][row[-2], row[-1]] for row in idx],
            dtype=float,
        )


def build_tt(
    cfg: ExperimentConfig, *, pricer: Optional[Pricer] = None
) -> Tuple[TTTensor, CompletionReport, Dict[str, Any]]:
    grid = cfg.tt_grid()
    comp = dataclasses.replace(cfg.completion, rng_seed=cfg.seed_for("completion"))
    evaluator = GridPointEvaluator(cfg, grid, pricer)
    logger.info("TT build on %d grid points (%d axes of %d)", grid.total_points, grid.dimension, cfg.tt_points)
    sampler = GridSampler(grid.shape, evaluator, np.random.default_rng(comp.rng_seed))
    tt, report = sample_adaptive(sampler, comp)
    extras = {
        "grid_size": grid.total_points,
        "pricer_calls": evaluator.pricer_calls,
        "filled_cells": evaluator.filled_cells,
        "storage_size": tt.storage_size,
        "memory_bytes": tt.memory_bytes,
    }
    return tt.with_grid(grid), report, extras


# ----------------------------------------------------------------------------------------
# assess_accuracy
# ----------------------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class AccuracyReport:
    spec: SurfaceSpec
    mean_abs_error: np.ndarray
    max_abs_error: np.ndarray
    cell_counts: np.ndarray
    surfaces_used: int
    surfaces_excluded: int

    def to_json(self) -> Dict[str, Any]:
        used = self.cell_counts > 0
        return {
            "spec": self.spec.to_json(),
            "mean_abs_error": self.mean_abs_error.tolist(),
            "max_abs_error": self.max_abs_error.tolist(),
            "cell_counts": self.cell_counts.tolist(),
            "surfaces_used": self.surfaces_used,
            "surfaces_excluded": self.surfaces_excluded,
            "overall_mean_abs_error": float(np.mean(self.mean_abs_error[used])) if used.any() else None,
            "overall_max_abs_error": float(np.max(self.max_abs_error[used])) if used.any() else None,
        }


def assess_accuracy(
    s: Surrogate, surfaces: Sequence[Tuple[int, VolSurface, RoughBergomiParams]]
) -> AccuracyReport:
    if not surfaces:
        raise InvalidArgument("no surfaces to assess against")
    spec = surfaces[0][1].spec
    total = np.zeros(spec.shape)
    worst = np.zeros(spec.shape)
    counts = np.zeros(spec.shape, dtype=int)
    used = excluded = 0
    for index, surface, params in surfaces:
        if surface.spec != spec:
            raise InvalidArgument(f"surface {index} has a different maturity/strike spec")
        theta = params.to_vector()
        try:
            approx = surrogate_surface(s, theta, surface)
        except OutOfDomain as e:
            logger.info("surface %d excluded: %s", index, e)
            excluded += 1
            continue
        m = surface.valid & approx.valid
        err = np.where(m, np.abs(np.nan_to_num(approx.quotes) - np.nan_to_num(surface.quotes)), 0.0)
        total += err
        worst = np.maximum(worst, err)
        counts += m
        used += 1
    mean = np.where(counts > 0, total / np.maximum(counts, 1), np.nan)
    worst = np.where(counts > 0, worst, np.nan)
    return AccuracyReport(spec, mean, worst, counts, used, excluded)


def write_accuracy(out_dir: Path, report: AccuracyReport) -> None:
    out_dir = Path(out_dir)
    write_json(out_dir / "accuracy.json", report.to_json())
    surface_matrix_csv(out_dir / "mean_abs_error.csv", report.spec, report.mean_abs_error)
    surface_matrix_csv(out_dir / "max_abs_error.csv", report.spec, report.max_abs_error)


# ----------------------------------------------------------------------------------------
# calibrate_batch
# ----------------------------------------------------------------------------------------


def calibrate_batch(
    s: Surrogate,
    surfaces: Sequence[Tuple[int, VolSurface, Optional[RoughBergomiParams]]],
    cfg: ExperimentConfig,
    out_dir: Path,
) -> Dict[str, Any]:
    """Calibrate every surface (in parallel); per-surface failures are recorded, not raised."""
    out_dir = Path(out_dir)
    ccfg = dataclasses.replace(cfg.calibration, seed=cfg.seed_for("calibration"))

    def one(item) -> Tuple[int, Optional[CalibrationResult], Optional[str]]:
        index, surface, _ = item
        try:
            return index, calibrate(surface, s, cfg=ccfg), None
        except RoughChebError as e:
            logger.warning("calibration of surface %d failed: %s", index, e)
            return index, None, str(e)

    results = _map(one, list(surfaces), cfg.threads)
    rows, timing, failures, rmses = [], [], [], []
    for index, res, err in results:
        if res is None:
            failures.append({"index": index, "error": err})
            continue
        write_json(out_dir / "results" / f"surface_{index:05d}.json", res.to_json())
        rows.append([index] + list(res.theta) + [res.rmse, res.loss, res.iterations, res.surrogate_calls, res.termination])
        timing.append([index, res.wall_time_s])
        rmses.append(res.rmse)

    theta_cols = [f"theta_{k}" for k in range(s.theta_dim)]
    write_csv(
        out_dir / "aggregate.csv",
        ["index"] + theta_cols + ["rmse", "loss", "iterations", "surrogate_calls", "termination"],
        rows,
    )
    write_csv(out_dir / "timing.csv", ["index", "wall_time_s"], timing)
    summary: Dict[str, Any] = {"calibrated": len(rows), "failed": len(failures), "failures": failures}
    if rmses:
        summary["rmse_quantiles"] = rmse_quantiles(rmses)
    write_json(out_dir / "summary.json", summary)
    return summary


# ----------------------------------------------------------------------------------------
# benchmark / info
# ----------------------------------------------------------------------------------------


TYPICAL_CALIBRATION_TRIALS = 100


def benchmark(s: Surrogate, pricer: Pricer, cfg: ExperimentConfig) -> Dict[str, Any]:
    rng = np.random.default_rng(cfg.seed)
    lo = np.array([iv.lo for iv in s.grid.intervals])
    hi = np.array([iv.hi for iv in s.grid.intervals])
    points = lo + (hi - lo) * rng.uniform(0.05, 0.95, size=(cfg.benchmark_surrogate_evals, s.grid.dimension))

    t0 = time.perf_counter()
    for x in points:
        s.evaluate(x)
    surrogate_latency = (time.perf_counter() - t0) / len(points)

    theta_lo, theta_hi = s.theta_bounds
    thetas = theta_lo + (theta_hi - theta_lo) * rng.uniform(0.05, 0.95, size=(cfg.benchmark_pricer_calls, s.theta_dim))
    spec = cfg.spec
    t0 = time.perf_counter()
    for th in thetas:
        s.surface(th, spec.maturities, spec.strikes)
    surface_latency = (time.perf_counter() - t0) / len(thetas)

    t0 = time.perf_counter()
    for th in thetas:
        pricer(th)
    pricer_latency = (time.perf_counter() - t0) / len(thetas)

    cells = spec.shape[0] * spec.shape[1]
    return {
        "threads": cfg.threads,
        "surrogate_kind": s.kind,
        "surrogate_evals": len(points),
        "surrogate_latency_s": surrogate_latency,
        "surrogate_surface_latency_s": surface_latency,
        "pricer_calls": len(thetas),
        "pricer_latency_s": pricer_latency,
        # Pricer returns the whole surface per call; the surrogate needs one eval per cell.
        "speedup_per_point": pricer_latency / surrogate_latency if surrogate_latency > 0 else math.inf,
        "speedup_per_surface": pricer_latency / surface_latency if surface_latency > 0 else math.inf,
        "projected_calibration_s": TYPICAL_CALIBRATION_TRIALS * cells * surrogate_latency,
        "projected_pricer_calibration_s": TYPICAL_CALIBRATION_TRIALS * pricer_latency,
    }


def info(cfg: ExperimentConfig) -> Dict[str, Any]:
    tt_grid = cfg.tt_grid()
    out: Dict[str, Any] = {
        "profile": cfg.profile,
        "theta_dim": cfg.theta_dim,
        "tt_grid_shape": list(tt_grid.shape),
        "tt_grid_size": tt_grid.total_points,
        "tt_storage_bound_at_max_rank": tt_grid.dimension * cfg.tt_points * cfg.completion.max_rank ** 2,
        "surface_shape": list(cfg.spec.shape),
        "pillar_times": list(cfg.pillar_times) if cfg.pillar_times else None,
    }
    if cfg.theta_dim <= MAX_DIRECT_THETA_DIM:
        grid = cfg.direct_grid()
        out.update(
            direct_grid_shape=list(grid.shape),
            direct_grid_size=grid.total_points,
            direct_theta_points=math.prod(grid.shape[: cfg.theta_dim]),
            direct_memory_bytes=8 * grid.total_points,
        )
    return out
