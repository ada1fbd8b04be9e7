"""
Tensor-train completion from a sampled subset of grid entries.

The fixed-rank solver minimises the squared misfit on the training entries over the
manifold of TT tensors with fixed ranks. The default method is Riemannian conjugate
gradients: tangent vectors are stored in the usual gauge (one variation per core, left
variations orthogonal to the left-orthonormal cores), the Riemannian gradient is the
tangent-space projection of the sparse Euclidean gradient, steps are retracted by SVD
truncation of the rank-2r sum and directions are transported by re-projection.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, replace
from typing import Dict, List, Optional, Protocol, Sequence, Tuple

import numpy as np

from roughcheb.errors import CompletionFailure, InvalidArgument
from roughcheb.tensor_train import (
    TTTensor,
    fold_left,
    left_unfold,
    orthogonalize_left,
    orthogonalize_right,
    round_to_ranks,
    tt_random,
    tt_svd_to_ranks,
)


logger = logging.getLogger(__name__)

METHODS = ("rcg", "als")


@dataclass(frozen=True)
class CompletionConfig:
    max_cg_iterations: int = 250
    train_rel_tol: float = 1e-10
    test_rel_tol: float = 1e-4
    stagnation_epsilon: float = 1e-3
    max_rank: int = 12
    rank_increase_order: str = "cyclic"
    sample_growth_factor: float = 2.0
    max_sample_rounds: int = 3
    rng_seed: int = 0
    method: str = "rcg"
    test_fraction: float = 0.2
    initial_samples: int = 10_000
    warm_start_noise: float = 1e-4
    restarts: int = 2
    restart_rel_tol: float = 1e-6
    spectral_init_max_entries: int = 1_000_000

    def __post_init__(self) -> None:
        for name in ("train_rel_tol", "test_rel_tol", "stagnation_epsilon", "restart_rel_tol"):
            if not getattr(self, name) > 0:
                raise InvalidArgument(f"{name} must be positive, got {getattr(self, name)}")
        if self.max_rank < 1:
            raise InvalidArgument(f"max_rank must be >= 1, got {self.max_rank}")
        if self.max_cg_iterations < 1:
            raise InvalidArgument(f"max_cg_iterations must be >= 1, got {self.max_cg_iterations}")
        if not self.sample_growth_factor > 1:
            raise InvalidArgument(f"sample_growth_factor must be > 1, got {self.sample_growth_factor}")
        if self.restarts < 0:
            raise InvalidArgument(f"restarts must be >= 0, got {self.restarts}")
        if self.max_sample_rounds < 0:
            raise InvalidArgument(f"max_sample_rounds must be >= 0, got {self.max_sample_rounds}")
        if self.rank_increase_order != "cyclic":
            raise InvalidArgument(f"unsupported rank_increase_order {self.rank_increase_order!r}")
        if self.method not in METHODS:
            raise InvalidArgument(f"method must be one of {METHODS}, got {self.method!r}")
        if not 0 <= self.test_fraction < 1:
            raise InvalidArgument(f"test_fraction must be in [0, 1), got {self.test_fraction}")


@dataclass(frozen=True)
class CompletionReport:
    ranks: Tuple[int, ...]
    train_rmse: float
    test_rmse: Optional[float]
    train_loss: float
    iterations: Tuple[int, ...]
    samples_used: int
    converged: bool
    method: str
    sample_rounds: int = 0
    rank_history: Tuple[Tuple[int, ...], ...] = ()
    attempts: int = 1
    loss_history: Tuple[float, ...] = ()
    diagnostic: str = ""
    wall_time_s: float = 0.0

    def to_json(self, *, include_timing: bool = False) -> Dict[str, object]:
        d = asdict(self)
        d["ranks"] = list(self.ranks)
        d["iterations"] = list(self.iterations)
        d["rank_history"] = [list(r) for r in self.rank_history]
        d["loss_history"] = list(self.loss_history)
        if not include_timing:
            d.pop("wall_time_s")
        return d


@dataclass(frozen=True, eq=False)
class SampleSet:
    """Observed grid entries with a fixed train/test partition."""

    mode_sizes: Tuple[int, ...]
    indices: np.ndarray
    values: np.ndarray
    is_test: np.ndarray

    def __post_init__(self) -> None:
        d = len(self.mode_sizes)
        idx = np.asarray(self.indices, dtype=np.int64).reshape(-1, d)
        vals = np.asarray(self.values, dtype=float).reshape(-1)
        test = np.asarray(self.is_test, dtype=bool).reshape(-1)
        if not idx.shape[0] == vals.shape[0] == test.shape[0]:
            raise InvalidArgument("indices, values and partition flags differ in length")
        if idx.size and (np.any(idx < 0) or np.any(idx >= np.asarray(self.mode_sizes))):
            raise InvalidArgument("sample index out of grid bounds")
        if not np.all(np.isfinite(vals)):
            raise InvalidArgument("sample values must be finite")
        if idx.shape[0] != np.unique(idx, axis=0).shape[0]:
            raise InvalidArgument("sample multi-indices must be unique")
        for name, arr in (("indices", idx), ("values", vals), ("is_test", test)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "mode_sizes", tuple(int(n) for n in self.mode_sizes))

    @classmethod
    def split(
        cls,
        mode_sizes: Sequence[int],
        indices: np.ndarray,
        values: np.ndarray,
        test_fraction: float,
        rng: np.random.Generator,
    ) -> "SampleSet":
        n = int(np.asarray(values).size)
        n_test = int(round(test_fraction * n))
        if test_fraction > 0 and n >= 2:
            n_test = min(max(n_test, 1), n - 1)
        flags = np.zeros(n, dtype=bool)
        if n_test:
            flags[rng.permutation(n)[:n_test]] = True
        return cls(tuple(mode_sizes), indices, values, flags)

    @classmethod
    def from_function(
        cls,
        mode_sizes: Sequence[int],
        count: int,
        f,
        rng: np.random.Generator,
        test_fraction: float = 0.2,
    ) -> "SampleSet":
        """Draw `count` distinct grid indices uniformly and evaluate `f` on the (N, d) batch."""
        sampler = GridSampler(mode_sizes, f, rng)
        idx, vals = sampler(count)
        return cls.split(mode_sizes, idx, vals, test_fraction, rng)

    @property
    def count(self) -> int:
        return int(self.values.size)

    @property
    def train_indices(self) -> np.ndarray:
        return self.indices[~self.is_test]

    @property
    def train_values(self) -> np.ndarray:
        return self.values[~self.is_test]

    @property
    def test_indices(self) -> np.ndarray:
        return self.indices[self.is_test]

    @property
    def test_values(self) -> np.ndarray:
        return self.values[self.is_test]

    def extend(
        self, indices: np.ndarray, values: np.ndarray, test_fraction: float, rng: np.random.Generator
    ) -> "SampleSet":
        extra = SampleSet.split(self.mode_sizes, indices, values, test_fraction, rng)
        return SampleSet(
            self.mode_sizes,
            np.vstack([self.indices, extra.indices]),
            np.concatenate([self.values, extra.values]),
            np.concatenate([self.is_test, extra.is_test]),
        )


class Sampler(Protocol):
    mode_sizes: Tuple[int, ...]

    def __call__(self, count: int) -> Tuple[np.ndarray, np.ndarray]:
        ...


class GridSampler:
    """
    Uniform sampling without replacement from grid indices not drawn before.

    `evaluate` maps an (N, d) index array to N values.
    """

    def __init__(self, mode_sizes: Sequence[int], evaluate, rng: np.random.Generator) -> None:
        self.mode_sizes = tuple(int(n) for n in mode_sizes)
        self._evaluate = evaluate
        self._rng = rng
        self._size = math.prod(self.mode_sizes)
        self._seen: set = set()

    @property
    def remaining(self) -> int:
        return self._size - len(self._seen)

    def draw_indices(self, count: int) -> np.ndarray:
        count = min(int(count), self.remaining)
        picked: List[int] = []
        if count <= 0:
            return np.zeros((0, len(self.mode_sizes)), dtype=np.int64)
        if self.remaining <= 4 * count:
            pool = np.array([i for i in range(self._size) if i not in self._seen], dtype=np.int64)
            picked = [int(i) for i in self._rng.permutation(pool)[:count]]
        else:
            while len(picked) < count:
                for flat in self._rng.integers(0, self._size, size=2 * (count - len(picked))):
                    f = int(flat)
                    if f in self._seen:
                        continue
                    self._seen.add(f)
                    picked.append(f)
                    if len(picked) == count:
                        break
        self._seen.update(picked)
        return np.stack(np.unravel_index(np.asarray(picked, dtype=np.int64), self.mode_sizes), axis=1)

    def __call__(self, count: int) -> Tuple[np.ndarray, np.ndarray]:
        idx = self.draw_indices(count)
        if idx.shape[0] == 0:
            return idx, np.zeros(0)
        return idx, np.asarray(self._evaluate(idx), dtype=float).reshape(-1)


def relative_error(pred: np.ndarray, target: np.ndarray) -> float:
    """||pred - target|| / ||target|| (absolute when the target is zero)."""
    num = float(np.linalg.norm(pred - target))
    den = float(np.linalg.norm(target))
    return num / den if den > 0 else num


def admissible_ranks(mode_sizes: Sequence[int], ranks: Sequence[int]) -> bool:
    d = len(mode_sizes)
    if len(ranks) != d + 1 or ranks[0] != 1 or ranks[-1] != 1:
        return False
    for i in range(1, d):
        bound = min(math.prod(mode_sizes[:i]), math.prod(mode_sizes[i:]))
        if not 1 <= ranks[i] <= bound:
            return False
    return True


def degrees_of_freedom(mode_sizes: Sequence[int], ranks: Sequence[int]) -> int:
    dof = sum(ranks[i] * n * ranks[i + 1] for i, n in enumerate(mode_sizes))
    return int(dof - sum(r * r for r in ranks[1:-1]))


# ----------------------------------------------------------------------------------------
# Riemannian geometry of the fixed-rank TT manifold
# ----------------------------------------------------------------------------------------


class _Point:
    """A manifold point with both orthogonal representations and sample interfaces."""

    def __init__(self, cores: Sequence[np.ndarray], idx: np.ndarray) -> None:
        self.left = orthogonalize_left(cores)
        self.right = orthogonalize_right(self.left)
        self.idx = idx
        d = len(self.left)
        n = idx.shape[0]
        # prefix[k]: product of left cores 0..k-1 at each sample, shape (N, r_k)
        self.prefix: List[np.ndarray] = [np.ones((n, 1))]
        for k in range(d - 1):
            self.prefix.append(np.einsum("na,nab->nb", self.prefix[k], self.left[k][idx[:, k]]))
        # suffix[k]: product of right cores k+1..d-1 at each sample, shape (N, r_{k+1})
        self.suffix: List[np.ndarray] = [np.ones((n, 1))] * d
        for k in range(d - 2, -1, -1):
            self.suffix[k] = np.einsum("nab,nb->na", self.right[k + 1][idx[:, k + 1]], self.suffix[k + 1])
        self.values = np.einsum("na,nab,nb->n", self.prefix[d - 1], self.left[d - 1][idx[:, d - 1]], self.suffix[d - 1])

    @property
    def dimension(self) -> int:
        return len(self.left)

    def gauge(self, deltas: List[np.ndarray]) -> List[np.ndarray]:
        out = list(deltas)
        for k in range(self.dimension - 1):
            n, rl, _ = out[k].shape
            q = left_unfold(self.left[k])
            m = left_unfold(out[k])
            out[k] = fold_left(m - q @ (q.T @ m), n, rl)
        return out

    def project_sparse(self, residual: np.ndarray) -> List[np.ndarray]:
        """Tangent-space projection of the sparse tensor holding `residual` at the samples."""
        deltas = []
        for k in range(self.dimension):
            core = self.left[k]
            contrib = residual[:, None, None] * self.prefix[k][:, :, None] * self.suffix[k][:, None, :]
            delta = np.zeros_like(core)
            np.add.at(delta, self.idx[:, k], contrib)
            deltas.append(delta)
        return self.gauge(deltas)

    def project_tt(self, cores: Sequence[np.ndarray]) -> List[np.ndarray]:
        """Tangent-space projection of a full TT tensor."""
        d = self.dimension
        lpsi = [np.ones((1, 1))]
        for k in range(d - 1):
            lpsi.append(np.einsum("jac,ab,jbd->cd", self.left[k], lpsi[k], cores[k]))
        rpsi = [np.ones((1, 1))] * (d + 1)
        for k in range(d - 1, 0, -1):
            rpsi[k] = np.einsum("jab,bc,jdc->ad", cores[k], rpsi[k + 1], self.right[k])
        deltas = [np.einsum("ab,jbc,cd->jad", lpsi[k], cores[k], rpsi[k + 1]) for k in range(d)]
        return self.gauge(deltas)

    def tangent_at_samples(self, deltas: Sequence[np.ndarray]) -> np.ndarray:
        out = np.zeros(self.idx.shape[0])
        for k, delta in enumerate(deltas):
            out += np.einsum("na,nab,nb->n", self.prefix[k], delta[self.idx[:, k]], self.suffix[k])
        return out

    def tangent_cores(self, deltas: Sequence[np.ndarray], *, include_point: bool) -> List[np.ndarray]:
        """Rank-2r TT cores of the tangent vector (plus the point itself when asked)."""
        d = self.dimension
        last = self.left[d - 1]
        if d == 1:
            return [deltas[0] + last if include_point else np.array(deltas[0])]
        cores = [np.concatenate([deltas[0], self.left[0]], axis=2)]
        for k in range(1, d - 1):
            v, u, du = self.right[k], self.left[k], deltas[k]
            top = np.concatenate([v, np.zeros((v.shape[0], v.shape[1], u.shape[2]))], axis=2)
            bottom = np.concatenate([du, u], axis=2)
            cores.append(np.concatenate([top, bottom], axis=1))
        tail = deltas[d - 1] + last if include_point else deltas[d - 1]
        cores.append(np.concatenate([self.right[d - 1], tail], axis=1))
        return cores


def _inner(a: Sequence[np.ndarray], b: Sequence[np.ndarray]) -> float:
    return float(sum(np.vdot(x, y) for x, y in zip(a, b)))


def _scaled(a: Sequence[np.ndarray], s: float) -> List[np.ndarray]:
    return [s * x for x in a]


def _loss(point: _Point, targets: np.ndarray) -> float:
    return 0.5 * float(np.sum((point.values - targets) ** 2))


def _check_finite(loss: float, stage: Dict[str, object]) -> None:
    if not math.isfinite(loss):
        raise CompletionFailure("non-finite training loss", diagnostics=dict(stage))


def _rcg(
    cores: Sequence[np.ndarray],
    idx: np.ndarray,
    targets: np.ndarray,
    ranks: Sequence[int],
    cfg: CompletionConfig,
    stop_loss: float,
) -> Tuple[List[np.ndarray], List[float]]:
    point = _Point(cores, idx)
    loss = _loss(point, targets)
    history = [loss]
    _check_finite(loss, {"iteration": 0, "ranks": list(ranks)})
    grad = point.project_sparse(point.values - targets)
    direction = _scaled(grad, -1.0)
    grad_sq = _inner(grad, grad)

    for it in range(1, cfg.max_cg_iterations + 1):
        if loss <= stop_loss or grad_sq == 0.0:
            break
        accepted = None
        for attempt in ("cg", "steepest"):
            if attempt == "steepest":
                direction = _scaled(grad, -1.0)
            slope = _inner(grad, direction)
            if slope >= 0:
                continue
            along = point.tangent_at_samples(direction)
            curvature = float(np.dot(along, along))
            if curvature <= 0:
                continue
            step = -float(np.dot(point.values - targets, along)) / curvature
            for _ in range(20):
                trial = _Point(round_to_ranks(point.tangent_cores(_scaled(direction, step), include_point=True), ranks), idx)
                trial_loss = _loss(trial, targets)
                _check_finite(trial_loss, {"iteration": it, "ranks": list(ranks), "step": step})
                if trial_loss < loss + 1e-4 * step * slope:
                    accepted = (trial, trial_loss)
                    break
                step *= 0.5
            if accepted is not None:
                break
        if accepted is None:
            logger.debug("line search failed at iteration %d (loss %.3e)", it, loss)
            break

        new_point, new_loss = accepted
        new_grad = new_point.project_sparse(new_point.values - targets)
        new_grad_sq = _inner(new_grad, new_grad)
        moved_grad = new_point.project_tt(point.tangent_cores(grad, include_point=False))
        moved_dir = new_point.project_tt(point.tangent_cores(direction, include_point=False))
        beta = max(0.0, (new_grad_sq - _inner(new_grad, moved_grad)) / grad_sq) if grad_sq > 0 else 0.0
        direction = [-g + beta * m for g, m in zip(new_grad, moved_dir)]
        point, loss, grad, grad_sq = new_point, new_loss, new_grad, new_grad_sq
        history.append(loss)
    return point.left, history


def _als(
    cores: Sequence[np.ndarray],
    idx: np.ndarray,
    targets: np.ndarray,
    ranks: Sequence[int],
    cfg: CompletionConfig,
    stop_loss: float,
) -> Tuple[List[np.ndarray], List[float]]:
    d = len(cores)
    n_samples = idx.shape[0]
    cur = orthogonalize_right(cores)

    def _values(cs: Sequence[np.ndarray]) -> np.ndarray:
        acc = cs[0][idx[:, 0], 0, :]
        for k in range(1, d):
            acc = np.einsum("na,nab->nb", acc, cs[k][idx[:, k]])
        return acc[:, 0]

    def _solve(k: int, left: np.ndarray, right: np.ndarray) -> np.ndarray:
        n, rl, rr = cur[k].shape
        core = np.zeros((n, rl, rr))
        design = (left[:, :, None] * right[:, None, :]).reshape(n_samples, rl * rr)
        for j in range(n):
            rows = idx[:, k] == j
            if not np.any(rows):
                core[j] = cur[k][j]
                continue
            a = design[rows]
            gram = a.T @ a
            ridge = 1e-12 * max(float(np.trace(gram)), 1.0)
            sol = np.linalg.solve(gram + ridge * np.eye(rl * rr), a.T @ targets[rows])
            core[j] = sol.reshape(rl, rr)
        return core

    loss = 0.5 * float(np.sum((_values(cur) - targets) ** 2))
    _check_finite(loss, {"iteration": 0, "ranks": list(ranks)})
    history = [loss]
    best = [np.array(c) for c in cur]
    for it in range(1, cfg.max_cg_iterations + 1):
        if loss <= stop_loss:
            break
        # forward half-sweep, cores right of k are right-orthonormal
        suffix = [np.ones((n_samples, 1))] * d
        for k in range(d - 2, -1, -1):
            suffix[k] = np.einsum("nab,nb->na", cur[k + 1][idx[:, k + 1]], suffix[k + 1])
        prefix = np.ones((n_samples, 1))
        for k in range(d):
            cur[k] = _solve(k, prefix, suffix[k])
            if k < d - 1:
                n, rl, _ = cur[k].shape
                q, r = np.linalg.qr(left_unfold(cur[k]))
                cur[k] = fold_left(q, n, rl)
                cur[k + 1] = np.einsum("ab,jbc->jac", r, cur[k + 1])
                prefix = np.einsum("na,nab->nb", prefix, cur[k][idx[:, k]])
        cur = orthogonalize_right(cur)
        new_loss = 0.5 * float(np.sum((_values(cur) - targets) ** 2))
        _check_finite(new_loss, {"iteration": it, "ranks": list(ranks)})
        if new_loss < loss:
            best = [np.array(c) for c in cur]
            if loss - new_loss <= 1e-14 * loss:
                loss = new_loss
                history.append(loss)
                break
            loss = new_loss
            history.append(loss)
        else:
            break
    return best, history


ZERO_PREDICTOR_SCORE = 1.0


def _pad_to_ranks(
    cores: Sequence[np.ndarray], ranks: Sequence[int], rng: np.random.Generator, noise: float
) -> List[np.ndarray]:
    """Enlarge cores that came out below the requested ranks, filling the new slices with noise."""
    out = []
    for k, core in enumerate(cores):
        n, a, b = core.shape
        ra, rb = int(ranks[k]), int(ranks[k + 1])
        if (a, b) == (ra, rb):
            out.append(np.array(core))
            continue
        typical = float(np.linalg.norm(core)) / math.sqrt(core.size) if np.any(core) else 1.0
        padded = noise * typical * rng.standard_normal((n, ra, rb))
        padded[:, :a, :b] = core
        out.append(padded)
    return out


def _spectral_cores(
    mode_sizes: Sequence[int], ranks: Sequence[int], idx: np.ndarray, targets: np.ndarray, rng: np.random.Generator
) -> List[np.ndarray]:
    """Truncated TT-SVD of the zero-filled training tensor scaled by the inverse sampling ratio."""
    size = math.prod(mode_sizes)
    dense = np.zeros(tuple(mode_sizes))
    dense[tuple(idx.T)] = targets * (size / idx.shape[0])
    return _pad_to_ranks(tt_svd_to_ranks(dense, ranks), ranks, rng, 1e-3)


def _initial_cores(
    mode_sizes: Sequence[int],
    ranks: Sequence[int],
    idx: np.ndarray,
    targets: np.ndarray,
    rng: np.random.Generator,
    *,
    spectral: bool,
) -> List[np.ndarray]:
    if spectral:
        cores = _spectral_cores(mode_sizes, ranks, idx, targets, rng)
    else:
        cores = list(tt_random(mode_sizes, ranks, rng).cores)
    cores = orthogonalize_left(cores)
    tt = TTTensor(tuple(cores))
    vals = tt.gather(idx)
    denom = float(np.dot(vals, vals))
    scale = float(np.dot(vals, targets)) / denom if denom > 0 else 0.0
    cores[-1] = cores[-1] * scale
    return cores


def _start_kinds(init: Optional[TTTensor], spectral_ok: bool, restarts: int) -> List[str]:
    kinds = ["warm"] if init is not None else []
    if spectral_ok:
        kinds.append("spectral")
    kinds.extend(["random"] * restarts)
    if not kinds:
        kinds.append("random")
    return kinds


def complete_fixed_rank(
    samples: SampleSet,
    ranks: Sequence[int],
    cfg: CompletionConfig,
    *,
    init: Optional[TTTensor] = None,
    rng: Optional[np.random.Generator] = None,
) -> Tuple[TTTensor, CompletionReport]:
    """
    Fit a TT of fixed ranks to the training entries of `samples`.

    Starts from `init` when given, then from the spectral estimate (grids of at most
    cfg.spectral_init_max_entries entries) and then from cfg.restarts random points, moving
    on only while the best training error is above cfg.restart_rel_tol. The attempt with
    the lowest training loss wins.
    """
    t0 = time.perf_counter()
    ranks = tuple(int(r) for r in ranks)
    modes = samples.mode_sizes
    if not admissible_ranks(modes, ranks):
        raise InvalidArgument(f"ranks {ranks} are not admissible for mode sizes {modes}")
    if samples.count == 0 or samples.train_values.size == 0:
        raise InvalidArgument("completion needs at least one training sample")
    if init is not None and (init.ranks != ranks or init.mode_sizes != modes):
        raise InvalidArgument(f"initial tensor ranks {init.ranks} != requested {ranks}")
    rng = rng if rng is not None else np.random.default_rng(cfg.rng_seed)

    idx = samples.train_indices
    targets = samples.train_values
    dof = degrees_of_freedom(modes, ranks)
    if idx.shape[0] < dof:
        logger.warning("only %d training samples for %d degrees of freedom at ranks %s", idx.shape[0], dof, ranks)

    target_norm = float(np.linalg.norm(targets))
    stop_loss = 0.5 * (cfg.train_rel_tol * target_norm) ** 2
    restart_loss = 0.5 * (cfg.restart_rel_tol * target_norm) ** 2
    solver = _rcg if cfg.method == "rcg" else _als
    spectral_ok = math.prod(modes) <= cfg.spectral_init_max_entries

    best_cores: Optional[List[np.ndarray]] = None
    best_history: List[float] = []
    total_iterations = 0
    attempts = 0
    for kind in _start_kinds(init, spectral_ok, cfg.restarts):
        if best_cores is not None and best_history[-1] <= restart_loss:
            break
        if kind == "warm":
            cores = list(init.cores)
        else:
            cores = _initial_cores(modes, ranks, idx, targets, rng, spectral=kind == "spectral")
        fitted, history = solver(cores, idx, targets, ranks, cfg, stop_loss)
        attempts += 1
        total_iterations += len(history) - 1
        logger.debug("ranks %s, %s start: loss %.3e after %d iterations", list(ranks), kind, history[-1], len(history) - 1)
        if best_cores is None or history[-1] < best_history[-1]:
            best_cores, best_history = fitted, history

    assert best_cores is not None
    tt = TTTensor(tuple(best_cores))
    train_rmse = relative_error(tt.gather(idx), targets)
    test_rmse = None
    if samples.test_values.size:
        test_rmse = relative_error(tt.gather(samples.test_indices), samples.test_values)
    converged = (test_rmse if test_rmse is not None else train_rmse) <= cfg.test_rel_tol
    report = CompletionReport(
        ranks=tt.ranks,
        train_rmse=train_rmse,
        test_rmse=test_rmse,
        train_loss=2.0 * best_history[-1],
        iterations=(total_iterations,),
        samples_used=samples.count,
        converged=converged,
        method=cfg.method,
        rank_history=(tt.ranks,),
        attempts=attempts,
        loss_history=tuple(2.0 * v for v in best_history),
        wall_time_s=time.perf_counter() - t0,
    )
    logger.info(
        "ranks %s: %d attempts, %d iterations, train %.3e, test %s",
        list(tt.ranks),
        attempts,
        total_iterations,
        train_rmse,
        "n/a" if test_rmse is None else f"{test_rmse:.3e}",
    )
    return tt, report


def _score(report: CompletionReport) -> float:
    return report.test_rmse if report.test_rmse is not None else report.train_rmse


def _grow_rank(tt: TTTensor, position: int, noise: float, rng: np.random.Generator) -> TTTensor:
    """Increase r_position by one, padding the two adjacent cores with small noise."""
    cores = [np.array(c) for c in tt.cores]
    a, b = cores[position - 1], cores[position]
    scale_a = noise * float(np.linalg.norm(a))
    scale_b = noise * float(np.linalg.norm(b))
    cores[position - 1] = np.concatenate([a, scale_a * rng.standard_normal((a.shape[0], a.shape[1], 1))], axis=2)
    cores[position] = np.concatenate([b, scale_b * rng.standard_normal((b.shape[0], 1, b.shape[2]))], axis=1)
    return TTTensor(tuple(cores))


def rank_adaptive(samples: SampleSet, cfg: CompletionConfig) -> Tuple[TTTensor, CompletionReport]:
    """
    Start at all ranks 1 and raise interior ranks one at a time, cycling through positions
    1..d-1, until the held-out error meets cfg.test_rel_tol.

    Each stage starts from the previous stage padded with noise and falls back to fresh
    starts (see complete_fixed_rank). Only stages that predict held-out entries better than
    the zero tensor can be returned as best.
    """
    t0 = time.perf_counter()
    rng = np.random.default_rng(cfg.rng_seed)
    d = len(samples.mode_sizes)
    ranks = (1,) * (d + 1)
    tt, rep = complete_fixed_rank(samples, ranks, cfg, rng=rng)
    best: Optional[Tuple[TTTensor, CompletionReport]] = None
    if _score(rep) < ZERO_PREDICTOR_SCORE:
        best = (tt, rep)
    iterations: List[int] = list(rep.iterations)
    history: List[Tuple[int, ...]] = [tt.ranks]
    attempts = rep.attempts
    position = 0
    lowest = _score(rep)
    cycle_start_score = lowest
    increments_in_cycle = 0

    while not (best is not None and best[1].converged) and d > 1:
        target = None
        for step in range(1, d):
            p = (position + step - 1) % (d - 1) + 1
            grown = list(tt.ranks)
            grown[p] += 1
            if grown[p] <= cfg.max_rank and admissible_ranks(samples.mode_sizes, grown):
                target = p
                break
        if target is None:
            logger.info("rank cap reached at ranks %s", list(tt.ranks))
            break
        position = target
        init = _grow_rank(tt, target, cfg.warm_start_noise, rng)
        tt, rep = complete_fixed_rank(samples, init.ranks, cfg, init=init, rng=rng)
        iterations.extend(rep.iterations)
        history.append(tt.ranks)
        attempts += rep.attempts
        score = _score(rep)
        if score < ZERO_PREDICTOR_SCORE and (best is None or score < _score(best[1])):
            best = (tt, rep)
        lowest = min(lowest, score)
        increments_in_cycle += 1
        if increments_in_cycle >= d - 1:
            if cycle_start_score - lowest < cfg.stagnation_epsilon * cycle_start_score:
                logger.info("test error stagnated over a full rank cycle (%.3e)", lowest)
                break
            cycle_start_score = lowest
            increments_in_cycle = 0

    if best is None:
        logger.warning("no rank stage predicted held-out entries better than zero (best %.3e)", lowest)
        best_tt = tt
        best_rep = replace(
            rep, converged=False, diagnostic="no rank stage predicted held-out entries better than the zero tensor"
        )
    else:
        best_tt, best_rep = best

    report = replace(
        best_rep,
        iterations=tuple(iterations),
        rank_history=tuple(history),
        attempts=attempts,
        wall_time_s=time.perf_counter() - t0,
    )
    return best_tt, report


def sample_adaptive(sampler: Sampler, cfg: CompletionConfig) -> Tuple[TTTensor, CompletionReport]:
    """
    Run rank_adaptive, enlarging the sample set whenever the result misses the test tolerance.

    Returns the best round: a converged round wins, otherwise the lowest held-out error.
    """
    t0 = time.perf_counter()
    rng = np.random.default_rng(cfg.rng_seed)
    idx, vals = sampler(cfg.initial_samples)
    if idx.shape[0] == 0:
        raise InvalidArgument("sampler produced no samples")
    samples = SampleSet.split(sampler.mode_sizes, idx, vals, cfg.test_fraction, rng)
    best_tt, best_rep = rank_adaptive(samples, cfg)
    rounds = 0
    while not best_rep.converged and rounds < cfg.max_sample_rounds:
        wanted = int(math.ceil(samples.count * cfg.sample_growth_factor)) - samples.count
        new_idx, new_vals = sampler(wanted)
        if new_idx.shape[0] == 0:
            logger.info("grid exhausted after %d samples", samples.count)
            break
        rounds += 1
        samples = samples.extend(new_idx, new_vals, cfg.test_fraction, rng)
        logger.info("sample round %d: %d samples", rounds, samples.count)
        tt, rep = rank_adaptive(samples, cfg)
        if rep.converged or _score(rep) < _score(best_rep):
            best_tt, best_rep = tt, rep
    return best_tt, replace(best_rep, sample_rounds=rounds, wall_time_s=time.perf_counter() - t0)
