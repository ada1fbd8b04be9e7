from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from roughcheb.chebyshev import ChebyshevGrid, FullChebyshevTensor
from roughcheb.errors import InvalidArgument, InvalidState


@dataclass(frozen=True, eq=False)
class TTCore:
    """List-of-matrices view of one core: matrices[j] is the r_{i-1} x r_i slice for index j."""

    index: int
    matrices: np.ndarray

    @property
    def shape(self) -> Tuple[int, int]:
        return (int(self.matrices.shape[1]), int(self.matrices.shape[2]))

    def __len__(self) -> int:
        return int(self.matrices.shape[0])

    def __getitem__(self, j: int) -> np.ndarray:
        return self.matrices[j]


@dataclass(frozen=True, eq=False)
class TTTensor:
    """
    Tensor-train cores, each stored as one contiguous (n_i, r_{i-1}, r_i) array.

    Entry (j_1, ..., j_d) is cores[0][j_1] @ ... @ cores[d-1][j_d].
    """

    cores: Tuple[np.ndarray, ...]
    grid: Optional[ChebyshevGrid] = None

    def __post_init__(self) -> None:
        cores = []
        for c in self.cores:
            arr = np.array(c, dtype=float)
            if arr.ndim != 3:
                raise InvalidArgument(f"TT cores must be 3-way arrays, got shape {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise InvalidArgument("TT core has non-finite entries")
            arr.setflags(write=False)
            cores.append(arr)
        if not cores:
            raise InvalidArgument("TT needs at least one core")
        if cores[0].shape[1] != 1 or cores[-1].shape[2] != 1:
            raise InvalidArgument(
                f"boundary ranks must be 1, got {cores[0].shape[1]} and {cores[-1].shape[2]}"
            )
        for i in range(len(cores) - 1):
            if cores[i].shape[2] != cores[i + 1].shape[1]:
                raise InvalidArgument(
                    f"core {i} right rank {cores[i].shape[2]} != core {i + 1} left rank {cores[i + 1].shape[1]}"
                )
        object.__setattr__(self, "cores", tuple(cores))
        if self.grid is not None and tuple(self.grid.shape) != self.mode_sizes:
            raise InvalidArgument(f"grid shape {self.grid.shape} != TT mode sizes {self.mode_sizes}")

    @property
    def dimension(self) -> int:
        return len(self.cores)

    @property
    def mode_sizes(self) -> Tuple[int, ...]:
        return tuple(int(c.shape[0]) for c in self.cores)

    @property
    def ranks(self) -> Tuple[int, ...]:
        return (1,) + tuple(int(c.shape[2]) for c in self.cores)

    @property
    def max_rank(self) -> int:
        return max(self.ranks)

    @property
    def grid_size(self) -> int:
        return math.prod(self.mode_sizes)

    @property
    def storage_size(self) -> int:
        return int(sum(c.size for c in self.cores))

    @property
    def memory_bytes(self) -> int:
        return int(sum(c.nbytes for c in self.cores))

    def core(self, i: int) -> TTCore:
        return TTCore(index=i, matrices=self.cores[i])

    def with_grid(self, grid: ChebyshevGrid) -> "TTTensor":
        return TTTensor(self.cores, grid=grid)

    def gather(self, indices: np.ndarray) -> np.ndarray:
        """Entries at an (N, d) array of multi-indices."""
        idx = np.asarray(indices, dtype=np.int64).reshape(-1, self.dimension)
        acc = self.cores[0][idx[:, 0], 0, :]
        for k in range(1, self.dimension):
            acc = np.einsum("na,nab->nb", acc, self.cores[k][idx[:, k]])
        return acc[:, 0]

    def full(self) -> np.ndarray:
        acc = self.cores[0][:, 0, :]
        for c in self.cores[1:]:
            # (M, r) x (n, r, s) -> (M, n, s)
            acc = np.einsum("ma,nab->mnb", acc, c).reshape(-1, c.shape[2])
        return acc.reshape(self.mode_sizes)


def _check_index(t: TTTensor, idx: Sequence[int]) -> Tuple[int, ...]:
    if len(idx) != t.dimension:
        raise InvalidArgument(f"index has {len(idx)} entries, tensor has {t.dimension} modes")
    out = []
    for k, (j, n) in enumerate(zip(idx, t.mode_sizes)):
        if int(j) != j or not 0 <= j < n:
            raise InvalidArgument(f"index {tuple(idx)} out of bounds at mode {k} (size {n})")
        out.append(int(j))
    return tuple(out)


def tt_entry(t: TTTensor, idx: Sequence[int]) -> float:
    ii = _check_index(t, idx)
    acc = t.cores[0][ii[0]]
    for k in range(1, t.dimension):
        acc = acc @ t.cores[k][ii[k]]
    return float(acc[0, 0])


def tt_inner_product(a: TTTensor, b: TTTensor) -> float:
    """Sum of a(idx) * b(idx) over the whole grid, by left-to-right core contraction."""
    if a.mode_sizes != b.mode_sizes:
        raise InvalidArgument(f"mode sizes differ: {a.mode_sizes} vs {b.mode_sizes}")
    m = np.ones((1, 1))
    for ca, cb in zip(a.cores, b.cores):
        m = np.einsum("jac,ab,jbd->cd", ca, m, cb)
    return float(m[0, 0])


def tt_norm(t: TTTensor) -> float:
    return math.sqrt(max(tt_inner_product(t, t), 0.0))


def left_unfold(core: np.ndarray) -> np.ndarray:
    n, rl, rr = core.shape
    return core.transpose(1, 0, 2).reshape(rl * n, rr)


def fold_left(mat: np.ndarray, n: int, rl: int) -> np.ndarray:
    return mat.reshape(rl, n, -1).transpose(1, 0, 2)


def right_unfold(core: np.ndarray) -> np.ndarray:
    n, rl, rr = core.shape
    return core.transpose(1, 0, 2).reshape(rl, n * rr)


def fold_right(mat: np.ndarray, n: int, rr: int) -> np.ndarray:
    return mat.reshape(-1, n, rr).transpose(1, 0, 2)


def orthogonalize_left(cores: Sequence[np.ndarray]) -> List[np.ndarray]:
    """QR sweep making cores 0..d-2 left-orthonormal; the last core carries the norm."""
    out = [np.array(c, dtype=float) for c in cores]
    for k in range(len(out) - 1):
        n, rl, _ = out[k].shape
        q, r = np.linalg.qr(left_unfold(out[k]))
        out[k] = fold_left(q, n, rl)
        out[k + 1] = np.einsum("ab,jbc->jac", r, out[k + 1])
    return out


def orthogonalize_right(cores: Sequence[np.ndarray]) -> List[np.ndarray]:
    """QR sweep making cores 1..d-1 right-orthonormal; the first core carries the norm."""
    out = [np.array(c, dtype=float) for c in cores]
    for k in range(len(out) - 1, 0, -1):
        n, _, rr = out[k].shape
        q, r = np.linalg.qr(right_unfold(out[k]).T)
        out[k] = fold_right(q.T, n, rr)
        out[k - 1] = np.einsum("jab,cb->jac", out[k - 1], r)
    return out


def round_to_ranks(cores: Sequence[np.ndarray], ranks: Sequence[int]) -> List[np.ndarray]:
    """
    Truncate a TT to at most the given ranks (r_0..r_d) by an SVD sweep.

    Output cores 0..d-2 are left-orthonormal.
    """
    out = orthogonalize_right(cores)
    for k in range(len(out) - 1):
        n, rl, _ = out[k].shape
        u, s, vt = np.linalg.svd(left_unfold(out[k]), full_matrices=False)
        r = max(1, min(int(ranks[k + 1]), s.size))
        out[k] = fold_left(u[:, :r], n, rl)
        out[k + 1] = np.einsum("ab,jbc->jac", s[:r, None] * vt[:r], out[k + 1])
    return out


def tt_from_full(t: FullChebyshevTensor, tol: float) -> TTTensor:
    """
    TT-SVD of a dense tensor.

    Each of the d-1 unfoldings drops the longest singular-value tail whose norm stays within
    tol / sqrt(d-1), so the Frobenius reconstruction error is at most `tol`.
    """
    values = np.asarray(t.values, dtype=float)
    if not np.all(np.isfinite(values)):
        raise InvalidArgument("tensor has non-finite values")
    if tol < 0:
        raise InvalidArgument(f"tolerance must be >= 0, got {tol}")
    dims = values.shape
    d = len(dims)
    delta = tol / math.sqrt(d - 1) if d > 1 else 0.0
    cores: List[np.ndarray] = []
    rank = 1
    mat = values.reshape(dims[0], -1)
    for k in range(d - 1):
        u, s, vt = np.linalg.svd(mat, full_matrices=False)
        # tail[r] = norm of singular values from index r on
        tail = np.sqrt(np.cumsum((s ** 2)[::-1])[::-1])
        keep = int(np.count_nonzero(tail > delta))
        keep = max(1, keep)
        cores.append(fold_left(u[:, :keep], dims[k], rank))
        rank = keep
        mat = (s[:keep, None] * vt[:keep]).reshape(rank * dims[k + 1], -1)
    cores.append(fold_left(mat, dims[d - 1], rank))
    return TTTensor(tuple(cores), grid=t.grid)


def tt_svd_to_ranks(values: np.ndarray, ranks: Sequence[int]) -> List[np.ndarray]:
    """
    TT-SVD of a dense array keeping at most ranks[k] singular vectors per unfolding.

    A rank comes out smaller than requested when the unfolding has fewer singular values.
    """
    values = np.asarray(values, dtype=float)
    dims = values.shape
    d = len(dims)
    if len(ranks) != d + 1:
        raise InvalidArgument(f"need {d + 1} ranks, got {len(ranks)}")
    cores: List[np.ndarray] = []
    rank = 1
    mat = values.reshape(dims[0], -1)
    for k in range(d - 1):
        u, s, vt = np.linalg.svd(mat, full_matrices=False)
        keep = max(1, min(int(ranks[k + 1]), s.size))
        cores.append(fold_left(u[:, :keep], dims[k], rank))
        rank = keep
        mat = (s[:keep, None] * vt[:keep]).reshape(rank * dims[k + 1], -1)
    cores.append(fold_left(mat, dims[d - 1], rank))
    return cores


def tt_random(
    mode_sizes: Sequence[int], ranks: Sequence[int], rng: np.random.Generator, *, scale: float = 1.0
) -> TTTensor:
    if len(ranks) != len(mode_sizes) + 1:
        raise InvalidArgument(f"need {len(mode_sizes) + 1} ranks, got {len(ranks)}")
    cores = tuple(
        scale * rng.standard_normal((int(n), int(ranks[i]), int(ranks[i + 1])))
        for i, n in enumerate(mode_sizes)
    )
    return TTTensor(cores)


def tt_cheb_eval(t: TTTensor, x: Sequence[float]) -> float:
    """Continuous evaluation of the Chebyshev interpolant of a TT-stored grid tensor."""
    if t.grid is None:
        raise InvalidState("TT tensor has no Chebyshev grid attached")
    pt = t.grid.check_point(x)
    acc = np.ones((1, 1))
    for axis, c in enumerate(t.cores):
        row, hit = t.grid.row(axis, float(pt[axis]))
        m = c[hit] if hit is not None else np.tensordot(row, c, axes=(0, 0))
        acc = acc @ m
    return float(acc[0, 0])
