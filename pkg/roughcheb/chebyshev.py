from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.fft import dct

from roughcheb.errors import BuildFailure, InvalidArgument, OutOfDomain


# |x - node| <= NODE_HIT_RTOL * width counts as landing on the node.
NODE_HIT_RTOL = 1e-14
# Round-off slack accepted by domain checks (relative to the interval width).
DOMAIN_RTOL = 1e-12

Evaluator = Callable[[Tuple[float, ...]], float]


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.lo) and math.isfinite(self.hi)):
            raise InvalidArgument(f"interval bounds must be finite, got [{self.lo}, {self.hi}]")
        if not self.lo < self.hi:
            raise InvalidArgument(f"degenerate interval [{self.lo}, {self.hi}]")

    @property
    def width(self) -> float:
        return self.hi - self.lo

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.lo + self.hi)

    def contains(self, x: float, *, rtol: float = DOMAIN_RTOL) -> bool:
        slack = rtol * self.width
        return self.lo - slack <= x <= self.hi + slack

    def to_unit(self, x: float) -> float:
        """Affine map onto [-1, 1]."""
        u = (2.0 * x - (self.lo + self.hi)) / self.width
        return min(1.0, max(-1.0, u))


def chebyshev_points(count: int, iv: Interval) -> np.ndarray:
    """
    Chebyshev points of the second kind mapped onto `iv`, sorted ascending.

    Uses the sine form of cos(j*pi/(count-1)) so the node set is exactly symmetric and the
    middle node of an odd count is exactly the midpoint. Endpoints are pinned to lo/hi.
    """
    if not isinstance(count, (int, np.integer)) or count < 2:
        raise InvalidArgument(f"point count must be an integer >= 2, got {count!r}")
    n = int(count) - 1
    # Ascending order: x_j = -cos(j*pi/n) = sin(pi*(2j - n)/(2n)).
    j = np.arange(n + 1, dtype=float)
    unit = np.sin(np.pi * (2.0 * j - n) / (2.0 * n))
    pts = iv.midpoint + 0.5 * iv.width * unit
    pts[0] = iv.lo
    pts[-1] = iv.hi
    return pts


def barycentric_weights(count: int) -> np.ndarray:
    """Barycentric weights of Chebyshev points of the second kind: (-1)^j, halved at the ends."""
    w = np.ones(count)
    w[1::2] = -1.0
    w[0] *= 0.5
    w[-1] *= 0.5
    return w


def differentiation_matrix(nodes: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Spectral differentiation matrix D with (D @ f)_i = p'(nodes_i)."""
    c = nodes[:, np.newaxis] - nodes
    np.fill_diagonal(c, 1.0)
    c = weights / (c * weights[:, np.newaxis])
    np.fill_diagonal(c, 0.0)
    np.fill_diagonal(c, -c.sum(axis=1))
    return c


def lagrange_row(
    x: float, nodes: np.ndarray, weights: np.ndarray, width: float
) -> Tuple[np.ndarray, Optional[int]]:
    """
    Values of all Lagrange basis polynomials at `x` (second barycentric formula).

    Returns (row, hit) where `hit` is the node index when `x` lands on a node.
    """
    diff = x - nodes
    near = np.flatnonzero(np.abs(diff) <= NODE_HIT_RTOL * width)
    if near.size:
        hit = int(near[np.argmin(np.abs(diff[near]))])
        row = np.zeros_like(nodes)
        row[hit] = 1.0
        return row, hit
    q = weights / diff
    return q / q.sum(), None


@dataclass(frozen=True)
class ChebyshevGrid:
    intervals: Tuple[Interval, ...]
    counts: Tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.intervals) == 0:
            raise InvalidArgument("grid needs at least one dimension")
        if len(self.intervals) != len(self.counts):
            raise InvalidArgument(
                f"{len(self.intervals)} intervals but {len(self.counts)} point counts"
            )
        for c in self.counts:
            if int(c) != c or c < 2:
                raise InvalidArgument(f"point counts must be integers >= 2, got {self.counts}")
        object.__setattr__(self, "intervals", tuple(self.intervals))
        object.__setattr__(self, "counts", tuple(int(c) for c in self.counts))

    @classmethod
    def from_bounds(cls, bounds: Sequence[Tuple[float, float]], counts: Sequence[int]) -> "ChebyshevGrid":
        return cls(tuple(Interval(float(lo), float(hi)) for lo, hi in bounds), tuple(counts))

    @property
    def dimension(self) -> int:
        return len(self.counts)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.counts

    @property
    def total_points(self) -> int:
        # Exact integer; never materializes the grid.
        return math.prod(self.counts)

    @property
    def bounds(self) -> List[Tuple[float, float]]:
        return [(iv.lo, iv.hi) for iv in self.intervals]

    @cached_property
    def nodes(self) -> Tuple[np.ndarray, ...]:
        out = []
        for iv, c in zip(self.intervals, self.counts):
            pts = chebyshev_points(c, iv)
            pts.setflags(write=False)
            out.append(pts)
        return tuple(out)

    @cached_property
    def weights(self) -> Tuple[np.ndarray, ...]:
        return tuple(barycentric_weights(c) for c in self.counts)

    @cached_property
    def diff_matrices(self) -> Tuple[np.ndarray, ...]:
        return tuple(differentiation_matrix(n, w) for n, w in zip(self.nodes, self.weights))

    def node(self, multi_index: Sequence[int]) -> Tuple[float, ...]:
        return tuple(float(self.nodes[i][j]) for i, j in enumerate(multi_index))

    def contains(self, x: Sequence[float]) -> bool:
        if len(x) != self.dimension:
            return False
        return all(iv.contains(float(v)) for iv, v in zip(self.intervals, x))

    def check_point(self, x: Sequence[float]) -> np.ndarray:
        pt = np.asarray(x, dtype=float).reshape(-1)
        if pt.size != self.dimension:
            raise InvalidArgument(f"point has {pt.size} coordinates, grid has {self.dimension}")
        if not self.contains(pt):
            raise OutOfDomain(f"point {tuple(pt.tolist())} outside grid box {self.bounds}", point=tuple(pt.tolist()))
        lo = np.array([iv.lo for iv in self.intervals])
        hi = np.array([iv.hi for iv in self.intervals])
        return np.clip(pt, lo, hi)

    def row(self, axis: int, x: float) -> Tuple[np.ndarray, Optional[int]]:
        return lagrange_row(x, self.nodes[axis], self.weights[axis], self.intervals[axis].width)

    def derivative_row(self, axis: int, x: float) -> np.ndarray:
        row, _ = self.row(axis, x)
        return row @ self.diff_matrices[axis]

    def row_matrix(self, axis: int, xs: Iterable[float]) -> np.ndarray:
        """Stack of Lagrange rows, one per point in `xs` (shape len(xs) x count)."""
        return np.vstack([self.row(axis, float(x))[0] for x in xs])

    def derivative_row_matrix(self, axis: int, xs: Iterable[float]) -> np.ndarray:
        return self.row_matrix(axis, xs) @ self.diff_matrices[axis]


@dataclass(frozen=True, eq=False)
class FullChebyshevTensor:
    """Values of a function on every point of a Chebyshev grid (C order, last axis fastest)."""

    grid: ChebyshevGrid
    values: np.ndarray

    def __post_init__(self) -> None:
        vals = np.array(self.values, dtype=float)
        if vals.size != self.grid.total_points:
            raise InvalidArgument(
                f"tensor has {vals.size} values, grid has {self.grid.total_points} points"
            )
        if not np.all(np.isfinite(vals)):
            bad = np.unravel_index(int(np.flatnonzero(~np.isfinite(vals.reshape(-1)))[0]), self.grid.shape)
            raise BuildFailure(
                f"non-finite tensor value at multi-index {tuple(int(i) for i in bad)}",
                multi_index=tuple(int(i) for i in bad),
            )
        vals = vals.reshape(self.grid.shape)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def dimension(self) -> int:
        return self.grid.dimension

    @property
    def memory_bytes(self) -> int:
        return int(self.values.nbytes)

    @cached_property
    def coefficients(self) -> np.ndarray:
        return chebyshev_coefficients(self.values)


def build_full_tensor(f: Evaluator, grid: ChebyshevGrid, *, workers: int = 1) -> FullChebyshevTensor:
    """
    Evaluate `f` on every grid point.

    With workers > 1 points are evaluated on a thread pool; `f` must then be thread-safe.
    """
    indices = list(np.ndindex(*grid.shape))

    def _one(idx: Tuple[int, ...]) -> float:
        return float(f(grid.node(idx)))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            vals = list(pool.map(_one, indices))
    else:
        vals = [_one(idx) for idx in indices]

    for idx, v in zip(indices, vals):
        if not math.isfinite(v):
            raise BuildFailure(f"evaluator returned {v} at multi-index {idx}", multi_index=tuple(int(i) for i in idx))
    return FullChebyshevTensor(grid, np.asarray(vals, dtype=float).reshape(grid.shape))


def chebyshev_coefficients(values: np.ndarray) -> np.ndarray:
    """
    Chebyshev coefficients of the tensor-product interpolant of nodal `values`.

    Nodes are stored ascending, the DCT-I relation is written for descending nodes, so every
    axis is flipped before transforming.
    """
    coeffs = np.flip(np.asarray(values, dtype=float))
    for axis in range(coeffs.ndim):
        n = coeffs.shape[axis]
        coeffs = dct(coeffs, type=1, axis=axis) / (n - 1)
        first = [slice(None)] * coeffs.ndim
        first[axis] = 0
        last = [slice(None)] * coeffs.ndim
        last[axis] = n - 1
        coeffs[tuple(first)] *= 0.5
        coeffs[tuple(last)] *= 0.5
    return coeffs


def clenshaw(coeffs: np.ndarray, u: float) -> np.ndarray:
    """Sum coeffs[k] * T_k(u) over the leading axis with the Clenshaw recurrence."""
    b1 = np.zeros_like(coeffs[0])
    b2 = np.zeros_like(coeffs[0])
    for k in range(coeffs.shape[0] - 1, 0, -1):
        b1, b2 = coeffs[k] + 2.0 * u * b1 - b2, b1
    return coeffs[0] + u * b1 - b2


def contract_rows(values: np.ndarray, rows: Sequence[np.ndarray]) -> np.ndarray:
    """Contract the leading len(rows) axes of `values` with the given vectors."""
    out = values
    for row in rows:
        out = np.tensordot(row, out, axes=(0, 0))
    return out


def eval_barycentric(t: FullChebyshevTensor, x: Sequence[float]) -> float:
    pt = t.grid.check_point(x)
    out = t.values
    for axis in range(t.dimension):
        row, hit = t.grid.row(axis, float(pt[axis]))
        if hit is not None:
            out = out[hit]
        else:
            out = np.tensordot(row, out, axes=(0, 0))
    return float(out)


def eval_clenshaw(t: FullChebyshevTensor, x: Sequence[float]) -> float:
    pt = t.grid.check_point(x)
    out = t.coefficients
    for axis, iv in enumerate(t.grid.intervals):
        out = clenshaw(out, iv.to_unit(float(pt[axis])))
    return float(out)


def eval_gradient(t: FullChebyshevTensor, x: Sequence[float]) -> np.ndarray:
    pt = t.grid.check_point(x)
    d = t.dimension
    rows = [t.grid.row(axis, float(pt[axis]))[0] for axis in range(d)]
    grad = np.empty(d)
    for j in range(d):
        drows = list(rows)
        drows[j] = rows[j] @ t.grid.diff_matrices[j]
        grad[j] = float(contract_rows(t.values, drows))
    return grad
