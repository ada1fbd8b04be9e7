from __future__ import annotations

from typing import Optional, Sequence, Tuple, Union

import numpy as np

from roughcheb.chebyshev import ChebyshevGrid, FullChebyshevTensor, contract_rows, eval_barycentric, eval_gradient
from roughcheb.errors import InvalidArgument, InvalidState, OutOfDomain
from roughcheb.models import RoughBergomiParams
from roughcheb.tensor_train import TTTensor, tt_cheb_eval


Tensor = Union[FullChebyshevTensor, TTTensor]


class Surrogate:
    """
    Chebyshev tensor over (theta..., maturity, strike) standing in for the pricer.

    The tensor and its grid are read-only, so one instance may be shared between threads.
    """

    def __init__(self, tensor: Tensor, *, pillar_times: Optional[Sequence[float]] = None) -> None:
        grid = tensor.grid
        if grid is None:
            raise InvalidState("surrogate tensor has no Chebyshev grid attached")
        if grid.dimension < 3:
            raise InvalidArgument(f"surrogate needs theta, maturity and strike axes, got {grid.dimension} axes")
        self.tensor = tensor
        self.grid: ChebyshevGrid = grid
        self.pillar_times = tuple(pillar_times) if pillar_times is not None else None

    @property
    def kind(self) -> str:
        return "full" if isinstance(self.tensor, FullChebyshevTensor) else "tt"

    @property
    def theta_dim(self) -> int:
        return self.grid.dimension - 2

    @property
    def theta_bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        ivs = self.grid.intervals[: self.theta_dim]
        return np.array([iv.lo for iv in ivs]), np.array([iv.hi for iv in ivs])

    @property
    def maturity_axis(self) -> int:
        return self.theta_dim

    @property
    def strike_axis(self) -> int:
        return self.theta_dim + 1

    @property
    def memory_bytes(self) -> int:
        return self.tensor.memory_bytes

    def contains_theta(self, theta: Sequence[float]) -> bool:
        ivs = self.grid.intervals[: self.theta_dim]
        return len(theta) == self.theta_dim and all(iv.contains(float(v)) for iv, v in zip(ivs, theta))

    def params(self, theta: Sequence[float]) -> RoughBergomiParams:
        return RoughBergomiParams.from_vector(theta, pillar_times=self.pillar_times)

    def _theta(self, theta: Sequence[float]) -> np.ndarray:
        th = np.asarray(theta, dtype=float).reshape(-1)
        if th.size != self.theta_dim:
            raise InvalidArgument(f"theta has {th.size} entries, surrogate expects {self.theta_dim}")
        if not self.contains_theta(th):
            raise OutOfDomain(f"theta {tuple(th.tolist())} outside surrogate box", point=tuple(th.tolist()))
        lo, hi = self.theta_bounds
        return np.clip(th, lo, hi)

    def _axis_points(self, axis: int, xs: Sequence[float]) -> np.ndarray:
        iv = self.grid.intervals[axis]
        pts = np.asarray(xs, dtype=float).reshape(-1)
        for x in pts:
            if not iv.contains(float(x)):
                raise OutOfDomain(f"{x} outside [{iv.lo}, {iv.hi}] on axis {axis}", point=(float(x),))
        return np.clip(pts, iv.lo, iv.hi)

    def evaluate(self, x: Sequence[float]) -> float:
        if isinstance(self.tensor, FullChebyshevTensor):
            return eval_barycentric(self.tensor, x)
        return tt_cheb_eval(self.tensor, x)

    def gradient(self, x: Sequence[float]) -> np.ndarray:
        """Partial derivatives with respect to every axis, theta first."""
        if isinstance(self.tensor, FullChebyshevTensor):
            return eval_gradient(self.tensor, x)
        pt = self.grid.check_point(x)
        rows = [self.grid.row(a, float(pt[a]))[0] for a in range(self.grid.dimension)]
        out = np.empty(self.grid.dimension)
        for j in range(self.grid.dimension):
            acc = np.ones((1, 1))
            for a, core in enumerate(self.tensor.cores):
                r = self.grid.derivative_row(a, float(pt[a])) if a == j else rows[a]
                acc = acc @ np.tensordot(r, core, axes=(0, 0))
            out[j] = acc[0, 0]
        return out

    def _block(self, theta_rows: Sequence[np.ndarray], mat_rows: np.ndarray, strike_rows: np.ndarray) -> np.ndarray:
        if isinstance(self.tensor, FullChebyshevTensor):
            tk = contract_rows(self.tensor.values, theta_rows)
            return mat_rows @ tk @ strike_rows.T
        acc = np.ones((1, 1))
        for r, core in zip(theta_rows, self.tensor.cores):
            acc = acc @ np.tensordot(r, core, axes=(0, 0))
        t_core = np.tensordot(mat_rows, self.tensor.cores[-2], axes=(1, 0))
        k_core = np.tensordot(strike_rows, self.tensor.cores[-1], axes=(1, 0))[:, :, 0]
        return np.einsum("a,tab,kb->tk", acc[0], t_core, k_core)

    def surface(self, theta: Sequence[float], maturities: Sequence[float], strikes: Sequence[float]) -> np.ndarray:
        """Implied vols on the maturity x strike block, theta axes contracted once."""
        th = self._theta(theta)
        mats = self._axis_points(self.maturity_axis, maturities)
        ks = self._axis_points(self.strike_axis, strikes)
        theta_rows = [self.grid.row(a, float(v))[0] for a, v in enumerate(th)]
        return self._block(
            theta_rows,
            self.grid.row_matrix(self.maturity_axis, mats),
            self.grid.row_matrix(self.strike_axis, ks),
        )

    def surface_jacobian(
        self, theta: Sequence[float], maturities: Sequence[float], strikes: Sequence[float]
    ) -> np.ndarray:
        """d surface / d theta, shape (maturities, strikes, theta_dim)."""
        th = self._theta(theta)
        mats = self._axis_points(self.maturity_axis, maturities)
        ks = self._axis_points(self.strike_axis, strikes)
        theta_rows = [self.grid.row(a, float(v))[0] for a, v in enumerate(th)]
        m_rows = self.grid.row_matrix(self.maturity_axis, mats)
        k_rows = self.grid.row_matrix(self.strike_axis, ks)
        out = np.empty((mats.size, ks.size, self.theta_dim))
        for j in range(self.theta_dim):
            rows = list(theta_rows)
            rows[j] = self.grid.derivative_row(j, float(th[j]))
            out[:, :, j] = self._block(rows, m_rows, k_rows)
        return out
