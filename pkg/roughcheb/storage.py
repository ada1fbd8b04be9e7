"""
On-disk formats.

Full Chebyshev tensor (``*.rcf``), all little-endian:

    8s   magic  b"RCHEBFUL"
    u32  format version (1)
    u32  dimension d
    d x (f64 lo, f64 hi, u32 count)
    f64  values, row-major (last axis fastest), prod(count) of them

TT tensor (``*.rct``):

    8s   magic  b"RCHEBTT\\0"
    u32  format version (1)
    u32  dimension d
    u32  1 if a Chebyshev grid follows, else 0
    d x u32 mode sizes n_i
    (d+1) x u32 ranks r_0..r_d
    [d x (f64 lo, f64 hi)]            only when the grid flag is set
    cores 1..d, core i as f64 in C order of shape (n_i, r_{i-1}, r_i)

Every binary file has a JSON sidecar (``<file>.json``) repeating the header.
JSON output is written atomically with sorted keys so fixed seeds give identical bytes.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import struct
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from roughcheb.chebyshev import ChebyshevGrid, FullChebyshevTensor
from roughcheb.errors import InvalidArgument
from roughcheb.models import RoughBergomiParams, SurfaceSpec, VolSurface
from roughcheb.tensor_train import TTTensor


FORMAT_VERSION = 1
FULL_MAGIC = b"RCHEBFUL"
TT_MAGIC = b"RCHEBTT\x00"
_LE_F64 = np.dtype("<f8")


def _atomic_write_bytes(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def _clean(obj: Any) -> Any:
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, (np.floating, np.integer)):
        return _clean(obj.item())
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def write_json(path: Path, payload: Dict[str, Any]) -> None:
    """Atomic, sorted-key JSON; non-finite floats become null."""
    data = json.dumps(_clean(payload), ensure_ascii=False, indent=2, sort_keys=True) + "\n"
    _atomic_write_bytes(Path(path), data.encode("utf-8"))


def read_json(path: Path) -> Dict[str, Any]:
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise InvalidArgument(f"cannot read JSON from {path}: {e}") from e
    if not isinstance(obj, dict):
        raise InvalidArgument(f"{path}: expected a JSON object")
    return obj


def write_csv(path: Path, header: Sequence[Any], rows: Sequence[Sequence[Any]]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(header))
    for row in rows:
        w.writerow(["" if isinstance(v, float) and not math.isfinite(v) else v for v in row])
    _atomic_write_bytes(Path(path), buf.getvalue().encode("utf-8"))


def sidecar_path(path: Path) -> Path:
    return Path(str(path) + ".json")


# ----------------------------------------------------------------------------------------
# Tensors
# ----------------------------------------------------------------------------------------


def full_tensor_header(t: FullChebyshevTensor) -> Dict[str, Any]:
    return {
        "format": "roughcheb-full",
        "version": FORMAT_VERSION,
        "dimension": t.dimension,
        "axes": [{"lo": lo, "hi": hi, "count": c} for (lo, hi), c in zip(t.grid.bounds, t.grid.counts)],
        "byte_order": "little",
        "value_layout": "row-major float64",
    }


def save_full_tensor(path: Path, t: FullChebyshevTensor) -> None:
    parts = [FULL_MAGIC, struct.pack("<II", FORMAT_VERSION, t.dimension)]
    for (lo, hi), c in zip(t.grid.bounds, t.grid.counts):
        parts.append(struct.pack("<ddI", lo, hi, c))
    parts.append(np.ascontiguousarray(t.values, dtype=_LE_F64).tobytes())
    _atomic_write_bytes(Path(path), b"".join(parts))
    write_json(sidecar_path(Path(path)), full_tensor_header(t))


class _Reader:
    def __init__(self, data: bytes, path: Path) -> None:
        self.data = data
        self.pos = 0
        self.path = path
        self.dimension = 0

    def take(self, fmt: str) -> Tuple[Any, ...]:
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.data):
            raise InvalidArgument(f"{self.path}: truncated file")
        out = struct.unpack_from(fmt, self.data, self.pos)
        self.pos += size
        return out

    def floats(self, count: int) -> np.ndarray:
        end = self.pos + 8 * count
        if end > len(self.data):
            raise InvalidArgument(f"{self.path}: truncated file")
        arr = np.frombuffer(self.data, dtype=_LE_F64, count=count, offset=self.pos).astype(float)
        self.pos = end
        return arr

    def done(self) -> None:
        if self.pos != len(self.data):
            raise InvalidArgument(f"{self.path}: {len(self.data) - self.pos} trailing bytes")


def _open(path: Path, magic: bytes) -> _Reader:
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise InvalidArgument(f"cannot read {path}: {e}") from e
    r = _Reader(data, Path(path))
    (got,) = r.take("<8s")
    if got != magic:
        raise InvalidArgument(f"{path}: not a {magic!r} file")
    version, d = r.take("<II")
    if version != FORMAT_VERSION:
        raise InvalidArgument(f"{path}: unsupported format version {version}")
    if d < 1:
        raise InvalidArgument(f"{path}: bad dimension {d}")
    r.dimension = d
    return r


def load_full_tensor(path: Path) -> FullChebyshevTensor:
    r = _open(path, FULL_MAGIC)
    bounds, counts = [], []
    for _ in range(r.dimension):
        lo, hi, c = r.take("<ddI")
        bounds.append((lo, hi))
        counts.append(c)
    grid = ChebyshevGrid.from_bounds(bounds, counts)
    values = r.floats(grid.total_points)
    r.done()
    return FullChebyshevTensor(grid, values)


def tt_header(t: TTTensor) -> Dict[str, Any]:
    out: Dict[str, Any] = {
        "format": "roughcheb-tt",
        "version": FORMAT_VERSION,
        "dimension": t.dimension,
        "mode_sizes": list(t.mode_sizes),
        "ranks": list(t.ranks),
        "grid_size": t.grid_size,
        "storage_size": t.storage_size,
        "byte_order": "little",
        "core_layout": "float64 C order (n_i, r_{i-1}, r_i)",
    }
    if t.grid is not None:
        out["bounds"] = [list(b) for b in t.grid.bounds]
    return out


def save_tt(path: Path, t: TTTensor) -> None:
    d = t.dimension
    parts = [TT_MAGIC, struct.pack("<III", FORMAT_VERSION, d, 1 if t.grid is not None else 0)]
    parts.append(struct.pack(f"<{d}I", *t.mode_sizes))
    parts.append(struct.pack(f"<{d + 1}I", *t.ranks))
    if t.grid is not None:
        for lo, hi in t.grid.bounds:
            parts.append(struct.pack("<dd", lo, hi))
    for c in t.cores:
        parts.append(np.ascontiguousarray(c, dtype=_LE_F64).tobytes())
    _atomic_write_bytes(Path(path), b"".join(parts))
    write_json(sidecar_path(Path(path)), tt_header(t))


def load_tt(path: Path) -> TTTensor:
    r = _open(path, TT_MAGIC)
    d = r.dimension
    (has_grid,) = r.take("<I")
    modes = r.take(f"<{d}I")
    ranks = r.take(f"<{d + 1}I")
    grid: Optional[ChebyshevGrid] = None
    if has_grid:
        bounds = [r.take("<dd") for _ in range(d)]
        grid = ChebyshevGrid.from_bounds(bounds, modes)
    cores = []
    for i, n in enumerate(modes):
        shape = (n, ranks[i], ranks[i + 1])
        cores.append(r.floats(int(np.prod(shape))).reshape(shape))
    r.done()
    return TTTensor(tuple(cores), grid=grid)


def load_surrogate_tensor(path: Path):
    """Either tensor kind, chosen by the file's magic bytes."""
    try:
        with open(path, "rb") as f:
            head = f.read(8)
    except OSError as e:
        raise InvalidArgument(f"cannot read {path}: {e}") from e
    if head == FULL_MAGIC:
        return load_full_tensor(path)
    if head == TT_MAGIC:
        return load_tt(path)
    raise InvalidArgument(f"{path}: unknown tensor file")


# ----------------------------------------------------------------------------------------
# Surfaces
# ----------------------------------------------------------------------------------------


def surface_to_json(s: VolSurface, params: Optional[RoughBergomiParams] = None) -> Dict[str, Any]:
    out: Dict[str, Any] = {
        "spec": s.spec.to_json(),
        "quotes": [[float(v) if ok else None for v, ok in zip(qr, mr)] for qr, mr in zip(s.quotes, s.valid)],
        "weights": s.weights.tolist(),
    }
    if params is not None:
        out["params"] = params.to_json()
    return out


def surface_from_json(obj: Dict[str, Any]) -> VolSurface:
    try:
        spec = SurfaceSpec.from_json(obj["spec"])
        raw = obj["quotes"]
        quotes = np.array([[math.nan if v is None else float(v) for v in row] for row in raw], dtype=float)
        weights = np.array(obj.get("weights"), dtype=float) if obj.get("weights") is not None else None
    except (KeyError, TypeError, ValueError) as e:
        raise InvalidArgument(f"malformed surface: {e}") from e
    if quotes.shape != spec.shape:
        raise InvalidArgument(f"quote matrix shape {quotes.shape} != spec shape {spec.shape}")
    return VolSurface(spec, quotes, weights)


def save_surface(path: Path, s: VolSurface, params: Optional[RoughBergomiParams] = None) -> None:
    write_json(path, surface_to_json(s, params))


def load_surface(path: Path) -> Tuple[VolSurface, Optional[RoughBergomiParams]]:
    obj = read_json(path)
    params = RoughBergomiParams.from_json(obj["params"]) if "params" in obj else None
    return surface_from_json(obj), params


def surface_matrix_csv(path: Path, spec: SurfaceSpec, matrix: np.ndarray) -> None:
    """Maturities down the first column, strikes across the header row."""
    rows: List[List[Any]] = [[t] + [float(v) for v in row] for t, row in zip(spec.maturities, matrix)]
    write_csv(path, ["maturity"] + list(spec.strikes), rows)

