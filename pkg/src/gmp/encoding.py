"""Sparse appearance maps: kernel-smoothed word presence per image location.

For every visual word the minimum chessboard distance from each location to
an occurrence of that word is computed with an exact two-pass distance
transform.  Distances are turned into values in (0, 1] by a truncated
exponential kernel, sampled on a strided location grid, and stored sparsely
as one (word x location) matrix per entity.  Multi-shot entities average
their per-image maps entry-wise.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import FormatError
from .vocab import WordGrid

GMPE_MAGIC = b"GMPE"
GMPE_VERSION = 1

# kernel values smaller than this are dropped from sparse storage
VALUE_FLOOR = 1e-6


@dataclass(frozen=True)
class KernelParams:
    """Spatial kernel configuration: exp(-d/sigma) for d <= alpha, else 0."""

    sigma: float = 3.0
    alpha: float = 6.0
    stride: int = 4
    metric: str = "chessboard"

    def __post_init__(self) -> None:
        if self.sigma <= 0:
            raise ValueError("sigma must be > 0")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        if self.metric != "chessboard":
            raise ValueError(f"unsupported metric {self.metric!r}")


def chessboard_dt(seeds: np.ndarray) -> np.ndarray:
    """Exact chessboard distance to the nearest True cell of a 2-D mask.

    Two raster sweeps with the 8-neighborhood: the forward sweep propagates
    from the row above and the left, the backward sweep from the row below
    and the right.  Within a row the left/right propagation v[x] =
    min(v[x], v[x-1] + 1) is evaluated in closed form as
    min_{j<=x}(c[j] + (x - j)) via a running minimum of c[j] - j, which
    keeps each sweep a handful of vectorized row operations.  Cells with no
    seed anywhere are +inf.
    """
    mask = np.asarray(seeds, dtype=bool)
    if mask.ndim != 2:
        raise ValueError(f"seed mask must be 2-D, got shape {mask.shape}")
    h, w = mask.shape
    d = np.where(mask, 0.0, np.inf)
    cols = np.arange(w, dtype=np.float64)

    def _row_min3(row: np.ndarray) -> np.ndarray:
        out = row.copy()
        out[1:] = np.minimum(out[1:], row[:-1])
        out[:-1] = np.minimum(out[:-1], row[1:])
        return out

    def _scan_left(row: np.ndarray) -> np.ndarray:
        # v[x] = min_{j<=x} row[j] + (x - j), exact in f64 for integer values
        return np.minimum.accumulate(row - cols) + cols

    for r in range(h):
        row = d[r] if r == 0 else np.minimum(d[r], _row_min3(d[r - 1]) + 1.0)
        d[r] = _scan_left(row)
    for r in range(h - 1, -1, -1):
        row = d[r] if r == h - 1 else np.minimum(d[r], _row_min3(d[r + 1]) + 1.0)
        d[r] = _scan_left(row[::-1])[::-1]
    return d


def kernel_value(d: float | np.ndarray, params: KernelParams):
    """Truncated exponential kernel of a distance: exp(-d/sigma) within alpha."""
    arr = np.asarray(d, dtype=np.float64)
    with np.errstate(invalid="ignore"):
        vals = np.where(arr <= params.alpha, np.exp(-arr / params.sigma), 0.0)
    vals = np.where(np.isinf(arr), 0.0, vals)
    if np.ndim(d) == 0:
        return float(vals)
    return vals


@dataclass(frozen=True)
class AppearanceMap:
    """Sparse (word x sampled-location) presence values in (0, 1]."""

    view: int
    k: int
    grid_h: int
    grid_w: int
    stride: int
    matrix: sp.csr_matrix = field(repr=False)  # (k, n_locations) float64

    def __post_init__(self) -> None:
        m = self.matrix
        if m.shape != (self.k, self.n_locations):
            raise ValueError(
                f"matrix shape {m.shape} != (k={self.k}, locations={self.n_locations})"
            )
        if m.nnz and (m.data.min() <= 0.0 or m.data.max() > 1.0):
            raise ValueError("appearance values must lie in (0, 1]")

    @property
    def sampled_h(self) -> int:
        return len(range(0, self.grid_h, self.stride))

    @property
    def sampled_w(self) -> int:
        return len(range(0, self.grid_w, self.stride))

    @property
    def n_locations(self) -> int:
        return self.sampled_h * self.sampled_w

    def location_coords(self) -> np.ndarray:
        """Pixel (row, col) of each sampled location, row-major."""
        rows = np.arange(0, self.grid_h, self.stride)
        cols = np.arange(0, self.grid_w, self.stride)
        rr, cc = np.meshgrid(rows, cols, indexing="ij")
        return np.stack([rr.ravel(), cc.ravel()], axis=1)

    def dense(self) -> np.ndarray:
        # maps are immutable once built; cache a read-only dense view
        cached = getattr(self, "_dense", None)
        if cached is None:
            cached = self.matrix.toarray()
            cached.setflags(write=False)
            object.__setattr__(self, "_dense", cached)
        return cached


def _same_grid(a: AppearanceMap, b: AppearanceMap) -> bool:
    return (
        a.grid_h == b.grid_h and a.grid_w == b.grid_w and a.stride == b.stride
    )


def encode_image(words: WordGrid, params: KernelParams, view: int = 0) -> AppearanceMap:
    """Appearance map of a single image.

    Per word: distance-transform its occurrence set at full pixel
    resolution, subsample the field at the stride grid, apply the kernel,
    and keep entries >= VALUE_FLOOR.  Words absent from the image
    contribute no entries.  Truncating at alpha before or after the
    minimum over occurrences is equivalent because the kernel is
    non-increasing in distance.
    """
    if words.words.size == 0:
        raise ValueError("word grid is empty")
    rows: list[np.ndarray] = []
    cols: list[np.ndarray] = []
    vals: list[np.ndarray] = []
    s = params.stride
    for word in np.unique(words.words):
        dist = chessboard_dt(words.words == word)[::s, ::s]
        v = kernel_value(dist.ravel(), params)
        keep = v >= VALUE_FLOOR
        idx = np.flatnonzero(keep)
        rows.append(np.full(idx.size, word, dtype=np.int64))
        cols.append(idx)
        vals.append(v[keep])
    n_loc = len(range(0, words.height, s)) * len(range(0, words.width, s))
    matrix = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(words.k, n_loc),
    )
    return AppearanceMap(
        view=view,
        k=words.k,
        grid_h=words.height,
        grid_w=words.width,
        stride=s,
        matrix=matrix,
    )


def encode_entity(
    stack: list[WordGrid], params: KernelParams, view: int = 0
) -> AppearanceMap:
    """Entry-wise mean of the per-image maps of one entity's shots."""
    if not stack:
        raise ValueError("entity stack is empty")
    first = stack[0]
    for g in stack[1:]:
        if g.words.shape != first.words.shape or g.k != first.k:
            raise ValueError("all grids of an entity must share shape and k")
    maps = [encode_image(g, params, view=view) for g in stack]
    total = maps[0].matrix.copy()
    for m in maps[1:]:
        total = total + m.matrix
    mean = (total * (1.0 / len(maps))).tocsr()
    mean.sum_duplicates()
    return AppearanceMap(
        view=view,
        k=first.k,
        grid_h=first.height,
        grid_w=first.width,
        stride=params.stride,
        matrix=mean,
    )


def write_appearance_map(amap: AppearanceMap, path: str | Path) -> None:
    """Serialize to the .gmpe format (values stored as float32)."""
    coo = amap.matrix.tocoo()
    order = np.lexsort((coo.col, coo.row))
    words = coo.row[order].astype("<u4")
    locs = coo.col[order].astype("<u4")
    vals = coo.data[order].astype("<f4")
    header = GMPE_MAGIC + struct.pack(
        "<IIIIIIQ",
        GMPE_VERSION,
        amap.view,
        amap.k,
        amap.grid_w,
        amap.grid_h,
        amap.stride,
        words.size,
    )
    body = np.empty(words.size, dtype=[("word", "<u4"), ("loc", "<u4"), ("val", "<f4")])
    body["word"] = words
    body["loc"] = locs
    body["val"] = vals
    Path(path).write_bytes(header + body.tobytes())


def read_appearance_map(path: str | Path) -> AppearanceMap:
    """Read a .gmpe file, validating keys are strictly increasing."""
    data = Path(path).read_bytes()
    if len(data) < 36:
        raise FormatError(f"{path}: truncated header, {len(data)} bytes at offset 0")
    if data[:4] != GMPE_MAGIC:
        raise FormatError(f"{path}: bad magic {data[:4]!r} at offset 0")
    version, view, k, grid_w, grid_h, stride, count = struct.unpack(
        "<IIIIIIQ", data[4:36]
    )
    if version != GMPE_VERSION:
        raise FormatError(f"{path}: unsupported version {version} at offset 4")
    if k < 1 or grid_w < 1 or grid_h < 1 or stride < 1:
        raise FormatError(f"{path}: invalid dimensions at offset 12")
    expected = count * 12
    if len(data) - 36 != expected:
        raise FormatError(
            f"{path}: payload is {len(data) - 36} bytes at offset 36, expected {expected}"
        )
    body = np.frombuffer(
        data, dtype=[("word", "<u4"), ("loc", "<u4"), ("val", "<f4")], offset=36
    )
    n_loc = len(range(0, grid_h, stride)) * len(range(0, grid_w, stride))
    words = body["word"].astype(np.int64)
    locs = body["loc"].astype(np.int64)
    vals = body["val"].astype(np.float64)
    if count:
        if words.max() >= k:
            raise FormatError(f"{path}: word index out of range at offset 36")
        if locs.max() >= n_loc:
            raise FormatError(f"{path}: location index out of range at offset 36")
        keys = words * n_loc + locs
        if not (np.diff(keys) > 0).all():
            bad = int(np.flatnonzero(np.diff(keys) <= 0)[0]) + 1
            raise FormatError(
                f"{path}: (word, location) keys not strictly increasing at entry {bad}"
            )
        if vals.min() <= 0.0 or vals.max() > 1.0:
            raise FormatError(f"{path}: value outside (0, 1] in payload")
    matrix = sp.csr_matrix((vals, (words, locs)), shape=(k, n_loc))
    return AppearanceMap(
        view=view, k=k, grid_h=grid_h, grid_w=grid_w, stride=stride, matrix=matrix
    )
