"""Image loading, dense low-level features, and feature-field serialization.

Images are held as float arrays in [0, 1].  Dense per-pixel descriptors are
12-dimensional HSV patch vectors (3 channels over a 2x2 patch by default);
externally computed descriptor fields can be ingested from ``.gmpf`` files
instead (see `read_feature_field`).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DecodeError, FormatError

GMPF_MAGIC = b"GMPF"
GMPF_VERSION = 1


@dataclass(frozen=True)
class ImageGrid:
    """An aligned image: (height, width, channels) values in [0, 1]."""

    values: np.ndarray

    def __post_init__(self) -> None:
        v = self.values
        if v.ndim != 3 or v.shape[2] not in (1, 3):
            raise ValueError(f"expected (h, w, 1|3) array, got shape {v.shape}")
        if v.shape[0] < 2 or v.shape[1] < 2:
            raise ValueError("image must be at least 2x2 pixels")
        if not np.isfinite(v).all() or v.min() < 0.0 or v.max() > 1.0:
            raise ValueError("image values must lie in [0, 1]")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def channels(self) -> int:
        return self.values.shape[2]


@dataclass(frozen=True)
class FeatureField:
    """One descriptor per patch-anchor location: (height, width, dim) float32."""

    vectors: np.ndarray

    def __post_init__(self) -> None:
        v = self.vectors
        if v.ndim != 3:
            raise ValueError(f"expected (h, w, dim) array, got shape {v.shape}")
        if v.shape[0] < 1 or v.shape[1] < 1 or v.shape[2] < 1:
            raise ValueError("feature field dimensions must be positive")
        if v.dtype != np.float32:
            raise ValueError("feature field must be float32")
        if not np.isfinite(v).all():
            raise ValueError("feature field entries must be finite")

    @property
    def height(self) -> int:
        return self.vectors.shape[0]

    @property
    def width(self) -> int:
        return self.vectors.shape[1]

    @property
    def dim(self) -> int:
        return self.vectors.shape[2]


def resize_bilinear(values: np.ndarray, target_hw: tuple[int, int]) -> np.ndarray:
    """Bilinear resample of an (h, w, c) array with center-aligned sampling.

    An identity resize reproduces the input exactly, and constant images
    stay constant bit for bit (the interpolation is written in lerp form).
    """
    th, tw = target_hw
    if th <= 0 or tw <= 0:
        raise ValueError(f"target size must be positive, got {target_hw}")
    sh, sw = values.shape[:2]
    ys = (np.arange(th) + 0.5) * (sh / th) - 0.5
    xs = (np.arange(tw) + 0.5) * (sw / tw) - 0.5
    y0 = np.clip(np.floor(ys).astype(int), 0, sh - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, sw - 1)
    y1 = np.minimum(y0 + 1, sh - 1)
    x1 = np.minimum(x0 + 1, sw - 1)
    fy = np.clip(ys - y0, 0.0, 1.0)[:, None, None]
    fx = np.clip(xs - x0, 0.0, 1.0)[None, :, None]
    v00 = values[y0[:, None], x0[None, :]]
    v01 = values[y0[:, None], x1[None, :]]
    v10 = values[y1[:, None], x0[None, :]]
    v11 = values[y1[:, None], x1[None, :]]
    top = v00 + (v01 - v00) * fx
    bot = v10 + (v11 - v10) * fx
    return top + (bot - top) * fy


def load_image(path: str | Path, target_size: tuple[int, int]) -> ImageGrid:
    """Load an 8-bit grayscale or RGB image, resized to (height, width).

    Raises DecodeError if the file is missing or cannot be decoded, and
    ValueError for a degenerate target size.
    """
    th, tw = target_size
    if th <= 0 or tw <= 0:
        raise ValueError(f"target size must be positive, got {target_size}")
    try:
        with Image.open(path) as img:
            mode = "L" if img.mode in ("1", "L", "I;16", "I") else "RGB"
            arr = np.asarray(img.convert(mode), dtype=np.float64) / 255.0
    except (OSError, UnidentifiedImageError, ValueError) as exc:
        raise DecodeError(f"cannot decode image {path}: {exc}") from exc
    if arr.ndim == 2:
        arr = arr[:, :, None]
    # lerp-form resampling can overshoot by one ulp at the range edges
    return ImageGrid(np.clip(resize_bilinear(arr, (th, tw)), 0.0, 1.0))


def rgb_to_hsv(grid: ImageGrid) -> ImageGrid:
    """Convert an RGB grid to hexcone HSV with all channels in [0, 1].

    The hue of achromatic pixels (max == min) is defined as 0 so the
    conversion is a deterministic function of the input.
    """
    if grid.channels != 3:
        raise ValueError(f"rgb_to_hsv needs 3 channels, got {grid.channels}")
    rgb = grid.values
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    maxc = rgb.max(axis=2)
    minc = rgb.min(axis=2)
    delta = maxc - minc
    chromatic = delta > 0

    safe_delta = np.where(chromatic, delta, 1.0)
    h = np.zeros_like(maxc)
    rmax = chromatic & (maxc == r)
    gmax = chromatic & (maxc == g) & ~rmax
    bmax = chromatic & ~rmax & ~gmax
    h[rmax] = ((g - b)[rmax] / safe_delta[rmax]) % 6.0
    h[gmax] = (b - r)[gmax] / safe_delta[gmax] + 2.0
    h[bmax] = (r - g)[bmax] / safe_delta[bmax] + 4.0
    h /= 6.0

    s = np.where(maxc > 0, delta / np.where(maxc > 0, maxc, 1.0), 0.0)
    return ImageGrid(np.stack([h, s, maxc], axis=2))


def hsv_patch_features(grid: ImageGrid, patch: tuple[int, int] = (2, 2)) -> FeatureField:
    """Dense patch descriptors: channel values concatenated over each patch.

    One vector per anchor (patch top-left) location, anchors advancing by
    one pixel; vectors are laid out channel-major, pixels row-major within
    each channel, so dim = channels * patch_h * patch_w.
    """
    ph, pw = patch
    if ph < 1 or pw < 1:
        raise ValueError(f"patch size must be positive, got {patch}")
    if ph > grid.height or pw > grid.width:
        raise ValueError(
            f"patch {patch} does not fit inside {grid.height}x{grid.width} image"
        )
    windows = np.lib.stride_tricks.sliding_window_view(
        grid.values, (ph, pw), axis=(0, 1)
    )
    # windows: (h', w', channels, ph, pw) -> channel-major concatenation
    h, w = windows.shape[0], windows.shape[1]
    vectors = windows.reshape(h, w, grid.channels * ph * pw)
    return FeatureField(np.ascontiguousarray(vectors, dtype=np.float32))


def write_feature_field(field: FeatureField, path: str | Path) -> None:
    """Serialize a FeatureField to the .gmpf binary format."""
    header = GMPF_MAGIC + struct.pack(
        "<IIII", GMPF_VERSION, field.width, field.height, field.dim
    )
    payload = field.vectors.astype("<f4").tobytes()
    Path(path).write_bytes(header + payload)


def read_feature_field(path: str | Path) -> FeatureField:
    """Read a .gmpf file; byte-level inverse of `write_feature_field`.

    Layout (little-endian): magic "GMPF", version u32, width u32,
    height u32, dim u32, then width*height*dim float32 values, row-major
    with the descriptor dimension innermost.
    """
    data = Path(path).read_bytes()
    if len(data) < 20:
        raise FormatError(f"{path}: truncated header, {len(data)} bytes at offset 0")
    if data[:4] != GMPF_MAGIC:
        raise FormatError(f"{path}: bad magic {data[:4]!r} at offset 0")
    version, width, height, dim = struct.unpack("<IIII", data[4:20])
    if version != GMPF_VERSION:
        raise FormatError(f"{path}: unsupported version {version} at offset 4")
    if width < 1 or height < 1:
        raise FormatError(f"{path}: invalid grid {width}x{height} at offset 8")
    if dim < 1:
        raise FormatError(f"{path}: invalid dim {dim} at offset 16")
    expected = width * height * dim * 4
    if len(data) - 20 != expected:
        raise FormatError(
            f"{path}: payload is {len(data) - 20} bytes at offset 20, expected {expected}"
        )
    vectors = np.frombuffer(data, dtype="<f4", offset=20).reshape(height, width, dim)
    if not np.isfinite(vectors).all():
        raise FormatError(f"{path}: non-finite value in payload at offset 20")
    return FeatureField(np.ascontiguousarray(vectors))
