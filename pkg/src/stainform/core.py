"""Fundamental rasters, color math, standardization, and resampling.

Everything here is a pure function over immutable inputs; the types freeze
their arrays after construction so instances can be shared across threads.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

U8_MAX = 255


class LuminanceMode(enum.Enum):
    """Weighted-sum luminance variants. REC601 is the pipeline default."""

    REC709 = (0.2126, 0.7152, 0.0722)
    REC601 = (0.299, 0.587, 0.114)

    @property
    def coefficients(self) -> tuple[float, float, float]:
        return self.value


class Image:
    """H x W x 3 RGB raster, canonical 8-bit storage, float [0,1] view on demand."""

    __slots__ = ("pixels",)

    def __init__(self, pixels: np.ndarray):
        pixels = np.asarray(pixels)
        if pixels.dtype != np.uint8:
            raise ValueError(f"image storage must be uint8, got {pixels.dtype}")
        if pixels.ndim != 3 or pixels.shape[2] != 3:
            raise ValueError(f"image must be HxWx3, got shape {pixels.shape}")
        if pixels.shape[0] < 1 or pixels.shape[1] < 1:
            raise ValueError(f"image dims must be >= 1, got shape {pixels.shape}")
        pixels = np.ascontiguousarray(pixels).copy()
        pixels.flags.writeable = False
        self.pixels = pixels

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def to_float(self) -> np.ndarray:
        """Float64 view in [0,1]."""
        return self.pixels.astype(np.float64) / U8_MAX

    @classmethod
    def from_float(cls, arr: np.ndarray) -> "Image":
        """Quantize a float [0,1] array to 8-bit storage (round half up)."""
        return cls(quantize_u8(arr))

    def copy(self) -> "Image":
        return Image(self.pixels)


def quantize_u8(arr: np.ndarray) -> np.ndarray:
    """Clamp to [0,1] and round half up to uint8."""
    arr = np.clip(np.asarray(arr, dtype=np.float64), 0.0, 1.0)
    return np.floor(arr * U8_MAX + 0.5).astype(np.uint8)


class FeatureMap:
    """C x H x W float grid, channel-major, finite values only."""

    __slots__ = ("values",)

    def __init__(self, values: np.ndarray):
        values = np.ascontiguousarray(values, dtype=np.float32)
        if values.ndim != 3:
            raise ValueError(f"feature map must be CxHxW, got shape {values.shape}")
        if min(values.shape) < 1:
            raise ValueError(f"feature map dims must be >= 1, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("feature map contains non-finite values")
        values = values.copy()
        values.flags.writeable = False
        self.values = values

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]

    def pixel_vectors(self) -> np.ndarray:
        """(H*W) x C array of per-pixel feature vectors (row-major pixels)."""
        c, h, w = self.values.shape
        return self.values.reshape(c, h * w).T


@dataclass(frozen=True)
class ChannelStats:
    """Per-channel mean and population standard deviation."""

    mean: np.ndarray
    std: np.ndarray


def luminance(pixel, mode: LuminanceMode = LuminanceMode.REC601) -> float:
    """Weighted-sum luminance of an (r, g, b) triple on the [0,255] scale."""
    r, g, b = pixel
    cr, cg, cb = mode.coefficients
    return cr * float(r) + cg * float(g) + cb * float(b)


def luminance_plane(rgb: np.ndarray, mode: LuminanceMode = LuminanceMode.REC601) -> np.ndarray:
    """Luminance of an HxWx3 float array, same scale as the input."""
    cr, cg, cb = mode.coefficients
    return cr * rgb[..., 0] + cg * rgb[..., 1] + cb * rgb[..., 2]


def standardize(fmap: FeatureMap) -> tuple[FeatureMap, ChannelStats]:
    """Per-channel z = (x - mean) / std with population std.

    Constant channels (std 0) map to all zeros and report std 0; there is
    never a division by zero.
    """
    vals = fmap.values.astype(np.float64)
    mean = vals.mean(axis=(1, 2))
    std = vals.std(axis=(1, 2))  # population definition (divide by N)
    out = np.empty_like(vals)
    for c in range(vals.shape[0]):
        if std[c] == 0.0:
            out[c] = 0.0
        else:
            out[c] = (vals[c] - mean[c]) / std[c]
    return FeatureMap(out), ChannelStats(mean=mean, std=std)


def layer_dims(width: int, height: int, layer: int) -> tuple[int, int]:
    """Output dims of `downsample` at the given layer: ceil(dim / 2^(layer-1))."""
    f = 1 << (layer - 1)
    return (-(-width // f), -(-height // f))


def downsample(image: Image, layer: int) -> Image:
    """Area-average (box) reduction by 2^(layer-1); layer 1 is an exact copy."""
    if not 1 <= layer <= 5:
        raise ValueError(f"layer must be in 1..5, got {layer}")
    if layer == 1:
        return image.copy()
    f = 1 << (layer - 1)
    arr = image.to_float()
    h, w = arr.shape[:2]
    rows = np.arange(0, h, f)
    cols = np.arange(0, w, f)
    sums = np.add.reduceat(np.add.reduceat(arr, rows, axis=0), cols, axis=1)
    row_n = np.minimum(rows + f, h) - rows
    col_n = np.minimum(cols + f, w) - cols
    counts = np.outer(row_n, col_n)[:, :, None]
    return Image.from_float(sums / counts)


def _nearest_indices(src: int, dst: int) -> np.ndarray:
    return (np.arange(dst) * src) // dst


def resize_nearest(plane: np.ndarray, target_w: int, target_h: int) -> np.ndarray:
    """Nearest-neighbor resample of an HxW (or HxWx...) array."""
    ys = _nearest_indices(plane.shape[0], target_h)
    xs = _nearest_indices(plane.shape[1], target_w)
    return plane[np.ix_(ys, xs)] if plane.ndim == 2 else plane[ys][:, xs]


def upsample_nearest(field, target_w: int, target_h: int):
    """Nearest-neighbor magnification of a FeatureMap or AbField."""
    if isinstance(field, FeatureMap):
        if target_w < field.width or target_h < field.height:
            raise ValueError("target dims must be >= source dims")
        ys = _nearest_indices(field.height, target_h)
        xs = _nearest_indices(field.width, target_w)
        return FeatureMap(field.values[:, ys][:, :, xs])
    # duck-typed AbField: per-pixel (a, b) coefficient planes
    a, b = field.a, field.b
    if target_w < a.shape[1] or target_h < a.shape[0]:
        raise ValueError("target dims must be >= source dims")
    return type(field)(
        a=resize_nearest(a, target_w, target_h),
        b=resize_nearest(b, target_w, target_h),
    )
