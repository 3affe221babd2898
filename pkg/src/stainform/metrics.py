"""Distribution metrics used by the batch CLI: luminance histograms and stats."""

from __future__ import annotations

import numpy as np

from .core import Image, LuminanceMode, luminance_plane

HIST_BINS = 32
_BIN_WIDTH = 256.0 / HIST_BINS


def luminance_counts(image: Image, mode: LuminanceMode = LuminanceMode.REC601) -> np.ndarray:
    lum = luminance_plane(image.pixels.astype(np.float64), mode)
    bins = np.minimum((lum / _BIN_WIDTH).astype(np.int64), HIST_BINS - 1)
    return np.bincount(bins.ravel(), minlength=HIST_BINS).astype(np.float64)


def luminance_histogram(image: Image, mode: LuminanceMode = LuminanceMode.REC601) -> np.ndarray:
    """Normalized 32-bin luminance histogram on the [0,255] scale."""
    counts = luminance_counts(image, mode)
    return counts / counts.sum()


def pooled_histogram(images, mode: LuminanceMode = LuminanceMode.REC601) -> np.ndarray:
    """Normalized histogram of all images' pixels combined."""
    total = np.zeros(HIST_BINS)
    for img in images:
        total += luminance_counts(img, mode)
    return total / total.sum()


def chi_square_distance(h: np.ndarray, g: np.ndarray) -> float:
    """chi^2(h, g) = sum (h-g)^2 / (h+g); empty bins on both sides contribute 0."""
    h = np.asarray(h, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    den = h + g
    num = (h - g) ** 2
    mask = den > 0
    return float(np.sum(num[mask] / den[mask]))


def channel_stats(image: Image) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel (mean, std) on the [0,255] scale."""
    pix = image.pixels.astype(np.float64)
    return pix.mean(axis=(0, 1)), pix.std(axis=(0, 1))
