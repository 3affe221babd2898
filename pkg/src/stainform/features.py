"""Feature maps fed to the correspondence search.

A hand-crafted 14-channel extractor stands in for a neural backbone;
externally exported feature maps can be ingested through the FMAP format.
Feature enhancement appends per-pixel class labels (from k-means clustering
or a precomputed segmentation map) as scaled one-hot channels.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import imgio
from .core import FeatureMap, Image, LuminanceMode, downsample, luminance_plane, resize_nearest

BUILTIN_CHANNELS = 14
MAX_LABEL_CLASSES = 64

SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
SOBEL_Y = SOBEL_X.T


class FeatureSource(enum.Enum):
    BUILTIN = "builtin"
    EXTERNAL_FMAP = "external_fmap"


class Enhancement(enum.Enum):
    NONE = "none"
    CLUSTER = "cluster"
    SEGMAP = "segmap"


@dataclass(frozen=True)
class FeatureConfig:
    layer: int = 1
    source: FeatureSource = FeatureSource.BUILTIN
    enhancement: Enhancement = Enhancement.CLUSTER
    cluster_k: int = 5
    enhancement_weight: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.layer <= 5:
            raise ValueError(f"layer must be in 1..5, got {self.layer}")
        if self.cluster_k < 1:
            raise ValueError(f"cluster_k must be >= 1, got {self.cluster_k}")
        if not np.isfinite(self.enhancement_weight) or self.enhancement_weight < 0:
            raise ValueError(f"enhancement_weight must be finite and >= 0, got {self.enhancement_weight}")


class LabelMap:
    """Per-pixel non-negative class ids."""

    __slots__ = ("labels", "num_classes")

    def __init__(self, labels: np.ndarray, num_classes: int):
        labels = np.ascontiguousarray(labels)
        if labels.ndim != 2:
            raise ValueError(f"label map must be HxW, got shape {labels.shape}")
        if num_classes < 1:
            raise ValueError(f"num_classes must be >= 1, got {num_classes}")
        if labels.size and int(labels.max()) >= num_classes:
            raise ValueError(f"label {int(labels.max())} >= num_classes {num_classes}")
        if labels.size and int(labels.min()) < 0:
            raise ValueError("labels must be non-negative")
        labels = labels.astype(np.int32)
        labels.flags.writeable = False
        self.labels = labels
        self.num_classes = int(num_classes)

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    def with_num_classes(self, num_classes: int) -> "LabelMap":
        return LabelMap(self.labels, num_classes)


def builtin_features(image: Image, layer: int, mode: LuminanceMode = LuminanceMode.REC601) -> FeatureMap:
    """Deterministic 14-channel map at layer resolution.

    Channels: RGB (3), luminance (1), Sobel x/y gradients of luminance (2),
    gradient magnitude (1), 3x3 local RGB means (3), 3x3 local RGB std (3),
    3x3 local luminance std (1). Convolutions use edge-clamp borders.
    """
    rgb = downsample(image, layer).to_float()
    lum = luminance_plane(rgb, mode)
    gx = ndimage.correlate(lum, SOBEL_X, mode="nearest")
    gy = ndimage.correlate(lum, SOBEL_Y, mode="nearest")

    def local_std(plane):
        m = ndimage.uniform_filter(plane, size=3, mode="nearest")
        m2 = ndimage.uniform_filter(plane * plane, size=3, mode="nearest")
        return np.sqrt(np.maximum(m2 - m * m, 0.0))

    channels = [rgb[..., 0], rgb[..., 1], rgb[..., 2], lum, gx, gy, np.hypot(gx, gy)]
    channels += [ndimage.uniform_filter(rgb[..., c], size=3, mode="nearest") for c in range(3)]
    channels += [local_std(rgb[..., c]) for c in range(3)]
    channels.append(local_std(lum))
    return FeatureMap(np.stack(channels, axis=0))


def load_fmap(path) -> FeatureMap:
    """Load an externally exported feature map (FMAP format, validated)."""
    return FeatureMap(imgio.read_fmap(path))


def kmeans_with_history(points: np.ndarray, k: int, seed: int, max_iter: int = 50):
    """Lloyd's algorithm with farthest-point seeding.

    Returns (labels, sse_history). The first center is drawn from the seed;
    the rest maximize distance to the chosen set. Ties in assignment break
    to the lowest cluster index. Deterministic given (points, k, seed).
    """
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if k > n:
        raise ValueError(f"k={k} exceeds number of points {n}")

    rng = np.random.default_rng(seed)
    first = int(rng.integers(n))
    centers = np.empty((k, points.shape[1]))
    centers[0] = points[first]
    min_d = np.sum((points - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        centers[j] = points[int(np.argmax(min_d))]
        min_d = np.minimum(min_d, np.sum((points - centers[j]) ** 2, axis=1))

    labels = None
    sse_history = []
    for _ in range(max_iter):
        # ||x - c||^2 up to the shared ||x||^2 term
        d = -2.0 * points @ centers.T + np.sum(centers * centers, axis=1)
        new_labels = np.argmin(d, axis=1).astype(np.int32)
        for j in range(k):
            members = points[new_labels == j]
            if len(members):
                centers[j] = members.mean(axis=0)
        sse_history.append(float(np.sum((points - centers[new_labels]) ** 2)))
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
    return labels, sse_history


def kmeans_labels(fmap: FeatureMap, k: int, seed: int) -> LabelMap:
    """Cluster per-pixel feature vectors into k classes."""
    labels, _ = kmeans_with_history(fmap.pixel_vectors(), k, seed)
    return LabelMap(labels.reshape(fmap.height, fmap.width), k)


def enhance(fmap: FeatureMap, labels: LabelMap, weight: float) -> FeatureMap:
    """Append one-hot label channels scaled by `weight`; base channels untouched."""
    if (labels.height, labels.width) != (fmap.height, fmap.width):
        raise ValueError(
            f"label dims {labels.width}x{labels.height} do not match "
            f"feature dims {fmap.width}x{fmap.height}"
        )
    onehot = np.zeros((labels.num_classes, fmap.height, fmap.width), dtype=np.float32)
    ys, xs = np.indices(labels.labels.shape)
    onehot[labels.labels, ys, xs] = weight
    return FeatureMap(np.concatenate([fmap.values, onehot], axis=0))


def load_label_map(path, expected_w: int, expected_h: int) -> LabelMap:
    """Load a grayscale-PNG label map, nearest-resampled to the expected dims."""
    labels = imgio.read_label_png(path)
    num_classes = int(labels.max()) + 1
    if num_classes > MAX_LABEL_CLASSES:
        raise ValueError(f"{path}: {num_classes} classes exceeds the sanity bound {MAX_LABEL_CLASSES}")
    if labels.shape != (expected_h, expected_w):
        labels = resize_nearest(labels, expected_w, expected_h)
    return LabelMap(labels, num_classes)
