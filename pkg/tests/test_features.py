import itertools

import numpy as np
import pytest
from PIL import Image as PILImage

from stainform.core import FeatureMap, Image, standardize
from stainform.correspondence import patch_cost
from stainform.features import (
    SOBEL_X,
    FeatureConfig,
    LabelMap,
    builtin_features,
    enhance,
    kmeans_labels,
    kmeans_with_history,
    load_label_map,
)

from conftest import random_image, synthetic_smear


class TestBuiltinFeatures:
    def test_constant_image_has_zero_gradient_and_std_channels(self):
        img = Image(np.full((8, 8, 3), 128, np.uint8))
        fmap = builtin_features(img, 1)
        assert fmap.values.shape == (14, 8, 8)
        for ch in (4, 5, 6, 10, 11, 12, 13):
            assert np.all(fmap.values[ch] == 0.0), f"channel {ch} not flat"

    def test_layer3_dims(self):
        fmap = builtin_features(random_image(0, 64, 64), 3)
        assert fmap.values.shape == (14, 16, 16)

    def test_deterministic(self):
        img = synthetic_smear(5)
        a = builtin_features(img, 2)
        b = builtin_features(img, 2)
        assert np.array_equal(a.values, b.values)

    def test_step_edge_matches_direct_convolution(self):
        size = 10
        edge_col = 5
        arr = np.zeros((size, size, 3), np.uint8)
        arr[:, edge_col:, :] = 255
        fmap = builtin_features(Image(arr), 1)
        sobel_x = fmap.values[4]

        # direct edge-clamped correlation on the luminance plane
        lum = arr[..., 0].astype(np.float64) / 255.0  # gray image: lum == any channel
        expected = np.zeros_like(lum)
        for y in range(size):
            for x in range(size):
                acc = 0.0
                for ky in range(3):
                    for kx in range(3):
                        yy = min(max(y + ky - 1, 0), size - 1)
                        xx = min(max(x + kx - 1, 0), size - 1)
                        acc += SOBEL_X[ky, kx] * lum[yy, xx]
                expected[y, x] = acc
        assert np.abs(sobel_x - expected).max() < 1e-6
        # peaks hug the edge and vanish two columns away
        assert np.all(np.abs(sobel_x[:, edge_col - 2]) < 1e-6)
        assert np.all(np.abs(sobel_x[:, edge_col + 1]) < 1e-6)
        assert np.abs(sobel_x[:, edge_col]).min() > 0.5


class TestKmeans:
    def test_two_colors_partition_exactly(self):
        vals = np.zeros((3, 4, 4), np.float32)
        vals[:, :, 2:] = 1.0
        labels = kmeans_labels(FeatureMap(vals), 2, seed=0)
        left = labels.labels[:, :2]
        right = labels.labels[:, 2:]
        assert len(np.unique(left)) == 1
        assert len(np.unique(right)) == 1
        assert left[0, 0] != right[0, 0]

    def test_k1_all_zero(self):
        labels = kmeans_labels(FeatureMap(np.random.default_rng(0).normal(size=(2, 3, 3)).astype(np.float32)), 1, seed=0)
        assert np.all(labels.labels == 0)

    def test_matches_bruteforce_partition_optimum(self):
        points = np.array([[0.0], [1.0], [2.0], [10.0], [11.0], [12.0]])
        labels, _ = kmeans_with_history(points, 2, seed=0)
        sets = [set(np.flatnonzero(labels == j)) for j in range(2)]
        assert {frozenset(s) for s in sets} == {frozenset({0, 1, 2}), frozenset({3, 4, 5})}

        def sse_of(partition):
            total = 0.0
            for group in partition:
                pts = points[list(group)]
                total += float(np.sum((pts - pts.mean(axis=0)) ** 2))
            return total

        best = min(
            sse_of([grp, set(range(6)) - set(grp)])
            for r in range(1, 6)
            for grp in itertools.combinations(range(6), r)
        )
        assert sse_of(sets) == pytest.approx(best)

    def test_sse_monotone_nonincreasing(self, rng):
        points = rng.normal(size=(60, 4))
        _, history = kmeans_with_history(points, 4, seed=3)
        assert all(b <= a + 1e-9 for a, b in zip(history, history[1:]))

    def test_deterministic(self, rng):
        fmap = FeatureMap(rng.normal(size=(3, 6, 6)).astype(np.float32))
        a = kmeans_labels(fmap, 3, seed=9)
        b = kmeans_labels(fmap, 3, seed=9)
        assert np.array_equal(a.labels, b.labels)

    def test_k_larger_than_pixels_rejected(self):
        fmap = FeatureMap(np.zeros((1, 2, 2), np.float32))
        with pytest.raises(ValueError, match="exceeds"):
            kmeans_labels(fmap, 5, seed=0)


class TestEnhance:
    def test_channel_arity(self, rng):
        fmap = FeatureMap(rng.normal(size=(14, 4, 4)).astype(np.float32))
        labels = LabelMap(rng.integers(0, 5, (4, 4)), 5)
        out = enhance(fmap, labels, 1.0)
        assert out.channels == 19
        assert np.array_equal(out.values[:14], fmap.values)

    def test_zero_weight_appends_zeros_and_keeps_costs(self, rng):
        fmap = FeatureMap(rng.normal(size=(4, 5, 5)).astype(np.float32))
        labels = LabelMap(rng.integers(0, 3, (5, 5)), 3)
        out = enhance(fmap, labels, 0.0)
        assert np.all(out.values[4:] == 0.0)
        for pa, pb in (((0, 0), (3, 2)), ((1, 4), (4, 1))):
            assert patch_cost(out, pa, out, pb) * out.channels == pytest.approx(
                patch_cost(fmap, pa, fmap, pb) * fmap.channels, rel=1e-6
            )

    def test_single_pixel_one_hot(self):
        fmap = FeatureMap(np.zeros((1, 1, 1), np.float32))
        labels = LabelMap(np.array([[2]]), 3)
        out = enhance(fmap, labels, 2.0)
        assert out.values[1:, 0, 0].tolist() == [0.0, 0.0, 2.0]

    def test_dim_mismatch_rejected(self):
        fmap = FeatureMap(np.zeros((1, 2, 2), np.float32))
        labels = LabelMap(np.zeros((3, 3), int), 1)
        with pytest.raises(ValueError, match="match"):
            enhance(fmap, labels, 1.0)

    def test_distance_shift_is_2w_squared(self, rng):
        w = 1.7
        base = rng.normal(size=(6, 1, 2)).astype(np.float32)
        base[:, 0, 1] = base[:, 0, 0]  # identical base features
        fmap = FeatureMap(base)
        same = enhance(fmap, LabelMap(np.array([[1, 1]]), 4), w)
        diff = enhance(fmap, LabelMap(np.array([[1, 3]]), 4), w)

        def sqdist(fm):
            v = fm.values.astype(np.float64)
            return float(np.sum((v[:, 0, 0] - v[:, 0, 1]) ** 2))

        assert sqdist(same) == pytest.approx(0.0, abs=1e-12)
        assert sqdist(diff) == pytest.approx(2 * w * w, rel=1e-6)

    def test_label_permutation_keeps_patch_costs(self, rng):
        base = FeatureMap(rng.normal(size=(3, 4, 4)).astype(np.float32))
        labels = rng.integers(0, 3, (4, 4))
        perm = np.array([2, 0, 1])
        a = enhance(base, LabelMap(labels, 3), 1.0)
        b = enhance(base, LabelMap(perm[labels], 3), 1.0)
        for pa, pb in (((0, 0), (3, 3)), ((2, 1), (1, 2))):
            assert patch_cost(a, pa, a, pb) == pytest.approx(patch_cost(b, pa, b, pb), rel=1e-9)


class TestLoadLabelMap:
    def test_basic_load(self, tmp_path):
        path = tmp_path / "l.png"
        PILImage.fromarray(np.array([[0, 0], [1, 1]], np.uint8), mode="L").save(path)
        lm = load_label_map(path, 2, 2)
        assert lm.num_classes == 2
        assert lm.labels.tolist() == [[0, 0], [1, 1]]

    def test_rgb_rejected(self, tmp_path):
        path = tmp_path / "c.png"
        PILImage.fromarray(np.zeros((2, 2, 3), np.uint8), mode="RGB").save(path)
        with pytest.raises(ValueError, match="grayscale"):
            load_label_map(path, 2, 2)

    def test_too_many_classes_rejected(self, tmp_path):
        path = tmp_path / "m.png"
        PILImage.fromarray(np.arange(100, dtype=np.uint8).reshape(10, 10), mode="L").save(path)
        with pytest.raises(ValueError, match="sanity bound"):
            load_label_map(path, 10, 10)

    def test_nearest_subsampling_matches_index_oracle(self, tmp_path):
        rng = np.random.default_rng(0)
        full = rng.integers(0, 4, (4, 4)).astype(np.uint8)
        path = tmp_path / "sub.png"
        PILImage.fromarray(full, mode="L").save(path)
        lm = load_label_map(path, 2, 2)
        # nearest index mapping: source index = target index * 4 // 2
        expected = [[full[y * 4 // 2, x * 4 // 2] for x in range(2)] for y in range(2)]
        assert lm.labels.tolist() == expected


class TestFeatureConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            FeatureConfig(layer=0)
        with pytest.raises(ValueError):
            FeatureConfig(cluster_k=0)
        with pytest.raises(ValueError):
            FeatureConfig(enhancement_weight=-1.0)

    def test_standardize_then_enhance_keeps_one_hot_scale(self, rng):
        fmap = FeatureMap(rng.normal(5.0, 3.0, (4, 4, 4)).astype(np.float32))
        std, _ = standardize(fmap)
        labels = kmeans_labels(std, 2, seed=0)
        out = enhance(std, labels, 1.0)
        assert set(np.unique(out.values[4:])) <= {0.0, 1.0}
