import numpy as np
import pytest

from stainform.core import FeatureMap, Image
from stainform.correspondence import (
    NNField,
    PatchMatchParams,
    bds_vote,
    bds_vote_float,
    nl_neighbor_pairs,
    patch_cost,
    patchmatch,
)

from conftest import random_image
from oracles import exhaustive_nnf_cost, naive_patch_cost, smooth_map


def as_fmap(hwc):
    return FeatureMap(np.moveaxis(hwc, 2, 0))


def identity_nnf(width, height):
    xs, ys = np.meshgrid(np.arange(width), np.arange(height))
    mapping = np.stack([xs, ys], axis=2).astype(np.int32)
    return NNField(mapping, np.zeros((height, width)), width, height)


class TestPatchCost:
    def test_identical_maps_same_coord_is_zero(self, rng):
        fm = as_fmap(rng.normal(size=(5, 5, 3)).astype(np.float32))
        assert patch_cost(fm, (2, 2), fm, (2, 2)) == 0.0
        assert patch_cost(fm, (0, 0), fm, (0, 0)) == 0.0

    def test_constant_gap_is_d_squared(self):
        a = as_fmap(np.zeros((4, 4, 2), np.float32))
        b = as_fmap(np.full((4, 4, 2), 1.5, np.float32))
        for pa, pb in (((0, 0), (3, 3)), ((1, 2), (2, 0))):
            assert patch_cost(a, pa, b, pb) == pytest.approx(2.25, rel=1e-9)

    def test_matches_naive_loop(self, rng):
        A = rng.normal(size=(5, 5, 2)).astype(np.float32)
        B = rng.normal(size=(5, 5, 2)).astype(np.float32)
        for pa in ((0, 0), (2, 3), (4, 4), (1, 0)):
            for pb in ((4, 1), (0, 4), (2, 2)):
                got = patch_cost(as_fmap(A), pa, as_fmap(B), pb)
                assert got == pytest.approx(naive_patch_cost(A, B, pa, pb), abs=1e-6)

    def test_symmetric(self, rng):
        A = rng.normal(size=(6, 4, 3)).astype(np.float32)
        B = rng.normal(size=(5, 7, 3)).astype(np.float32)
        assert patch_cost(as_fmap(A), (1, 5), as_fmap(B), (6, 0)) == pytest.approx(
            patch_cost(as_fmap(B), (6, 0), as_fmap(A), (1, 5)), rel=1e-12
        )

    def test_channel_mismatch_rejected(self, rng):
        a = as_fmap(rng.normal(size=(3, 3, 2)).astype(np.float32))
        b = as_fmap(rng.normal(size=(3, 3, 3)).astype(np.float32))
        with pytest.raises(ValueError, match="channel"):
            patch_cost(a, (0, 0), b, (0, 0))


class TestPatchMatch:
    def test_self_match_beats_identity_bound(self, rng):
        m = smooth_map(rng, size=16)
        fm = as_fmap(m)
        nnf = patchmatch(fm, fm, PatchMatchParams(rng_seed=1))
        assert 0.0 <= nnf.total_cost() <= 1e-12  # identity mapping cost is 0

    def test_constant_maps_cost_zero(self):
        fm = as_fmap(np.full((6, 6, 2), 2.0, np.float32))
        nnf = patchmatch(fm, fm, PatchMatchParams(rng_seed=4))
        assert nnf.total_cost() == 0.0

    def test_near_optimal_on_smooth_maps(self):
        rng = np.random.default_rng(0)
        A, B = smooth_map(rng), smooth_map(rng)
        nnf = patchmatch(as_fmap(A), as_fmap(B), PatchMatchParams(rng_seed=0))
        assert nnf.total_cost() <= 1.05 * exhaustive_nnf_cost(A, B)

    def test_iteration_costs_nonincreasing(self, rng):
        A, B = smooth_map(rng), smooth_map(rng)
        nnf = patchmatch(as_fmap(A), as_fmap(B), PatchMatchParams(rng_seed=11))
        seq = nnf.iteration_costs
        assert len(seq) == 5
        assert all(b <= a + 1e-12 for a, b in zip(seq, seq[1:]))

    def test_cost_self_consistency_exact(self, rng):
        A, B = smooth_map(rng, size=10), smooth_map(rng, size=10)
        fa, fb = as_fmap(A), as_fmap(B)
        nnf = patchmatch(fa, fb, PatchMatchParams(rng_seed=2))
        for y in range(10):
            for x in range(10):
                tx, ty = nnf.mapping[y, x]
                assert nnf.cost[y, x] == patch_cost(fa, (x, y), fb, (int(tx), int(ty)))

    def test_bitwise_deterministic(self, rng):
        A, B = smooth_map(rng), smooth_map(rng)
        p = PatchMatchParams(rng_seed=77)
        n1 = patchmatch(as_fmap(A), as_fmap(B), p)
        n2 = patchmatch(as_fmap(A), as_fmap(B), p)
        assert np.array_equal(n1.mapping, n2.mapping)
        assert np.array_equal(n1.cost, n2.cost)

    def test_channel_mismatch_rejected(self, rng):
        a = as_fmap(rng.normal(size=(4, 4, 2)).astype(np.float32))
        b = as_fmap(rng.normal(size=(4, 4, 3)).astype(np.float32))
        with pytest.raises(ValueError, match="channel"):
            patchmatch(a, b, PatchMatchParams())

    def test_translated_texture_recovers_dominant_offset(self):
        rng = np.random.default_rng(5)
        base = rng.standard_normal((16, 16, 3)).astype(np.float32)
        dx, dy = 3, 2
        rolled = np.roll(base, shift=(dy, dx), axis=(0, 1))
        # rolled[y, x] == base[y-dy, x-dx]; the true match of source pixel p is p+(dx,dy)
        nnf = patchmatch(as_fmap(base), as_fmap(rolled), PatchMatchParams(rng_seed=3, iterations=8))
        interior = nnf.mapping[4:10, 4:10].reshape(-1, 2)
        src = np.stack(np.meshgrid(np.arange(4, 10), np.arange(4, 10)), axis=2).reshape(-1, 2)
        offs = interior - src
        values, counts = np.unique(offs, axis=0, return_counts=True)
        dominant = values[counts.argmax()]
        assert dominant.tolist() == [dx, dy]


class TestBdsVote:
    def test_identity_mappings_reproduce_reference(self):
        ref = random_image(8, 6, 6)
        nnf = identity_nnf(6, 6)
        out = bds_vote(ref, nnf, nnf, 3)
        assert np.array_equal(out.pixels, ref.pixels)

    def test_constant_reference_stays_constant(self, rng):
        ref = Image(np.full((5, 5, 3), 99, np.uint8))
        mapping = np.stack(
            [rng.integers(0, 5, (5, 5)), rng.integers(0, 5, (5, 5))], axis=2
        ).astype(np.int32)
        fwd = NNField(mapping, np.zeros((5, 5)), 5, 5)
        bwd = NNField(mapping[::-1, ::-1], np.zeros((5, 5)), 5, 5)
        out = bds_vote(ref, fwd, bwd, 3)
        assert np.all(out.pixels == 99)

    def test_matches_naive_accumulation(self, rng):
        ref = random_image(9, 4, 4)
        fm = rng.integers(0, 4, (4, 4, 2)).astype(np.int32)
        bm = rng.integers(0, 4, (4, 4, 2)).astype(np.int32)
        fwd = NNField(fm, np.zeros((4, 4)), 4, 4)
        bwd = NNField(bm, np.zeros((4, 4)), 4, 4)
        got = bds_vote_float(ref, fwd, bwd, 3)

        R = ref.to_float()
        half = 1
        comp_sum = np.zeros((4, 4, 3))
        comp_cnt = np.zeros((4, 4))
        coh_sum = np.zeros((4, 4, 3))
        coh_cnt = np.zeros((4, 4))
        for qy in range(4):
            for qx in range(4):
                tx, ty = fm[qy, qx]
                for dy in range(-half, half + 1):
                    for dx in range(-half, half + 1):
                        py, px, ry, rx = qy + dy, qx + dx, ty + dy, tx + dx
                        if 0 <= py < 4 and 0 <= px < 4 and 0 <= ry < 4 and 0 <= rx < 4:
                            comp_sum[py, px] += R[ry, rx]
                            comp_cnt[py, px] += 1
        for ry in range(4):
            for rx in range(4):
                sx, sy = bm[ry, rx]
                for dy in range(-half, half + 1):
                    for dx in range(-half, half + 1):
                        py, px, ryy, rxx = sy + dy, sx + dx, ry + dy, rx + dx
                        if 0 <= py < 4 and 0 <= px < 4 and 0 <= ryy < 4 and 0 <= rxx < 4:
                            coh_sum[py, px] += R[ryy, rxx]
                            coh_cnt[py, px] += 1
        expected = comp_sum / comp_cnt[..., None]
        has_coh = coh_cnt > 0
        expected[has_coh] = 0.5 * expected[has_coh] + 0.5 * (
            coh_sum[has_coh] / coh_cnt[has_coh, None]
        )
        assert np.abs(got - expected).max() < 1e-6

    def test_votes_stay_within_reference_range(self, rng):
        ref = random_image(10, 5, 5)
        mapping = np.stack([rng.integers(0, 5, (5, 5)), rng.integers(0, 5, (5, 5))], axis=2).astype(np.int32)
        fwd = NNField(mapping, np.zeros((5, 5)), 5, 5)
        bwd = NNField(mapping.transpose(1, 0, 2), np.zeros((5, 5)), 5, 5)
        out = bds_vote_float(ref, fwd, bwd, 3)
        for c in range(3):
            lo, hi = ref.pixels[..., c].min() / 255.0, ref.pixels[..., c].max() / 255.0
            assert out[..., c].min() >= lo - 1e-12
            assert out[..., c].max() <= hi + 1e-12

    def test_dim_validation(self, rng):
        ref = random_image(11, 4, 4)
        good = identity_nnf(4, 4)
        small = identity_nnf(3, 3)
        with pytest.raises(ValueError):
            bds_vote(ref, small, good, 3)


class TestNlNeighborPairs:
    def test_excludes_self_and_is_deterministic(self, rng):
        fm = as_fmap(rng.normal(size=(6, 6, 3)).astype(np.float32))
        src1, dst1 = nl_neighbor_pairs(fm, 4, seed=5)
        src2, dst2 = nl_neighbor_pairs(fm, 4, seed=5)
        assert np.array_equal(src1, src2) and np.array_equal(dst1, dst2)
        assert np.all(src1 != dst1)
        assert len(src1) == 36 * 4
        # neighbors are distinct per source pixel
        for p in range(36):
            group = dst1[src1 == p]
            assert len(np.unique(group)) == len(group)

    def test_finds_exact_duplicate_pixels(self):
        vals = np.zeros((2, 3, 3), np.float32)
        vals[:, 1, 1] = 5.0
        vals[:, 2, 2] = 5.0  # (1,1) and (2,2) are twins
        fm = FeatureMap(vals)
        src, dst = nl_neighbor_pairs(fm, 1, seed=0, iterations=16)
        p = 1 * 3 + 1
        assert dst[src == p][0] == 2 * 3 + 2

    def test_k_bounds(self, rng):
        fm = as_fmap(rng.normal(size=(2, 2, 1)).astype(np.float32))
        with pytest.raises(ValueError):
            nl_neighbor_pairs(fm, 4, seed=0)


class TestParamsValidation:
    def test_patch_size_must_be_odd(self):
        with pytest.raises(ValueError):
            PatchMatchParams(patch_size=2)

    def test_decay_range(self):
        with pytest.raises(ValueError):
            PatchMatchParams(search_radius_decay=1.0)

    def test_iterations_positive(self):
        with pytest.raises(ValueError):
            PatchMatchParams(iterations=0)

    def test_seed_must_fit_u64(self):
        with pytest.raises(ValueError):
            PatchMatchParams(rng_seed=1 << 64)
        PatchMatchParams(rng_seed=(1 << 64) - 1)
