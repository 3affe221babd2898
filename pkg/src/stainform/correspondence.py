"""Randomized nearest-neighbor field search and bidirectional-similarity voting.

The search alternates scanline propagation with an exponentially decaying
random search, accepting a candidate only on strict cost improvement, so the
total field cost never increases. Kernels are JIT-compiled; runs are
sequential and bitwise deterministic for a given seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .core import FeatureMap, Image

_U12 = np.uint64(12)
_U25 = np.uint64(25)
_U27 = np.uint64(27)
_U30 = np.uint64(30)
_U31 = np.uint64(31)
_UGOLD = np.uint64(0x9E3779B97F4A7C15)
_UMIX1 = np.uint64(0xBF58476D1CE4E5B9)
_UMIX2 = np.uint64(0x94D049BB133111EB)
_UMULT = np.uint64(0x2545F4914F6CDD1D)


@njit(inline="always")
def _seed_state(seed):
    z = np.uint64(seed) + _UGOLD
    z = (z ^ (z >> _U30)) * _UMIX1
    z = (z ^ (z >> _U27)) * _UMIX2
    z = z ^ (z >> _U31)
    if z == np.uint64(0):
        z = _UGOLD
    return z


@njit(inline="always")
def _rng_next(s):
    # xorshift64*
    s ^= s >> _U12
    s ^= s << _U25
    s ^= s >> _U27
    return s, s * _UMULT


@njit(inline="always")
def _rand_below(s, n):
    s, v = _rng_next(s)
    return s, np.int64(v % np.uint64(n))


@njit(cache=True, nogil=True)
def _patch_cost_hwc(fa, fb, ax, ay, bx, by, half):
    ha, wa, nc = fa.shape
    hb, wb, _ = fb.shape
    acc = 0.0
    n = 0
    for dy in range(-half, half + 1):
        ya = ay + dy
        yb = by + dy
        if ya < 0 or ya >= ha or yb < 0 or yb >= hb:
            continue
        for dx in range(-half, half + 1):
            xa = ax + dx
            xb = bx + dx
            if xa < 0 or xa >= wa or xb < 0 or xb >= wb:
                continue
            for c in range(nc):
                d = np.float64(fa[ya, xa, c]) - np.float64(fb[yb, xb, c])
                acc += d * d
            n += 1
    return acc / (n * nc)


@njit(cache=True, nogil=True)
def _patchmatch_kernel(fa, fb, iters, half, decay, seed):
    hs, ws = fa.shape[0], fa.shape[1]
    ht, wt = fb.shape[0], fb.shape[1]
    mx = np.empty((hs, ws), np.int32)
    my = np.empty((hs, ws), np.int32)
    cost = np.empty((hs, ws), np.float64)
    s = _seed_state(seed)
    for y in range(hs):
        for x in range(ws):
            s, tx = _rand_below(s, wt)
            s, ty = _rand_below(s, ht)
            mx[y, x] = tx
            my[y, x] = ty
            cost[y, x] = _patch_cost_hwc(fa, fb, x, y, tx, ty, half)

    iter_costs = np.empty(iters, np.float64)
    max_dim = ht if ht > wt else wt
    for it in range(1, iters + 1):
        forward = (it & 1) == 1
        for yy in range(hs):
            y = yy if forward else hs - 1 - yy
            for xx in range(ws):
                x = xx if forward else ws - 1 - xx
                cur = cost[y, x]
                bx = mx[y, x]
                by = my[y, x]
                # propagation: neighbors already visited this sweep offer both
                # their mapping and its coherently shifted version
                for pick in range(4):
                    shift = 1 if pick < 2 else 0
                    horiz = (pick & 1) == 0
                    if forward:
                        if horiz:
                            if x == 0:
                                continue
                            cx, cy = mx[y, x - 1] + shift, my[y, x - 1]
                        else:
                            if y == 0:
                                continue
                            cx, cy = mx[y - 1, x], my[y - 1, x] + shift
                    else:
                        if horiz:
                            if x == ws - 1:
                                continue
                            cx, cy = mx[y, x + 1] - shift, my[y, x + 1]
                        else:
                            if y == hs - 1:
                                continue
                            cx, cy = mx[y + 1, x], my[y + 1, x] - shift
                    if cx < 0:
                        cx = 0
                    elif cx > wt - 1:
                        cx = wt - 1
                    if cy < 0:
                        cy = 0
                    elif cy > ht - 1:
                        cy = ht - 1
                    if cx != bx or cy != by:
                        c = _patch_cost_hwc(fa, fb, x, y, cx, cy, half)
                        if c < cur:
                            cur, bx, by = c, cx, cy
                # exponentially decaying random search around the incumbent,
                # sampling uniformly inside the window clipped to the grid
                rad = np.float64(max_dim)
                while rad >= 1.0:
                    r = np.int64(rad)
                    for _ in range(2):
                        lox = bx - r if bx - r > 0 else 0
                        hix = bx + r if bx + r < wt - 1 else wt - 1
                        loy = by - r if by - r > 0 else 0
                        hiy = by + r if by + r < ht - 1 else ht - 1
                        s, ox = _rand_below(s, hix - lox + 1)
                        s, oy = _rand_below(s, hiy - loy + 1)
                        cx = lox + ox
                        cy = loy + oy
                        if cx != bx or cy != by:
                            c = _patch_cost_hwc(fa, fb, x, y, cx, cy, half)
                            if c < cur:
                                cur, bx, by = c, cx, cy
                    rad *= decay
                mx[y, x] = bx
                my[y, x] = by
                cost[y, x] = cur
        total = 0.0
        for y in range(hs):
            for x in range(ws):
                total += cost[y, x]
        iter_costs[it - 1] = total
    return mx, my, cost, iter_costs


@njit(cache=True, nogil=True)
def _bds_vote_kernel(ref, fwd_x, fwd_y, bwd_x, bwd_y, half):
    hs, ws = fwd_x.shape
    hr, wr = ref.shape[0], ref.shape[1]
    comp_sum = np.zeros((hs, ws, 3), np.float64)
    comp_cnt = np.zeros((hs, ws), np.int64)
    coh_sum = np.zeros((hs, ws, 3), np.float64)
    coh_cnt = np.zeros((hs, ws), np.int64)
    # completeness: each source patch deposits the matched reference patch
    for qy in range(hs):
        for qx in range(ws):
            tx = fwd_x[qy, qx]
            ty = fwd_y[qy, qx]
            for dy in range(-half, half + 1):
                py = qy + dy
                ry = ty + dy
                if py < 0 or py >= hs or ry < 0 or ry >= hr:
                    continue
                for dx in range(-half, half + 1):
                    px = qx + dx
                    rx = tx + dx
                    if px < 0 or px >= ws or rx < 0 or rx >= wr:
                        continue
                    for c in range(3):
                        comp_sum[py, px, c] += ref[ry, rx, c]
                    comp_cnt[py, px] += 1
    # coherence: each reference patch deposits itself at its match site
    for ry in range(hr):
        for rx in range(wr):
            sx = bwd_x[ry, rx]
            sy = bwd_y[ry, rx]
            for dy in range(-half, half + 1):
                py = sy + dy
                ryy = ry + dy
                if py < 0 or py >= hs or ryy < 0 or ryy >= hr:
                    continue
                for dx in range(-half, half + 1):
                    px = sx + dx
                    rxx = rx + dx
                    if px < 0 or px >= ws or rxx < 0 or rxx >= wr:
                        continue
                    for c in range(3):
                        coh_sum[py, px, c] += ref[ryy, rxx, c]
                    coh_cnt[py, px] += 1
    out = np.empty((hs, ws, 3), np.float64)
    for y in range(hs):
        for x in range(ws):
            if comp_cnt[y, x] == 0:
                raise AssertionError("completeness vote family left a pixel uncovered")
            for c in range(3):
                comp = comp_sum[y, x, c] / comp_cnt[y, x]
                if coh_cnt[y, x] > 0:
                    out[y, x, c] = 0.5 * comp + 0.5 * coh_sum[y, x, c] / coh_cnt[y, x]
                else:
                    out[y, x, c] = comp
    return out


@njit(inline="always")
def _point_dist(f, x0, y0, x1, y1):
    acc = 0.0
    for c in range(f.shape[2]):
        d = np.float64(f[y0, x0, c]) - np.float64(f[y1, x1, c])
        acc += d * d
    return acc / f.shape[2]


@njit(inline="always")
def _knn_insert(nbr, nd, k, cand, d):
    if d >= nd[k - 1]:
        return
    for j in range(k):
        if nbr[j] == cand:
            return
    pos = k - 1
    while pos > 0 and nd[pos - 1] > d:
        nbr[pos] = nbr[pos - 1]
        nd[pos] = nd[pos - 1]
        pos -= 1
    nbr[pos] = cand
    nd[pos] = d


@njit(cache=True, nogil=True)
def _knn_field_kernel(f, k, iters, decay, seed):
    h, w = f.shape[0], f.shape[1]
    n = h * w
    nbr = np.full((h, w, k), -1, np.int64)
    nd = np.full((h, w, k), np.inf, np.float64)
    s = _seed_state(seed)
    for y in range(h):
        for x in range(w):
            p = y * w + x
            filled = 0
            while filled < k:
                s, cand = _rand_below(s, n)
                if cand == p:
                    continue
                dup = False
                for j in range(filled):
                    if nbr[y, x, j] == cand:
                        dup = True
                        break
                if dup:
                    continue
                nbr[y, x, filled] = cand
                nd[y, x, filled] = _point_dist(f, x, y, cand % w, cand // w)
                filled += 1
            # keep slots sorted by distance
            for a in range(1, k):
                cv = nbr[y, x, a]
                cd = nd[y, x, a]
                pos = a
                while pos > 0 and nd[y, x, pos - 1] > cd:
                    nbr[y, x, pos] = nbr[y, x, pos - 1]
                    nd[y, x, pos] = nd[y, x, pos - 1]
                    pos -= 1
                nbr[y, x, pos] = cv
                nd[y, x, pos] = cd

    max_dim = h if h > w else w
    for it in range(1, iters + 1):
        forward = (it & 1) == 1
        for yy in range(h):
            y = yy if forward else h - 1 - yy
            for xx in range(w):
                x = xx if forward else w - 1 - xx
                p = y * w + x
                row_n = nbr[y, x]
                row_d = nd[y, x]
                for pick in range(2):
                    if forward:
                        nx, ny = (x - 1, y) if pick == 0 else (x, y - 1)
                        sx, sy = 1, 0
                        if pick == 1:
                            sx, sy = 0, 1
                    else:
                        nx, ny = (x + 1, y) if pick == 0 else (x, y + 1)
                        sx, sy = -1, 0
                        if pick == 1:
                            sx, sy = 0, -1
                    if nx < 0 or nx >= w or ny < 0 or ny >= h:
                        continue
                    for j in range(k):
                        e = nbr[ny, nx, j]
                        ex = e % w + sx
                        ey = e // w + sy
                        if ex < 0 or ex >= w or ey < 0 or ey >= h:
                            continue
                        cand = ey * w + ex
                        if cand == p:
                            continue
                        _knn_insert(row_n, row_d, k, cand, _point_dist(f, x, y, ex, ey))
                bx = row_n[0] % w
                by = row_n[0] // w
                rad = np.float64(max_dim)
                while rad >= 1.0:
                    r = np.int64(rad)
                    lox = bx - r if bx - r > 0 else 0
                    hix = bx + r if bx + r < w - 1 else w - 1
                    loy = by - r if by - r > 0 else 0
                    hiy = by + r if by + r < h - 1 else h - 1
                    s, ox = _rand_below(s, hix - lox + 1)
                    s, oy = _rand_below(s, hiy - loy + 1)
                    cx = lox + ox
                    cy = loy + oy
                    cand = cy * w + cx
                    if cand != p:
                        _knn_insert(row_n, row_d, k, cand, _point_dist(f, x, y, cx, cy))
                    rad *= decay
    return nbr


@dataclass(frozen=True)
class PatchMatchParams:
    patch_size: int = 3
    iterations: int = 5
    search_radius_decay: float = 0.5
    rng_seed: int = 0

    def __post_init__(self):
        if self.patch_size < 1 or self.patch_size % 2 == 0:
            raise ValueError(f"patch_size must be odd and >= 1, got {self.patch_size}")
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        if not 0.0 < self.search_radius_decay < 1.0:
            raise ValueError(f"search_radius_decay must be in (0,1), got {self.search_radius_decay}")
        if not 0 <= self.rng_seed < 1 << 64:
            raise ValueError(f"rng_seed must fit in 64 unsigned bits, got {self.rng_seed}")


class NNField:
    """Per-source-pixel (x, y) target coordinates and their patch costs."""

    __slots__ = ("mapping", "cost", "tgt_w", "tgt_h", "iteration_costs")

    def __init__(self, mapping: np.ndarray, cost: np.ndarray, tgt_w: int, tgt_h: int,
                 iteration_costs=None):
        mapping = np.ascontiguousarray(mapping, dtype=np.int32)
        cost = np.ascontiguousarray(cost, dtype=np.float64)
        if mapping.ndim != 3 or mapping.shape[2] != 2 or mapping.shape[:2] != cost.shape:
            raise ValueError("mapping must be HxWx2 with a matching HxW cost grid")
        if mapping[..., 0].min() < 0 or mapping[..., 0].max() >= tgt_w \
                or mapping[..., 1].min() < 0 or mapping[..., 1].max() >= tgt_h:
            raise ValueError("mapped coordinates fall outside the target grid")
        if not np.all(np.isfinite(cost)) or cost.min() < 0:
            raise ValueError("costs must be finite and >= 0")
        mapping.flags.writeable = False
        cost.flags.writeable = False
        self.mapping = mapping
        self.cost = cost
        self.tgt_w = int(tgt_w)
        self.tgt_h = int(tgt_h)
        self.iteration_costs = list(iteration_costs) if iteration_costs is not None else []

    @property
    def src_h(self) -> int:
        return self.mapping.shape[0]

    @property
    def src_w(self) -> int:
        return self.mapping.shape[1]

    def total_cost(self) -> float:
        return float(self.cost.sum())


def _as_hwc(fmap: FeatureMap) -> np.ndarray:
    return np.ascontiguousarray(np.moveaxis(fmap.values, 0, 2))


def patch_cost(fa: FeatureMap, pa, fb: FeatureMap, pb, patch_size: int = 3) -> float:
    """Mean squared feature difference over the overlapping valid patch pixels.

    Windows are truncated at grid borders (valid-pixel averaging), so the
    value is symmetric in its two (map, coord) arguments.
    """
    if fa.channels != fb.channels:
        raise ValueError(f"channel mismatch: {fa.channels} vs {fb.channels}")
    ax, ay = pa
    bx, by = pb
    if not (0 <= ax < fa.width and 0 <= ay < fa.height):
        raise ValueError(f"coord {pa} outside {fa.width}x{fa.height} grid")
    if not (0 <= bx < fb.width and 0 <= by < fb.height):
        raise ValueError(f"coord {pb} outside {fb.width}x{fb.height} grid")
    return float(_patch_cost_hwc(_as_hwc(fa), _as_hwc(fb), ax, ay, bx, by, patch_size // 2))


def patchmatch(fsrc: FeatureMap, ftgt: FeatureMap, params: PatchMatchParams) -> NNField:
    """Approximate nearest-neighbor field from fsrc pixels into ftgt."""
    if fsrc.channels != ftgt.channels:
        raise ValueError(f"channel mismatch: {fsrc.channels} vs {ftgt.channels}")
    mx, my, cost, iter_costs = _patchmatch_kernel(
        _as_hwc(fsrc), _as_hwc(ftgt),
        params.iterations, params.patch_size // 2,
        params.search_radius_decay, np.uint64(params.rng_seed),
    )
    mapping = np.stack([mx, my], axis=2)
    return NNField(mapping, cost, ftgt.width, ftgt.height, iteration_costs=iter_costs)


def bds_vote_float(ref_colors: Image, fwd: NNField, bwd: NNField, patch_size: int = 3) -> np.ndarray:
    """Guidance reconstruction as a float [0,1] array (see `bds_vote`)."""
    if (bwd.src_h, bwd.src_w) != (ref_colors.height, ref_colors.width):
        raise ValueError("backward field must cover the reference grid")
    if (fwd.tgt_w, fwd.tgt_h) != (ref_colors.width, ref_colors.height):
        raise ValueError("forward field must map into the reference grid")
    if (bwd.tgt_w, bwd.tgt_h) != (fwd.src_w, fwd.src_h):
        raise ValueError("backward field must map into the source grid")
    return _bds_vote_kernel(
        ref_colors.to_float(),
        np.ascontiguousarray(fwd.mapping[..., 0]), np.ascontiguousarray(fwd.mapping[..., 1]),
        np.ascontiguousarray(bwd.mapping[..., 0]), np.ascontiguousarray(bwd.mapping[..., 1]),
        patch_size // 2,
    )


def bds_vote(ref_colors: Image, fwd: NNField, bwd: NNField, patch_size: int = 3) -> Image:
    """Average reference-pixel votes from both mapping directions.

    Completeness votes: every source patch deposits its matched reference
    patch. Coherence votes: every reference patch deposits itself at its
    matched source site. Votes falling outside either grid are skipped; the
    two families are averaged with equal total weight.
    """
    return Image.from_float(bds_vote_float(ref_colors, fwd, bwd, patch_size))


def nl_neighbor_pairs(feats: FeatureMap, k: int, seed: int,
                      iterations: int = 5, decay: float = 0.5) -> tuple[np.ndarray, np.ndarray]:
    """Approximate k nearest pixels in feature space for every pixel.

    Runs the same propagation/random-search scheme as `patchmatch` from the
    map to itself with single-pixel patches, self-matches excluded. Returns
    (src, dst) linear pixel indices of the directed neighbor pairs.
    """
    n = feats.width * feats.height
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if k >= n:
        raise ValueError(f"k={k} needs at least k+1 pixels, map has {n}")
    nbr = _knn_field_kernel(_as_hwc(feats), k, iterations, decay, np.uint64(seed))
    src = np.repeat(np.arange(n, dtype=np.int64), k)
    return src, nbr.reshape(-1)
