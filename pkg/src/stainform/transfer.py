"""Local color transfer: per-pixel linear coefficients from a quadratic energy.

The energy balances a data fit against the voted guidance, an edge-aware
local smoothness term, and a non-local term tying pixels with similar
features. Its normal equations form a sparse SPD system solved per RGB
channel with Jacobi-preconditioned conjugate gradients; the coefficient
fields are then upscaled with a fast guided filter and applied to the
full-resolution source.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np
from scipy import sparse

from .core import (
    FeatureMap,
    Image,
    LuminanceMode,
    downsample,
    layer_dims,
    luminance_plane,
    standardize,
    upsample_nearest,
)
from .correspondence import NNField, PatchMatchParams, bds_vote, nl_neighbor_pairs, patchmatch
from .features import (
    Enhancement,
    FeatureConfig,
    FeatureSource,
    LabelMap,
    builtin_features,
    enhance,
    kmeans_with_history,
)

_SEED_MASK = (1 << 64) - 1


class ConvergenceError(RuntimeError):
    """Conjugate gradient failed to reach the requested tolerance."""

    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True)
class EnergyParams:
    lambda_l: float = 0.001
    lambda_nl: float = 0.4
    wls_alpha: float = 1.2
    wls_eps: float = 1e-4
    nl_neighbors: int = 5
    cg_tol: float = 1e-4
    cg_max_iter: int = 500

    def __post_init__(self):
        if self.lambda_l < 0 or self.lambda_nl < 0:
            raise ValueError("lambda weights must be >= 0")
        if self.cg_tol <= 0:
            raise ValueError(f"cg_tol must be > 0, got {self.cg_tol}")
        if self.nl_neighbors < 0:
            raise ValueError(f"nl_neighbors must be >= 0, got {self.nl_neighbors}")

    @classmethod
    def he_preset(cls, **overrides) -> "EnergyParams":
        """The original smoothness weights this method's tuned defaults replace."""
        return replace(cls(lambda_l=0.125, lambda_nl=2.0), **overrides)


@dataclass(frozen=True)
class GuidedFilterParams:
    radius: int = 8
    eps: float = 1e-3
    subsample: int = 4

    def __post_init__(self):
        if self.radius < 1:
            raise ValueError(f"radius must be >= 1, got {self.radius}")
        if self.eps <= 0:
            raise ValueError(f"eps must be > 0, got {self.eps}")
        if self.subsample < 1:
            raise ValueError(f"subsample must be >= 1, got {self.subsample}")


class AbField:
    """Per-pixel, per-RGB-channel linear gain and offset."""

    __slots__ = ("a", "b")

    def __init__(self, a: np.ndarray, b: np.ndarray):
        a = np.ascontiguousarray(a, dtype=np.float64)
        b = np.ascontiguousarray(b, dtype=np.float64)
        if a.shape != b.shape or a.ndim != 3 or a.shape[2] != 3:
            raise ValueError(f"a and b must both be HxWx3, got {a.shape} and {b.shape}")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise ValueError("coefficient fields contain non-finite values")
        a.flags.writeable = False
        b.flags.writeable = False
        self.a = a
        self.b = b

    @property
    def height(self) -> int:
        return self.a.shape[0]

    @property
    def width(self) -> int:
        return self.a.shape[1]

    @classmethod
    def identity(cls, width: int, height: int) -> "AbField":
        return cls(np.ones((height, width, 3)), np.zeros((height, width, 3)))


def _as_float01(img) -> np.ndarray:
    if isinstance(img, Image):
        return img.to_float()
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected HxWx3 array, got shape {arr.shape}")
    return arr


def wls_edge_weights(lum: np.ndarray, alpha: float, eps: float) -> tuple[np.ndarray, np.ndarray]:
    """Edge-aware 4-neighbor weights w = 1 / (|dLum|^alpha + eps).

    Returns (horizontal, vertical) weights on the [0,1] luminance scale;
    flat regions get the maximal weight 1/eps.
    """
    wh = 1.0 / (np.abs(np.diff(lum, axis=1)) ** alpha + eps)
    wv = 1.0 / (np.abs(np.diff(lum, axis=0)) ** alpha + eps)
    return wh, wv


def _smoothness_entries(h, w, wls_h, wls_v, lambda_l, lambda_nl, nl_pairs):
    """COO entry lists of the pair-difference quadratic form on one plane."""
    idx = np.arange(h * w, dtype=np.int64).reshape(h, w)
    ps = [idx[:, :-1].ravel(), idx[:-1, :].ravel()]
    qs = [idx[:, 1:].ravel(), idx[1:, :].ravel()]
    # the energy sums over ordered pairs, visiting each 4-neighbor edge twice
    ws = [2.0 * lambda_l * wls_h.ravel(), 2.0 * lambda_l * wls_v.ravel()]
    if nl_pairs is not None and lambda_nl > 0:
        ps.append(nl_pairs[0])
        qs.append(nl_pairs[1])
        ws.append(np.full(len(nl_pairs[0]), lambda_nl))
    p = np.concatenate(ps)
    q = np.concatenate(qs)
    wgt = np.concatenate(ws)
    rows = np.concatenate([p, q, p, q])
    cols = np.concatenate([p, q, q, p])
    vals = np.concatenate([wgt, wgt, -wgt, -wgt])
    return rows, cols, vals


def _pcg(A, rhs, x0, tol, max_iter):
    """Jacobi-preconditioned conjugate gradient; relative-residual stopping."""
    diag = A.diagonal().copy()
    diag[diag <= 0] = 1.0
    bnorm = float(np.linalg.norm(rhs))
    denom = bnorm if bnorm > 0 else 1.0
    x = x0.astype(np.float64).copy()
    r = rhs - A @ x
    z = r / diag
    p = z.copy()
    rz = float(r @ z)
    for _ in range(max_iter):
        res = float(np.linalg.norm(r))
        if res <= tol * denom:
            return x
        Ap = A @ p
        pAp = float(p @ Ap)
        if pAp <= 0:
            break
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        z = r / diag
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    res = float(np.linalg.norm(rhs - A @ x))
    if res <= tol * denom:
        return x
    raise ConvergenceError(
        f"conjugate gradient did not converge in {max_iter} iterations "
        f"(relative residual {res / denom:.3e}, target {tol:.3e})",
        residual=res / denom,
    )


def solve_ab(src_l: Image, guidance, feats: FeatureMap, params: EnergyParams,
             seed: int = 0, luminance_mode: LuminanceMode = LuminanceMode.REC601) -> AbField:
    """Minimize the transfer energy for per-pixel (a, b), per RGB channel.

    `guidance` may be an Image or a float HxWx3 array in [0,1]. A channel
    whose source values are all identical makes the system rank-deficient;
    it falls back to the global mean shift a=1, b = mean(G) - mean(S).
    """
    s3 = src_l.to_float()
    g3 = _as_float01(guidance)
    if g3.shape != s3.shape:
        raise ValueError(f"guidance shape {g3.shape} does not match source {s3.shape}")
    if g3.min() < 0.0 or g3.max() > 1.0:
        raise ValueError("guidance channel values must lie in [0,1]")
    if (feats.height, feats.width) != s3.shape[:2]:
        raise ValueError("feature map dims must match the source dims")

    h, w = s3.shape[:2]
    n = h * w
    lum = luminance_plane(s3, luminance_mode)
    wls_h, wls_v = wls_edge_weights(lum, params.wls_alpha, params.wls_eps)
    nl_pairs = None
    if params.lambda_nl > 0 and params.nl_neighbors > 0 and n > params.nl_neighbors:
        nl_pairs = nl_neighbor_pairs(feats, params.nl_neighbors, seed)

    rows, cols, vals = _smoothness_entries(h, w, wls_h, wls_v,
                                           params.lambda_l, params.lambda_nl, nl_pairs)
    lap_rows = np.concatenate([rows, rows + n])
    lap_cols = np.concatenate([cols, cols + n])
    lap_vals = np.concatenate([vals, vals])
    lap = sparse.coo_matrix((lap_vals, (lap_rows, lap_cols)), shape=(2 * n, 2 * n)).tocsr()

    pix = np.arange(n, dtype=np.int64)
    a = np.empty((h, w, 3))
    b = np.empty((h, w, 3))
    for c in range(3):
        s = s3[..., c].ravel()
        g = g3[..., c].ravel()
        if s.max() - s.min() == 0.0:
            a[..., c] = 1.0
            b[..., c] = g.mean() - s.mean()
            continue
        data = sparse.coo_matrix(
            (
                np.concatenate([s * s, s, s, np.ones(n)]),
                (
                    np.concatenate([pix, pix, pix + n, pix + n]),
                    np.concatenate([pix, pix + n, pix, pix + n]),
                ),
            ),
            shape=(2 * n, 2 * n),
        ).tocsr()
        rhs = np.concatenate([s * g, g])
        x0 = np.concatenate([np.ones(n), np.full(n, g.mean() - s.mean())])
        x = _pcg(lap + data, rhs, x0, params.cg_tol, params.cg_max_iter)
        a[..., c] = x[:n].reshape(h, w)
        b[..., c] = x[n:].reshape(h, w)
    return AbField(a, b)


def transfer_energy(src_l: Image, guidance, ab: AbField, params: EnergyParams,
                    nl_pairs=None, luminance_mode: LuminanceMode = LuminanceMode.REC601) -> float:
    """Evaluate the transfer energy at a given coefficient field."""
    s3 = src_l.to_float()
    g3 = _as_float01(guidance)
    lum = luminance_plane(s3, luminance_mode)
    wls_h, wls_v = wls_edge_weights(lum, params.wls_alpha, params.wls_eps)
    total = float(np.sum((ab.a * s3 + ab.b - g3) ** 2))
    for plane in (ab.a, ab.b):
        dh = np.diff(plane, axis=1)
        dv = np.diff(plane, axis=0)
        # ordered-pair sum: every 4-neighbor edge counts twice
        total += 2.0 * params.lambda_l * float(
            np.sum(wls_h[..., None] * dh * dh) + np.sum(wls_v[..., None] * dv * dv)
        )
        if nl_pairs is not None and params.lambda_nl > 0:
            flat = plane.reshape(-1, 3)
            d = flat[nl_pairs[0]] - flat[nl_pairs[1]]
            total += params.lambda_nl * float(np.sum(d * d))
    return total


def _box_mean(x: np.ndarray, r: int) -> np.ndarray:
    """Mean over (2r+1)-windows clipped to the grid (valid-pixel counts)."""
    h, w = x.shape
    integral = np.zeros((h + 1, w + 1))
    integral[1:, 1:] = x.cumsum(axis=0).cumsum(axis=1)
    y0 = np.maximum(np.arange(h) - r, 0)
    y1 = np.minimum(np.arange(h) + r, h - 1) + 1
    x0 = np.maximum(np.arange(w) - r, 0)
    x1 = np.minimum(np.arange(w) + r, w - 1) + 1
    sums = integral[y1][:, x1] - integral[y0][:, x1] - integral[y1][:, x0] + integral[y0][:, x0]
    return sums / np.outer(y1 - y0, x1 - x0)


def _resize_bilinear(arr: np.ndarray, target_w: int, target_h: int) -> np.ndarray:
    sh, sw = arr.shape
    if (sh, sw) == (target_h, target_w):
        return arr.copy()
    ys = np.clip((np.arange(target_h) + 0.5) * sh / target_h - 0.5, 0, sh - 1)
    xs = np.clip((np.arange(target_w) + 0.5) * sw / target_w - 0.5, 0, sw - 1)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, sh - 1)
    x1 = np.minimum(x0 + 1, sw - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    top = arr[y0][:, x0] * (1 - fx) + arr[y0][:, x1] * fx
    bot = arr[y1][:, x0] * (1 - fx) + arr[y1][:, x1] * fx
    return top * (1 - fy) + bot * fy


def fast_guided_filter(guide: np.ndarray, plane: np.ndarray, params: GuidedFilterParams) -> np.ndarray:
    """Edge-preserving filtering of `plane` steered by `guide`.

    Local linear coefficients come from (optionally subsampled) window
    statistics and are bilinearly upsampled back before application.
    """
    if guide.shape != plane.shape:
        raise ValueError(f"guide shape {guide.shape} != plane shape {plane.shape}")
    s = params.subsample
    if s > 1:
        guide_lo = guide[::s, ::s]
        plane_lo = plane[::s, ::s]
        r = max(1, params.radius // s)
    else:
        guide_lo, plane_lo, r = guide, plane, params.radius
    mean_i = _box_mean(guide_lo, r)
    mean_p = _box_mean(plane_lo, r)
    cov_ip = _box_mean(guide_lo * plane_lo, r) - mean_i * mean_p
    var_i = _box_mean(guide_lo * guide_lo, r) - mean_i * mean_i
    alpha = cov_ip / (var_i + params.eps)
    beta = mean_p - alpha * mean_i
    if s > 1:
        h, w = guide.shape
        alpha = _resize_bilinear(alpha, w, h)
        beta = _resize_bilinear(beta, w, h)
    return alpha * guide + beta


def guided_filter_upscale(ab: AbField, src_full: Image, params: GuidedFilterParams,
                          luminance_mode: LuminanceMode = LuminanceMode.REC601) -> AbField:
    """Upscale a coefficient field to full resolution, guided by source luminance."""
    if src_full.width < ab.width or src_full.height < ab.height:
        raise ValueError("full-resolution dims must be >= coefficient-field dims")
    guide = luminance_plane(src_full.to_float(), luminance_mode)
    up = upsample_nearest(ab, src_full.width, src_full.height)
    a = np.empty_like(up.a)
    b = np.empty_like(up.b)
    for c in range(3):
        a[..., c] = fast_guided_filter(guide, up.a[..., c], params)
        b[..., c] = fast_guided_filter(guide, up.b[..., c], params)
    return AbField(a, b)


def apply_ab(src: Image, ab: AbField) -> Image:
    """Per pixel, per channel: clamp(a*s + b, 0, 1), quantized round-half-up."""
    if (ab.height, ab.width) != (src.height, src.width):
        raise ValueError("coefficient field dims must match the image")
    return Image.from_float(ab.a * src.to_float() + ab.b)


@dataclass
class TransferResult:
    output: Image
    guidance: Image
    ab_low: AbField
    fwd: NNField
    bwd: NNField
    timings: dict


def _prepare_features(image: Image, cfg: FeatureConfig, provided: FeatureMap | None,
                      luminance_mode: LuminanceMode) -> FeatureMap:
    expected = layer_dims(image.width, image.height, cfg.layer)
    if cfg.source is FeatureSource.EXTERNAL_FMAP:
        if provided is None:
            raise ValueError("external feature source requires a loaded feature map")
        fmap = provided
    else:
        fmap = provided if provided is not None else builtin_features(image, cfg.layer, luminance_mode)
    if (fmap.width, fmap.height) != expected:
        raise ValueError(
            f"feature map dims {fmap.width}x{fmap.height} do not match "
            f"layer-{cfg.layer} dims {expected[0]}x{expected[1]}"
        )
    return fmap


def run_transfer(src: Image, ref: Image, cfg: FeatureConfig, pm: PatchMatchParams,
                 ep: EnergyParams, gf: GuidedFilterParams,
                 luminance_mode: LuminanceMode = LuminanceMode.REC601,
                 src_features: FeatureMap | None = None,
                 ref_features: FeatureMap | None = None,
                 src_labels: LabelMap | None = None,
                 ref_labels: LabelMap | None = None) -> TransferResult:
    """Full single-layer pipeline, returning intermediates and stage timings."""
    timings = {}
    t0 = time.perf_counter()
    src_l = downsample(src, cfg.layer)
    ref_l = downsample(ref, cfg.layer)
    fs = _prepare_features(src, cfg, src_features, luminance_mode)
    fr = _prepare_features(ref, cfg, ref_features, luminance_mode)
    if fs.channels != fr.channels:
        raise ValueError(f"feature channel mismatch: {fs.channels} vs {fr.channels}")
    fs, _ = standardize(fs)
    fr, _ = standardize(fr)

    if cfg.enhancement is Enhancement.CLUSTER:
        pts = np.vstack([fs.pixel_vectors(), fr.pixel_vectors()])
        labels, _ = kmeans_with_history(pts, cfg.cluster_k, cfg.seed)
        ns = fs.height * fs.width
        src_labels = LabelMap(labels[:ns].reshape(fs.height, fs.width), cfg.cluster_k)
        ref_labels = LabelMap(labels[ns:].reshape(fr.height, fr.width), cfg.cluster_k)
    elif cfg.enhancement is Enhancement.SEGMAP:
        if src_labels is None or ref_labels is None:
            raise ValueError("segmap enhancement requires label maps for both images")
        k = max(src_labels.num_classes, ref_labels.num_classes)
        src_labels = src_labels.with_num_classes(k)
        ref_labels = ref_labels.with_num_classes(k)
    else:
        src_labels = ref_labels = None
    if src_labels is not None:
        fs = enhance(fs, src_labels, cfg.enhancement_weight)
        fr = enhance(fr, ref_labels, cfg.enhancement_weight)
    timings["features"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    fwd = patchmatch(fs, fr, pm)
    bwd = patchmatch(fr, fs, replace(pm, rng_seed=(pm.rng_seed + 1) & _SEED_MASK))
    timings["patchmatch"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    guidance = bds_vote(ref_l, fwd, bwd, pm.patch_size)
    timings["vote"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    ab_low = solve_ab(src_l, guidance, fs, ep,
                      seed=(pm.rng_seed + 2) & _SEED_MASK, luminance_mode=luminance_mode)
    timings["solve"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    ab_full = guided_filter_upscale(ab_low, src, gf, luminance_mode)
    timings["upscale"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    output = apply_ab(src, ab_full)
    timings["apply"] = time.perf_counter() - t0
    timings["total"] = sum(timings.values())
    return TransferResult(output=output, guidance=guidance, ab_low=ab_low,
                          fwd=fwd, bwd=bwd, timings=timings)


def transfer_single_layer(src: Image, ref: Image, cfg: FeatureConfig, pm: PatchMatchParams,
                          ep: EnergyParams, gf: GuidedFilterParams,
                          luminance_mode: LuminanceMode = LuminanceMode.REC601) -> Image:
    """Transfer the reference's color appearance onto the source image."""
    return run_transfer(src, ref, cfg, pm, ep, gf, luminance_mode=luminance_mode).output
