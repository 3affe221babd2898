"""Batch orchestration: job configuration, reference protocol, gray-world baseline."""

from __future__ import annotations

import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import imgio
from .core import Image, LuminanceMode, layer_dims
from .correspondence import PatchMatchParams
from .features import Enhancement, FeatureConfig, FeatureSource, load_fmap, load_label_map
from .metrics import channel_stats, chi_square_distance, luminance_histogram, pooled_histogram
from .report import MetricsReport, MetricsRow, render_metrics_figure, write_metrics_csv, write_timings_csv
from .transfer import EnergyParams, GuidedFilterParams, run_transfer

MAX_REFERENCES = 3

_LUMINANCE_NAMES = {"bt601": LuminanceMode.REC601, "bt709": LuminanceMode.REC709}


@dataclass
class JobConfig:
    """Batch job settings; field names double as config-file keys."""

    sources: list = field(default_factory=list)
    references: list = field(default_factory=list)
    out_dir: str = "."
    layer: int = 1
    features: str = "builtin"  # builtin | fmap:<dir>
    enhance: str = "cluster"  # none | cluster | segmap:<dir>
    cluster_k: int = 5
    enhancement_weight: float = 1.0
    lambda_l: float = 0.001
    lambda_nl: float = 0.4
    wls_alpha: float = 1.2
    wls_eps: float = 1e-4
    nl_neighbors: int = 5
    cg_tol: float = 1e-4
    cg_max_iter: int = 500
    gf_radius: int = 8
    gf_eps: float = 1e-3
    gf_subsample: int = 4
    luminance: str = "bt601"
    patch_size: int = 3
    pm_iters: int = 5
    search_radius_decay: float = 0.5
    seed: int = 0
    threads: int = 1
    dump_guidance: bool = False
    dump_ab: bool = False
    dump_nnf: bool = False

    def luminance_mode(self) -> LuminanceMode:
        try:
            return _LUMINANCE_NAMES[self.luminance]
        except KeyError:
            raise ValueError(f"unknown luminance mode {self.luminance!r}, expected bt601 or bt709") from None

    def feature_config(self) -> FeatureConfig:
        source = FeatureSource.EXTERNAL_FMAP if self.features.startswith("fmap:") else FeatureSource.BUILTIN
        if self.features != "builtin" and source is FeatureSource.BUILTIN:
            raise ValueError(f"unknown feature source {self.features!r}")
        kind = self.enhance.split(":", 1)[0]
        try:
            enhancement = Enhancement(kind)
        except ValueError:
            raise ValueError(f"unknown enhancement {self.enhance!r}") from None
        if enhancement is Enhancement.SEGMAP and ":" not in self.enhance:
            raise ValueError("segmap enhancement needs a path: segmap:<dir>")
        return FeatureConfig(layer=self.layer, source=source, enhancement=enhancement,
                             cluster_k=self.cluster_k, enhancement_weight=self.enhancement_weight,
                             seed=self.seed)

    def pm_params(self) -> PatchMatchParams:
        return PatchMatchParams(patch_size=self.patch_size, iterations=self.pm_iters,
                                search_radius_decay=self.search_radius_decay, rng_seed=self.seed)

    def energy_params(self) -> EnergyParams:
        return EnergyParams(lambda_l=self.lambda_l, lambda_nl=self.lambda_nl,
                            wls_alpha=self.wls_alpha, wls_eps=self.wls_eps,
                            nl_neighbors=self.nl_neighbors, cg_tol=self.cg_tol,
                            cg_max_iter=self.cg_max_iter)

    def gf_params(self) -> GuidedFilterParams:
        return GuidedFilterParams(radius=self.gf_radius, eps=self.gf_eps, subsample=self.gf_subsample)


def expand_image_paths(paths) -> list[Path]:
    """Expand files and directories into a sorted list of image files."""
    out = []
    for p in paths:
        p = Path(p)
        if p.is_dir():
            found = sorted(q for q in p.iterdir() if q.suffix.lower() in imgio.IMAGE_EXTENSIONS)
            if not found:
                raise FileNotFoundError(f"{p}: directory contains no PNG/PPM images")
            out.extend(found)
        else:
            out.append(p)
    return out


def select_reference(src_hist: np.ndarray, ref_hists) -> int:
    """Index of the closest reference histogram; ties break to the lowest index."""
    dists = [chi_square_distance(src_hist, rh) for rh in ref_hists]
    return int(np.argmin(dists))


def _sidecar(locator: str, stem: str, suffix: str) -> Path:
    root = Path(locator.split(":", 1)[1])
    path = root / f"{stem}{suffix}"
    if not path.exists():
        raise FileNotFoundError(f"missing {path} for image stem {stem!r}")
    return path


def _load_external_inputs(config: JobConfig, cfg: FeatureConfig, image_path: Path, image: Image):
    fmap = None
    labels = None
    if cfg.source is FeatureSource.EXTERNAL_FMAP:
        fmap = load_fmap(_sidecar(config.features, image_path.stem, ".fmap"))
    if cfg.enhancement is Enhancement.SEGMAP:
        lw, lh = layer_dims(image.width, image.height, cfg.layer)
        labels = load_label_map(_sidecar(config.enhance, image_path.stem, ".png"), lw, lh)
    return fmap, labels


def run_transfer_batch(config: JobConfig) -> tuple[int, MetricsReport]:
    """Transfer every source image toward its closest reference; write outputs."""
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    mode = config.luminance_mode()
    cfg = config.feature_config()
    pm = config.pm_params()
    ep = config.energy_params()
    gf = config.gf_params()

    ref_paths = expand_image_paths(config.references)
    if not 1 <= len(ref_paths) <= MAX_REFERENCES:
        raise ValueError(f"need 1..{MAX_REFERENCES} reference images, got {len(ref_paths)}")
    refs = [imgio.read_image(p) for p in ref_paths]
    ref_inputs = [_load_external_inputs(config, cfg, p, img) for p, img in zip(ref_paths, refs)]
    ref_hists = [luminance_histogram(img, mode) for img in refs]
    ref_pool = pooled_histogram(refs, mode)

    src_paths = expand_image_paths(config.sources)

    def process(path: Path):
        try:
            src = imgio.read_image(path)
            src_hist = luminance_histogram(src, mode)
            ref_idx = select_reference(src_hist, ref_hists)
            ref = refs[ref_idx]
            src_fmap, src_labels = _load_external_inputs(config, cfg, path, src)
            ref_fmap, ref_labels = ref_inputs[ref_idx]
            result = run_transfer(src, ref, cfg, pm, ep, gf, luminance_mode=mode,
                                  src_features=src_fmap, ref_features=ref_fmap,
                                  src_labels=src_labels, ref_labels=ref_labels)
            out_path = out_dir / f"{path.stem}.nct.png"
            imgio.write_image(out_path, result.output)
            if config.dump_guidance:
                imgio.write_image(out_dir / f"{path.stem}.guidance.png", result.guidance)
            if config.dump_ab:
                imgio.write_fmap(out_dir / f"{path.stem}.a.fmap", np.moveaxis(result.ab_low.a, 2, 0))
                imgio.write_fmap(out_dir / f"{path.stem}.b.fmap", np.moveaxis(result.ab_low.b, 2, 0))
            if config.dump_nnf:
                for tag, nnf in (("fwd", result.fwd), ("bwd", result.bwd)):
                    imgio.write_fmap(out_dir / f"{path.stem}.nnf_{tag}.fmap",
                                     np.moveaxis(nnf.mapping.astype(np.float32), 2, 0))
            row = MetricsRow(
                image=str(path), reference=str(ref_paths[ref_idx]),
                dist_before=chi_square_distance(src_hist, ref_pool),
                dist_after=chi_square_distance(luminance_histogram(result.output, mode), ref_pool),
                stats_before=channel_stats(src), stats_after=channel_stats(result.output),
            )
            return row, result.timings, src, result.output
        except Exception as exc:  # per-file failure; batch continues
            print(f"stainform: {path}: {exc}", file=sys.stderr)
            return MetricsRow(image=str(path), status="error"), {}, None, None

    if config.threads > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            results = list(pool.map(process, src_paths))
    else:
        results = [process(p) for p in src_paths]

    report = MetricsReport(rows=[r[0] for r in results])
    write_metrics_csv(out_dir / "metrics.csv", report)
    write_timings_csv(out_dir / "timings.csv",
                      [(row.image, t) for row, t, _, _ in results if row.status == "ok"])
    ok_inputs = [src for _, _, src, _ in results if src is not None]
    ok_outputs = [out for _, _, _, out in results if out is not None]
    render_metrics_figure(
        out_dir / "metrics.png", report,
        pooled_histogram(ok_inputs, mode) if ok_inputs else None,
        pooled_histogram(ok_outputs, mode) if ok_outputs else None,
        ref_pool,
    )
    return (0 if report.ok() else 1), report


def gray_world(image: Image) -> tuple[Image, bool]:
    """Scale each channel so all channel means match their common mean.

    Returns (balanced, ok); an image with a zero channel mean is returned
    unchanged with ok=False.
    """
    arr = image.to_float()
    means = arr.mean(axis=(0, 1))
    if np.any(means == 0.0):
        return image.copy(), False
    return Image.from_float(arr * (means.mean() / means)), True


def run_balance_batch(config: JobConfig) -> int:
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    status = 0
    for path in expand_image_paths(config.sources):
        try:
            image = imgio.read_image(path)
        except Exception as exc:
            print(f"stainform: {path}: {exc}", file=sys.stderr)
            status = 1
            continue
        balanced, ok = gray_world(image)
        if not ok:
            print(f"stainform: {path}: zero channel mean, copied unchanged", file=sys.stderr)
        imgio.write_image(out_dir / f"{path.stem}.cb.png", balanced)
    return status
