"""Batch report output: metrics CSV, stage timings, and summary figure.

The metrics CSV is deterministic for a fixed batch and seeds; wall-clock
stage timings live in a separate timings CSV so reruns stay bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .metrics import HIST_BINS

METRICS_COLUMNS = (
    "image", "reference", "dist_before", "dist_after",
    "mean_r_before", "mean_g_before", "mean_b_before",
    "std_r_before", "std_g_before", "std_b_before",
    "mean_r_after", "mean_g_after", "mean_b_after",
    "std_r_after", "std_g_after", "std_b_after",
    "status",
)

TIMING_COLUMNS = ("image", "features", "patchmatch", "vote", "solve", "upscale", "apply", "total")

STAGES = TIMING_COLUMNS[1:]


@dataclass
class MetricsRow:
    image: str
    reference: str = ""
    dist_before: float | None = None
    dist_after: float | None = None
    stats_before: tuple | None = None  # (means(3), stds(3))
    stats_after: tuple | None = None
    status: str = "ok"

    def as_record(self) -> list[str]:
        def num(v):
            return "" if v is None else f"{v:.6f}"

        def stats(pair):
            if pair is None:
                return [""] * 6
            means, stds = pair
            return [f"{v:.6f}" for v in (*means, *stds)]

        return [self.image, self.reference, num(self.dist_before), num(self.dist_after),
                *stats(self.stats_before), *stats(self.stats_after), self.status]


@dataclass
class MetricsReport:
    rows: list

    def ok(self) -> bool:
        return all(r.status == "ok" for r in self.rows)


def write_metrics_csv(path, report: MetricsReport) -> None:
    lines = [",".join(METRICS_COLUMNS)]
    lines += [",".join(row.as_record()) for row in report.rows]
    Path(path).write_text("\n".join(lines) + "\n")


def write_timings_csv(path, timing_rows) -> None:
    lines = [",".join(TIMING_COLUMNS)]
    for name, timings in timing_rows:
        lines.append(",".join([name] + [f"{timings.get(k, 0.0):.3f}" for k in STAGES]))
    Path(path).write_text("\n".join(lines) + "\n")


def render_metrics_figure(path, report: MetricsReport, source_pool, output_pool, reference_pool) -> None:
    """Distance bars plus pooled luminance histograms, written as a PNG."""
    ok_rows = [r for r in report.rows if r.status == "ok"]
    fig, (ax_dist, ax_hist) = plt.subplots(1, 2, figsize=(11, 4))

    if ok_rows:
        idx = np.arange(len(ok_rows))
        before = [r.dist_before for r in ok_rows]
        after = [r.dist_after for r in ok_rows]
        ax_dist.bar(idx - 0.2, before, width=0.4, label="before", color="#b4543c")
        ax_dist.bar(idx + 0.2, after, width=0.4, label="after", color="#3c78b4")
        ax_dist.set_xticks(idx)
        ax_dist.set_xticklabels([Path(r.image).stem for r in ok_rows], rotation=45, ha="right", fontsize=7)
        ax_dist.legend()
    ax_dist.set_ylabel("chi-square distance to reference pool")
    ax_dist.set_title("Luminance-histogram distance")

    edges = np.arange(HIST_BINS) * (256 // HIST_BINS)
    for hist, label, color in ((source_pool, "sources (before)", "#b4543c"),
                               (output_pool, "outputs (after)", "#3c78b4"),
                               (reference_pool, "reference pool", "#444444")):
        if hist is not None:
            ax_hist.step(edges, hist, where="post", label=label, color=color)
    ax_hist.set_xlabel("luminance")
    ax_hist.set_ylabel("fraction of pixels")
    ax_hist.set_title("Pooled luminance histograms")
    ax_hist.legend()

    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
