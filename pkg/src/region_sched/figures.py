"""Matplotlib figure rendering for run reports and ablation sweeps.

pyplot is imported lazily inside each function so that headless library
use never pays the matplotlib import cost.  Every figure is written
through Agg with pinned dpi and metadata, keeping PNG bytes identical
across repeated runs of the same config.
"""

from __future__ import annotations

from .sampler import RunReport

__all__ = [
    "save_run_activity",
    "save_ratio_dilation_figure",
    "save_variant_figure",
]

_DPI = 110
_META = {"Software": "region-sched"}


def _pyplot():
    import matplotlib

    matplotlib.use("Agg", force=False)
    import matplotlib.pyplot as plt

    return plt


def save_run_activity(report: RunReport, path: str) -> None:
    """Two panels: per-step active fraction, and probe divergence where measured."""
    plt = _pyplot()
    n = report.height * report.width
    ts = [r.t for r in report.rows]
    frac = [r.active_pixel_count / n for r in report.rows]
    colors = ["#444444" if r.mode == "full" else "#3b7dd8" for r in report.rows]
    fig, (ax0, ax1) = plt.subplots(2, 1, figsize=(7.0, 4.6), sharex=True)
    ax0.bar(ts, frac, color=colors, width=0.85)
    ax0.set_ylabel("active fraction")
    ax0.set_ylim(0.0, 1.05)
    ax0.set_title("per-step activity (grey = full, blue = sparse)")
    dts = [r.t for r in report.rows if r.divergence is not None]
    dvs = [r.divergence for r in report.rows if r.divergence is not None]
    if dts:
        ax1.plot(dts, dvs, "o-", color="#c24b33", markersize=3.5)
    ax1.set_ylabel("probe divergence")
    ax1.set_xlabel("step t")
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI, metadata=_META)
    plt.close(fig)


def save_ratio_dilation_figure(rows: list[dict], path: str) -> None:
    """PSNR against compute for a ratio x dilation sweep, one line per dilation."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6.0, 4.2))
    dilations = sorted({r["dilation"] for r in rows})
    for d in dilations:
        pts = sorted(
            ((r["compute_ratio"], r["psnr"]) for r in rows if r["dilation"] == d),
        )
        ax.plot([p[0] for p in pts], [p[1] for p in pts], "o-", label=f"dilation {d}")
    ax.set_xlabel("compute ratio")
    ax.set_ylabel("PSNR to full (dB)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI, metadata=_META)
    plt.close(fig)


def save_variant_figure(rows: list[dict], label_key: str, path: str) -> None:
    """Bar chart of PSNR per categorical variant (partitioner or scorer)."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6.0, 3.6))
    labels = [r[label_key] for r in rows]
    ax.bar(range(len(rows)), [r["psnr"] for r in rows], color="#3b7dd8", width=0.6)
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels(labels, rotation=20, ha="right")
    ax.set_ylabel("PSNR to full (dB)")
    ax.set_xlabel(label_key)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI, metadata=_META)
    plt.close(fig)
