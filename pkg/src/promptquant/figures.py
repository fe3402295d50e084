"""Figure rendering for CLI report paths.

The analyzer and harness emit CSV only; this module turns those tables into
PNG files next to them.  Kept out of the library modules so programmatic use
never drags in a rendering backend.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .harness import TrainReport, mean_curve

# Strip the Software tag so identical runs produce identical bytes.
_PNG_META = {"Software": None}


def _save(fig, path: Path) -> Path:
    path = Path(path)
    fig.savefig(path, dpi=120, metadata=_PNG_META)
    plt.close(fig)
    return path


def training_curves(reports: list[TrainReport], out_prefix: Path) -> list[Path]:
    """Accuracy curves plus quantization-error/KLD traces, averaged over seeds."""
    out_prefix = Path(out_prefix)
    epochs = reports[0].epochs
    written = []

    fig, ax = plt.subplots(figsize=(6, 4))
    for name, color in (("base_acc", "tab:blue"), ("new_acc", "tab:orange")):
        curves = np.array([getattr(r, name) for r in reports])
        mean = curves.mean(axis=0)
        ax.plot(epochs, mean, color=color, label=name.replace("_", " "))
        if len(reports) > 1:
            ax.fill_between(epochs, curves.min(axis=0), curves.max(axis=0), color=color, alpha=0.15)
    ax.set_xlabel("epoch")
    ax.set_ylabel("accuracy")
    ax.set_ylim(0, 1)
    ax.legend()
    ax.set_title(f"mode={reports[0].mode} seeds={len(reports)}")
    fig.tight_layout()
    written.append(_save(fig, out_prefix.with_name(out_prefix.name + "_accuracy.png")))

    err = mean_curve(reports, "quant_err")
    kld = mean_curve(reports, "kld")
    if np.any(np.isfinite(err)) or np.any(np.isfinite(kld)):
        fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(6, 5), sharex=True)
        ax1.plot(epochs, err, color="tab:red")
        ax1.set_ylabel("quant error")
        ax2.plot(epochs, kld, color="tab:green")
        ax2.set_ylabel("KLD vs cached")
        ax2.set_xlabel("epoch")
        for r in reports:
            for s in r.recluster_steps:
                ax2.axvline(s / max(1, r.steps_per_epoch), color="gray", alpha=0.2)
        fig.tight_layout()
        written.append(_save(fig, out_prefix.with_name(out_prefix.name + "_quant.png")))
    return written


def analysis_figures(
    labels: list[int],
    variances: np.ndarray,
    klds: np.ndarray,
    outlier_fracs: np.ndarray,
    out_prefix: Path,
) -> list[Path]:
    """Variance / KLD / outlier trends for a snapshot series."""
    out_prefix = Path(out_prefix)
    fig, axes = plt.subplots(3, 1, figsize=(6, 7), sharex=True)
    axes[0].plot(labels, variances, color="tab:blue")
    axes[0].set_ylabel("variance")
    axes[1].plot(labels[1:], klds, color="tab:green")
    axes[1].set_ylabel("KLD (adjacent)")
    axes[2].plot(labels, outlier_fracs, color="tab:red")
    axes[2].set_ylabel("outlier frac")
    axes[2].set_xlabel("step")
    fig.tight_layout()
    return [_save(fig, out_prefix.with_name(out_prefix.name + "_trends.png"))]


def histogram_figure(
    edges: np.ndarray, all_counts: list[np.ndarray], labels: list[int], out_prefix: Path
) -> list[Path]:
    """Overlaid weight histograms across snapshots."""
    out_prefix = Path(out_prefix)
    fig, ax = plt.subplots(figsize=(6, 4))
    mids = 0.5 * (edges[:-1] + edges[1:])
    cmap = plt.get_cmap("viridis")
    for i, counts in enumerate(all_counts):
        c = cmap(i / max(1, len(all_counts) - 1))
        ax.plot(mids, counts, color=c, alpha=0.8, label=f"step {labels[i]}")
    ax.set_xlabel("weight value")
    ax.set_ylabel("count")
    if len(all_counts) <= 8:
        ax.legend(fontsize=7)
    fig.tight_layout()
    return [_save(fig, out_prefix.with_name(out_prefix.name + "_hist.png"))]
