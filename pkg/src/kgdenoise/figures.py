"""Figure rendering for run reports.

PNG files are written next to the delimited reports so a run directory
is self-describing. The Agg backend keeps this usable on headless boxes.
"""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_VARIANT_COLORS = {
    "full": "#2f6fb3",
    "wo_srl": "#d1662c",
    "wo_ssp": "#3f9b5c",
    "wo_mi": "#9459a8",
}


def _color(variant: str, idx: int):
    return _VARIANT_COLORS.get(variant, f"C{idx}")


def noise_figure(rows, path) -> str:
    """Bar chart of mean AUC-ROC per (ratio, variant) with degradation lines.

    rows are summary-CSV dicts from a single sweep (one noise kind).
    """
    if not rows:
        raise ValueError("no rows to plot")
    kinds = {row["noise_kind"] for row in rows}
    if len(kinds) != 1:
        raise ValueError("rows mix noise kinds; plot one sweep at a time")
    variants = list(dict.fromkeys(row["variant"] for row in rows))
    ratios = sorted({row["ratio"] for row in rows})
    auc = {}
    drop = {}
    for row in rows:
        auc.setdefault((row["variant"], row["ratio"]), []).append(row["auc_roc"])
        drop[(row["variant"], row["ratio"])] = row["degradation"]

    fig, ax = plt.subplots(figsize=(7.2, 4.2))
    ax2 = ax.twinx()
    width = 0.8 / len(variants)
    xs = np.arange(len(ratios))
    for vi, variant in enumerate(variants):
        offs = xs + (vi - (len(variants) - 1) / 2) * width
        means = [float(np.mean(auc[(variant, r)])) for r in ratios]
        stds = [float(np.std(auc[(variant, r)])) for r in ratios]
        color = _color(variant, vi)
        ax.bar(offs, means, width * 0.92, yerr=stds, capsize=2,
               color=color, alpha=0.75, label=variant)
        ax2.plot(xs, [drop[(variant, r)] for r in ratios], marker="o",
                 color=color, linewidth=1.4)
    ax.set_xticks(xs)
    ax.set_xticklabels([f"{int(round(r * 100))}%" for r in ratios])
    ax.set_xlabel(f"{kinds.pop()} noise ratio")
    ax.set_ylabel("test AUC-ROC (bars)")
    ax.set_ylim(0.0, 1.0)
    ax2.set_ylabel("degradation ratio (lines)")
    ax2.set_ylim(bottom=0.0)
    ax.legend(loc="lower left", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return str(path)


def training_figure(curves: dict, path) -> str:
    """Per-fold train-loss and validation-AUC curves from a training run."""
    if not curves:
        raise ValueError("no curves to plot")
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9.0, 3.6))
    for idx, (fold, c) in enumerate(sorted(curves.items())):
        if c["train"]:
            ax1.plot(c["train"], label=f"fold {fold}", color=f"C{idx}")
        if c["valid"]:
            ax2.plot(c["valid"], label=f"fold {fold}", color=f"C{idx}")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("train cross-entropy")
    ax1.set_yscale("log")
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("validation AUC-ROC")
    ax2.set_ylim(0.0, 1.02)
    ax1.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return str(path)
