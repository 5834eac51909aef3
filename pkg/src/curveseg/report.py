"""Figure rendering for evaluation reports.

Written next to the CSV tables by the CLI so a run leaves both
machine-readable and glanceable output.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .evalbench import PrfScore


def cmc_figure(cmc: np.ndarray, path, title: str = "Design matching") -> None:
    """CMC curve: fraction of sherds whose true design is within rank L."""
    ranks = np.arange(1, len(cmc) + 1)
    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    ax.plot(ranks, cmc, marker="o", ms=3.5, lw=1.2)
    ax.set_xlabel("rank L")
    ax.set_ylabel("matching accuracy")
    ax.set_ylim(0.0, 1.05)
    ax.set_xlim(1, len(cmc))
    ax.grid(True, alpha=0.3)
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def prf_figure(scores: list[PrfScore], summary: PrfScore, path,
               title: str = "Segmentation quality") -> None:
    """Histogram of per-image F plus the averaged P/R/F bars."""
    fig, (ax0, ax1) = plt.subplots(1, 2, figsize=(7.5, 3.4))
    ax0.hist([s.f_measure for s in scores], bins=np.linspace(0, 1, 21),
             color="#4878b0", edgecolor="white")
    ax0.set_xlabel("per-image F-measure")
    ax0.set_ylabel("images")
    ax0.set_xlim(0, 1)
    bars = [summary.precision, summary.recall, summary.f_measure]
    ax1.bar(["precision", "recall", "F"], bars, color=["#767676", "#767676", "#4878b0"])
    for i, v in enumerate(bars):
        ax1.text(i, v + 0.02, f"{v:.3f}", ha="center", fontsize=9)
    ax1.set_ylim(0, 1.1)
    fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
