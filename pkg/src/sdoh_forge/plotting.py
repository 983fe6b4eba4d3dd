"""Report figures (PNG, headless Agg backend)."""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
}
# no timestamps in the PNG so reruns give stable files
METADATA = {"Software": None}


def learning_curve(series: dict[str, list[float]], sizes: list[int], path, title: str = "") -> Path:
    """One line per label source, AUROC against training size on a log2 axis."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.0, 3.4))
        for name, values in series.items():
            ax.plot(sizes, values, marker="o", markersize=3, linewidth=1.2, label=name)
        ax.set_xscale("log", base=2)
        ax.set_xticks(sizes)
        ax.set_xticklabels([str(s) for s in sizes])
        ax.set_xlabel("training examples")
        ax.set_ylabel("test AUROC")
        lo = min((v for vals in series.values() for v in vals), default=0.5)
        ax.set_ylim(max(0.0, min(0.5, lo - 0.02)), 1.0)
        ax.grid(True, alpha=0.3, linewidth=0.5)
        ax.legend(frameon=False, loc="lower right")
        if title:
            ax.set_title(title)
        fig.tight_layout()
        fig.savefig(path, metadata=METADATA)
        plt.close(fig)
    return path


def agreement_heatmap(names: list[str], kappa, path, title: str = "") -> Path:
    """Annotated kappa grid; undefined cells are shown as 'n/a'."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    k = len(names)
    grid = [[math.nan if v is None else float(v) for v in row] for row in kappa]
    with plt.rc_context(STYLE):
        size = 1.2 + 0.9 * k
        fig, ax = plt.subplots(figsize=(size + 0.8, size))
        im = ax.imshow(grid, vmin=-1.0, vmax=1.0, cmap="RdBu")
        ax.set_xticks(range(k))
        ax.set_yticks(range(k))
        ax.set_xticklabels(names, rotation=45, ha="right")
        ax.set_yticklabels(names)
        for i in range(k):
            for j in range(k):
                v = grid[i][j]
                text = "n/a" if math.isnan(v) else f"{v:.2f}"
                ax.text(j, i, text, ha="center", va="center", fontsize=8,
                        color="white" if not math.isnan(v) and abs(v) > 0.6 else "black")
        fig.colorbar(im, ax=ax, fraction=0.046, pad=0.04, label="Cohen's kappa")
        if title:
            ax.set_title(title)
        fig.tight_layout()
        fig.savefig(path, metadata=METADATA, bbox_inches="tight")
        plt.close(fig)
    return path
