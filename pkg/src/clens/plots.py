"""Figure rendering for run outputs.

Everything draws through the Agg backend straight to files; no display is
ever opened. Figures are a convenience alongside the delimited output, the
delimited files remain the canonical record.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = ["plot_accuracy_curve", "plot_heatmap", "plot_mode_curves"]


def plot_accuracy_curve(a_t: np.ndarray, path, label: str = "pooled accuracy") -> None:
    """Accuracy over the pooled seen test sets after each task."""
    steps = np.arange(1, len(a_t) + 1)
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(steps, a_t, marker="o", lw=1.5)
    ax.set_xlabel("tasks learned")
    ax.set_ylabel(label)
    ax.set_xticks(steps)
    ax.set_ylim(0.0, 1.02)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_heatmap(
    grid: np.ndarray,
    path,
    xlabel: str,
    ylabel: str,
    title: str = "",
    annotate: bool = True,
) -> None:
    """Accuracy grid as an annotated heatmap; NaN cells stay blank."""
    grid = np.asarray(grid, dtype=np.float64)
    fig, ax = plt.subplots(figsize=(0.55 * grid.shape[1] + 1.8, 0.5 * grid.shape[0] + 1.5))
    masked = np.ma.masked_invalid(grid)
    im = ax.imshow(masked, vmin=0.0, vmax=1.0, cmap="viridis")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.set_xticks(np.arange(grid.shape[1]), [str(j + 1) for j in range(grid.shape[1])])
    ax.set_yticks(np.arange(grid.shape[0]), [str(i + 1) for i in range(grid.shape[0])])
    if annotate and grid.size <= 400:
        for i in range(grid.shape[0]):
            for j in range(grid.shape[1]):
                if np.isfinite(grid[i, j]):
                    ax.text(
                        j,
                        i,
                        f"{grid[i, j]:.2f}",
                        ha="center",
                        va="center",
                        fontsize=7,
                        color="white" if grid[i, j] < 0.6 else "black",
                    )
    fig.colorbar(im, ax=ax, fraction=0.046)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_mode_curves(curves: dict[str, np.ndarray], path) -> None:
    """Overlayed accuracy curves, one per evaluation mode."""
    fig, ax = plt.subplots(figsize=(5.2, 3.4))
    for mode, a_t in sorted(curves.items()):
        steps = np.arange(1, len(a_t) + 1)
        ax.plot(steps, a_t, marker="o", lw=1.4, label=mode)
    ax.set_xlabel("tasks learned")
    ax.set_ylabel("pooled accuracy")
    ax.set_ylim(0.0, 1.02)
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
