"""Figure rendering for the report stage.

Renders the training curves and the per-class rank-frequency heatmaps to
PNG files next to the delimited tables they are drawn from.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .explain import RankHistogram
from .waveforms import CHANNEL_NAMES


def render_training_curves(history_rows, out_path) -> Path:
    """Train/test accuracy plus test macro precision and F1 over epochs."""
    epochs = [row["epoch"] for row in history_rows]
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    ax.plot(epochs, [r["train_acc"] for r in history_rows], label="train accuracy")
    ax.plot(epochs, [r["test_acc"] for r in history_rows], label="test accuracy")
    ax.plot(epochs, [r["precision"] for r in history_rows], label="test precision", linestyle="--")
    ax.plot(epochs, [r["f1"] for r in history_rows], label="test F1", linestyle=":")
    ax.set_xlabel("epoch")
    ax.set_ylabel("score")
    ax.set_ylim(0.0, 1.05)
    ax.legend(loc="lower right", fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    out_path = Path(out_path)
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path


def render_rank_heatmap(hist: RankHistogram, out_path) -> Path:
    """Node-by-rank count heatmap for one fault class."""
    counts = hist.counts
    n = counts.shape[0]
    names = CHANNEL_NAMES if n == len(CHANNEL_NAMES) else [f"node {i}" for i in range(n)]
    fig, ax = plt.subplots(figsize=(5.2, 4.2))
    image = ax.imshow(counts, cmap="viridis")
    ax.set_xticks(range(n), [f"rank {r}" for r in range(n)], rotation=45, ha="right")
    ax.set_yticks(range(n), names)
    threshold = counts.max() / 2 if counts.max() else 0
    for i in range(n):
        for j in range(n):
            ax.text(
                j, i, str(int(counts[i, j])),
                ha="center", va="center", fontsize=8,
                color="white" if counts[i, j] < threshold else "black",
            )
    ax.set_title(f"{hist.label.value} fault: node rank frequencies")
    fig.colorbar(image, ax=ax, shrink=0.85)
    fig.tight_layout()
    out_path = Path(out_path)
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path
