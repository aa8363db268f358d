"""Figures written next to the CSV reports."""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.dpi": 100,
    "savefig.dpi": 120,
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "svg.hashsalt": "glrsed",
}

# metadata left empty so reruns write identical bytes
_SAVE_KW = {"metadata": {"Software": None}}


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
    return path


def loss_curves(epoch_means, path: str | Path, alpha: float | None = None) -> Path:
    """Per-epoch mean BCE, GLR and total objective."""
    epochs = np.arange(1, len(epoch_means) + 1)
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 2, figsize=(8, 3))
        axes[0].plot(epochs, [b.bce for b in epoch_means], label="cross-entropy")
        axes[0].plot(epochs, [b.total for b in epoch_means], "--", label="total")
        axes[0].set_xlabel("epoch")
        axes[0].set_ylabel("loss per batch")
        axes[0].legend(frameon=False)
        axes[1].plot(epochs, [b.glr for b in epoch_means], color="C2")
        axes[1].set_xlabel("epoch")
        axes[1].set_ylabel("Laplacian penalty")
        if alpha is not None:
            axes[1].set_title(f"alpha = {alpha:g}")
        fig.tight_layout()
        return _save(fig, path)


def adjacency(matrix: np.ndarray, labels: Sequence[str], path: str | Path) -> Path:
    m = len(labels)
    size = max(3.0, 0.3 * m + 1.5)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(size + 0.8, size))
        im = ax.imshow(matrix, vmin=0, vmax=1, cmap="Blues")
        ax.set_xticks(range(m))
        ax.set_yticks(range(m))
        ax.set_xticklabels(labels, rotation=90)
        ax.set_yticklabels(labels)
        fig.colorbar(im, ax=ax, fraction=0.046, pad=0.04)
        ax.set_title("event co-occurrence")
        fig.tight_layout()
        return _save(fig, path)


def detection(y: np.ndarray, ref_roll: np.ndarray, hyp_roll: np.ndarray, labels: Sequence[str],
              path: str | Path, frame_shift: float = 0.02, title: str = "") -> Path:
    """Activations, reference roll and thresholded roll for one clip."""
    T = y.shape[1]
    extent = (0, T * frame_shift, len(labels) - 0.5, -0.5)
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(3, 1, figsize=(8, 1.2 + 0.9 * len(labels)), sharex=True)
        for ax, data, name in zip(axes, (y, ref_roll, hyp_roll), ("activation", "reference", "detected")):
            ax.imshow(data, aspect="auto", interpolation="nearest", vmin=0, vmax=1, cmap="magma", extent=extent)
            ax.set_yticks(range(len(labels)))
            ax.set_yticklabels(labels)
            ax.set_ylabel(name)
        axes[-1].set_xlabel("time [s]")
        if title:
            axes[0].set_title(title)
        fig.tight_layout()
        return _save(fig, path)


def event_scores(scores, path: str | Path) -> Path:
    labels = [s.label for s in scores]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(max(4, 0.45 * len(labels) + 1.5), 3))
        ax.bar(range(len(labels)), [s.f1 for s in scores], color="C0")
        ax.set_xticks(range(len(labels)))
        ax.set_xticklabels(labels, rotation=60, ha="right")
        ax.set_ylabel("segment F1 [%]")
        ax.set_ylim(0, 100)
        fig.tight_layout()
        return _save(fig, path)
