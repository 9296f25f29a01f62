"""Figures written next to the text reports (PNG, non-interactive backend)."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path)
    plt.close(fig)
    return path


def similarity_histogram_figure(counts: np.ndarray, edges: np.ndarray, title: str, path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.0, 2.6))
        ax.bar(edges[:-1], counts, width=np.diff(edges), align="edge", color="#4c72b0",
               edgecolor="white", linewidth=0.5)
        ax.set_xlabel("cosine similarity")
        ax.set_ylabel("same-class texts in top 10")
        ax.set_title(title)
        return _save(fig, path)


def confusion_figure(confusion: np.ndarray, classes: Sequence[str], path, title: str = "") -> Path:
    with plt.rc_context(STYLE):
        n = len(classes)
        fig, ax = plt.subplots(figsize=(1.0 + 0.7 * n, 0.8 + 0.7 * n))
        ax.imshow(confusion, cmap="Blues")
        ax.set_xticks(range(n), classes, rotation=45, ha="right")
        ax.set_yticks(range(n), classes)
        ax.set_xlabel("predicted")
        ax.set_ylabel("true")
        hi = confusion.max() if confusion.size else 0
        for i in range(n):
            for j in range(n):
                ax.text(j, i, int(confusion[i, j]), ha="center", va="center", fontsize=7,
                        color="white" if confusion[i, j] > hi / 2 else "black")
        if title:
            ax.set_title(title)
        return _save(fig, path)


def training_curve_figure(metrics: Sequence[dict], path) -> Path:
    steps = [m["step"] for m in metrics]
    with plt.rc_context(STYLE):
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(7.0, 2.6))
        ax1.plot(steps, [m["loss_total"] for m in metrics], lw=1, label="total")
        ax1.plot(steps, [m["loss_v2t"] for m in metrics], lw=0.6, alpha=0.7, label="image to text")
        ax1.plot(steps, [m["loss_t2v"] for m in metrics], lw=0.6, alpha=0.7, label="text to image")
        ax1.set_xlabel("step")
        ax1.set_ylabel("loss")
        ax1.legend(frameon=False)
        ax2.plot(steps, [m["tau"] for m in metrics], lw=1, color="#dd8452")
        ax2.set_xlabel("step")
        ax2.set_ylabel("temperature")
        return _save(fig, path)
