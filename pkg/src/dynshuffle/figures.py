"""Matplotlib renders written next to the delimited outputs.

Two report figures: convergence curves from a metrics CSV, and the sampled
binary shuffle matrices drawn as black dots on white.
"""

from __future__ import annotations

import csv

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def read_metrics_csv(path: str) -> dict[str, np.ndarray]:
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        return {}
    return {key: np.asarray([float(r[key]) for r in rows]) for key in rows[0]}


def render_convergence(metrics_csv: str, out_png: str, title: str = ""):
    """Loss and accuracy curves over epochs, one panel each."""
    cols = read_metrics_csv(metrics_csv)
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.4))
    if cols:
        epochs = cols["epoch"]
        ax1.plot(epochs, cols["train_ce"], label="train CE", color="tab:blue")
        if np.any(cols["train_reg"] > 0):
            ax1.plot(epochs, cols["train_reg"], label="reg", color="tab:orange")
        ax1.set_xlabel("epoch")
        ax1.set_ylabel("loss")
        ax1.legend(fontsize=8)
        ax2.plot(epochs, 100 * cols["train_acc"], label="train", color="tab:blue")
        ax2.plot(epochs, 100 * cols["test_acc_top1"], label="test top-1",
                 color="tab:red")
        ax2.set_xlabel("epoch")
        ax2.set_ylabel("accuracy (%)")
        ax2.legend(fontsize=8)
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(out_png, dpi=140)
    plt.close(fig)
    return out_png


def render_matrix_grid(named_matrices, out_png: str, max_cells: int = 12):
    """Binary matrices as black-dot rasters, a few per row."""
    items = list(named_matrices)[:max_cells]
    if not items:
        items = [("empty", np.zeros((1, 1)))]
    cols = min(4, len(items))
    rows = -(-len(items) // cols)
    fig, axes = plt.subplots(rows, cols, figsize=(2.4 * cols, 2.6 * rows),
                             squeeze=False)
    for ax in axes.flat:
        ax.axis("off")
    for ax, (name, mat) in zip(axes.flat, items):
        ax.imshow(np.asarray(mat), cmap="gray_r", interpolation="nearest")
        ax.set_title(name, fontsize=7)
        ax.axis("on")
        ax.set_xticks([])
        ax.set_yticks([])
    fig.tight_layout()
    fig.savefig(out_png, dpi=140)
    plt.close(fig)
    return out_png
