"""Sparsity sweeps from one ranking: CSV rows and a summary figure."""

import csv
import dataclasses

import numpy as np

from .analytics import flops, knn_eval
from .fitness import build_context, similarity
from .pruner import SparsityRequest, extract_mask
from .vit import DEFAULT_CAPS, embed

CSV_FIELDS = ("sparsity", "achieved", "fitness", "knn_acc", "gflops")


@dataclasses.dataclass
class SweepRow:
    sparsity: float
    achieved: float
    fitness: float
    knn_acc: float  # NaN without labels
    gflops: float


def sweep(weights, ranking, census, levels, eval_images, basis="params", caps=DEFAULT_CAPS,
          pca_k=32, knn_train=None, knn_test=None, k=20):
    """Evaluate masks cut from ``ranking`` at each sparsity level.

    ``knn_train`` / ``knn_test`` are labelled datasets; without them the
    accuracy column is NaN.
    """
    ctx = build_context(weights, eval_images, pca_k, grid=(0.0,))
    rows = []
    for s in levels:
        mask, achieved = extract_mask(ranking, SparsityRequest(s, basis), census, caps)
        fit = similarity(ctx, weights, mask)
        acc = float("nan")
        if knn_train is not None and knn_test is not None:
            acc = knn_eval(embed(weights, knn_train.images, mask), knn_train.labels,
                           embed(weights, knn_test.images, mask), knn_test.labels, k)
        rows.append(SweepRow(float(s), achieved, fit, acc, flops(weights.config, mask).gflops))
    return rows


def write_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_FIELDS)
        for r in rows:
            w.writerow([f"{r.sparsity:.4f}", f"{r.achieved:.6f}", f"{r.fitness:.6f}",
                        "nan" if np.isnan(r.knn_acc) else f"{r.knn_acc:.4f}", f"{r.gflops:.6f}"])


def read_csv(path):
    with open(path, newline="") as fh:
        return [SweepRow(*(float(row[f]) for f in CSV_FIELDS)) for row in csv.DictReader(fh)]


def plot_sweep(path, rows, title=None):
    """Fitness and k-NN accuracy against sparsity, GFLOPs on a twin axis."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    s = [r.achieved for r in rows]
    fig, ax = plt.subplots(figsize=(6, 4), dpi=120)
    ax.plot(s, [r.fitness for r in rows], "o-", label="fitness (PCA cosine)")
    acc = [r.knn_acc for r in rows]
    if not all(np.isnan(acc)):
        ax.plot(s, acc, "s-", label="k-NN accuracy")
    ax.set_xlabel("achieved sparsity")
    ax.set_ylabel("score")
    ax.grid(alpha=0.3)
    ax2 = ax.twinx()
    ax2.plot(s, [r.gflops for r in rows], "k--", alpha=0.5, label="GFLOPs")
    ax2.set_ylabel("GFLOPs")
    lines = ax.get_legend_handles_labels()
    lines2 = ax2.get_legend_handles_labels()
    ax.legend(lines[0] + lines2[0], lines[1] + lines2[1], loc="lower left", fontsize=8)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
