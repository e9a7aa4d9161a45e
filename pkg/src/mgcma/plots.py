"""Figure rendering for reports.

Every CLI path that writes a delimited report also renders a figure next to
it: loss/accuracy curves for training logs, grouped bars for ablation
tables, a heatmap for confusion matrices, and a 2-D projection for
embedding exports. Rendering is headless and file-only.
"""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .metrics import MetricsReport
from .pipeline import EMOTION_NAMES


def render_training_curves(log, path) -> None:
    """Loss terms on the left axis, train WA/UA on the right."""
    epochs = [r["epoch"] for r in log]
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for key, style in (("total", "-"), ("l_ce", "--"), ("l_da", ":"), ("l_ia", "-.")):
        ax.plot(epochs, [r[key] for r in log], style, label=key)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax2 = ax.twinx()
    ax2.plot(epochs, [r["train_wa"] for r in log], color="tab:green", label="train_wa")
    ax2.plot(epochs, [r["train_ua"] for r in log], color="tab:olive", label="train_ua")
    ax2.set_ylabel("accuracy")
    ax2.set_ylim(0.0, 1.05)
    lines, labels = ax.get_legend_handles_labels()
    lines2, labels2 = ax2.get_legend_handles_labels()
    ax.legend(lines + lines2, labels + labels2, loc="center right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_ablation_bars(rows, path) -> None:
    """Grouped WA/UA bars, one group per ablation system."""
    systems = [row.system for row in rows]
    wa = [row.report.wa for row in rows]
    ua = [row.report.ua for row in rows]
    x = np.arange(len(systems))
    fig, ax = plt.subplots(figsize=(max(6.0, 0.9 * len(systems) + 2), 4))
    ax.bar(x - 0.2, wa, width=0.4, label="WA")
    ax.bar(x + 0.2, ua, width=0.4, label="UA")
    ax.set_xticks(x, systems)
    ax.set_ylim(0.0, 1.05)
    ax.set_ylabel("accuracy")
    ax.legend()
    for xi, row in zip(x, rows):
        ax.text(xi, max(row.report.wa, row.report.ua) + 0.02,
                row.configuration, rotation=90, ha="center", va="bottom", fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_confusion_heatmap(report: MetricsReport, path) -> None:
    confusion = report.confusion
    names = list(EMOTION_NAMES[: confusion.shape[0]])
    fig, ax = plt.subplots(figsize=(5, 4.5))
    image = ax.imshow(confusion, cmap="Blues")
    ax.set_xticks(range(len(names)), names, rotation=45, ha="right")
    ax.set_yticks(range(len(names)), names)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    ax.set_title(f"WA {report.wa:.3f} / UA {report.ua:.3f}")
    threshold = confusion.max() / 2 if confusion.max() else 0.5
    for i in range(confusion.shape[0]):
        for j in range(confusion.shape[1]):
            ax.text(j, i, str(int(confusion[i, j])), ha="center", va="center",
                    color="white" if confusion[i, j] > threshold else "black")
    fig.colorbar(image, ax=ax, shrink=0.8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_embedding_scatter(vectors, labels, modalities, path) -> None:
    """2-D PCA projection, colored by label, marker shape by modality."""
    vectors = np.asarray(vectors, dtype=float)
    centered = vectors - vectors.mean(axis=0, keepdims=True)
    # top-2 principal directions via SVD; no fit/transform machinery needed
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    planar = centered @ vt[:2].T if vectors.shape[1] >= 2 else np.pad(
        centered, ((0, 0), (0, 1))
    )
    labels = np.asarray(labels)
    modalities = np.asarray(modalities)
    fig, ax = plt.subplots(figsize=(6, 5))
    colors = plt.get_cmap("tab10")
    for code, name in enumerate(EMOTION_NAMES):
        for modality, marker in (("speech", "o"), ("text", "^")):
            mask = (labels == name) & (modalities == modality)
            if not np.any(mask):
                continue
            ax.scatter(planar[mask, 0], planar[mask, 1], s=22, marker=marker,
                       color=colors(code), label=f"{name}/{modality}", alpha=0.75)
    ax.set_xlabel("pc1")
    ax.set_ylabel("pc2")
    ax.legend(fontsize=7, ncol=2)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
