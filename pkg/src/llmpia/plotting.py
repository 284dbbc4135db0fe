"""Figure rendering for the CLI report paths (headless, deterministic PNGs)."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

# Fixed metadata so identical inputs produce identical files.
_PNG_META = {"Software": None}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)
    return path


def class_histogram(counts: Mapping[str, int], path, title: str = "utterances per class") -> Path:
    labels = list(counts)
    fig, ax = plt.subplots(figsize=(max(4.0, 0.35 * len(labels) + 2), 3.5))
    ax.bar(range(len(labels)), [counts[k] for k in labels], color="#4c72b0")
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=60, ha="right", fontsize=7)
    ax.set_ylabel("count")
    ax.set_title(title)
    return _save(fig, path)


def loss_curves(steps: Sequence[float], series: Mapping[str, Sequence[float]], path,
                title: str = "loss", xlabel: str = "step") -> Path:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for name, values in series.items():
        ax.plot(steps, values, label=name, linewidth=1.2)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("value")
    ax.set_title(title)
    ax.legend(fontsize=8)
    return _save(fig, path)


def metric_bars(names: Sequence[str], values: Sequence[float], path,
                ylabel: str = "accuracy", title: str = "similarity sweep") -> Path:
    fig, ax = plt.subplots(figsize=(7, 3.5))
    ax.bar(range(len(names)), values, color="#55a868")
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=45, ha="right", fontsize=8)
    ax.set_ylim(0.0, 1.0)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    return _save(fig, path)


def grouped_lines(groups: Mapping[str, tuple[Sequence[float], Sequence[float]]], path,
                  xlabel: str, ylabel: str, title: str) -> Path:
    """One line per group; each group is ``(xs, ys)``."""
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for name, (xs, ys) in groups.items():
        ax.plot(xs, ys, marker="o", label=name)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_ylim(0.0, 1.05)
    ax.set_title(title)
    ax.legend(fontsize=8)
    return _save(fig, path)
