"""Figures written next to the delimited reports."""

from __future__ import annotations

from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def plot_history(history: Sequence[Mapping], path) -> None:
    """Training loss and dev F1 per epoch, side by side."""
    epochs = [r["epoch"] for r in history]
    fig, (ax_loss, ax_f1) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax_loss.plot(epochs, [r["loss"] for r in history], color="tab:blue")
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("train loss")
    ax_f1.plot(epochs, [r["dev_f1"] for r in history], color="tab:green")
    ax_f1.set_xlabel("epoch")
    ax_f1.set_ylabel("dev F1")
    ax_f1.set_ylim(0.0, 1.02)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def plot_params(counts: Mapping[str, int], path) -> None:
    """Horizontal bars of trainable parameters per component."""
    names = list(counts)
    fig, ax = plt.subplots(figsize=(6, 0.45 * len(names) + 1.2))
    ax.barh(names, [counts[n] for n in names], color="tab:gray")
    ax.invert_yaxis()
    ax.set_xlabel("trainable parameters")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
