"""Figures written next to the CSV reports."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 120,
}


def plot_training(records: Sequence, path) -> Path:
    """Three panels: held-out accuracy, training loss, learning rate."""
    path = Path(path)
    steps = [r.step for r in records]
    evals = [r for r in records if r.token_acc is not None]
    with plt.rc_context(STYLE):
        fig, (ax_acc, ax_loss, ax_lr) = plt.subplots(1, 3, figsize=(11, 3.2))
        if evals:
            ax_acc.plot([r.step for r in evals], [r.token_acc for r in evals], "o-", ms=3, label="token")
            ax_acc.plot([r.step for r in evals], [r.exact_match for r in evals], "s--", ms=3, label="exact match")
            ax_acc.legend(frameon=False)
        ax_acc.set_ylim(-0.02, 1.02)
        ax_acc.set_title("evaluation accuracy")
        ax_loss.plot(steps, [r.loss for r in records], lw=0.8)
        ax_loss.set_yscale("log")
        ax_loss.set_title("training loss")
        ax_lr.plot(steps, [r.lr for r in records], lw=0.8)
        ax_lr.set_title("learning rate")
        for ax in (ax_acc, ax_loss, ax_lr):
            ax.set_xlabel("step")
        fig.tight_layout()
        path.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(path)
        plt.close(fig)
    return path


def plot_ablation(rows: Sequence, path) -> Path:
    path = Path(path)
    names = [r.config_name for r in rows]
    x = range(len(rows))
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(7.5, 3.4))
        w = 0.38
        for offset, attr, rng, label in ((-w / 2, "val_accuracy", "val_range", "validation"),
                                         (w / 2, "test_accuracy", "test_range", "test")):
            means = [getattr(r, attr) for r in rows]
            lo = [m - getattr(r, rng)[0] for m, r in zip(means, rows)]
            hi = [getattr(r, rng)[1] - m for m, r in zip(means, rows)]
            ax.bar([i + offset for i in x], means, w, yerr=[lo, hi], capsize=2, label=label)
        ax.set_xticks(list(x))
        ax.set_xticklabels(names, rotation=25, ha="right")
        ax.set_ylim(0, 1.05)
        ax.set_ylabel("token accuracy")
        ax.legend(frameon=False, ncol=2)
        fig.tight_layout()
        path.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(path)
        plt.close(fig)
    return path
