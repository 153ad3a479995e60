"""Matplotlib figures written next to the CSV outputs (Agg backend, files only)."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from . import render  # noqa: E402


def plot_step_l2(report, path) -> None:
    """Per-step l2 for every variant; the forecast region is shaded."""
    fig, ax = plt.subplots(figsize=(6, 3.5))
    obs = report.config.get("observed", 0)
    for r in report.rows:
        steps = np.arange(1, len(r.step_l2) + 1)
        ax.plot(steps, r.step_l2, marker="o", ms=3, label=r.variant)
    if report.rows and obs:
        ax.axvspan(obs + 0.5, len(report.rows[0].step_l2) + 0.5, color="0.9", zorder=0)
    ax.set_xlabel("step")
    ax.set_ylabel("normalized l2")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_loss(steps, losses, path, window: int = 100) -> None:
    from .train import moving_average

    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(steps, losses, lw=0.5, color="0.7", label="loss")
    ax.plot(steps, moving_average(losses, window), color="C0", label=f"MA({window})")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_heatmaps(heat: np.ndarray, path, truth=None, roles=None) -> None:
    """Grid of heatmaps, one row per agent and one column per step.

    heat: (S, K, G). ``truth`` (S, K, 2) marks the true positions.
    """
    s, k, _ = heat.shape
    fig, axes = plt.subplots(k, s, figsize=(1.3 * s, 1.0 * k + 0.3), squeeze=False)
    for t in range(s):
        for a in range(k):
            ax = axes[a, t]
            ax.imshow(heat[t, a].reshape(render.GRID_ROWS, render.GRID_COLS), cmap="magma",
                      extent=(0, 1, 1, 0), interpolation="nearest")
            if truth is not None:
                ax.plot(truth[t, a, 0], truth[t, a, 1], "c+", ms=5)
            ax.set_xticks([])
            ax.set_yticks([])
            if a == 0:
                ax.set_title(f"t{t + 1}", fontsize=7)
            if t == 0 and roles is not None:
                ax.set_ylabel(roles[a], fontsize=6)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
