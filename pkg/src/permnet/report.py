"""Figure rendering for CLI reports: loss curves, parity scatter plots and
sensitivity box plots, written next to the machine-readable outputs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def save_loss_curves(history, path) -> None:
    """history: list of {epoch, train_loss, val_loss} dicts."""
    epochs = [h["epoch"] for h in history]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.semilogy(epochs, [h["train_loss"] for h in history], label="train")
    val = [h.get("val_loss") for h in history]
    if any(v is not None and np.isfinite(v) for v in val):
        ax.semilogy(epochs, val, label="validation")
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean loss (scaled)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_parity_plot(targets, predictions, path, title=None) -> None:
    targets = np.asarray(targets, dtype=float)
    predictions = np.asarray(predictions, dtype=float)
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.scatter(targets, predictions, s=14, alpha=0.7)
    lo = min(targets.min(), predictions.min())
    hi = max(targets.max(), predictions.max())
    ax.plot([lo, hi], [lo, hi], "g--", linewidth=1, label="1:1")
    ax.set_xlabel("true permeability [m$^2$]")
    ax.set_ylabel("predicted permeability [m$^2$]")
    if title:
        ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_sensitivity_boxplot(rows, path, title) -> None:
    """rows: FeatureSummary list; renders precomputed box statistics."""
    stats = [{
        "label": r.feature,
        "med": r.median,
        "q1": r.q25,
        "q3": r.q75,
        "whislo": r.lo_whisker,
        "whishi": r.hi_whisker,
        "fliers": [],
    } for r in rows]
    fig, ax = plt.subplots(figsize=(max(6, 0.7 * len(rows)), 4.5))
    ax.bxp(stats, showfliers=False)
    ax.axhline(0.0, color="grey", linewidth=0.8)
    ax.set_ylabel(r"$\partial K / \partial z$ [m$^2$]")
    ax.set_title(title)
    ax.tick_params(axis="x", rotation=75)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
