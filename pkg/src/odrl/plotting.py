"""Static figures for training curves, metric summaries and the RC / safety trade-off."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def read_csv_rows(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _smooth(y: np.ndarray, window: int) -> np.ndarray:
    if len(y) < window or window <= 1:
        return y
    kernel = np.ones(window) / window
    return np.convolve(y, kernel, mode="valid")


def plot_training_curves(rows: list[dict], path, window: int = 200) -> Path:
    """Critic loss, actor terms and learning rate per phase from training-log rows."""
    fig, axes = plt.subplots(1, 3, figsize=(13, 3.6))
    phases = []
    for r in rows:
        if r["phase"] not in phases:
            phases.append(r["phase"])
    offset = 0
    for phase in phases:
        sub = [r for r in rows if r["phase"] == phase]
        x = offset + np.arange(len(sub))
        offset += len(sub)
        for ax, key in ((axes[0], "critic_loss"), (axes[1], "actor_bc"), (axes[1], "actor_rl")):
            y = np.array([float(r[key]) for r in sub])
            if not np.any(y):
                continue
            ys = _smooth(y, window)
            ax.plot(x[len(x) - len(ys):], ys, label=f"{key} ({phase})", lw=1)
        axes[2].plot(x, [float(r["lr"]) for r in sub], label=phase, lw=1)
    axes[0].set_yscale("symlog", linthresh=1e-3)
    for ax, title in zip(axes, ("critic TD loss", "actor loss terms", "learning rate")):
        ax.set_title(title)
        ax.set_xlabel("update")
        if ax.lines:
            ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return Path(path)


def plot_metrics(summaries: list[dict], path) -> Path:
    """Grouped bars of the headline metrics, one group per report label."""
    keys = ("cr_general", "rc_general", "cr_safety", "src", "jsr")
    fig, ax = plt.subplots(figsize=(max(6, 1.6 * len(summaries) + 3), 3.8))
    width = 0.8 / len(keys)
    x = np.arange(len(summaries))
    for j, k in enumerate(keys):
        ax.bar(x + (j - len(keys) / 2 + 0.5) * width, [float(s[k]) for s in summaries], width, label=k)
    ax.set_xticks(x)
    ax.set_xticklabels([s.get("label") or f"run {i}" for i, s in enumerate(summaries)], rotation=15, fontsize=8)
    ax.set_ylim(0, 1.05)
    ax.legend(fontsize=7, ncol=len(keys))
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return Path(path)


def plot_tradeoff(points, labels, path, title: str = "") -> Path:
    """Scatter of general-suite RC against 1 - CR on the safety suite."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    fig, ax = plt.subplots(figsize=(5, 4.4))
    ax.scatter(pts[:, 0], pts[:, 1], c=np.arange(len(pts)), cmap="viridis", zorder=3)
    for (x, y), lab in zip(pts, labels):
        ax.annotate(str(lab), (x, y), textcoords="offset points", xytext=(4, 4), fontsize=7)
    ax.set_xlabel("RC general")
    ax.set_ylabel("1 - CR safety")
    ax.set_xlim(0, 1.02)
    ax.set_ylim(0, 1.02)
    ax.grid(alpha=0.3)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return Path(path)
