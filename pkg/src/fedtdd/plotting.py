"""Figures written next to the CSV reports (Agg backend, PNG)."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "legend.frameon": False,
    "savefig.dpi": 120,
}

REGIME_COLORS = {
    "fedtdd": "#1b9e77",
    "centralized_star": "#7570b3",
    "centralized": "#d95f02",
    "local": "#e7298a",
    "pretrained": "#66a61e",
}


def _save(fig, path: Path) -> Path:
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_real_vs_synthetic(path: str | Path, real: np.ndarray, synth: np.ndarray,
                           feature_ids: Sequence[int], title: str, n_show: int = 5) -> Path:
    """One panel per channel: a few real windows against a few synthetic ones."""
    c = real.shape[2]
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, c, figsize=(2.4 * c, 2.2), sharey=True, squeeze=False)
        steps = np.arange(real.shape[1])
        for k, ax in enumerate(axes[0]):
            for i in range(min(n_show, len(real))):
                ax.plot(steps, real[i, :, k], color="0.35", lw=0.8,
                        label="real" if i == 0 else None)
            for i in range(min(n_show, len(synth))):
                ax.plot(steps, synth[i, :, k], color="#1b9e77", lw=0.8, alpha=0.8,
                        label="synthetic" if i == 0 else None)
            ax.set_title(f"feature {feature_ids[k]}")
            ax.set_xlabel("step")
        axes[0][0].legend(loc="best")
        fig.suptitle(title)
        fig.tight_layout()
        return _save(fig, Path(path))


def plot_metric_bars(path: str | Path, summary: Mapping[str, Mapping[str, float]]) -> Path:
    regimes = list(summary)
    metrics = list(next(iter(summary.values())))
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(metrics), figsize=(2.6 * len(metrics), 2.6), squeeze=False)
        for ax, m in zip(axes[0], metrics):
            vals = [summary[r][m] for r in regimes]
            ax.bar(range(len(regimes)), vals,
                   color=[REGIME_COLORS.get(r, "0.5") for r in regimes])
            ax.set_xticks(range(len(regimes)))
            ax.set_xticklabels(regimes, rotation=45, ha="right")
            ax.set_title(m)
        fig.tight_layout()
        return _save(fig, Path(path))


def plot_round_trace(path: str | Path, rounds: Sequence[int], client_ids: Sequence[int],
                     values: Sequence[float], ylabel: str) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(3.6, 2.6))
        for cid in sorted(set(client_ids)):
            xs = [r for r, c in zip(rounds, client_ids) if c == cid]
            ys = [v for v, c in zip(values, client_ids) if c == cid]
            ax.plot(xs, ys, marker="o", lw=1, label=f"client {cid}")
        ax.set_xlabel("round")
        ax.set_ylabel(ylabel)
        ax.legend(loc="best")
        fig.tight_layout()
        return _save(fig, Path(path))
