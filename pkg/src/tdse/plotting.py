"""Figures for the ``report`` command, rendered to PNG with the Agg backend.

Each function draws one figure from plain arrays; the CSV holding the same
data is written by the caller. PNGs carry no software/time metadata, so
identical inputs give identical bytes.
"""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

PNG_METADATA = {"Software": None}
STYLE = {
    "figure.figsize": (7.0, 4.0),
    "figure.dpi": 100,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "font.size": 9,
    "legend.frameon": False,
}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, format="png", metadata=PNG_METADATA)
    plt.close(fig)
    return path


def plot_accuracy_by_window(windows: Sequence, series: Mapping[str, Sequence[float]], path) -> Path:
    """Test accuracy per window, one line per model."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        x = np.arange(len(windows))
        for name, vals in series.items():
            ax.plot(x, vals, marker="o", ms=3, lw=1.2, label=name)
        ax.set_xticks(x, [str(w) for w in windows])
        ax.set_xlabel("window")
        ax.set_ylabel("test accuracy")
        ax.set_ylim(0.0, 1.0)
        ax.legend(ncol=3, loc="lower right")
        return _save(fig, path)


def plot_schedule(windows: Sequence, kinds: Sequence[str], accuracies: np.ndarray, chosen: Sequence[str],
                  path) -> Path:
    """Validation accuracy heatmap (kinds x windows) with the chosen model circled."""
    acc = np.asarray(accuracies, dtype=float)
    with plt.rc_context({**STYLE, "axes.grid": False}):
        fig, ax = plt.subplots()
        im = ax.imshow(np.ma.masked_invalid(acc), aspect="auto", cmap="viridis", vmin=0.0, vmax=1.0)
        for j, c in enumerate(chosen):
            ax.scatter([j], [list(kinds).index(c)], s=80, facecolors="none", edgecolors="red", lw=1.5)
        ax.set_xticks(range(len(windows)), [str(w) for w in windows])
        ax.set_yticks(range(len(kinds)), list(kinds))
        ax.set_xlabel("window")
        fig.colorbar(im, ax=ax, label="validation accuracy")
        return _save(fig, path)


def plot_equity(curves: Mapping[str, tuple], path) -> Path:
    """Equity curves; ``curves[name] = (dates, values)``."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for name, (dates, values) in curves.items():
            ax.plot(np.asarray(dates, dtype="datetime64[D]"), values, lw=1.2, label=name)
        ax.axhline(1.0, color="0.5", lw=0.8)
        ax.set_ylabel("equity (start = 1)")
        ax.legend()
        fig.autofmt_xdate()
        return _save(fig, path)


def plot_ga_history(history: Sequence[float], path, label: str = "best fitness") -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.step(np.arange(len(history)), history, where="post", lw=1.5, label=label)
        ax.set_xlabel("generation")
        ax.set_ylabel("fitness")
        ax.legend()
        return _save(fig, path)
