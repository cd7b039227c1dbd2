"""PNG figures rendered next to the CSV tables (opt-in with ``--figures``)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (6.4, 4.0),
    "figure.dpi": 120,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.frameon": False,
    "font.size": 9,
}


def _semilogy(ax, k, y, label):
    y = np.asarray(y, dtype=float)
    ok = np.isfinite(y) & (y > 0)
    ax.semilogy(np.asarray(k)[ok], y[ok], label=label, lw=1.2)


def trajectory_figure(metrics, path, title=None):
    """Solution error and constraint violation of one run, log scale."""
    k = [m.k for m in metrics]
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 2, figsize=(9, 3.6))
        _semilogy(axes[0], k, [m.solution_error for m in metrics], "solution error")
        _semilogy(axes[1], k, [m.constraint_violation for m in metrics], "constraint violation")
        for ax, lab in zip(axes, ("solution error", "constraint violation")):
            ax.set_xlabel("iteration k")
            ax.set_ylabel(lab)
        if title:
            fig.suptitle(title)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return path


def comparison_figure(series, path, ylabel="solution error", title=None):
    """One log-scale line per labelled series; ``series`` maps label -> (k, values)."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for label, (k, y) in series.items():
            _semilogy(ax, k, y, label)
        ax.set_xlabel("iteration k")
        ax.set_ylabel(ylabel)
        ax.legend()
        if title:
            ax.set_title(title)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return path
