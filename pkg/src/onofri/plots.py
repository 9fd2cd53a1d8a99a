"""SVG figures for the CLI reports.

Figures are built on a bare ``Figure`` with the Agg canvas, so no global
pyplot state is touched.  Output is byte-stable across runs: the SVG date
stamp is dropped and element ids are salted with a fixed string.
"""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib
import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

__all__ = ["plot_epsilon", "plot_trajectory", "plot_histogram"]

_STYLE = {
    "font.size": 9.0,
    "axes.labelsize": 9.0,
    "legend.fontsize": 8.0,
    "xtick.labelsize": 8.0,
    "ytick.labelsize": 8.0,
    "svg.hashsalt": "onofri",
    "svg.fonttype": "none",
}


def _new_axes(width: float = 5.0, height: float = 3.2):
    fig = Figure(figsize=(width, height))
    FigureCanvasAgg(fig)
    return fig, fig.add_subplot(111)


def _save(fig: Figure, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    return path


def plot_epsilon(eps, G, eps_max: float, path, title: str = "") -> Path:
    """G(eps) with the closed-form maximiser marked."""
    with matplotlib.rc_context(_STYLE):
        fig, ax = _new_axes()
        ax.plot(eps, G, color="0.15", lw=1.2, label=r"$G(\varepsilon)$")
        if math.isfinite(eps_max):
            g_max = float(np.interp(eps_max, eps, G))
            ax.axvline(eps_max, color="tab:red", lw=0.8, ls="--")
            ax.plot([eps_max], [g_max], "o", color="tab:red",
                    label=rf"$\varepsilon_{{max}} = {eps_max:.6g}$")
        ax.axhline(0.0, color="0.6", lw=0.6)
        ax.set_xlabel(r"$\varepsilon$")
        ax.set_ylabel(r"$G(\varepsilon)$")
        if title:
            ax.set_title(title)
        ax.legend(frameon=False)
        return _save(fig, path)


def plot_trajectory(t, l1, path, title: str = "") -> Path:
    """L1 distance to the stationary profile on a log scale."""
    with matplotlib.rc_context(_STYLE):
        fig, ax = _new_axes()
        ax.semilogy(t, np.maximum(l1, 1e-300), color="0.15", lw=1.2)
        ax.set_xlabel("t")
        ax.set_ylabel(r"$\|\rho_t - \mu_2\|_{L^1}$")
        if title:
            ax.set_title(title)
        ax.grid(True, which="major", color="0.9", lw=0.5)
        return _save(fig, path)


def plot_histogram(values, path, xlabel: str = "value", title: str = "", bins: int = 20) -> Path:
    """Histogram of per-trial values with the zero line marked."""
    with matplotlib.rc_context(_STYLE):
        fig, ax = _new_axes()
        ax.hist(np.asarray(values, dtype=float), bins=bins, color="0.55", edgecolor="0.2", lw=0.5)
        ax.axvline(0.0, color="tab:red", lw=0.8, ls="--")
        ax.set_xlabel(xlabel)
        ax.set_ylabel("count")
        if title:
            ax.set_title(title)
        return _save(fig, path)
