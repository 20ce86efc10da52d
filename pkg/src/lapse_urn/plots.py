"""Figure rendering for the CLI report paths.

Each function takes already-computed report data and writes one PNG next to
the delimited output.  Rendering is optional (``--plot``); the CSV/JSON files
remain the canonical outputs and are byte-identical with or without figures.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = [
    "plot_trajectory",
    "plot_exact_distribution",
    "plot_phase",
    "plot_fluctuation_histogram",
]

_REGIME_COLORS = {
    "diffusive": "#1f77b4",
    "critical": "#d62728",
    "superdiffusive": "#ff7f0e",
    "degenerate": "#7f7f7f",
    "lln_violated": "#000000",
}


def plot_trajectory(states, path, title=None):
    """State-space path (R, B) with the symmetric diagonal for reference."""
    R = np.array([s[0] for s in states])
    B = np.array([s[1] for s in states])
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.plot(R, B, lw=0.8, color="#1f77b4")
    ax.plot(R[0], B[0], "ko", ms=4)
    lim = max(R.max(), B.max())
    ax.plot([0, lim], [0, lim], ls=":", color="green", lw=0.8)
    ax.set_xlabel("red balls R")
    ax.set_ylabel("blue balls B")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_exact_distribution(support, probs, path, title=None):
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.vlines(support, 0, probs, color="#1f77b4", lw=1.2)
    ax.plot(support, probs, ".", color="#1f77b4", ms=3)
    ax.set_xlabel("R")
    ax.set_ylabel("probability")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_phase(grid_rows, curve_rows, path, title=None):
    """Regime map over (theta, p) with the critical curve overlaid."""
    fig, ax = plt.subplots(figsize=(5.5, 4.5))
    tags = sorted({row["regime"] for row in grid_rows})
    for tag in tags:
        th = [row["theta"] for row in grid_rows if row["regime"] == tag]
        pp = [row["p"] for row in grid_rows if row["regime"] == tag]
        ax.scatter(th, pp, s=8, color=_REGIME_COLORS.get(tag, "gray"), label=tag)
    if curve_rows:
        ax.plot([r["theta"] for r in curve_rows], [r["p_c"] for r in curve_rows],
                color="red", lw=1.5, label="critical curve")
    ax.set_xlabel("theta")
    ax.set_ylabel("p")
    ax.set_xlim(-0.02, 1.02)
    ax.set_ylim(-0.02, 1.02)
    ax.legend(fontsize=7, loc="lower left")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_fluctuation_histogram(samples, sigma_target, path, title=None):
    """Scaled-fluctuation histogram with the Gaussian target density."""
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.hist(samples, bins=80, density=True, color="#9ecae1", edgecolor="none")
    sd = np.sqrt(sigma_target)
    xs = np.linspace(-4 * sd, 4 * sd, 200)
    ax.plot(xs, np.exp(-xs ** 2 / (2 * sd * sd)) / (sd * np.sqrt(2 * np.pi)),
            color="#d62728", lw=1.2, label="Gaussian target")
    ax.set_xlabel("scaled red fluctuation")
    ax.set_ylabel("density")
    ax.legend(fontsize=8)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
