"""Figure rendering for CLI outputs.

Each CLI report path writes a PNG next to its delimited output: bound
tables get the quantile curve, estimate runs a replication histogram with
the normal reference, and diagnostic reports a per-cell summary chart.
"""
from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = ["bound_figure", "estimates_figure", "report_figure"]


def bound_figure(table: np.ndarray, path: str, title: str) -> None:
    """Plot the (u, K^{-1}(u)) quantile curve of a spread bound."""
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(table[:, 0], table[:, 1], lw=1.5)
    ax.set_xlabel("u")
    ax.set_ylabel(r"$K^{-1}(u)$")
    ax.set_title(title)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def estimates_figure(estimates: np.ndarray, theta, path: str, title: str) -> None:
    """Histogram of first-coordinate estimates with a normal overlay."""
    z = np.asarray(estimates, dtype=float)
    z = z[:, 0] if z.ndim == 2 else z
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.hist(z, bins=min(60, max(10, z.size // 20)), density=True, alpha=0.6)
    mu, sd = float(np.mean(z)), float(np.std(z, ddof=1))
    if sd > 0:
        xs = np.linspace(mu - 4 * sd, mu + 4 * sd, 200)
        ax.plot(
            xs,
            np.exp(-0.5 * ((xs - mu) / sd) ** 2) / (sd * math.sqrt(2 * math.pi)),
            "k--",
            lw=1,
        )
    if theta is not None:
        ax.axvline(float(np.atleast_1d(theta)[0]), color="C3", lw=1, label="truth")
        ax.legend()
    ax.set_title(title)
    ax.set_xlabel("estimate")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def report_figure(report, path: str) -> None:
    """One panel per cell group: value vs n where n varies, else bars."""
    groups = {}
    for c in report.cells:
        groups.setdefault(c["cell"], []).append(c)
    names = list(groups)
    fig, axes = plt.subplots(
        1, max(len(names), 1), figsize=(4 * max(len(names), 1), 3.5), squeeze=False
    )
    for ax, name in zip(axes[0], names):
        cells = groups[name]
        ns = {c["n"] for c in cells}
        if len(ns) > 1 and None not in ns:
            stats = {}
            for c in cells:
                stats.setdefault(c["statistic"], []).append((c["n"], c["value"]))
            for stat, pts in stats.items():
                pts.sort()
                ax.loglog([p[0] for p in pts], [max(p[1], 1e-300) for p in pts],
                          "o-", label=stat)
            ax.set_xlabel("n")
            ax.legend(fontsize=7)
        else:
            vals = [c["value"] for c in cells]
            labels = [c["statistic"] for c in cells]
            ax.bar(range(len(vals)), vals)
            targets = [c["target"] for c in cells]
            if any(t is not None for t in targets):
                ax.plot(range(len(vals)), [t if t is not None else np.nan for t in targets],
                        "k_", markersize=14, label="target")
                ax.legend(fontsize=7)
            ax.set_xticks(range(len(vals)))
            ax.set_xticklabels(labels, rotation=60, fontsize=6, ha="right")
        ax.set_title(name, fontsize=9)
    status = "PASS" if report.all_passed else "FAIL"
    fig.suptitle(f"{report.experiment_id} [{status}]", fontsize=11)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
