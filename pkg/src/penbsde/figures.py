"""Matplotlib figures rendered next to the CSV reports."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def save(fig, path: str) -> None:
    fig.savefig(path, dpi=130, bbox_inches="tight")
    plt.close(fig)


def penalty_convergence(report) -> "plt.Figure":
    """Y^j_0 against the penalty level, with Monte Carlo error bars."""
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    js = np.asarray(report.schedule, dtype=float)
    ax1.errorbar(js, report.y0_by_j, yerr=3 * report.stderr_by_j, fmt="o-", capsize=3)
    ax1.axhline(report.limit_estimate, color="gray", ls="--", lw=1, label="limit estimate")
    ax1.set_xscale("log", base=2)
    ax1.set_xlabel("penalty level j")
    ax1.set_ylabel("$Y_0^j$")
    ax1.set_title(f"{report.model_name}: value vs penalty")
    ax1.legend()
    ax2.semilogx(js, report.q_mean_by_j, "s-", base=2, label="mean $q^+$")
    ax2.semilogx(js, report.q_max_by_j, "^--", base=2, label="max $q^+$")
    ax2.set_xlabel("penalty level j")
    ax2.set_ylabel("constraint violation")
    ax2.legend()
    fig.tight_layout()
    return fig


def policy_gap(model_name, j, y0, y0_se, strong, weak) -> "plt.Figure":
    fig, ax = plt.subplots(figsize=(5, 3.5))
    labels = ["$Y_0^j$", "strong MC", "weak MC"]
    vals = [y0, strong.estimate, weak.estimate]
    errs = [3 * y0_se, 3 * strong.stderr, 3 * weak.stderr]
    ax.errorbar(range(3), vals, yerr=errs, fmt="o", capsize=4)
    ax.set_xticks(range(3), labels)
    ax.set_ylabel("value")
    ax.set_title(f"{model_name}: extracted policy at j={j:g}")
    fig.tight_layout()
    return fig


def facelift_gaps(model_name, m_values, gaps_h, gaps_lift) -> "plt.Figure":
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(m_values, gaps_h, "o-", label="terminal h")
    ax.plot(m_values, gaps_lift, "s-", label="face-lifted terminal")
    ax.set_xlabel("time steps m")
    ax.set_ylabel("pre-terminal gap")
    ax.set_title(f"{model_name}: terminal jump diagnostic")
    ax.legend()
    fig.tight_layout()
    return fig


def oracle_compare(model_name, bsde_limit, hjb_value, dp_value=None, coarse_value=None):
    fig, ax = plt.subplots(figsize=(5, 3.5))
    labels = ["BSDE limit", "HJB FD"]
    vals = [bsde_limit, hjb_value]
    if dp_value is not None:
        labels.append("tiny DP")
        vals.append(dp_value)
    if coarse_value is not None:
        labels.append("coarse BSDE")
        vals.append(coarse_value)
    ax.bar(labels, vals, color="tab:blue", alpha=0.8)
    for i, v in enumerate(vals):
        ax.text(i, v, f"{v:.4f}", ha="center", va="bottom" if v >= 0 else "top")
    ax.set_ylabel("value at $(0, x_0)$")
    ax.set_title(f"{model_name}: solver vs oracles")
    fig.tight_layout()
    return fig
