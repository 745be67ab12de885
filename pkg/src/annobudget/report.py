"""Figure rendering for run artifacts (file output only)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .evaluation import DIFFICULTY_GROUPS, BudgetCurve

_GROUP_COLORS = {"easy": "#2a9d3f", "medium": "#e0a400", "hard": "#c23030"}
_ANNOTATION_ALPHA = {"weak": 0.45, "strong": 1.0, "upgrade": 0.75}


def save_curve_figure(curve: BudgetCurve, path, title=None) -> None:
    """Budget-mAP curve as a PNG."""
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(curve.budgets, curve.maps, marker="o", ms=3.5, lw=1.2)
    ax.set_xlabel("budget (% of full strong annotation)")
    ax.set_ylabel("mAP")
    ax.set_ylim(0, 1)
    ax.grid(alpha=0.3)
    if title:
        ax.set_title(title)
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)


def save_breakdown_figure(rows, path) -> None:
    """Stacked per-step annotation cost, colored by difficulty group."""
    fig, ax = plt.subplots(figsize=(7, 4))
    steps = sorted({row["step"] for row in rows})
    bottoms = {step: 0.0 for step in steps}
    for group in DIFFICULTY_GROUPS:
        for annotation in ("weak", "upgrade", "strong"):
            heights = []
            for step in steps:
                cost = sum(row["cost"] for row in rows
                           if row["step"] == step and row["group"] == group
                           and row["annotation"] == annotation)
                heights.append(cost)
            if not any(heights):
                continue
            ax.bar(steps, heights, width=0.8,
                   bottom=[bottoms[s] for s in steps],
                   color=_GROUP_COLORS[group],
                   alpha=_ANNOTATION_ALPHA[annotation],
                   label=f"{group} / {annotation}")
            for step, height in zip(steps, heights):
                bottoms[step] += height
    ax.set_xlabel("active step")
    ax.set_ylabel("annotation cost (s)")
    ax.legend(fontsize=7, ncols=2)
    ax.grid(alpha=0.3, axis="y")
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
