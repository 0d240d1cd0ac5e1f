"""Figures written next to the delimited eval/sweep outputs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def save_pr_curves(curves: dict[str, tuple], path: str) -> None:
    """curves: class -> (recall array, precision array)."""
    fig, ax = plt.subplots(figsize=(5, 4))
    for cls, (recall, precision) in sorted(curves.items()):
        ax.plot(recall, precision, marker=".", markersize=3, label=cls)
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.set_xlim(0, 1.02)
    ax.set_ylim(0, 1.02)
    ax.grid(alpha=0.3)
    if curves:
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_sweep_curves(rows: list[dict], path: str) -> None:
    """rows: sweep CSV rows (dicts with jitter_sigma_px, mean_iou, ...)."""
    sigmas = [r["jitter_sigma_px"] for r in rows]
    fig, axes = plt.subplots(1, 3, figsize=(11, 3.2))
    for ax, key in zip(axes, ("mean_iou", "convergence_rate", "mean_steps")):
        ax.plot(sigmas, [r[key] for r in rows], marker="o")
        ax.set_xlabel("jitter sigma (px)")
        ax.set_ylabel(key.replace("_", " "))
        ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
