"""Figure rendering for the CLI report paths.

Every experiment writes a delimited CSV and a matplotlib figure next to it;
these helpers keep the plotting out of the numeric code.  Figures are
rendered with the Agg backend and fixed metadata so repeated runs produce
identical bytes.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

_SAVEKW = {"dpi": 110, "metadata": {"Software": "rangecollect"}}


def save_moment_figure(rows: list[dict], path: Path):
    """Grouped bars of MAE by method, one panel per target moment."""
    targets = sorted({r["target"] for r in rows})
    fig, axes = plt.subplots(1, len(targets), figsize=(5 * len(targets), 3.5),
                             squeeze=False)
    for ax, target in zip(axes[0], targets):
        sub = [r for r in rows if r["target"] == target]
        labels = [f"{r['method']}\nn={r['n']} out={r['outlier_rate']:g}"
                  for r in sub]
        ax.bar(range(len(sub)), [r["mae"] for r in sub], color="#4878a8")
        ax.set_xticks(range(len(sub)))
        ax.set_xticklabels(labels, fontsize=6, rotation=45, ha="right")
        ax.set_ylabel("MAE")
        ax.set_title(target)
        ax.set_yscale("log")
    fig.tight_layout()
    fig.savefig(path, **_SAVEKW)
    plt.close(fig)


def save_trace_figure(traces: list[list[tuple[int, float]]], path: Path,
                      ylabel: str = "prediction MSE"):
    """Per-seed iteration traces on one axis, with the median highlighted."""
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    for tr in traces:
        its = [t[0] for t in tr]
        vals = [t[1] for t in tr]
        ax.plot(its, vals, color="#bbbbbb", lw=0.7)
    if traces:
        max_it = max(t[-1][0] for t in traces)
        med = []
        for i in range(1, max_it + 1):
            vals = [dict(tr).get(i) for tr in traces]
            vals = [v for v in vals if v is not None]
            if vals:
                med.append((i, sorted(vals)[len(vals) // 2]))
        ax.plot([m[0] for m in med], [m[1] for m in med],
                color="#a04040", lw=2.0, label="median")
        ax.legend()
    ax.set_xlabel("iteration")
    ax.set_ylabel(ylabel)
    fig.tight_layout()
    fig.savefig(path, **_SAVEKW)
    plt.close(fig)


def save_tradeoff_figure(rows: list[dict], path: Path):
    """Prediction error against estimated coverage across anchor scales."""
    rows = sorted(rows, key=lambda r: r["coverage"])
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    ax.errorbar([r["coverage"] for r in rows], [r["mse"] for r in rows],
                yerr=[r["mse_se"] for r in rows], marker="o",
                color="#4878a8", capsize=3)
    for r in rows:
        ax.annotate(f"s={r['scale']:g}", (r["coverage"], r["mse"]),
                    fontsize=7, xytext=(3, 3), textcoords="offset points")
    ax.set_xlabel("privacy coverage")
    ax.set_ylabel("prediction MSE")
    fig.tight_layout()
    fig.savefig(path, **_SAVEKW)
    plt.close(fig)


def save_cdf_figure(jumps: list[tuple[float, float]], path: Path,
                    reference=None):
    """Step plot of an estimated CDF, optionally against a reference curve."""
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    xs = [j[0] for j in jumps]
    fs = [j[1] for j in jumps]
    ax.step([xs[0], *xs], [0.0, *fs], where="post", color="#4878a8",
            label="estimate")
    if reference is not None:
        rx, rf = reference
        ax.plot(rx, rf, color="#a04040", lw=1.0, label="reference")
        ax.legend()
    ax.set_xlabel("value")
    ax.set_ylabel("F")
    ax.set_ylim(-0.02, 1.02)
    fig.tight_layout()
    fig.savefig(path, **_SAVEKW)
    plt.close(fig)
