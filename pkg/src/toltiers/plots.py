"""Figure rendering for evaluation reports."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

_POLICY_STYLE = {
    "Naive-OSFA": dict(color="#c44e52", marker="x"),
    "TT-OSFA": dict(color="#55595c", marker="o"),
    "TT-Opt-Resp-Time": dict(color="#4c72b0", marker="^"),
    "TT-Opt-Cost": dict(color="#55a868", marker="s"),
}


def violations_figure(results, path) -> Path:
    """Specified tolerance (x) versus held-out degradation (y) per fold.

    Points above the diagonal are violations.
    """
    path = Path(path)
    fig, ax = plt.subplots(figsize=(6, 4.5))
    for policy, style in _POLICY_STYLE.items():
        cells = results.select(policy=policy)
        if not cells:
            continue
        ax.scatter(
            [c.tolerance for c in cells],
            [c.actual_degradation for c in cells],
            s=10,
            alpha=0.5,
            label=policy,
            **style,
        )
    hi = max(results.tolerances) if results.tolerances else 0.1
    ax.plot([0, hi], [0, hi], "k--", linewidth=1, label="violation boundary")
    ax.set_xlabel("specified tolerance")
    ax.set_ylabel("held-out error degradation")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def tolerance_curve_figure(results, columns, metric_index, ylabel, path) -> Path:
    """Fold-mean metric versus tolerance, one line per policy."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(6, 4.5))
    for policy, objective in columns:
        ys = [
            results.fold_mean(policy, objective, t)[metric_index]
            for t in results.tolerances
        ]
        style = _POLICY_STYLE.get(policy, {})
        ax.plot(
            results.tolerances,
            ys,
            label=policy,
            markersize=3,
            linewidth=1.2,
            markevery=max(1, len(results.tolerances) // 20),
            **style,
        )
    ax.set_xlabel("tolerance")
    ax.set_ylabel(ylabel)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
