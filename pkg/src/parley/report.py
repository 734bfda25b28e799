"""Figure rendering for training logs and evaluation reports.

Every CLI path that writes a delimited report (JSONL loss log, JSON metrics)
can drop a companion PNG next to it; these helpers do the drawing.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be pinned first)

LOSS_KEYS = ("total", "l_mask", "l_rc", "l_kl", "l_bow")


def render_loss_figure(records: list[dict], path: str) -> None:
    """Per-component loss curves over optimizer steps."""
    fig, ax = plt.subplots(figsize=(7, 4))
    for key in LOSS_KEYS:
        points = [(rec["step"], rec[key]) for rec in records if key in rec]
        if points:
            steps, values = zip(*points)
            ax.plot(steps, values, label=key, linewidth=1.2)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_title("training loss")
    ax.legend(loc="upper right", fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_metrics_figure(report: dict, path: str) -> None:
    """Bar chart of the scalar metrics in an evaluation report."""
    items = [(k, v) for k, v in report.items() if isinstance(v, float)]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    names = [k for k, _ in items]
    values = [v for _, v in items]
    bars = ax.bar(names, values, color="#4878cf")
    for bar, value in zip(bars, values):
        ax.text(bar.get_x() + bar.get_width() / 2, bar.get_height(), f"{value:.3f}",
                ha="center", va="bottom", fontsize=8)
    ax.set_ylim(0, max(1.0, max(values, default=1.0) * 1.15))
    ax.set_ylabel("score")
    ax.set_title(f"evaluation over {report.get('num_pairs', '?')} pairs")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
