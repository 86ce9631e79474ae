"""Figure rendering for the report paths.

Every command that writes a delimited report also drops a matching PNG next
to it: metric bars for evaluations, per-term loss curves for training runs,
and grouped bars for ablation grids.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .metrics import METRIC_COLUMNS  # noqa: E402

_NAMES = {"bleu1": "BLEU1", "bleu2": "BLEU2", "bleu3": "BLEU3", "bleu4": "BLEU4",
          "rouge_l": "ROUGE-L", "cider": "CIDEr"}


def save_metric_bars(scores: dict, path, title: str = "caption metrics") -> Path:
    path = Path(path)
    cols = [c for c in METRIC_COLUMNS if c in scores]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.bar(range(len(cols)), [scores[c] for c in cols], color="#3b6ea5")
    ax.set_xticks(range(len(cols)))
    ax.set_xticklabels([_NAMES[c] for c in cols])
    ax.set_ylabel("score")
    ax.set_title(title)
    for i, c in enumerate(cols):
        ax.text(i, scores[c], f"{scores[c]:.3f}", ha="center", va="bottom", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_loss_curves(logs, path, title: str = "training loss") -> Path:
    """Per-term curves from a list of StepLog records."""
    path = Path(path)
    steps = [l.step for l in logs]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(steps, [l.total for l in logs], label="total", lw=1.5)
    ax.plot(steps, [l.ce for l in logs], label="cross-entropy", lw=1.0)
    for field, label in (("periodicity", "periodicity"),
                         ("aperiodicity", "aperiodicity"),
                         ("orthogonality", "orthogonality")):
        vals = [getattr(l, field) for l in logs]
        if any(v != 0 for v in vals):
            ax.plot(steps, vals, label=label, lw=0.8, alpha=0.8)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_ablation_bars(rows: list[dict], metric: str, path,
                       title: str | None = None) -> Path:
    """Grouped bars: one bar per grid cell, labelled by its configuration."""
    path = Path(path)
    labels = [r["label"] for r in rows]
    values = [r.get(metric) for r in rows]
    fig, ax = plt.subplots(figsize=(max(6, 1.1 * len(rows)), 4))
    xs = range(len(rows))
    bars = ax.bar(xs, [v if v is not None else 0.0 for v in values], color="#3b6ea5")
    for bar, v in zip(bars, values):
        if v is None:
            bar.set_color("#c45050")
            bar.set_height(0.001)
    ax.set_xticks(list(xs))
    ax.set_xticklabels(labels, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel(_NAMES.get(metric, metric))
    ax.set_title(title or f"ablation ({_NAMES.get(metric, metric)})")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
