"""Figures for training logs and evaluation reports (rendered off-screen)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

BLUE = "#2166ac"
ORANGE = "#e66101"
GREY = "#777777"

# no timestamps in the files, so identical inputs give identical bytes
_META = {"png": {"Software": None}, "svg": {"Date": None}, "pdf": {"CreationDate": None, "ModDate": None}}


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fmt = path.suffix.lstrip(".").lower() or "png"
    fig.savefig(path, dpi=120, metadata=_META.get(fmt), format=fmt)
    plt.close(fig)
    return path


def plot_losses(history, path, title="joint training"):
    """history rows are (epoch, L_S, L_T, L)."""
    ep = [r[0] for r in history]
    mk = "o" if len(ep) <= 30 else None  # short runs still show their points
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(ep, [r[1] for r in history], color=BLUE, marker=mk, ms=3, label="L_S (source)")
    ax.plot(ep, [r[2] for r in history], color=ORANGE, marker=mk, ms=3, label="L_T (target)")
    ax.plot(ep, [r[3] for r in history], color=GREY, ls="--", marker=mk, ms=3, label="L (joint)")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss per sentence")
    ax.set_title(title)
    ax.legend(frameon=False)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    return _save(fig, path)


def plot_eval(report, path, baseline=None, title="evaluation"):
    """Bars for content similarity / p / r / transfer accuracy, with the Random baseline beside."""
    keys = ["content_similarity", "p", "r", "transfer_accuracy"]
    labels = ["CS", "p", "r", "R_T"]
    d = report.as_dict()
    vals = [d.get(k, 0.0) for k in keys]
    fig, ax = plt.subplots(figsize=(6, 4))
    x = list(range(len(keys)))
    w = 0.38 if baseline is not None else 0.6
    ax.bar([i - (w / 2 if baseline is not None else 0) for i in x], vals, w, color=BLUE, label="model")
    if baseline is not None:
        b = baseline.as_dict()
        ax.bar([i + w / 2 for i in x], [b.get(k, 0.0) for k in keys], w, color=GREY, label="Random")
        ax.legend(frameon=False)
    ax.set_xticks(x)
    ax.set_xticklabels(labels)
    ax.set_ylim(0, 1.05)
    ax.set_title(title)
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    return _save(fig, path)
