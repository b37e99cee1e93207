"""Report rendering: aligned text tables, CSV, and matplotlib figures."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def format_table(headers: list[str], rows: list[list]) -> str:
    cells = [[str(h) for h in headers]] + [[str(c) for c in row] for row in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(headers))]
    lines = []
    for j, row in enumerate(cells):
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
        if j == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def write_csv(path: Path, headers: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(headers)
        writer.writerows(rows)


def save_training_curve(stats, path: Path) -> None:
    epochs = [s.epoch for s in stats]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(epochs, [s.mean_loss for s in stats], marker="o", label="train loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean loss")
    holdout = [(s.epoch, s.holdout_accuracy) for s in stats if s.holdout_accuracy is not None]
    if holdout:
        ax2 = ax.twinx()
        ax2.plot(*zip(*holdout), marker="s", color="tab:orange", label="holdout acc")
        ax2.set_ylabel("holdout accuracy")
        ax2.set_ylim(0, 1)
    ax.legend(loc="upper right")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_fold_accuracies(accs: list[float], mean_acc: float, path: Path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(range(len(accs)), accs, color="tab:blue")
    ax.axhline(mean_acc, color="tab:red", linestyle="--", label=f"mean {mean_acc:.4f}")
    ax.set_xlabel("fold")
    ax.set_ylabel("test accuracy")
    ax.set_ylim(0, 1)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_accuracy_vs_classes(class_counts: list[int], accs: list[float],
                             label: str, path: Path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(class_counts, accs, marker="o", label=label)
    ax.set_xlabel("surrogate classes")
    ax.set_ylabel("mean test accuracy")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_proposal_histogram(counts, path: Path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.hist(counts, bins=min(40, max(5, len(set(counts)))), color="tab:green")
    ax.set_xlabel("proposals per image")
    ax.set_ylabel("images")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
