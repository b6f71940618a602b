"""Figure rendering for the report paths.

Every CLI command that writes delimited output also renders a PNG next to
it: exceed-ratio histograms for eval runs, parameter-sensitivity curves for
sweeps, a train-by-test heat map for the generalization matrix, and the
loss/exceed convergence curve from a training log. PNG metadata is stripped
so reruns are byte-identical.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

__all__ = [
    "save_exceed_hist",
    "save_sweep_plot",
    "save_matrix_plot",
    "save_convergence_plot",
]

_SAVE_KW = dict(dpi=120, metadata={"Software": None})


def save_exceed_hist(values, method: str, dataset: str, path: Path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.hist(list(values), bins=20, range=(0.0, 1.0), color="#4878d0", edgecolor="white")
    ax.set_xlabel("exceed ratio E")
    ax.set_ylabel("scenarios")
    ax.set_title(f"{method} on {dataset} (n={len(values)})")
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def save_sweep_plot(parameter: str, values, median_e, mean_e, path: Path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(values, median_e, "o-", color="#4878d0", label="median E")
    ax.plot(values, mean_e, "s--", color="#ee854a", label="mean E")
    if parameter == "omega" and max(values) > 0 and min(v for v in values if v > 0) < max(values) / 20:
        ax.set_xscale("symlog")
    ax.set_xlabel(parameter)
    ax.set_ylabel("exceed ratio")
    ax.set_ylim(0.0, 1.05)
    ax.legend()
    ax.set_title(f"sensitivity to {parameter}")
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def save_matrix_plot(train_names, test_names, median_e, path: Path) -> None:
    rows = len(train_names)
    cols = len(test_names)
    fig, ax = plt.subplots(figsize=(1.6 + 1.1 * cols, 1.2 + 0.9 * rows))
    im = ax.imshow(median_e, vmin=0.0, vmax=1.0, cmap="viridis")
    ax.set_xticks(range(cols), labels=list(test_names), rotation=30, ha="right")
    ax.set_yticks(range(rows), labels=list(train_names))
    ax.set_xlabel("evaluated on")
    ax.set_ylabel("trained on")
    for r in range(rows):
        for c in range(cols):
            v = median_e[r][c]
            ax.text(c, r, f"{v:.2f}", ha="center", va="center",
                    color="white" if v < 0.6 else "black", fontsize=9)
    fig.colorbar(im, ax=ax, label="median exceed ratio")
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def save_convergence_plot(rows, path: Path) -> None:
    """rows: (epoch, loss, exceed_or_None) tuples from a training log."""
    epochs = [r[0] for r in rows]
    losses = [r[1] for r in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(epochs, losses, color="#4878d0", label="training loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    eval_pts = [(e, x) for e, _, x in rows if x is not None]
    if eval_pts:
        ax2 = ax.twinx()
        ax2.plot(*zip(*eval_pts), "o-", color="#ee854a", label="median exceed ratio")
        ax2.set_ylabel("median exceed ratio")
        ax2.set_ylim(0.0, 1.05)
        lines = ax.get_lines() + ax2.get_lines()
        ax.legend(lines, [ln.get_label() for ln in lines], loc="center right")
    else:
        ax.legend()
    ax.set_title("training convergence")
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
