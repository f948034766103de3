"""Figure rendering for run reports.

All figures are written to files (Agg backend); nothing is shown
interactively.  Each renderer takes already-computed records or traces so it
can be pointed at live results or at reloaded CSVs.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .dog import DogTrace, plateau_epoch

__all__ = [
    "render_training_figures",
    "render_dog_figure",
    "render_grid_heatmap",
    "render_prune_figure",
]


def _finite_series(records, key):
    xs, ys = [], []
    for rec in records:
        v = rec.get(key)
        if v is None:
            continue
        xs.append(rec["epoch"])
        ys.append(v)
    return xs, ys


def render_training_figures(path, records: list[dict], cfg=None) -> str:
    """Four-panel training overview: loss, accuracies, weight norm, schedule."""
    fig, axes = plt.subplots(2, 2, figsize=(10, 7))
    ax = axes[0, 0]
    xs, ys = _finite_series(records, "train_xent")
    if ys and min(ys) > 0 and np.isfinite(ys).all():
        ax.semilogy(xs, ys, color="tab:blue")
    else:
        ax.plot(xs, ys, color="tab:blue")
    ax.set_xlabel("epoch")
    ax.set_ylabel("train cross-entropy")
    ax.grid(alpha=0.3)

    ax = axes[0, 1]
    for key, color in [("train_acc", "tab:blue"), ("val_acc", "tab:orange"),
                       ("test_acc", "tab:green"), ("robust_val_acc", "tab:red")]:
        xs, ys = _finite_series(records, key)
        if ys:
            ax.plot(xs, ys, label=key.replace("_", " "), color=color)
    ax.set_xlabel("epoch")
    ax.set_ylabel("accuracy")
    ax.set_ylim(0, 1.02)
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)

    ax = axes[1, 0]
    xs, ys = _finite_series(records, "weight_norm")
    ax.plot(xs, ys, color="tab:purple")
    ax.set_xlabel("epoch")
    ax.set_ylabel("parameter l2 norm")
    ax.grid(alpha=0.3)

    ax = axes[1, 1]
    xs, ys = _finite_series(records, "lr")
    ax.plot(xs, ys, color="tab:gray", label="lr")
    ax.set_ylabel("learning rate")
    ax.set_xlabel("epoch")
    tw = ax.twinx()
    xs, ys = _finite_series(records, "lambda_mean")
    tw.plot(xs, ys, color="tab:brown", label="mean lambda")
    tw.set_ylabel("mean decay coefficient")
    ax.grid(alpha=0.3)

    title = "training run"
    if cfg is not None:
        title = f"{cfg.optimizer_mode} decay on {cfg.dataset_kind}"
    fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return str(path)


def render_dog_figure(path, trace: DogTrace, tol: float, patience: int,
                      estimate: float) -> str:
    """Running mean of the decay/gradient ratio plus the loss plateau view."""
    steps = [r.step for r in trace.rows]
    values = trace.dog_values()
    xs, running = [], []
    total, count = 0.0, 0
    for s, v in zip(steps, values):
        if v is None:
            continue
        total += v
        count += 1
        xs.append(s)
        running.append(total / count)

    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    ax1.plot(xs, running, color="tab:blue", label="running mean ratio")
    ax1.axhline(estimate, color="tab:red", linestyle="--",
                label=f"estimate = {estimate:.4g}")
    ax1.set_xlabel("step")
    ax1.set_ylabel("decay / gradient ratio")
    ax1.legend(fontsize=8)
    ax1.grid(alpha=0.3)

    losses = trace.epoch_mean_xent()
    epochs = trace.epochs()
    plateau = epochs[plateau_epoch(losses, tol=tol, patience=patience)]
    if min(losses) > 0:
        ax2.semilogy(epochs, losses, color="tab:blue")
    else:
        ax2.plot(epochs, losses, color="tab:blue")
    ax2.axvline(plateau, color="tab:red", linestyle="--",
                label=f"plateau epoch = {plateau}")
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("mean train cross-entropy")
    ax2.legend(fontsize=8)
    ax2.grid(alpha=0.3)

    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return str(path)


def render_grid_heatmap(path, grid) -> str:
    """Validation accuracy heatmap over (lr, lambda) with the best cell marked."""
    fig, ax = plt.subplots(figsize=(1.2 * len(grid.lam_values) + 2,
                                    0.8 * len(grid.lr_values) + 2))
    im = ax.imshow(grid.matrix, cmap="viridis", aspect="auto")
    ax.set_xticks(range(len(grid.lam_values)))
    ax.set_xticklabels([f"{v:g}" for v in grid.lam_values], rotation=45, fontsize=8)
    ax.set_yticks(range(len(grid.lr_values)))
    ax.set_yticklabels([f"{v:g}" for v in grid.lr_values], fontsize=8)
    ax.set_xlabel("lambda or dog")
    ax.set_ylabel("learning rate")
    for i in range(len(grid.lr_values)):
        for j in range(len(grid.lam_values)):
            v = grid.matrix[i, j]
            label = "nan" if not np.isfinite(v) else f"{v:.3f}"
            ax.text(j, i, label, ha="center", va="center", fontsize=7,
                    color="white")
    bi = grid.lr_values.index(grid.best[0])
    bj = grid.lam_values.index(grid.best[1])
    ax.add_patch(plt.Rectangle((bj - 0.5, bi - 0.5), 1, 1, fill=False,
                               edgecolor="red", linewidth=2))
    fig.colorbar(im, ax=ax, label="val accuracy")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return str(path)


def render_prune_figure(path, rows: list[tuple], label: str = "") -> str:
    """Accuracy versus sparsity for a prune sweep."""
    fig, ax = plt.subplots(figsize=(6, 4))
    xs = [r[0] for r in rows]
    ys = [r[1] for r in rows]
    ax.plot(xs, ys, marker="o", color="tab:blue", label=label or None)
    ax.set_xlabel("sparsity")
    ax.set_ylabel("test accuracy")
    ax.set_ylim(0, 1.02)
    ax.grid(alpha=0.3)
    if label:
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return str(path)
