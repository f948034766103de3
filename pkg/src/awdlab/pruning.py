"""Global magnitude pruning across all prunable tensors.

Weights from every prunable tensor are pooled and ranked by absolute value
with deterministic tie-breaking (tensor name, then flat index); the smallest
floor(sparsity * M) entries are zeroed.  Biases are never pruned.  Pruning
returns a modified copy, leaving the source model untouched.
"""

from dataclasses import dataclass

import numpy as np

from .model import Model, accuracy

__all__ = ["PruneReport", "global_l1_prune", "prune_sweep"]


@dataclass
class PruneReport:
    sparsity: float
    total_prunable: int
    n_zeroed: int
    per_tensor: dict[str, int]


def global_l1_prune(model: Model, sparsity: float) -> tuple[Model, PruneReport]:
    """Zero the globally smallest |w| entries among prunable tensors."""
    if not (0.0 <= sparsity <= 1.0):
        raise ValueError(f"sparsity must lie in [0, 1], got {sparsity}")
    pruned = model.copy()
    names = sorted(n for n, flag in pruned.prunable.items() if flag)
    sizes = [pruned.params[n].data.size for n in names]
    total = int(sum(sizes))
    k = int(np.floor(sparsity * total))
    report = PruneReport(
        sparsity=sparsity, total_prunable=total, n_zeroed=k,
        per_tensor={n: 0 for n in names},
    )
    if k == 0:
        return pruned, report
    magnitudes = np.concatenate([np.abs(pruned.params[n].data.reshape(-1)) for n in names])
    name_rank = np.concatenate([np.full(s, r, dtype=np.int64) for r, s in enumerate(sizes)])
    flat_idx = np.concatenate([np.arange(s, dtype=np.int64) for s in sizes])
    # lexsort keys: last key is primary, so order is (|w|, name, index) ascending.
    order = np.lexsort((flat_idx, name_rank, magnitudes))
    victims = order[:k]
    victim_ranks = name_rank[victims]
    victim_idx = flat_idx[victims]
    for r, name in enumerate(names):
        sel = victim_idx[victim_ranks == r]
        if len(sel):
            pruned.params[name].data.reshape(-1)[sel] = 0.0
            report.per_tensor[name] = int(len(sel))
    return pruned, report


def prune_sweep(model: Model, inputs: np.ndarray, labels: np.ndarray,
                sparsities: list[float], batch_size: int = 256) -> list[tuple[float, float]]:
    """Accuracy of freshly pruned copies at each sparsity; base model untouched."""
    values = [float(s) for s in sparsities]
    if values != sorted(values):
        raise ValueError(f"sparsities must be ascending, got {values}")
    rows = []
    for s in values:
        pruned, _ = global_l1_prune(model, s)
        rows.append((s, accuracy(pruned, inputs, labels, batch_size=batch_size)))
    return rows
