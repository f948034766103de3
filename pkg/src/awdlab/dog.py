"""Decay-over-gradient traces and the plateau-based DoG estimator.

During a fixed-decay run each optimizer step contributes one trace row.  The
per-row ratio  dog = lambda * ||w|| / ||grad||  summarizes how strong the
decay term is relative to the gradient; its average over the epochs up to the
training-loss plateau is the DoG estimate used to configure adaptive runs.
"""

import csv
from dataclasses import dataclass, field
from typing import Optional

from .errors import EstimationError

__all__ = [
    "DogRow",
    "DogTrace",
    "dog_value",
    "plateau_epoch",
    "estimate_dog",
]

EPS_GRAD = 1e-12

TRACE_HEADER = ["step", "epoch", "weight_norm", "grad_norm", "lambda_eff", "xent"]


@dataclass(frozen=True)
class DogRow:
    step: int
    epoch: int
    weight_norm: float
    grad_norm: float
    lambda_eff: float
    xent: float


def dog_value(lambda_eff: float, weight_norm: float, grad_norm: float) -> Optional[float]:
    """Per-iteration ratio lambda * ||w|| / ||grad||; None when ||grad|| <= 1e-12."""
    if grad_norm <= EPS_GRAD:
        return None
    return lambda_eff * weight_norm / grad_norm


@dataclass
class DogTrace:
    rows: list[DogRow] = field(default_factory=list)

    def append(self, row: DogRow) -> None:
        if self.rows and row.step <= self.rows[-1].step:
            raise ValueError(
                f"steps must increase: got {row.step} after {self.rows[-1].step}"
            )
        if row.weight_norm < 0 or row.grad_norm < 0:
            raise ValueError("norms must be non-negative")
        self.rows.append(row)

    def __len__(self) -> int:
        return len(self.rows)

    def epochs(self) -> list[int]:
        return sorted({r.epoch for r in self.rows})

    def epoch_mean_xent(self) -> list[float]:
        """Mean training loss per epoch, ordered by epoch number."""
        sums: dict[int, float] = {}
        counts: dict[int, int] = {}
        for r in self.rows:
            sums[r.epoch] = sums.get(r.epoch, 0.0) + r.xent
            counts[r.epoch] = counts.get(r.epoch, 0) + 1
        return [sums[e] / counts[e] for e in sorted(sums)]

    def dog_values(self) -> list[Optional[float]]:
        return [dog_value(r.lambda_eff, r.weight_norm, r.grad_norm) for r in self.rows]

    def save_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(TRACE_HEADER)
            for r in self.rows:
                writer.writerow([
                    r.step, r.epoch,
                    repr(float(r.weight_norm)), repr(float(r.grad_norm)),
                    repr(float(r.lambda_eff)), repr(float(r.xent)),
                ])

    @classmethod
    def load_csv(cls, path) -> "DogTrace":
        trace = cls()
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != TRACE_HEADER:
                raise ValueError(f"{path}: unexpected trace header {header}")
            for line in reader:
                trace.append(DogRow(
                    step=int(line[0]), epoch=int(line[1]),
                    weight_norm=float(line[2]), grad_norm=float(line[3]),
                    lambda_eff=float(line[4]), xent=float(line[5]),
                ))
        return trace


def plateau_epoch(epoch_losses: list[float], tol: float = 1e-3, patience: int = 5) -> int:
    """First epoch ending `patience` consecutive relative improvements below `tol`.

    The relative improvement at epoch e is (loss[e-1] - loss[e]) / |loss[e-1]|;
    negative improvements (loss going up) count as below tolerance.  Returns
    the last epoch index if the plateau never triggers.
    """
    if patience < 1:
        raise ValueError(f"patience must be >= 1, got {patience}")
    if tol < 0:
        raise ValueError(f"tol must be >= 0, got {tol}")
    if not epoch_losses:
        raise ValueError("no epoch losses given")
    run = 0
    for e in range(1, len(epoch_losses)):
        prev = epoch_losses[e - 1]
        denom = abs(prev) if abs(prev) > 0 else 1.0
        improvement = (prev - epoch_losses[e]) / denom
        if improvement < tol:
            run += 1
            if run >= patience:
                return e
        else:
            run = 0
    return len(epoch_losses) - 1


def estimate_dog(trace: DogTrace, tol: float = 1e-3, patience: int = 5) -> float:
    """Mean per-iteration dog ratio over epochs up to the loss plateau."""
    if not trace.rows:
        raise EstimationError("empty trace")
    epochs = trace.epochs()
    losses = trace.epoch_mean_xent()
    cutoff = epochs[plateau_epoch(losses, tol=tol, patience=patience)]
    values = [
        v for r, v in zip(trace.rows, trace.dog_values())
        if r.epoch <= cutoff and v is not None
    ]
    if not values:
        raise EstimationError(
            f"no usable rows before plateau epoch {cutoff}: all gradient norms "
            f"were at or below {EPS_GRAD}"
        )
    return sum(values) / len(values)
