"""Epoch-level training engine shared by all run types.

One epoch shuffles the training set, walks it in minibatches, optionally
augments and/or attacks each batch, and applies one optimizer step per batch.
Per-step norm/loss rows can be appended to a DogTrace for later estimation.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .adversarial import AttackConfig, pgd_attack
from .data import pad_and_crop
from .dog import DogRow, DogTrace
from .model import Model
from .optim import OptimizerState, sgd_step
from .tensor import Tensor, softmax_cross_entropy, tape

__all__ = ["EpochMetrics", "train_epoch", "batch_starts"]


@dataclass
class EpochMetrics:
    epoch: int
    train_xent: float
    train_acc: float
    lambda_mean: float
    lr_first: float
    n_steps: int


def batch_starts(n: int, batch_size: int) -> range:
    return range(0, n, batch_size)


def train_epoch(
    model: Model,
    inputs: np.ndarray,
    labels: np.ndarray,
    state: OptimizerState,
    *,
    epoch: int,
    batch_size: int,
    shuffle_rng: np.random.Generator,
    attack: Optional[AttackConfig] = None,
    attack_rng: Optional[np.random.Generator] = None,
    augment: Optional[dict] = None,
    augment_rng: Optional[np.random.Generator] = None,
    trace: Optional[DogTrace] = None,
    log_stride: int = 1,
) -> EpochMetrics:
    """Run one pass over the training data, mutating model and state.

    `augment` is None or {"pad": int, "flip": bool}.  When `attack` is given,
    each batch is replaced by its PGD perturbation before the gradient step
    (training loss and accuracy are then measured on those perturbed inputs).
    """
    n = len(labels)
    if n == 0:
        raise ValueError("cannot train on an empty dataset")
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    order = shuffle_rng.permutation(n)
    total_loss = 0.0
    total_correct = 0
    lambda_sum = 0.0
    lr_first = None
    n_steps = 0
    for start in batch_starts(n, batch_size):
        idx = order[start:start + batch_size]
        xb = inputs[idx]
        yb = labels[idx]
        if augment is not None:
            xb = pad_and_crop(xb, augment["pad"], augment_rng, flip=augment["flip"])
        if attack is not None:
            xb = pgd_attack(model, xb, yb, attack, attack_rng)
        model.zero_grad()
        xt = Tensor(xb)
        with tape() as t:
            logits = model.forward(xt)
            loss = softmax_cross_entropy(logits, yb)
            t.backward(loss)
        info = sgd_step(model, state)
        batch_loss = float(loss.data)
        total_loss += batch_loss * len(yb)
        total_correct += int(np.sum(np.argmax(logits.data, axis=1) == yb))
        lambda_sum += info.lambda_eff
        if lr_first is None:
            lr_first = info.lr
        if trace is not None and info.step % log_stride == 0:
            trace.append(DogRow(
                step=info.step, epoch=epoch,
                weight_norm=info.weight_norm, grad_norm=info.grad_norm,
                lambda_eff=info.lambda_eff, xent=batch_loss,
            ))
        n_steps += 1
    return EpochMetrics(
        epoch=epoch,
        train_xent=total_loss / n,
        train_acc=total_correct / n,
        lambda_mean=lambda_sum / n_steps,
        lr_first=lr_first if lr_first is not None else 0.0,
        n_steps=n_steps,
    )
