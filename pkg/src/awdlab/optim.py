"""SGD with momentum under three weight-decay regimes.

fixed     g_eff = grad + lam * w                       (constant coefficient)
adaptive  g_eff = grad + lambda_bar * w, where the instantaneous coefficient
          lambda_t = dog * ||grad|| / ||w|| (global norms over all trainable
          parameters) is smoothed as lambda_bar <- ema_old * lambda_bar +
          ema_new * lambda_t, starting from lambda_bar = 0.  lambda_t is a
          detached scalar: no second-order terms flow through it.
adadecay  g_eff = grad + lam * theta * w with a per-parameter factor
          theta_i = 2 / (1 + exp(-alpha * ghat_i)) in [0, 2], where ghat is
          the gradient standardized per tensor (mean 0, population std 1).
          alpha = 0 makes every theta exactly 1, recovering the fixed rule.

All regimes share the same coupled momentum update:
    buffer <- momentum * buffer + g_eff
    w      <- w - lr * buffer
so the decay term passes through the momentum buffer.  Learning rates follow
a cosine schedule from base_lr down to 0 with no warm-up.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .errors import ConfigError, NonFiniteGradientError
from .model import Model, grad_l2_norm, param_l2_norm

__all__ = [
    "Fixed",
    "Adaptive",
    "AdaDecay",
    "RegularizerMode",
    "OptimizerState",
    "StepInfo",
    "cosine_lr",
    "awd_lambda",
    "sgd_fixed_step",
    "awd_step",
    "adadecay_step",
    "sgd_step",
]

log = logging.getLogger(__name__)

TINY_NORM = 1e-12


@dataclass(frozen=True)
class Fixed:
    lam: float

    def validate(self) -> None:
        if self.lam < 0:
            raise ConfigError(f"weight decay must be >= 0, got {self.lam}")


@dataclass(frozen=True)
class Adaptive:
    dog: float
    ema_old: float = 0.1
    ema_new: float = 0.9

    def validate(self) -> None:
        if self.dog < 0:
            raise ConfigError(f"dog must be >= 0, got {self.dog}")
        if not (0.0 <= self.ema_old <= 1.0 and 0.0 <= self.ema_new <= 1.0):
            raise ConfigError(
                f"ema weights must lie in [0, 1], got {self.ema_old}, {self.ema_new}"
            )
        if abs(self.ema_old + self.ema_new - 1.0) > 1e-12:
            raise ConfigError(
                f"ema weights must sum to 1, got {self.ema_old} + {self.ema_new}"
            )


@dataclass(frozen=True)
class AdaDecay:
    lam: float
    alpha: float

    def validate(self) -> None:
        if self.lam < 0:
            raise ConfigError(f"weight decay must be >= 0, got {self.lam}")
        if self.alpha < 0:
            raise ConfigError(f"alpha must be >= 0, got {self.alpha}")


RegularizerMode = Union[Fixed, Adaptive, AdaDecay]


@dataclass
class StepInfo:
    """Quantities describing one optimizer step, for trace logging.

    `lambda_eff` is the instantaneous decay coefficient: lambda_t for the
    adaptive mode (before EMA smoothing), lam otherwise.
    """

    step: int
    lr: float
    lambda_eff: float
    weight_norm: float
    grad_norm: float


@dataclass
class OptimizerState:
    mode: RegularizerMode
    base_lr: float
    total_steps: int
    momentum: float = 0.9
    step: int = 0
    lambda_bar: float = 0.0
    last_lambda_t: float = 0.0
    theta_min: Optional[float] = None
    theta_max: Optional[float] = None
    buffers: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.base_lr <= 0:
            raise ConfigError(f"base_lr must be positive, got {self.base_lr}")
        if self.total_steps < 1:
            raise ConfigError(f"total_steps must be >= 1, got {self.total_steps}")
        if not (0.0 <= self.momentum < 1.0):
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")
        self.mode.validate()

    def ensure_buffers(self, model: Model) -> None:
        for name, p in model.params.items():
            if name not in self.buffers:
                self.buffers[name] = np.zeros_like(p.data)


def cosine_lr(step: int, total_steps: int, base_lr: float) -> float:
    """Cosine annealing from base_lr at step 0 to 0 at step total_steps."""
    if total_steps < 1:
        raise ValueError(f"total_steps must be >= 1, got {total_steps}")
    if step < 0 or step > total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


def awd_lambda(grad_norm: float, weight_norm: float, dog: float) -> float:
    """Instantaneous decay coefficient lambda_t = dog * ||grad|| / ||w||."""
    if weight_norm < TINY_NORM:
        log.warning(
            "weight norm %.3e below %.0e; adaptive decay disabled this step",
            weight_norm, TINY_NORM,
        )
        return 0.0
    return dog * grad_norm / weight_norm


def _check_finite_grads(model: Model, step: int) -> None:
    for name, p in model.params.items():
        if p.grad is None:
            continue
        if not np.all(np.isfinite(p.grad)):
            raise NonFiniteGradientError(step, name)


def _apply_update(model: Model, state: OptimizerState, effective: dict[str, np.ndarray],
                  lr: float) -> None:
    mu = state.momentum
    for name, p in model.params.items():
        buf = state.buffers[name]
        buf *= mu
        buf += effective[name]
        p.data -= lr * buf


def _norms(model: Model) -> tuple[float, float]:
    return param_l2_norm(model), grad_l2_norm(model)


def sgd_fixed_step(model: Model, state: OptimizerState) -> StepInfo:
    """One momentum-SGD step with a constant decay coefficient."""
    if not isinstance(state.mode, Fixed):
        raise ConfigError(f"sgd_fixed_step needs a Fixed mode, got {state.mode!r}")
    state.ensure_buffers(model)
    _check_finite_grads(model, state.step)
    wn, gn = _norms(model)
    lr = cosine_lr(state.step, state.total_steps, state.base_lr)
    lam = state.mode.lam
    effective = {name: p.grad + lam * p.data for name, p in model.params.items()}
    _apply_update(model, state, effective, lr)
    info = StepInfo(step=state.step, lr=lr, lambda_eff=lam, weight_norm=wn, grad_norm=gn)
    state.step += 1
    return info


def awd_step(model: Model, state: OptimizerState) -> StepInfo:
    """One momentum-SGD step with the norm-ratio adaptive coefficient."""
    if not isinstance(state.mode, Adaptive):
        raise ConfigError(f"awd_step needs an Adaptive mode, got {state.mode!r}")
    state.ensure_buffers(model)
    _check_finite_grads(model, state.step)
    wn, gn = _norms(model)
    lr = cosine_lr(state.step, state.total_steps, state.base_lr)
    lam_t = awd_lambda(gn, wn, state.mode.dog)
    state.lambda_bar = state.mode.ema_old * state.lambda_bar + state.mode.ema_new * lam_t
    state.last_lambda_t = lam_t
    lam_bar = state.lambda_bar
    effective = {name: p.grad + lam_bar * p.data for name, p in model.params.items()}
    _apply_update(model, state, effective, lr)
    info = StepInfo(step=state.step, lr=lr, lambda_eff=lam_t, weight_norm=wn, grad_norm=gn)
    state.step += 1
    return info


def adadecay_step(model: Model, state: OptimizerState) -> StepInfo:
    """One momentum-SGD step with per-parameter sigmoid decay scaling.

    Gradients are standardized within each tensor (population std); a tensor
    with std below 1e-12 falls back to theta = 1 everywhere.
    """
    if not isinstance(state.mode, AdaDecay):
        raise ConfigError(f"adadecay_step needs an AdaDecay mode, got {state.mode!r}")
    state.ensure_buffers(model)
    _check_finite_grads(model, state.step)
    wn, gn = _norms(model)
    lr = cosine_lr(state.step, state.total_steps, state.base_lr)
    lam = state.mode.lam
    alpha = state.mode.alpha
    tmin, tmax = np.inf, -np.inf
    effective = {}
    for name, p in model.params.items():
        g = p.grad
        std = float(g.std())
        if std < TINY_NORM:
            theta = np.ones_like(g)
        else:
            ghat = (g - g.mean()) / std
            theta = 2.0 / (1.0 + np.exp(-alpha * ghat))
        tmin = min(tmin, float(theta.min()))
        tmax = max(tmax, float(theta.max()))
        effective[name] = g + lam * (theta * p.data)
    state.theta_min = tmin
    state.theta_max = tmax
    _apply_update(model, state, effective, lr)
    info = StepInfo(step=state.step, lr=lr, lambda_eff=lam, weight_norm=wn, grad_norm=gn)
    state.step += 1
    return info


def sgd_step(model: Model, state: OptimizerState) -> StepInfo:
    """Dispatch on the regularizer mode."""
    if isinstance(state.mode, Fixed):
        return sgd_fixed_step(model, state)
    if isinstance(state.mode, Adaptive):
        return awd_step(model, state)
    if isinstance(state.mode, AdaDecay):
        return adadecay_step(model, state)
    raise ConfigError(f"unknown regularizer mode {state.mode!r}")
