"""Reverse-mode automatic differentiation on float64 numpy arrays.

A `Tape` records operations in execution order; `Tape.backward` replays the
recorded operations in exact reverse order, accumulating gradients into
`Tensor.grad`.  Ops run fine without an active tape, in which case they are
pure forward evaluations and no gradients flow.

Supported ops: matmul, add, bias_add, scale, relu, flatten, conv2d and
softmax_cross_entropy.  All arithmetic is float64.  ReLU uses subgradient 0
at exactly 0, so finite-difference checks should avoid probing kink points.
Broadcasting is restricted to bias addition; everything else requires exact
shape agreement.

Tensors recorded on a tape must not be mutated until the tape is dropped.
Tapes are thread-local: concurrent threads each need their own tape.
"""

import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Iterator, Optional

import numpy as np

from .errors import DimensionError, StateError

__all__ = [
    "Tensor",
    "Tape",
    "tape",
    "active_tape",
    "matmul",
    "add",
    "bias_add",
    "scale",
    "relu",
    "flatten",
    "conv2d",
    "softmax_cross_entropy",
    "finite_difference_check",
    "GradCheckReport",
    "TensorCheck",
]


class Tensor:
    """A named float64 array with an optional accumulated gradient."""

    __slots__ = ("data", "grad", "name")

    def __init__(self, data, name: Optional[str] = None):
        arr = np.asarray(data, dtype=np.float64)
        # ascontiguousarray would promote 0-d scalars to shape (1,).
        self.data = np.ascontiguousarray(arr) if arr.ndim > 0 else arr
        self.grad: Optional[np.ndarray] = None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, g: np.ndarray) -> None:
        if g.shape != self.data.shape:
            raise DimensionError(
                f"gradient shape {g.shape} does not match tensor shape {self.data.shape}"
            )
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}{label})"


_STATE = threading.local()


def active_tape() -> Optional["Tape"]:
    stack = getattr(_STATE, "stack", None)
    return stack[-1] if stack else None


class Tape:
    """Ordered record of differentiable operations."""

    def __init__(self):
        self._ops: list[Callable[[], None]] = []

    def record(self, backward_fn: Callable[[], None]) -> None:
        self._ops.append(backward_fn)

    def __len__(self) -> int:
        return len(self._ops)

    def backward(self, loss: Tensor) -> None:
        """Seed d(loss)/d(loss) = 1 and replay ops in reverse order."""
        if loss.data.size != 1:
            raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
        loss.accumulate_grad(np.ones_like(loss.data))
        for op in reversed(self._ops):
            op()


@contextmanager
def tape() -> Iterator[Tape]:
    """Context manager installing a fresh active tape on this thread."""
    t = Tape()
    stack = getattr(_STATE, "stack", None)
    if stack is None:
        stack = _STATE.stack = []
    stack.append(t)
    try:
        yield t
    finally:
        stack.pop()


def _record(backward_fn: Callable[[], None]) -> None:
    t = active_tape()
    if t is not None:
        t.record(backward_fn)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError(
            f"matmul expects rank-2 operands, got {a.data.ndim} and {b.data.ndim}"
        )
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shapes incompatible: {a.shape} x {b.shape}")
    out = Tensor(a.data @ b.data)

    def backward():
        g = out.grad
        if g is None:
            return
        a.accumulate_grad(g @ b.data.T)
        b.accumulate_grad(a.data.T @ g)

    _record(backward)
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; shapes must match exactly."""
    if a.shape != b.shape:
        raise DimensionError(f"add shapes differ: {a.shape} vs {b.shape}")
    out = Tensor(a.data + b.data)

    def backward():
        g = out.grad
        if g is None:
            return
        a.accumulate_grad(g)
        b.accumulate_grad(g)

    _record(backward)
    return out


def bias_add(x: Tensor, b: Tensor) -> Tensor:
    """Add a per-feature bias: (N, D) + (D,) or (N, C, H, W) + (C,)."""
    if b.data.ndim != 1:
        raise DimensionError(f"bias must be rank 1, got shape {b.shape}")
    if x.data.ndim == 2:
        if x.shape[1] != b.shape[0]:
            raise DimensionError(f"bias length {b.shape[0]} != feature dim {x.shape[1]}")
        out = Tensor(x.data + b.data)
        reduce_axes = (0,)
    elif x.data.ndim == 4:
        if x.shape[1] != b.shape[0]:
            raise DimensionError(f"bias length {b.shape[0]} != channel dim {x.shape[1]}")
        out = Tensor(x.data + b.data[None, :, None, None])
        reduce_axes = (0, 2, 3)
    else:
        raise DimensionError(f"bias_add supports rank 2 or 4 inputs, got {x.data.ndim}")

    def backward():
        g = out.grad
        if g is None:
            return
        x.accumulate_grad(g)
        b.accumulate_grad(g.sum(axis=reduce_axes))

    _record(backward)
    return out


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    out = Tensor(x.data * c)

    def backward():
        g = out.grad
        if g is None:
            return
        x.accumulate_grad(g * c)

    _record(backward)
    return out


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0.0))
    mask = x.data > 0.0

    def backward():
        g = out.grad
        if g is None:
            return
        x.accumulate_grad(g * mask)

    _record(backward)
    return out


def flatten(x: Tensor) -> Tensor:
    """Collapse all but the leading axis: (N, ...) -> (N, D)."""
    if x.data.ndim < 2:
        raise DimensionError(f"flatten needs at least rank 2, got {x.data.ndim}")
    n = x.shape[0]
    out = Tensor(x.data.reshape(n, -1))
    in_shape = x.data.shape

    def backward():
        g = out.grad
        if g is None:
            return
        x.accumulate_grad(g.reshape(in_shape))

    _record(backward)
    return out


def _conv_geometry(h: int, w: int, kh: int, kw: int, stride: int, padding: int):
    hp, wp = h + 2 * padding, w + 2 * padding
    if kh > hp or kw > wp:
        raise DimensionError(
            f"kernel {kh}x{kw} larger than padded input {hp}x{wp}"
        )
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    return ho, wo


def _im2col_indices(c, kh, kw, ho, wo, stride):
    # Row/col index grids mapping each (patch element, output position) pair
    # back into the padded input.
    i0 = np.tile(np.repeat(np.arange(kh), kw), c)
    j0 = np.tile(np.arange(kw), kh * c)
    i1 = stride * np.repeat(np.arange(ho), wo)
    j1 = stride * np.tile(np.arange(wo), ho)
    i = i0[:, None] + i1[None, :]
    j = j0[:, None] + j1[None, :]
    k = np.repeat(np.arange(c), kh * kw)[:, None]
    return k, i, j


def conv2d(x: Tensor, kernel: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation of (N, C, H, W) inputs with an (F, C, kh, kw) kernel."""
    if x.data.ndim != 4:
        raise DimensionError(f"conv2d input must be rank 4, got {x.data.ndim}")
    if kernel.data.ndim != 4:
        raise DimensionError(f"conv2d kernel must be rank 4, got {kernel.data.ndim}")
    if not isinstance(stride, int) or stride < 1:
        raise DimensionError(f"stride must be a positive integer, got {stride!r}")
    if not isinstance(padding, int) or padding < 0:
        raise DimensionError(f"padding must be a non-negative integer, got {padding!r}")
    n, c, h, w = x.shape
    f, ck, kh, kw = kernel.shape
    if ck != c:
        raise DimensionError(f"kernel channels {ck} != input channels {c}")
    ho, wo = _conv_geometry(h, w, kh, kw, stride, padding)

    if padding:
        xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    else:
        xp = x.data
    k, i, j = _im2col_indices(c, kh, kw, ho, wo, stride)
    cols = xp[:, k, i, j]  # (N, C*kh*kw, Ho*Wo)
    wmat = kernel.data.reshape(f, c * kh * kw)
    out = Tensor(np.matmul(wmat, cols).reshape(n, f, ho, wo))

    def backward():
        g = out.grad
        if g is None:
            return
        gmat = g.reshape(n, f, ho * wo)
        dk = np.matmul(gmat, cols.transpose(0, 2, 1)).sum(axis=0)
        kernel.accumulate_grad(dk.reshape(kernel.data.shape))
        dcols = np.matmul(wmat.T, gmat)  # (N, C*kh*kw, Ho*Wo)
        dxp = np.zeros((n, c, h + 2 * padding, w + 2 * padding))
        np.add.at(dxp, (np.arange(n)[:, None, None], k, i, j), dcols)
        if padding:
            dxp = dxp[:, :, padding:-padding, padding:-padding]
        x.accumulate_grad(dxp)

    _record(backward)
    return out


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy of (N, C) logits against integer labels.

    Numerically stabilized by row-max subtraction.  The gradient with respect
    to the logits is (softmax - onehot) / N.
    """
    if logits.data.ndim != 2:
        raise DimensionError(f"logits must be rank 2, got {logits.data.ndim}")
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.shape[0] != logits.shape[0]:
        raise DimensionError(
            f"labels shape {labels.shape} does not match logits rows {logits.shape[0]}"
        )
    n, c = logits.shape
    if n == 0:
        raise DimensionError("cross-entropy of an empty batch")
    bad = (labels < 0) | (labels >= c)
    if bad.any():
        row = int(np.argmax(bad))
        raise IndexError(
            f"label {int(labels[row])} out of range [0, {c}) at row {row}"
        )
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsumexp
    out = Tensor(-logp[np.arange(n), labels].mean())
    softmax = np.exp(logp)

    def backward():
        g = out.grad
        if g is None:
            return
        d = softmax.copy()
        d[np.arange(n), labels] -= 1.0
        logits.accumulate_grad(d * (float(g) / n))

    _record(backward)
    return out


@dataclass
class TensorCheck:
    name: str
    n_checked: int
    max_abs_err: float
    max_rel_err: float
    passed: bool


@dataclass
class GradCheckReport:
    checks: list[TensorCheck] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __str__(self) -> str:
        lines = []
        for c in self.checks:
            status = "ok" if c.passed else "FAIL"
            lines.append(
                f"{c.name}: {status} n={c.n_checked} "
                f"max_abs={c.max_abs_err:.3e} max_rel={c.max_rel_err:.3e}"
            )
        return "\n".join(lines)


def finite_difference_check(
    params: list[Tensor],
    loss_fn: Callable[[], Tensor],
    h: float = 1e-5,
    tol: float = 1e-4,
    samples_per_tensor: int = 100,
    seed: int = 0,
) -> GradCheckReport:
    """Compare taped gradients against central finite differences.

    `loss_fn` must be a deterministic closure evaluating the scalar loss from
    the current parameter values.  Gradients are taken from a single taped
    backward pass; for each tensor up to `samples_per_tensor` coordinates are
    probed (all of them when the tensor is smaller).  A coordinate passes when
    |analytic - numeric| <= tol * max(|analytic|, |numeric|, 1), i.e. the
    error is relative for large gradients and absolute near zero.
    """
    if h <= 0:
        raise ValueError(f"step size must be positive, got {h}")
    for p in params:
        p.zero_grad()
    with tape() as t:
        loss = loss_fn()
        t.backward(loss)
    grads = []
    for p in params:
        if p.grad is None:
            raise StateError(f"tensor '{p.name}' received no gradient")
        grads.append(p.grad.copy())

    rng = np.random.Generator(np.random.Philox(seed))
    report = GradCheckReport()
    for p, g in zip(params, grads):
        flat = p.data.reshape(-1)
        size = flat.shape[0]
        if size <= samples_per_tensor:
            idx = np.arange(size)
        else:
            idx = rng.choice(size, size=samples_per_tensor, replace=False)
        max_abs = 0.0
        max_rel = 0.0
        ok = True
        gflat = g.reshape(-1)
        for i in idx:
            saved = flat[i]
            flat[i] = saved + h
            up = float(loss_fn().data)
            flat[i] = saved - h
            down = float(loss_fn().data)
            flat[i] = saved
            numeric = (up - down) / (2.0 * h)
            analytic = gflat[i]
            err = abs(analytic - numeric)
            denom = max(abs(analytic), abs(numeric), 1.0)
            max_abs = max(max_abs, err)
            max_rel = max(max_rel, err / denom)
            if err > tol * denom:
                ok = False
        report.checks.append(
            TensorCheck(
                name=p.name or "<unnamed>",
                n_checked=len(idx),
                max_abs_err=max_abs,
                max_rel_err=max_rel,
                passed=ok,
            )
        )
    return report
