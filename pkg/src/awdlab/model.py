"""Feed-forward models built from explicit layer specs.

Parameters live in an ordered name -> Tensor mapping.  Weight matrices and
convolution kernels are marked prunable; biases are not.  Initialization is
Glorot uniform for weights and zero for biases.
"""

import struct
from dataclasses import dataclass
from typing import Iterable, Optional, Union

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError, StateError
from .tensor import Tensor

__all__ = [
    "Linear",
    "Conv",
    "Relu",
    "Flatten",
    "Model",
    "build_mlp",
    "build_small_cnn",
    "param_l2_norm",
    "grad_l2_norm",
    "predict_logits",
    "accuracy",
    "save_checkpoint",
    "load_checkpoint",
    "Checkpoint",
]


@dataclass(frozen=True)
class Linear:
    in_features: int
    out_features: int


@dataclass(frozen=True)
class Conv:
    in_channels: int
    out_channels: int
    kh: int = 3
    kw: int = 3
    stride: int = 1
    padding: int = 1


@dataclass(frozen=True)
class Relu:
    pass


@dataclass(frozen=True)
class Flatten:
    pass


LayerSpec = Union[Linear, Conv, Relu, Flatten]


def _glorot(rng: np.random.Generator, shape: tuple, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


class Model:
    """A sequential network over the ops in `awdlab.tensor`."""

    def __init__(self, layers: list[LayerSpec], params: dict[str, Tensor],
                 prunable: dict[str, bool]):
        self.layers = list(layers)
        self.params = dict(params)
        self.prunable = dict(prunable)

    def forward(self, x: Tensor) -> Tensor:
        h = x
        for idx, layer in enumerate(self.layers):
            if isinstance(layer, Flatten):
                if h.data.ndim > 2:
                    h = T.flatten(h)
            elif isinstance(layer, Relu):
                h = T.relu(h)
            elif isinstance(layer, Linear):
                h = T.matmul(h, self.params[f"linear{idx}.weight"])
                h = T.bias_add(h, self.params[f"linear{idx}.bias"])
            elif isinstance(layer, Conv):
                h = T.conv2d(h, self.params[f"conv{idx}.kernel"],
                             stride=layer.stride, padding=layer.padding)
                h = T.bias_add(h, self.params[f"conv{idx}.bias"])
            else:
                raise ConfigError(f"unknown layer spec {layer!r}")
        return h

    __call__ = forward

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def param_items(self) -> list[tuple[str, Tensor]]:
        return list(self.params.items())

    def copy(self) -> "Model":
        params = {k: Tensor(v.data.copy(), name=k) for k, v in self.params.items()}
        return Model(self.layers, params, dict(self.prunable))


def build_mlp(layer_sizes: Iterable[int], seed: int = 0) -> Model:
    """Fully-connected ReLU network; `layer_sizes` includes input and output."""
    sizes = [int(s) for s in layer_sizes]
    if len(sizes) < 2:
        raise ConfigError(f"need at least input and output sizes, got {sizes}")
    if any(s <= 0 for s in sizes):
        raise ConfigError(f"layer sizes must be positive, got {sizes}")
    rng = np.random.Generator(np.random.Philox(seed))
    layers: list[LayerSpec] = [Flatten()]
    params: dict[str, Tensor] = {}
    prunable: dict[str, bool] = {}
    for li, (fi, fo) in enumerate(zip(sizes[:-1], sizes[1:])):
        idx = len(layers)
        layers.append(Linear(fi, fo))
        w = Tensor(_glorot(rng, (fi, fo), fi, fo), name=f"linear{idx}.weight")
        b = Tensor(np.zeros(fo), name=f"linear{idx}.bias")
        params[w.name] = w
        params[b.name] = b
        prunable[w.name] = True
        prunable[b.name] = False
        if li < len(sizes) - 2:
            layers.append(Relu())
    return Model(layers, params, prunable)


def build_small_cnn(input_shape: tuple, channels: Iterable[int], num_classes: int,
                    seed: int = 0) -> Model:
    """Stack of 3x3 convolutions with a linear head.

    The first block runs at stride 1; each later block downsamples 2x via a
    stride-2 convolution.  Raises if the spatial size would fall below 1.
    """
    if len(input_shape) != 3:
        raise ConfigError(f"input_shape must be (C, H, W), got {input_shape}")
    chans = [int(c) for c in channels]
    if not chans or any(c <= 0 for c in chans):
        raise ConfigError(f"channel counts must be positive, got {chans}")
    if num_classes < 2:
        raise ConfigError(f"need at least 2 classes, got {num_classes}")
    c, h, w = (int(v) for v in input_shape)
    rng = np.random.Generator(np.random.Philox(seed))
    layers: list[LayerSpec] = []
    params: dict[str, Tensor] = {}
    prunable: dict[str, bool] = {}
    cin = c
    for bi, cout in enumerate(chans):
        stride = 1 if bi == 0 else 2
        idx = len(layers)
        layers.append(Conv(cin, cout, 3, 3, stride=stride, padding=1))
        h = (h + 2 - 3) // stride + 1
        w = (w + 2 - 3) // stride + 1
        if h < 1 or w < 1:
            raise ConfigError(f"spatial size collapsed to {h}x{w} at block {bi}")
        fan_in = cin * 9
        fan_out = cout * 9
        k = Tensor(_glorot(rng, (cout, cin, 3, 3), fan_in, fan_out), name=f"conv{idx}.kernel")
        b = Tensor(np.zeros(cout), name=f"conv{idx}.bias")
        params[k.name] = k
        params[b.name] = b
        prunable[k.name] = True
        prunable[b.name] = False
        layers.append(Relu())
        cin = cout
    layers.append(Flatten())
    idx = len(layers)
    feat = cin * h * w
    layers.append(Linear(feat, num_classes))
    wt = Tensor(_glorot(rng, (feat, num_classes), feat, num_classes),
                name=f"linear{idx}.weight")
    bt = Tensor(np.zeros(num_classes), name=f"linear{idx}.bias")
    params[wt.name] = wt
    params[bt.name] = bt
    prunable[wt.name] = True
    prunable[bt.name] = False
    return Model(layers, params, prunable)


def param_l2_norm(model: Model) -> float:
    """Euclidean norm of all trainable parameters stacked into one vector."""
    total = 0.0
    for p in model.params.values():
        total += float(np.sum(p.data * p.data))
    return float(np.sqrt(total))


def grad_l2_norm(model: Model) -> float:
    """Euclidean norm of the full gradient vector; requires all grads present."""
    total = 0.0
    for name, p in model.params.items():
        if p.grad is None:
            raise StateError(f"tensor '{name}' has no gradient")
        total += float(np.sum(p.grad * p.grad))
    return float(np.sqrt(total))


def predict_logits(model: Model, inputs: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Forward pass without a tape; returns an (N, C) float64 array."""
    if len(inputs) == 0:
        raise DimensionError("cannot predict on an empty input array")
    outs = []
    for start in range(0, len(inputs), batch_size):
        xb = Tensor(inputs[start:start + batch_size])
        outs.append(model.forward(xb).data)
    return np.concatenate(outs, axis=0)


def accuracy(model: Model, inputs: np.ndarray, labels: np.ndarray,
             batch_size: int = 256) -> float:
    logits = predict_logits(model, inputs, batch_size=batch_size)
    preds = np.argmax(logits, axis=1)
    return float(np.mean(preds == np.asarray(labels)))


MAGIC = b"AWDLAB01"


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    extras: dict[str, np.ndarray]

    def scalar(self, name: str, default: Optional[float] = None) -> Optional[float]:
        if name in self.extras:
            return float(self.extras[name].reshape(-1)[0])
        return default


def _write_tensor(fh, name: str, arr: np.ndarray) -> None:
    raw = name.encode("utf-8")
    fh.write(struct.pack("<Q", len(raw)))
    fh.write(raw)
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    fh.write(struct.pack("<Q", arr.ndim))
    for d in arr.shape:
        fh.write(struct.pack("<Q", d))
    fh.write(arr.astype("<f8").tobytes())


def save_checkpoint(path, model: Model, extras: Optional[dict] = None) -> None:
    """Serialize parameters plus named extra tensors/scalars.

    Extras use namespaced names (e.g. "opt/lambda_bar", "meta/epoch"); scalar
    floats are stored as length-1 tensors.
    """
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        for name, p in model.params.items():
            _write_tensor(fh, name, p.data)
        for name, value in (extras or {}).items():
            arr = np.atleast_1d(np.asarray(value, dtype=np.float64))
            _write_tensor(fh, name, arr)


def load_checkpoint(path) -> Checkpoint:
    """Read tensors until end of file; extras are names containing '/'."""
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise ValueError(f"{path}: not a checkpoint file (bad magic {magic!r})")
        params: dict[str, np.ndarray] = {}
        extras: dict[str, np.ndarray] = {}
        while True:
            head = fh.read(8)
            if not head:
                break
            if len(head) != 8:
                raise ValueError(f"{path}: truncated tensor header")
            (name_len,) = struct.unpack("<Q", head)
            name = fh.read(name_len).decode("utf-8")
            (rank,) = struct.unpack("<Q", fh.read(8))
            dims = struct.unpack(f"<{rank}Q", fh.read(8 * rank)) if rank else ()
            count = int(np.prod(dims)) if dims else 1
            buf = fh.read(8 * count)
            if len(buf) != 8 * count:
                raise ValueError(f"{path}: truncated data for tensor '{name}'")
            arr = np.frombuffer(buf, dtype="<f8").reshape(dims).copy()
            if "/" in name:
                extras[name] = arr
            else:
                params[name] = arr
    return Checkpoint(params=params, extras=extras)


def restore_params(model: Model, checkpoint: Checkpoint) -> None:
    """Load checkpoint parameter values into a structurally matching model."""
    missing = set(model.params) - set(checkpoint.params)
    surplus = set(checkpoint.params) - set(model.params)
    if missing or surplus:
        raise StateError(
            f"checkpoint does not match model (missing={sorted(missing)}, "
            f"surplus={sorted(surplus)})"
        )
    for name, p in model.params.items():
        arr = checkpoint.params[name]
        if arr.shape != p.data.shape:
            raise StateError(
                f"tensor '{name}' shape {arr.shape} != model shape {p.data.shape}"
            )
        p.data = arr.astype(np.float64).copy()
