"""Flat `key = value` experiment configuration.

The on-disk format is one dotted key per line with `#` comments, e.g.

    optimizer.mode = adaptive
    optimizer.dog = 0.016
    model.hidden = [128]

Values are booleans, integers, floats, bare or double-quoted strings, or
flat lists of those.  Files are parsed with a small hand-written reader, so
config files stay a subset of TOML without the package depending on a TOML
library.  Unknown keys and malformed values are rejected with the offending
key named.
"""

import dataclasses
from dataclasses import dataclass
from typing import Any, Optional

from .errors import ConfigError

__all__ = [
    "ExperimentConfig",
    "parse_flat_text",
    "parse_value",
    "format_value",
    "load_config",
    "apply_overrides",
]


def parse_value(raw: str, where: str = "value") -> Any:
    raw = raw.strip()
    if not raw:
        raise ConfigError(f"{where}: empty value")
    if raw.startswith("[") and raw.endswith("]"):
        inner = raw[1:-1].strip()
        if not inner:
            return []
        return [parse_value(part, where) for part in inner.split(",")]
    if raw == "true":
        return True
    if raw == "false":
        return False
    if raw.startswith('"') and raw.endswith('"') and len(raw) >= 2:
        return raw[1:-1]
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        pass
    # Bare token: treat as a string (covers enum-ish values like "clean-val").
    if any(ch.isspace() for ch in raw):
        raise ConfigError(f"{where}: cannot parse {raw!r}")
    return raw


def format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(format_value(v) for v in value) + "]"
    return f'"{value}"'


def parse_flat_text(text: str) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {stripped!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if not key:
            raise ConfigError(f"line {lineno}: missing key")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key '{key}'")
        # Strip a trailing comment only outside quoted strings.
        raw = raw.strip()
        if not raw.startswith('"') and "#" in raw:
            raw = raw.split("#", 1)[0].strip()
        out[key] = parse_value(raw, where=f"line {lineno} ({key})")
    return out


@dataclass
class ExperimentConfig:
    dataset_kind: str = "clusters"
    dataset_classes: int = 8
    dataset_per_class: int = 150
    dataset_test_per_class: int = 50
    dataset_dim: int = 16
    dataset_separation: float = 4.0
    dataset_height: int = 16
    dataset_width: int = 16
    dataset_channels: int = 1
    dataset_amplitude: float = 0.22
    dataset_noise: float = 0.10
    dataset_jitter: float = 0.3
    dataset_path: str = ""
    dataset_test_path: str = ""

    model_kind: str = "mlp"
    model_hidden: list = dataclasses.field(default_factory=lambda: [64])
    model_channels: list = dataclasses.field(default_factory=lambda: [8])

    optimizer_mode: str = "fixed"
    optimizer_lambda_wd: float = 0.0005
    optimizer_dog: float = 0.016
    optimizer_ema_old: float = 0.1
    optimizer_ema_new: float = 0.9
    optimizer_alpha: float = 1.0

    train_base_lr: float = 0.1
    train_epochs: int = 200
    train_batch_size: int = 128
    train_momentum: float = 0.9
    train_seed: int = 0
    train_val_fraction: float = 0.1
    train_early_stopping: str = "clean-val"
    train_log_stride: int = 1

    attack_enabled: bool = False
    attack_epsilon: float = 8.0 / 255.0
    attack_step_size: float = 2.0 / 255.0
    attack_steps: int = 7
    attack_eval_steps: int = 20
    attack_random_start: bool = True

    noise_rate: float = 0.0

    augment_enabled: str = "auto"
    augment_pad: int = 4
    augment_flip: bool = True

    dog_tol: float = 1e-3
    dog_patience: int = 5

    output_dir: str = "runs/exp"
    output_figures: bool = True

    # dotted key -> (attribute, python type)
    SCHEMA = {
        "dataset.kind": ("dataset_kind", str),
        "dataset.classes": ("dataset_classes", int),
        "dataset.per_class": ("dataset_per_class", int),
        "dataset.test_per_class": ("dataset_test_per_class", int),
        "dataset.dim": ("dataset_dim", int),
        "dataset.separation": ("dataset_separation", float),
        "dataset.height": ("dataset_height", int),
        "dataset.width": ("dataset_width", int),
        "dataset.channels": ("dataset_channels", int),
        "dataset.amplitude": ("dataset_amplitude", float),
        "dataset.noise": ("dataset_noise", float),
        "dataset.jitter": ("dataset_jitter", float),
        "dataset.path": ("dataset_path", str),
        "dataset.test_path": ("dataset_test_path", str),
        "model.kind": ("model_kind", str),
        "model.hidden": ("model_hidden", list),
        "model.channels": ("model_channels", list),
        "optimizer.mode": ("optimizer_mode", str),
        "optimizer.lambda_wd": ("optimizer_lambda_wd", float),
        "optimizer.dog": ("optimizer_dog", float),
        "optimizer.ema_old": ("optimizer_ema_old", float),
        "optimizer.ema_new": ("optimizer_ema_new", float),
        "optimizer.alpha": ("optimizer_alpha", float),
        "train.base_lr": ("train_base_lr", float),
        "train.epochs": ("train_epochs", int),
        "train.batch_size": ("train_batch_size", int),
        "train.momentum": ("train_momentum", float),
        "train.seed": ("train_seed", int),
        "train.val_fraction": ("train_val_fraction", float),
        "train.early_stopping": ("train_early_stopping", str),
        "train.log_stride": ("train_log_stride", int),
        "attack.enabled": ("attack_enabled", bool),
        "attack.epsilon": ("attack_epsilon", float),
        "attack.step_size": ("attack_step_size", float),
        "attack.steps": ("attack_steps", int),
        "attack.eval_steps": ("attack_eval_steps", int),
        "attack.random_start": ("attack_random_start", bool),
        "noise.rate": ("noise_rate", float),
        "augment.enabled": ("augment_enabled", str),
        "augment.pad": ("augment_pad", int),
        "augment.flip": ("augment_flip", bool),
        "dog.tol": ("dog_tol", float),
        "dog.patience": ("dog_patience", int),
        "output.dir": ("output_dir", str),
        "output.figures": ("output_figures", bool),
    }

    _CHOICES = {
        "dataset.kind": ("clusters", "stripes", "file", "csv"),
        "model.kind": ("mlp", "cnn"),
        "optimizer.mode": ("fixed", "adaptive", "adadecay"),
        "train.early_stopping": ("clean-val", "robust-val", "none"),
        "augment.enabled": ("auto", "on", "off"),
    }

    @classmethod
    def from_mapping(cls, mapping: dict[str, Any]) -> "ExperimentConfig":
        cfg = cls()
        errors = []
        for key, value in mapping.items():
            entry = cls.SCHEMA.get(key)
            if entry is None:
                errors.append(f"{key}: unknown key")
                continue
            attr, typ = entry
            if typ is bool:
                if not isinstance(value, bool):
                    errors.append(f"{key}: expected true/false, got {value!r}")
                    continue
            elif typ is float:
                if isinstance(value, bool) or not isinstance(value, (int, float)):
                    errors.append(f"{key}: expected a number, got {value!r}")
                    continue
                value = float(value)
            elif typ is int:
                if isinstance(value, bool) or not isinstance(value, int):
                    errors.append(f"{key}: expected an integer, got {value!r}")
                    continue
            elif typ is str:
                # Booleans parse before bare strings; map them back for
                # string-typed keys like augment.enabled.
                if isinstance(value, bool):
                    value = "on" if value else "off"
                if not isinstance(value, str):
                    errors.append(f"{key}: expected a string, got {value!r}")
                    continue
            elif typ is list:
                if not isinstance(value, list):
                    errors.append(f"{key}: expected a list, got {value!r}")
                    continue
            setattr(cfg, attr, value)
        # Run semantic validation even when typing failed, so one error
        # message carries everything the caller must fix.
        try:
            cfg.validate()
        except ConfigError as exc:
            head = "invalid configuration:\n  "
            errors.extend(str(exc).removeprefix(head).split("\n  "))
        if errors:
            raise ConfigError("invalid configuration:\n  " + "\n  ".join(errors))
        return cfg

    def to_mapping(self) -> dict[str, Any]:
        return {key: getattr(self, attr) for key, (attr, _) in self.SCHEMA.items()}

    def to_text(self) -> str:
        lines = []
        section = None
        for key, value in self.to_mapping().items():
            head = key.split(".", 1)[0]
            if head != section:
                if section is not None:
                    lines.append("")
                section = head
            lines.append(f"{key} = {format_value(value)}")
        return "\n".join(lines) + "\n"

    def validate(self) -> None:
        errors = []
        for key, choices in self._CHOICES.items():
            attr, _ = self.SCHEMA[key]
            if getattr(self, attr) not in choices:
                errors.append(
                    f"{key}: must be one of {', '.join(choices)}, "
                    f"got {getattr(self, attr)!r}"
                )
        positive = [
            "dataset.classes", "dataset.per_class", "dataset.test_per_class",
            "dataset.dim", "dataset.height", "dataset.width", "dataset.channels",
            "train.epochs", "train.batch_size", "train.log_stride", "dog.patience",
        ]
        for key in positive:
            attr, _ = self.SCHEMA[key]
            if getattr(self, attr) < 1:
                errors.append(f"{key}: must be >= 1, got {getattr(self, attr)}")
        nonneg = [
            "dataset.separation", "dataset.noise", "dataset.jitter",
            "optimizer.lambda_wd", "optimizer.dog", "optimizer.alpha",
            "attack.epsilon", "attack.step_size", "noise.rate", "dog.tol",
        ]
        for key in nonneg:
            attr, _ = self.SCHEMA[key]
            if getattr(self, attr) < 0:
                errors.append(f"{key}: must be >= 0, got {getattr(self, attr)}")
        if self.train_base_lr <= 0:
            errors.append(f"train.base_lr: must be positive, got {self.train_base_lr}")
        if not (0.0 <= self.train_momentum < 1.0):
            errors.append(
                f"train.momentum: must lie in [0, 1), got {self.train_momentum}"
            )
        if not (0.0 < self.train_val_fraction < 1.0):
            errors.append(
                f"train.val_fraction: must lie in (0, 1), got {self.train_val_fraction}"
            )
        if not (0.0 <= self.noise_rate <= 1.0):
            errors.append(f"noise.rate: must lie in [0, 1], got {self.noise_rate}")
        if abs(self.optimizer_ema_old + self.optimizer_ema_new - 1.0) > 1e-12:
            errors.append(
                "optimizer.ema_old/ema_new: must sum to 1, got "
                f"{self.optimizer_ema_old} + {self.optimizer_ema_new}"
            )
        if self.attack_steps < 0 or self.attack_eval_steps < 0:
            errors.append("attack.steps/eval_steps: must be >= 0")
        if self.augment_pad < 0:
            errors.append(f"augment.pad: must be >= 0, got {self.augment_pad}")
        for key in ("model.hidden", "model.channels"):
            attr, _ = self.SCHEMA[key]
            vals = getattr(self, attr)
            if not all(isinstance(v, int) and not isinstance(v, bool) and v > 0
                       for v in vals):
                errors.append(f"{key}: entries must be positive integers, got {vals}")
        if self.dataset_kind in ("file", "csv") and not self.dataset_path:
            errors.append("dataset.path: required for file/csv datasets")
        if self.train_early_stopping == "robust-val" and not self.attack_enabled:
            errors.append(
                "train.early_stopping: robust-val requires attack.enabled = true"
            )
        if errors:
            raise ConfigError("invalid configuration:\n  " + "\n  ".join(errors))

    def augmentation_active(self, is_image: bool) -> bool:
        """Resolve the auto setting: on for image data, off for vectors."""
        if self.augment_enabled == "auto":
            return is_image
        return self.augment_enabled == "on"


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return ExperimentConfig.from_mapping(parse_flat_text(fh.read()))


def apply_overrides(cfg: ExperimentConfig, overrides: list[str],
                    seed: Optional[int] = None,
                    out_dir: Optional[str] = None) -> ExperimentConfig:
    """Apply `key=value` strings (and CLI seed/out shortcuts) to a config."""
    mapping = cfg.to_mapping()
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        key, _, raw = item.partition("=")
        key = key.strip()
        if key not in ExperimentConfig.SCHEMA:
            raise ConfigError(f"override {key}: unknown key")
        mapping[key] = parse_value(raw, where=f"override {key}")
    if seed is not None:
        mapping["train.seed"] = int(seed)
    if out_dir is not None:
        mapping["output.dir"] = str(out_dir)
    return ExperimentConfig.from_mapping(mapping)
