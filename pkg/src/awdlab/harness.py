"""Experiment orchestration: full runs, grid searches, landscape models.

Every artifact written here is a pure function of (config, seed): no wall
clock, host name or path-dependent state leaks into the outputs, so re-running
a config reproduces metrics files byte for byte.
"""

import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .adversarial import AttackConfig, robust_accuracy
from .config import ExperimentConfig
from .data import (Dataset, flip_labels_symmetric, load_csv_dataset, load_dataset,
                   split_train_val, stratified_split_indices, synth_clusters,
                   synth_images)
from .dog import DogTrace
from .errors import AwdlabError, ConfigError, NonFiniteGradientError
from .model import (Model, accuracy, build_mlp, build_small_cnn, param_l2_norm,
                    predict_logits, save_checkpoint)
from .optim import AdaDecay, Adaptive, Fixed, OptimizerState
from .rng import RngHub, component_seed
from .tensor import Tensor, softmax_cross_entropy
from .train import train_epoch

__all__ = [
    "METRICS_HEADER",
    "RunResult",
    "run_experiment",
    "GridResult",
    "grid_search_2d",
    "AlternatingResult",
    "alternating_1d_search",
    "geometric_sequence",
    "synthetic_landscape",
]

log = logging.getLogger(__name__)

METRICS_HEADER = [
    "epoch", "train_xent", "train_acc", "val_acc", "test_acc",
    "robust_val_acc", "weight_norm", "lambda_mean", "lr",
]

GRID_HEADER = ["lr", "lambda_or_dog", "val_acc"]


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, int):
        return str(value)
    return repr(float(value))


def build_dataset_pair(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    """Construct (train_pool, test) datasets from the config."""
    seed = cfg.train_seed
    kind = cfg.dataset_kind
    if kind == "clusters":
        train = synth_clusters(cfg.dataset_classes, cfg.dataset_dim,
                               cfg.dataset_per_class, cfg.dataset_separation,
                               seed=component_seed(seed, "data-train"))
        test = synth_clusters(cfg.dataset_classes, cfg.dataset_dim,
                              cfg.dataset_test_per_class, cfg.dataset_separation,
                              seed=component_seed(seed, "data-test"))
        return train, test
    if kind == "stripes":
        common = dict(classes=cfg.dataset_classes, height=cfg.dataset_height,
                      width=cfg.dataset_width, channels=cfg.dataset_channels,
                      amplitude=cfg.dataset_amplitude, noise=cfg.dataset_noise,
                      jitter=cfg.dataset_jitter)
        train = synth_images(per_class=cfg.dataset_per_class,
                             seed=component_seed(seed, "data-train"), **common)
        test = synth_images(per_class=cfg.dataset_test_per_class,
                            seed=component_seed(seed, "data-test"), **common)
        return train, test
    loader = load_dataset if kind == "file" else load_csv_dataset
    pool = loader(cfg.dataset_path)
    if cfg.dataset_test_path:
        return pool, loader(cfg.dataset_test_path)
    rng = np.random.Generator(np.random.Philox(component_seed(seed, "test-split")))
    rest, held = stratified_split_indices(pool.labels, 0.2, rng)
    return pool.subset(rest, name=f"{pool.name}-pool"), pool.subset(held, name=f"{pool.name}-test")


def build_model_from_config(cfg: ExperimentConfig, dataset: Dataset) -> Model:
    seed = component_seed(cfg.train_seed, "model-init")
    if cfg.model_kind == "mlp":
        in_dim = int(np.prod(dataset.inputs.shape[1:]))
        sizes = [in_dim] + list(cfg.model_hidden) + [dataset.num_classes]
        return build_mlp(sizes, seed=seed)
    if not dataset.is_image:
        raise ConfigError("model.kind: cnn requires image-shaped inputs")
    return build_small_cnn(dataset.inputs.shape[1:], cfg.model_channels,
                           dataset.num_classes, seed=seed)


def make_mode(cfg: ExperimentConfig):
    if cfg.optimizer_mode == "fixed":
        return Fixed(cfg.optimizer_lambda_wd)
    if cfg.optimizer_mode == "adaptive":
        return Adaptive(cfg.optimizer_dog, cfg.optimizer_ema_old, cfg.optimizer_ema_new)
    return AdaDecay(cfg.optimizer_lambda_wd, cfg.optimizer_alpha)


@dataclass
class RunResult:
    cfg: ExperimentConfig
    out_dir: str
    records: list[dict] = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    trace: Optional[DogTrace] = None
    final_model: Optional[Model] = None
    best_epoch: Optional[int] = None

    @property
    def aborted(self) -> bool:
        return bool(self.summary.get("aborted"))


def _write_metrics_csv(path, records: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(",".join(METRICS_HEADER) + "\n")
        for rec in records:
            fh.write(",".join(_fmt(rec[k]) for k in METRICS_HEADER) + "\n")


def _opt_extras(state: OptimizerState, epoch: int, metric: Optional[float]) -> dict:
    extras = {
        "opt/step": float(state.step),
        "opt/lambda_bar": state.lambda_bar,
        "meta/epoch": float(epoch),
    }
    if metric is not None:
        extras["meta/val_metric"] = float(metric)
    for name, buf in state.buffers.items():
        extras[f"opt/momentum/{name}"] = buf
    return extras


def run_experiment(cfg: ExperimentConfig, write_artifacts: bool = True) -> RunResult:
    """Train per config, logging metrics, traces and checkpoints.

    Non-finite gradients abort the run but keep everything logged so far;
    the summary marks the abort and final metrics reflect the broken model.
    """
    cfg.validate()
    out_dir = cfg.output_dir
    if write_artifacts:
        os.makedirs(out_dir, exist_ok=True)
        os.makedirs(os.path.join(out_dir, "figures"), exist_ok=True)
        with open(os.path.join(out_dir, "config.effective.toml"), "w") as fh:
            fh.write(cfg.to_text())

    hub = RngHub(cfg.train_seed)
    train_pool, test = build_dataset_pair(cfg)
    train, val = split_train_val(train_pool, cfg.train_val_fraction, cfg.train_seed)

    noise_spec = None
    train_labels = train.labels
    if cfg.noise_rate > 0:
        train_labels, noise_spec = flip_labels_symmetric(
            train.labels, train.num_classes, cfg.noise_rate, cfg.train_seed)

    model = build_model_from_config(cfg, train)
    n_batches = math.ceil(len(train) / cfg.train_batch_size)
    state = OptimizerState(
        mode=make_mode(cfg), base_lr=cfg.train_base_lr,
        total_steps=cfg.train_epochs * n_batches, momentum=cfg.train_momentum,
    )

    attack_train = None
    attack_eval = None
    if cfg.attack_enabled:
        attack_train = AttackConfig(
            epsilon=cfg.attack_epsilon, step_size=cfg.attack_step_size,
            steps=cfg.attack_steps, random_start=cfg.attack_random_start)
        attack_eval = AttackConfig(
            epsilon=cfg.attack_epsilon, step_size=cfg.attack_step_size,
            steps=cfg.attack_eval_steps, random_start=cfg.attack_random_start)

    augment = None
    if cfg.augmentation_active(train.is_image):
        if not train.is_image:
            raise ConfigError("augment.enabled: augmentation needs image data")
        augment = {"pad": cfg.augment_pad, "flip": cfg.augment_flip}

    trace = DogTrace()
    records: list[dict] = []
    rule = cfg.train_early_stopping
    metric_key = "val_acc" if rule == "clean-val" else "robust_val_acc"
    best = None  # (metric, epoch, params snapshot)
    aborted = False
    abort_reason = ""

    def evaluate(epoch: int, train_metrics=None) -> dict:
        rec = {
            "epoch": epoch,
            "train_xent": train_metrics.train_xent if train_metrics else None,
            "train_acc": train_metrics.train_acc if train_metrics else None,
            "val_acc": accuracy(model, val.inputs, val.labels),
            "test_acc": accuracy(model, test.inputs, test.labels),
            "robust_val_acc": None,
            "weight_norm": param_l2_norm(model),
            "lambda_mean": train_metrics.lambda_mean if train_metrics else None,
            "lr": train_metrics.lr_first if train_metrics else cfg.train_base_lr,
        }
        if attack_eval is not None:
            rec["robust_val_acc"] = robust_accuracy(
                model, val.inputs, val.labels, attack_eval,
                hub.rng(f"attack-eval-{epoch}"))
        return rec

    def consider_best(rec: dict) -> None:
        nonlocal best
        if rule == "none":
            return
        metric = rec.get(metric_key)
        if metric is None:
            return
        if best is None or metric > best[0]:
            best = (metric, rec["epoch"], model.copy())

    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        logits0 = predict_logits(model, train.inputs)
        loss0 = softmax_cross_entropy(Tensor(logits0), train_labels)
        rec0 = evaluate(0)
        rec0["train_xent"] = float(loss0.data)
        rec0["train_acc"] = float(np.mean(np.argmax(logits0, axis=1) == train_labels))
        rec0["lambda_mean"] = {
            "fixed": cfg.optimizer_lambda_wd, "adaptive": 0.0,
            "adadecay": cfg.optimizer_lambda_wd}[cfg.optimizer_mode]
        records.append(rec0)
        consider_best(rec0)

        for epoch in range(1, cfg.train_epochs + 1):
            try:
                em = train_epoch(
                    model, train.inputs, train_labels, state,
                    epoch=epoch, batch_size=cfg.train_batch_size,
                    shuffle_rng=hub.rng("shuffle"),
                    attack=attack_train, attack_rng=hub.rng("attack"),
                    augment=augment, augment_rng=hub.rng("augment"),
                    trace=trace, log_stride=cfg.train_log_stride,
                )
            except NonFiniteGradientError as exc:
                aborted = True
                abort_reason = str(exc)
                log.warning("run aborted: %s", exc)
                break
            rec = evaluate(epoch, em)
            records.append(rec)
            consider_best(rec)

        final_rec = records[-1]
        summary = {
            "dataset": train_pool.name,
            "n_train": len(train),
            "n_val": len(val),
            "n_test": len(test),
            "mode": cfg.optimizer_mode,
            "epochs_run": final_rec["epoch"],
            "aborted": aborted,
            "abort_reason": abort_reason,
            "final": {k: final_rec[k] for k in METRICS_HEADER},
            "param_norm_final": param_l2_norm(model),
        }
        if best is not None:
            summary["best_epoch"] = best[1]
            summary["best_metric"] = best[0]
            summary["selected_val_acc"] = best[0]
        else:
            summary["selected_val_acc"] = (
                final_rec["val_acc"] if rule != "robust-val"
                else final_rec["robust_val_acc"])
        if noise_spec is not None:
            clean_idx = noise_spec.clean_indices(len(train))
            flip_idx = noise_spec.flipped_indices
            summary["noise"] = {
                "rate": cfg.noise_rate,
                "n_flipped": int(len(flip_idx)),
                "flipped_subset_train_acc": (
                    accuracy(model, train.inputs[flip_idx], train_labels[flip_idx])
                    if len(flip_idx) else None),
                "clean_subset_train_acc": (
                    accuracy(model, train.inputs[clean_idx], train_labels[clean_idx])
                    if len(clean_idx) else None),
            }

    if write_artifacts:
        _write_metrics_csv(os.path.join(out_dir, "metrics.csv"), records)
        trace.save_csv(os.path.join(out_dir, "dog_trace.csv"))
        save_checkpoint(os.path.join(out_dir, "final.ckpt"), model,
                        _opt_extras(state, final_rec["epoch"], None))
        if best is not None:
            save_checkpoint(os.path.join(out_dir, "best.ckpt"), best[2],
                            {"meta/epoch": float(best[1]),
                             "meta/val_metric": float(best[0])})
        if noise_spec is not None:
            with open(os.path.join(out_dir, "noise_indices.csv"), "w", newline="") as fh:
                fh.write("index,original_label,noisy_label\n")
                for i, orig in zip(noise_spec.flipped_indices,
                                   noise_spec.original_labels):
                    fh.write(f"{int(i)},{int(orig)},{int(train_labels[i])}\n")
        with open(os.path.join(out_dir, "summary.json"), "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")
        if cfg.output_figures:
            from . import report
            report.render_training_figures(
                os.path.join(out_dir, "figures", "curves.png"), records, cfg)

    return RunResult(cfg=cfg, out_dir=out_dir, records=records,
                     summary=summary, trace=trace, final_model=model,
                     best_epoch=best[1] if best is not None else None)


@dataclass
class GridResult:
    lr_values: list[float]
    lam_values: list[float]
    matrix: np.ndarray
    best: tuple
    best_per_lr: list[tuple]
    best_per_lam: list[tuple]

    def to_rows(self) -> list[tuple[float, float, float]]:
        rows = []
        for i, lr in enumerate(self.lr_values):
            for j, lam in enumerate(self.lam_values):
                rows.append((lr, lam, float(self.matrix[i, j])))
        return rows


def _cell_mapping(cfg: ExperimentConfig, lr: float, lam: float,
                  out_dir: Optional[str]) -> dict:
    mapping = cfg.to_mapping()
    mapping["train.base_lr"] = lr
    if cfg.optimizer_mode == "adaptive":
        mapping["optimizer.dog"] = lam
    else:
        mapping["optimizer.lambda_wd"] = lam
    mapping["output.figures"] = False
    if out_dir is not None:
        mapping["output.dir"] = out_dir
    return mapping


def _grid_cell_worker(args) -> float:
    mapping, write_artifacts = args
    try:
        cfg = ExperimentConfig.from_mapping(mapping)
        result = run_experiment(cfg, write_artifacts=write_artifacts)
    except AwdlabError as exc:
        log.warning("grid cell failed (%s); recording nan", exc)
        return float("nan")
    value = result.summary.get("selected_val_acc")
    return float("nan") if value is None else float(value)


def grid_search_2d(cfg: ExperimentConfig, lr_values: list[float],
                   lam_values: list[float], out_dir: str,
                   jobs: int = 1, write_cells: bool = True) -> GridResult:
    """Train one run per (lr, lambda-or-dog) cell and tabulate val accuracy.

    Failed cells score nan.  Cells share nothing, so `jobs > 1` fans them out
    over processes; results are identical to a serial sweep.
    """
    if not lr_values or not lam_values:
        raise ConfigError("grid needs at least one lr and one lambda value")
    os.makedirs(out_dir, exist_ok=True)
    tasks = []
    for i, lr in enumerate(lr_values):
        for j, lam in enumerate(lam_values):
            cell_dir = os.path.join(out_dir, "cells", f"lr{i}-lam{j}")
            tasks.append((_cell_mapping(cfg, lr, lam,
                                        cell_dir if write_cells else None),
                          write_cells))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            values = list(pool.map(_grid_cell_worker, tasks))
    else:
        values = [_grid_cell_worker(t) for t in tasks]
    matrix = np.array(values).reshape(len(lr_values), len(lam_values))

    flat_best = None
    for i, lr in enumerate(lr_values):
        for j, lam in enumerate(lam_values):
            v = matrix[i, j]
            if np.isfinite(v) and (flat_best is None or v > flat_best[2]):
                flat_best = (lr, lam, float(v))
    if flat_best is None:
        raise AwdlabError("every grid cell failed")

    def row_best(i):
        if not np.isfinite(matrix[i]).any():
            return (lr_values[i], float("nan"), float("nan"))
        j = int(np.nanargmax(matrix[i]))
        return (lr_values[i], lam_values[j], float(matrix[i, j]))

    def col_best(j):
        if not np.isfinite(matrix[:, j]).any():
            return (float("nan"), lam_values[j], float("nan"))
        i = int(np.nanargmax(matrix[:, j]))
        return (lr_values[i], lam_values[j], float(matrix[i, j]))

    result = GridResult(
        lr_values=list(lr_values), lam_values=list(lam_values), matrix=matrix,
        best=flat_best,
        best_per_lr=[row_best(i) for i in range(len(lr_values))],
        best_per_lam=[col_best(j) for j in range(len(lam_values))],
    )
    with open(os.path.join(out_dir, "grid.csv"), "w", newline="") as fh:
        fh.write(",".join(GRID_HEADER) + "\n")
        for lr, lam, v in result.to_rows():
            fh.write(f"{_fmt(lr)},{_fmt(lam)},{_fmt(v)}\n")
    with open(os.path.join(out_dir, "grid_summary.json"), "w") as fh:
        json.dump({
            "lr_values": result.lr_values,
            "lambda_values": result.lam_values,
            "best": {"lr": result.best[0], "lambda_or_dog": result.best[1],
                     "val_acc": result.best[2]},
            "best_per_lr": result.best_per_lr,
            "best_per_lambda": result.best_per_lam,
        }, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return result


@dataclass
class AlternatingResult:
    path: list[tuple]
    lr: float
    lam: float
    acc: float
    rounds: int
    converged: bool


def alternating_1d_search(lr_values: list[float], lam_values: list[float],
                          start_lr: float, evaluate: Callable[[float, float], float],
                          start_lam: Optional[float] = None,
                          max_rounds: int = 10) -> AlternatingResult:
    """Coordinate-wise 1D sweeps: tune lambda at fixed lr, then lr, repeat.

    Mirrors the common practice of tuning one hyperparameter at a time; can
    park on a locally 1D-optimal cell that a full 2D grid would reject.
    """
    if not lr_values or not lam_values:
        raise ConfigError("search needs non-empty value lists")
    cache: dict[tuple, float] = {}

    def ev(lr, lam):
        key = (lr, lam)
        if key not in cache:
            cache[key] = float(evaluate(lr, lam))
        return cache[key]

    lr = start_lr
    lam = start_lam if start_lam is not None else lam_values[0]
    path = []
    converged = False
    rounds = 0
    for _ in range(max_rounds):
        rounds += 1
        lam_new = max(lam_values, key=lambda v: ev(lr, v))
        path.append((lr, lam_new, ev(lr, lam_new)))
        lr_new = max(lr_values, key=lambda v: ev(v, lam_new))
        path.append((lr_new, lam_new, ev(lr_new, lam_new)))
        if lr_new == lr and lam_new == lam:
            converged = True
            break
        lr, lam = lr_new, lam_new
    return AlternatingResult(path=path, lr=lr, lam=lam, acc=ev(lr, lam),
                             rounds=rounds, converged=converged)


def geometric_sequence(start: float, end: float, length: int) -> list[float]:
    """Geometric interpolation with exact endpoints."""
    if start <= 0 or end <= 0:
        raise ValueError(f"endpoints must be positive, got {start}, {end}")
    if length < 2:
        raise ValueError(f"length must be >= 2, got {length}")
    ratio = end / start
    values = [start * ratio ** (i / (length - 1)) for i in range(length)]
    values[0] = start
    values[-1] = end
    return values


# Two-bump accuracy surface in log10(lr) x log10(lambda) space.  Bump A is a
# narrow local optimum; bump B is the true optimum.  Coordinate-wise search
# started at lr = 0.01 parks on A, while a full grid finds B.
_BUMP_A = {"x": -2.0, "y": math.log10(0.005), "amp": 0.50, "sx": 0.35, "sy": 0.45}
_BUMP_B = {"x": -1.0, "y": math.log10(0.0005), "amp": 0.53, "sx": 0.50, "sy": 0.55}
_LANDSCAPE_BASE = 0.40


def synthetic_landscape(lr: float, lam: float, seed: int = 0,
                        noise: float = 0.0) -> float:
    """Deterministic stand-in accuracy for a (lr, lambda) cell."""
    if lr <= 0 or lam <= 0:
        raise ValueError(f"lr and lambda must be positive, got {lr}, {lam}")
    x = math.log10(lr)
    y = math.log10(lam)
    value = _LANDSCAPE_BASE
    for bump in (_BUMP_A, _BUMP_B):
        dx = (x - bump["x"]) / bump["sx"]
        dy = (y - bump["y"]) / bump["sy"]
        value += bump["amp"] * math.exp(-0.5 * (dx * dx + dy * dy))
    if noise > 0:
        cell_seed = component_seed(seed, f"landscape:{x:.9f}:{y:.9f}")
        rng = np.random.Generator(np.random.Philox(cell_seed))
        value += noise * float(rng.standard_normal())
    return float(min(max(value, 0.0), 1.0))
