"""Command-line entry points.

Subcommands:
    train         one training run per the config
    advtrain      adversarial training (PGD on each batch)
    noisy         training with symmetric label noise
    estimate-dog  fixed-decay run + decay/gradient ratio estimation
    grid2d        full 2D sweep over (lr, lambda-or-dog)
    grid1d        alternating coordinate-wise 1D search
    prune         global magnitude prune sweep of a checkpoint
    eval          clean/robust accuracy of a checkpoint

Global flags (per subcommand): --config, --seed, --out, --override key=value.
"""

import argparse
import json
import os
import sys

from .adversarial import AttackConfig, robust_accuracy
from .config import ExperimentConfig, apply_overrides, load_config
from .dog import estimate_dog
from .errors import AwdlabError, ConfigError
from .harness import (alternating_1d_search, build_dataset_pair,
                      build_model_from_config, grid_search_2d, run_experiment,
                      synthetic_landscape)
from .model import accuracy, load_checkpoint, restore_params
from .pruning import prune_sweep
from .rng import make_rng

__all__ = ["cli", "main"]


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="PATH", help="flat key = value config file")
    parser.add_argument("--seed", type=int, metavar="N", help="override train.seed")
    parser.add_argument("--out", metavar="DIR", help="override output.dir")
    parser.add_argument("--override", action="append", default=[],
                        metavar="KEY=VALUE", help="override any config key (repeatable)")


def _floats(text: str, flag: str) -> list[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"{flag}: {exc}") from None
    if not values:
        raise ConfigError(f"{flag}: no values given")
    return values


def _load(args, extra: dict | None = None) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    cfg = apply_overrides(cfg, args.override, seed=args.seed, out_dir=args.out)
    if extra:
        overridden = {item.partition("=")[0].strip() for item in args.override}
        mapping = cfg.to_mapping()
        for key, value in extra.items():
            if key not in overridden:
                mapping[key] = value
        cfg = ExperimentConfig.from_mapping(mapping)
    return cfg


def _print_run(result) -> None:
    final = result.summary["final"]
    print(f"out_dir = {result.out_dir}")
    print(f"epochs_run = {result.summary['epochs_run']}")
    print(f"aborted = {str(result.summary['aborted']).lower()}")
    for key in ("train_acc", "val_acc", "test_acc", "robust_val_acc"):
        if final.get(key) is not None:
            print(f"final.{key} = {final[key]:.4f}")
    print(f"final.weight_norm = {final['weight_norm']:.4f}")
    if "best_epoch" in result.summary:
        print(f"best.epoch = {result.summary['best_epoch']}")
        print(f"best.metric = {result.summary['best_metric']:.4f}")


def cmd_train(args) -> int:
    result = run_experiment(_load(args))
    _print_run(result)
    return 0


def cmd_advtrain(args) -> int:
    cfg = _load(args, extra={"attack.enabled": True,
                             "train.early_stopping": "robust-val"})
    result = run_experiment(cfg)
    _print_run(result)
    return 0


def cmd_noisy(args) -> int:
    extra = {}
    if args.rate is not None:
        extra["noise.rate"] = args.rate
    cfg = _load(args, extra=extra)
    if cfg.noise_rate <= 0:
        raise ConfigError("noisy: need noise.rate > 0 (set --rate or the config key)")
    result = run_experiment(cfg)
    _print_run(result)
    noise = result.summary.get("noise", {})
    for key, value in noise.items():
        if value is not None:
            print(f"noise.{key} = {value}")
    return 0


def cmd_estimate_dog(args) -> int:
    cfg = _load(args)
    if cfg.optimizer_mode != "fixed":
        raise ConfigError(
            "estimate-dog: the ratio is estimated from a fixed-decay trace; "
            f"got optimizer.mode = {cfg.optimizer_mode}")
    result = run_experiment(cfg)
    estimate = estimate_dog(result.trace, tol=cfg.dog_tol, patience=cfg.dog_patience)
    result.summary["dog_estimate"] = estimate
    with open(os.path.join(result.out_dir, "summary.json"), "w") as fh:
        json.dump(result.summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if cfg.output_figures:
        from .report import render_dog_figure
        render_dog_figure(os.path.join(result.out_dir, "figures", "dog_estimate.png"),
                          result.trace, cfg.dog_tol, cfg.dog_patience, estimate)
    _print_run(result)
    print(f"dog_estimate = {estimate:.6g}")
    return 0


def cmd_grid2d(args) -> int:
    cfg = _load(args)
    lrs = _floats(args.lrs, "--lrs")
    lams = _floats(args.lams, "--lams")
    out_dir = args.out or os.path.join(cfg.output_dir, "grid2d")
    grid = grid_search_2d(cfg, lrs, lams, out_dir, jobs=args.jobs)
    if cfg.output_figures:
        from .report import render_grid_heatmap
        os.makedirs(os.path.join(out_dir, "figures"), exist_ok=True)
        render_grid_heatmap(os.path.join(out_dir, "figures", "grid_heatmap.png"), grid)
    print(f"out_dir = {out_dir}")
    print(f"best.lr = {grid.best[0]:g}")
    print(f"best.lambda_or_dog = {grid.best[1]:g}")
    print(f"best.val_acc = {grid.best[2]:.4f}")
    return 0


def cmd_grid1d(args) -> int:
    cfg = _load(args)
    lrs = _floats(args.lrs, "--lrs")
    lams = _floats(args.lams, "--lams")
    if args.landscape == "synthetic":
        evaluate = lambda lr, lam: synthetic_landscape(lr, lam, seed=cfg.train_seed)
    else:
        from .harness import _cell_mapping, _grid_cell_worker

        def evaluate(lr, lam):
            return _grid_cell_worker((_cell_mapping(cfg, lr, lam, None), False))

    result = alternating_1d_search(lrs, lams, start_lr=args.start_lr,
                                   evaluate=evaluate, max_rounds=args.max_rounds)
    out_dir = args.out or os.path.join(cfg.output_dir, "grid1d")
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "search_path.csv"), "w", newline="") as fh:
        fh.write("round,lr,lambda_or_dog,val_acc\n")
        for i, (lr, lam, acc) in enumerate(result.path):
            fh.write(f"{i},{lr!r},{lam!r},{acc!r}\n")
    print(f"out_dir = {out_dir}")
    print(f"converged = {str(result.converged).lower()}")
    print(f"final.lr = {result.lr:g}")
    print(f"final.lambda_or_dog = {result.lam:g}")
    print(f"final.val_acc = {result.acc:.4f}")
    return 0


def _config_near_checkpoint(args) -> ExperimentConfig:
    if args.config:
        return _load(args)
    sibling = os.path.join(os.path.dirname(os.path.abspath(args.checkpoint)),
                           "config.effective.toml")
    if not os.path.exists(sibling):
        raise ConfigError(
            f"no --config given and no config.effective.toml next to "
            f"{args.checkpoint}")
    args.config = sibling
    return _load(args)


def cmd_prune(args) -> int:
    cfg = _config_near_checkpoint(args)
    sparsities = _floats(args.sparsities, "--sparsities")
    train_pool, test = build_dataset_pair(cfg)
    model = build_model_from_config(cfg, train_pool)
    restore_params(model, load_checkpoint(args.checkpoint))
    rows = prune_sweep(model, test.inputs, test.labels, sparsities)
    out_dir = args.out or os.path.join(cfg.output_dir, "prune")
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "prune_sweep.csv"), "w", newline="") as fh:
        fh.write("sparsity,test_acc\n")
        for s, acc in rows:
            fh.write(f"{s!r},{acc!r}\n")
    if cfg.output_figures:
        from .report import render_prune_figure
        os.makedirs(os.path.join(out_dir, "figures"), exist_ok=True)
        render_prune_figure(os.path.join(out_dir, "figures", "prune_sweep.png"), rows)
    print(f"out_dir = {out_dir}")
    for s, acc in rows:
        print(f"sparsity {s:.2f}: test_acc = {acc:.4f}")
    return 0


def cmd_eval(args) -> int:
    cfg = _config_near_checkpoint(args)
    train_pool, test = build_dataset_pair(cfg)
    model = build_model_from_config(cfg, train_pool)
    restore_params(model, load_checkpoint(args.checkpoint))
    clean = accuracy(model, test.inputs, test.labels)
    print(f"clean_test_acc = {clean:.4f}")
    if args.robust or cfg.attack_enabled:
        attack = AttackConfig(epsilon=cfg.attack_epsilon,
                              step_size=cfg.attack_step_size,
                              steps=cfg.attack_eval_steps,
                              random_start=cfg.attack_random_start)
        robust = robust_accuracy(model, test.inputs, test.labels, attack,
                                 make_rng(cfg.train_seed, "attack-eval-final"))
        print(f"robust_test_acc = {robust:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="awdlab",
        description="Training laboratory for fixed and adaptive weight decay.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("train", help="run one training experiment")
    _add_common(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("advtrain", help="adversarial training with PGD batches")
    _add_common(p)
    p.set_defaults(fn=cmd_advtrain)

    p = sub.add_parser("noisy", help="training with symmetric label noise")
    _add_common(p)
    p.add_argument("--rate", type=float, help="label flip probability")
    p.set_defaults(fn=cmd_noisy)

    p = sub.add_parser("estimate-dog",
                       help="estimate the decay/gradient ratio from a fixed run")
    _add_common(p)
    p.set_defaults(fn=cmd_estimate_dog)

    p = sub.add_parser("grid2d", help="full 2D (lr, lambda) sweep")
    _add_common(p)
    p.add_argument("--lrs", required=True, help="comma-separated learning rates")
    p.add_argument("--lams", required=True,
                   help="comma-separated lambda (or dog) values")
    p.add_argument("--jobs", type=int, default=1, help="parallel cell processes")
    p.set_defaults(fn=cmd_grid2d)

    p = sub.add_parser("grid1d", help="alternating coordinate-wise 1D search")
    _add_common(p)
    p.add_argument("--lrs", required=True, help="comma-separated learning rates")
    p.add_argument("--lams", required=True,
                   help="comma-separated lambda (or dog) values")
    p.add_argument("--start-lr", type=float, default=0.01,
                   help="learning rate the first lambda sweep is run at")
    p.add_argument("--landscape", choices=("synthetic", "runs"), default="synthetic",
                   help="cell evaluation: closed-form surface or real runs")
    p.add_argument("--max-rounds", type=int, default=10)
    p.set_defaults(fn=cmd_grid1d)

    p = sub.add_parser("prune", help="global magnitude prune sweep of a checkpoint")
    _add_common(p)
    p.add_argument("--checkpoint", required=True, metavar="PATH")
    p.add_argument("--sparsities", required=True,
                   help="comma-separated ascending sparsities")
    p.set_defaults(fn=cmd_prune)

    p = sub.add_parser("eval", help="clean/robust accuracy of a checkpoint")
    _add_common(p)
    p.add_argument("--checkpoint", required=True, metavar="PATH")
    p.add_argument("--robust", action="store_true",
                   help="also run the evaluation attack")
    p.set_defaults(fn=cmd_eval)

    return parser


def cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if not getattr(args, "fn", None):
        parser.print_help()
        return 2
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except AwdlabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli())


if __name__ == "__main__":
    main()
