import json
import math
import os

import numpy as np
import pytest

from awdlab.config import ExperimentConfig
from awdlab.data import save_dataset, synth_clusters
from awdlab.errors import ConfigError
from awdlab.harness import (GRID_HEADER, METRICS_HEADER, alternating_1d_search,
                            build_dataset_pair, build_model_from_config,
                            geometric_sequence, grid_search_2d, run_experiment,
                            synthetic_landscape)
from awdlab.model import load_checkpoint, restore_params, accuracy
from awdlab.data import split_train_val


def tiny_config(tmp_path, **overrides) -> ExperimentConfig:
    mapping = {
        "dataset.kind": "clusters",
        "dataset.classes": 3,
        "dataset.dim": 4,
        "dataset.per_class": 12,
        "dataset.test_per_class": 6,
        "dataset.separation": 5.0,
        "model.hidden": [8],
        "train.epochs": 2,
        "train.batch_size": 16,
        "train.val_fraction": 0.25,
        "train.base_lr": 0.05,
        "output.dir": str(tmp_path / "run"),
        "output.figures": False,
    }
    mapping.update(overrides)
    return ExperimentConfig.from_mapping(mapping)


class TestGeometricSequence:
    def test_endpoints_are_exact(self):
        seq = geometric_sequence(5e-5, 5e-3, 17)
        assert len(seq) == 17
        assert seq[0] == 5e-5
        assert seq[-1] == 5e-3

    def test_ratios_are_constant(self):
        seq = geometric_sequence(0.02, 0.04, 9)
        ratios = [seq[i + 1] / seq[i] for i in range(8)]
        for r in ratios:
            assert r == pytest.approx(2 ** (1 / 8), rel=1e-12)

    def test_descending_sequences_work(self):
        seq = geometric_sequence(1.0, 0.001, 4)
        assert seq[0] == 1.0 and seq[-1] == 0.001
        assert all(seq[i] > seq[i + 1] for i in range(3))

    def test_validation(self):
        with pytest.raises(ValueError):
            geometric_sequence(0.0, 1.0, 5)
        with pytest.raises(ValueError):
            geometric_sequence(1.0, 2.0, 1)


class TestSyntheticLandscape:
    def test_two_bumps_where_expected(self):
        narrow = synthetic_landscape(0.01, 0.005)
        broad = synthetic_landscape(0.1, 0.0005)
        floor = synthetic_landscape(1.0, 5e-5)
        assert broad > narrow > floor
        assert 0.88 < narrow < 0.93
        assert broad > 0.93

    def test_deterministic_with_noise(self):
        a = synthetic_landscape(0.05, 0.001, seed=3, noise=0.01)
        b = synthetic_landscape(0.05, 0.001, seed=3, noise=0.01)
        assert a == b

    def test_clamped_to_unit_interval(self):
        for lr in (1e-6, 0.01, 0.1, 10.0):
            for lam in (1e-7, 0.0005, 0.1):
                assert 0.0 <= synthetic_landscape(lr, lam) <= 1.0

    def test_positive_arguments_required(self):
        with pytest.raises(ValueError):
            synthetic_landscape(0.0, 0.1)
        with pytest.raises(ValueError):
            synthetic_landscape(0.1, -1.0)


class TestAlternatingSearch:
    LRS = [0.001, 0.01, 0.1, 1.0]
    LAMS = geometric_sequence(5e-5, 5e-3, 5)

    def test_coordinate_search_parks_on_narrow_bump(self):
        # Sweeping lambda first at lr = 0.01 locks onto the narrow optimum;
        # neither 1D sweep afterwards can cross the valley to the broad one.
        result = alternating_1d_search(
            self.LRS, self.LAMS, start_lr=0.01,
            evaluate=lambda lr, lam: synthetic_landscape(lr, lam))
        assert result.converged
        assert result.lr == 0.01
        assert result.lam == pytest.approx(0.005, rel=1e-12)
        assert result.acc == pytest.approx(synthetic_landscape(0.01, 0.005))

    def test_full_grid_argmax_prefers_broad_bump(self):
        cells = [(lr, lam, synthetic_landscape(lr, lam))
                 for lr in self.LRS for lam in self.LAMS]
        best = max(cells, key=lambda c: c[2])
        assert best[0] == 0.1
        assert best[1] == pytest.approx(5e-4, rel=1e-9)
        assert best[2] > synthetic_landscape(0.01, 0.005)

    def test_each_cell_evaluated_once(self):
        calls = []

        def ev(lr, lam):
            calls.append((lr, lam))
            return synthetic_landscape(lr, lam)

        alternating_1d_search(self.LRS, self.LAMS, start_lr=0.01, evaluate=ev)
        assert len(calls) == len(set(calls))

    def test_respects_max_rounds(self):
        # Round 1 moves off the start cell, so a single round cannot confirm
        # a fixed point; the cap stops the search unconverged.
        result = alternating_1d_search(
            self.LRS, self.LAMS, start_lr=0.01,
            evaluate=lambda lr, lam: synthetic_landscape(lr, lam),
            max_rounds=1)
        assert result.rounds == 1
        assert not result.converged

    def test_path_values_never_decrease(self):
        # Each sweep re-optimizes one coordinate with the other held at its
        # best known value, so the running accuracy is monotone.
        result = alternating_1d_search(
            self.LRS, self.LAMS, start_lr=0.001,
            evaluate=lambda lr, lam: synthetic_landscape(lr, lam))
        values = [acc for _, _, acc in result.path]
        assert all(b >= a for a, b in zip(values, values[1:]))

    def test_empty_axes_rejected(self):
        with pytest.raises(ConfigError):
            alternating_1d_search([], [0.1], 0.1, evaluate=lambda a, b: 0.0)


class TestBuilders:
    def test_cluster_pair_shapes(self, tmp_path):
        cfg = tiny_config(tmp_path)
        train, test = build_dataset_pair(cfg)
        assert len(train) == 36
        assert len(test) == 18
        assert train.num_classes == 3
        assert not np.array_equal(train.inputs[:6], test.inputs[:6])

    def test_stripes_pair_is_image(self, tmp_path):
        cfg = tiny_config(tmp_path, **{
            "dataset.kind": "stripes", "dataset.classes": 2,
            "dataset.height": 8, "dataset.width": 8,
            "dataset.per_class": 6, "dataset.test_per_class": 4,
        })
        train, test = build_dataset_pair(cfg)
        assert train.is_image
        assert train.inputs.shape == (12, 1, 8, 8)

    def test_file_dataset_carves_test_split(self, tmp_path):
        ds = synth_clusters(3, 4, 20, 4.0, seed=5)
        path = tmp_path / "pool.bin"
        save_dataset(path, ds)
        cfg = tiny_config(tmp_path, **{"dataset.kind": "file",
                                       "dataset.path": str(path)})
        train, test = build_dataset_pair(cfg)
        assert len(train) + len(test) == 60
        assert len(test) == 12  # 20% stratified carve
        np.testing.assert_array_equal(np.bincount(test.labels), [4, 4, 4])

    def test_file_dataset_with_explicit_test(self, tmp_path):
        a = synth_clusters(2, 4, 10, 4.0, seed=6)
        b = synth_clusters(2, 4, 5, 4.0, seed=7)
        pa, pb = tmp_path / "a.bin", tmp_path / "b.bin"
        save_dataset(pa, a)
        save_dataset(pb, b)
        cfg = tiny_config(tmp_path, **{
            "dataset.kind": "file", "dataset.path": str(pa),
            "dataset.test_path": str(pb), "dataset.classes": 2})
        train, test = build_dataset_pair(cfg)
        assert len(train) == 20 and len(test) == 10

    def test_cnn_requires_images(self, tmp_path):
        cfg = tiny_config(tmp_path, **{"model.kind": "cnn"})
        train, _ = build_dataset_pair(cfg)
        with pytest.raises(ConfigError, match="cnn requires image"):
            build_model_from_config(cfg, train)

    def test_mlp_dimensions_follow_dataset(self, tmp_path):
        cfg = tiny_config(tmp_path)
        train, _ = build_dataset_pair(cfg)
        model = build_model_from_config(cfg, train)
        weights = [p for n, p in sorted(model.params.items()) if "weight" in n]
        assert weights[0].data.shape == (4, 8)
        assert weights[1].data.shape == (8, 3)


class TestRunExperiment:
    def test_smoke_run_writes_all_artifacts(self, tmp_path):
        cfg = tiny_config(tmp_path, **{"output.figures": True})
        result = run_experiment(cfg)
        out = tmp_path / "run"
        for name in ("config.effective.toml", "metrics.csv", "dog_trace.csv",
                     "final.ckpt", "best.ckpt", "summary.json"):
            assert (out / name).exists(), name
        assert (out / "figures" / "curves.png").exists()
        assert not result.aborted
        assert len(result.records) == 3  # initial eval + 2 epochs

    def test_metrics_csv_has_pinned_header(self, tmp_path):
        run_experiment(tiny_config(tmp_path))
        lines = (tmp_path / "run" / "metrics.csv").read_text().splitlines()
        assert lines[0] == ",".join(METRICS_HEADER)
        assert len(lines) == 4  # header + epoch 0..2

    def test_rerun_is_byte_identical(self, tmp_path):
        cfg_a = tiny_config(tmp_path, **{"output.dir": str(tmp_path / "a")})
        cfg_b = tiny_config(tmp_path, **{"output.dir": str(tmp_path / "b")})
        run_experiment(cfg_a)
        run_experiment(cfg_b)
        for name in ("metrics.csv", "dog_trace.csv", "summary.json",
                     "final.ckpt", "best.ckpt"):
            a = (tmp_path / "a" / name).read_bytes()
            b = (tmp_path / "b" / name).read_bytes()
            assert a == b, name

    def test_different_seed_changes_results(self, tmp_path):
        ra = run_experiment(tiny_config(tmp_path, **{
            "output.dir": str(tmp_path / "a"), "train.seed": 0}))
        rb = run_experiment(tiny_config(tmp_path, **{
            "output.dir": str(tmp_path / "b"), "train.seed": 1}))
        assert ra.records[-1]["weight_norm"] != rb.records[-1]["weight_norm"]

    def test_summary_reports_counts_and_mode(self, tmp_path):
        result = run_experiment(tiny_config(tmp_path, **{
            "optimizer.mode": "adaptive"}))
        s = result.summary
        assert s["n_train"] == 27 and s["n_val"] == 9 and s["n_test"] == 18
        assert s["mode"] == "adaptive"
        assert s["epochs_run"] == 2
        data = json.loads((tmp_path / "run" / "summary.json").read_text())
        assert data["mode"] == "adaptive"

    def test_best_checkpoint_restores_to_best_metric(self, tmp_path):
        cfg = tiny_config(tmp_path, **{"train.epochs": 4})
        result = run_experiment(cfg)
        ckpt = load_checkpoint(tmp_path / "run" / "best.ckpt")
        assert ckpt.scalar("meta/epoch") == float(result.summary["best_epoch"])
        train_pool, _ = build_dataset_pair(cfg)
        _, val = split_train_val(train_pool, cfg.train_val_fraction, cfg.train_seed)
        model = build_model_from_config(cfg, train_pool)
        restore_params(model, ckpt)
        assert accuracy(model, val.inputs, val.labels) == pytest.approx(
            result.summary["best_metric"])

    def test_no_best_checkpoint_when_stopping_disabled(self, tmp_path):
        result = run_experiment(tiny_config(tmp_path, **{
            "train.early_stopping": "none"}))
        assert not (tmp_path / "run" / "best.ckpt").exists()
        assert result.best_epoch is None
        assert result.summary["selected_val_acc"] == result.records[-1]["val_acc"]

    def test_abort_on_divergence_keeps_logs(self, tmp_path):
        cfg = tiny_config(tmp_path, **{"train.base_lr": 1e30,
                                       "train.epochs": 8})
        result = run_experiment(cfg)
        assert result.aborted
        assert result.summary["abort_reason"]
        assert result.summary["epochs_run"] < 8
        assert (tmp_path / "run" / "metrics.csv").exists()
        assert len(result.records) >= 1

    def test_label_noise_artifacts(self, tmp_path):
        cfg = tiny_config(tmp_path, **{"noise.rate": 0.3})
        result = run_experiment(cfg)
        noise = result.summary["noise"]
        assert noise["rate"] == 0.3
        assert 0 < noise["n_flipped"] < 27
        lines = (tmp_path / "run" / "noise_indices.csv").read_text().splitlines()
        assert lines[0] == "index,original_label,noisy_label"
        assert len(lines) == 1 + noise["n_flipped"]
        for line in lines[1:]:
            _, orig, noisy = line.split(",")
            assert orig != noisy

    def test_adversarial_run_fills_robust_column(self, tmp_path):
        cfg = tiny_config(tmp_path, **{
            "attack.enabled": True,
            "attack.steps": 2, "attack.eval_steps": 2,
            "train.early_stopping": "robust-val",
            "train.epochs": 1,
        })
        result = run_experiment(cfg)
        for rec in result.records:
            assert rec["robust_val_acc"] is not None
            assert rec["robust_val_acc"] <= rec["val_acc"] + 1e-12
        assert result.summary["best_metric"] == max(
            r["robust_val_acc"] for r in result.records)

    def test_augmentation_rejected_on_vector_data(self, tmp_path):
        cfg = tiny_config(tmp_path, **{"augment.enabled": "on"})
        with pytest.raises(ConfigError, match="augmentation needs image"):
            run_experiment(cfg, write_artifacts=False)

    def test_stripes_cnn_with_auto_augmentation(self, tmp_path):
        cfg = tiny_config(tmp_path, **{
            "dataset.kind": "stripes", "dataset.classes": 2,
            "dataset.height": 8, "dataset.width": 8,
            "dataset.per_class": 6, "dataset.test_per_class": 4,
            "model.kind": "cnn", "model.channels": [4],
            "train.epochs": 1, "train.batch_size": 8,
            "augment.pad": 1,
        })
        result = run_experiment(cfg, write_artifacts=False)
        assert not result.aborted
        assert result.records[-1]["epoch"] == 1

    def test_trace_rows_respect_log_stride(self, tmp_path):
        cfg = tiny_config(tmp_path, **{"train.log_stride": 2})
        result = run_experiment(cfg, write_artifacts=False)
        steps = [row.step for row in result.trace.rows]
        assert steps  # something was logged
        assert all(s % 2 == 0 for s in steps)


class TestGridSearch:
    def test_grid_matches_individual_runs(self, tmp_path):
        cfg = tiny_config(tmp_path, **{"train.epochs": 1})
        lrs = [0.01, 0.1]
        lams = [0.0005, 0.005]
        grid = grid_search_2d(cfg, lrs, lams, str(tmp_path / "grid"))
        assert grid.matrix.shape == (2, 2)
        assert np.isfinite(grid.matrix).all()
        # re-run one cell by hand and compare
        mapping = cfg.to_mapping()
        mapping["train.base_lr"] = 0.1
        mapping["optimizer.lambda_wd"] = 0.005
        mapping["output.figures"] = False
        mapping["output.dir"] = str(tmp_path / "manual")
        manual = run_experiment(ExperimentConfig.from_mapping(mapping))
        assert grid.matrix[1, 1] == pytest.approx(
            manual.summary["selected_val_acc"])

    def test_grid_csv_and_summary_written(self, tmp_path):
        cfg = tiny_config(tmp_path, **{"train.epochs": 1})
        grid = grid_search_2d(cfg, [0.05], [0.001], str(tmp_path / "grid"))
        lines = (tmp_path / "grid" / "grid.csv").read_text().splitlines()
        assert lines[0] == ",".join(GRID_HEADER)
        assert len(lines) == 2
        data = json.loads((tmp_path / "grid" / "grid_summary.json").read_text())
        assert data["best"]["lr"] == 0.05
        assert (tmp_path / "grid" / "cells" / "lr0-lam0" / "metrics.csv").exists()

    def test_best_is_argmax_of_rows(self, tmp_path):
        cfg = tiny_config(tmp_path, **{"train.epochs": 1})
        grid = grid_search_2d(cfg, [0.01, 0.1], [0.0005, 0.05],
                              str(tmp_path / "grid"), write_cells=False)
        rows = grid.to_rows()
        top = max((r for r in rows if math.isfinite(r[2])), key=lambda r: r[2])
        assert grid.best == top

    def test_invalid_cell_scores_nan(self, tmp_path):
        cfg = tiny_config(tmp_path, **{"train.epochs": 1})
        grid = grid_search_2d(cfg, [0.05], [0.001, -1.0],
                              str(tmp_path / "grid"), write_cells=False)
        assert np.isfinite(grid.matrix[0, 0])
        assert np.isnan(grid.matrix[0, 1])
        assert grid.best[1] == 0.001
        # the all-nan column reports nan bests instead of crashing
        assert math.isnan(grid.best_per_lam[1][2])

    def test_parallel_jobs_match_serial(self, tmp_path):
        cfg = tiny_config(tmp_path, **{"train.epochs": 1})
        serial = grid_search_2d(cfg, [0.01, 0.1], [0.001],
                                str(tmp_path / "gs"), jobs=1, write_cells=False)
        parallel = grid_search_2d(cfg, [0.01, 0.1], [0.001],
                                  str(tmp_path / "gp"), jobs=2, write_cells=False)
        np.testing.assert_array_equal(serial.matrix, parallel.matrix)

    def test_adaptive_grid_sweeps_dog_axis(self, tmp_path):
        cfg = tiny_config(tmp_path, **{"train.epochs": 1,
                                       "optimizer.mode": "adaptive"})
        grid = grid_search_2d(cfg, [0.05], [0.01, 0.05],
                              str(tmp_path / "grid"), write_cells=True)
        cell_cfg = (tmp_path / "grid" / "cells" / "lr0-lam1" /
                    "config.effective.toml").read_text()
        assert "optimizer.dog = 0.05" in cell_cfg
        assert np.isfinite(grid.matrix).all()

    def test_empty_axes_rejected(self, tmp_path):
        with pytest.raises(ConfigError):
            grid_search_2d(tiny_config(tmp_path), [], [0.1], str(tmp_path / "g"))
