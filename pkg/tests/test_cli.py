import json

import pytest

from awdlab.cli import cli

TINY = """\
dataset.kind = clusters
dataset.classes = 3
dataset.dim = 4
dataset.per_class = 12
dataset.test_per_class = 6
dataset.separation = 5.0
model.hidden = [8]
train.epochs = 2
train.batch_size = 16
train.val_fraction = 0.25
train.base_lr = 0.05
output.figures = false
"""


@pytest.fixture
def tiny_cfg(tmp_path):
    path = tmp_path / "tiny.toml"
    path.write_text(TINY)
    return path


def run_cli(*args):
    return cli([str(a) for a in args])


class TestTrain:
    def test_exit_zero_and_artifacts(self, tiny_cfg, tmp_path, capsys):
        out = tmp_path / "run"
        code = run_cli("train", "--config", tiny_cfg, "--out", out)
        assert code == 0
        captured = capsys.readouterr().out
        assert f"out_dir = {out}" in captured
        assert "final.val_acc" in captured
        assert (out / "metrics.csv").exists()
        assert (out / "summary.json").exists()

    def test_override_flag(self, tiny_cfg, tmp_path, capsys):
        out = tmp_path / "run"
        code = run_cli("train", "--config", tiny_cfg, "--out", out,
                       "--override", "optimizer.mode=adaptive",
                       "--override", "optimizer.dog=0.02")
        assert code == 0
        text = (out / "config.effective.toml").read_text()
        assert 'optimizer.mode = "adaptive"' in text
        assert "optimizer.dog = 0.02" in text

    def test_unknown_override_exits_2(self, tiny_cfg, tmp_path, capsys):
        code = run_cli("train", "--config", tiny_cfg, "--out", tmp_path / "x",
                       "--override", "nope=1")
        assert code == 2
        assert "unknown key" in capsys.readouterr().err

    def test_bad_config_file_exits_2(self, tmp_path, capsys):
        path = tmp_path / "bad.toml"
        path.write_text("train.epochs = banana split\n")
        code = run_cli("train", "--config", path)
        assert code == 2
        assert "error:" in capsys.readouterr().err

    def test_missing_config_file_exits_1(self, tmp_path, capsys):
        code = run_cli("train", "--config", tmp_path / "absent.toml")
        assert code == 1

    def test_seed_flag_changes_outputs(self, tiny_cfg, tmp_path):
        run_cli("train", "--config", tiny_cfg, "--out", tmp_path / "a",
                "--seed", "0")
        run_cli("train", "--config", tiny_cfg, "--out", tmp_path / "b",
                "--seed", "5")
        a = (tmp_path / "a" / "metrics.csv").read_bytes()
        b = (tmp_path / "b" / "metrics.csv").read_bytes()
        assert a != b


class TestVariants:
    def test_advtrain_forces_attack_and_robust_stopping(self, tiny_cfg,
                                                        tmp_path, capsys):
        out = tmp_path / "adv"
        code = run_cli("advtrain", "--config", tiny_cfg, "--out", out,
                       "--override", "train.epochs=1",
                       "--override", "attack.steps=2",
                       "--override", "attack.eval_steps=2")
        assert code == 0
        assert "final.robust_val_acc" in capsys.readouterr().out
        text = (out / "config.effective.toml").read_text()
        assert "attack.enabled = true" in text
        assert 'train.early_stopping = "robust-val"' in text

    def test_noisy_requires_rate(self, tiny_cfg, tmp_path, capsys):
        code = run_cli("noisy", "--config", tiny_cfg, "--out", tmp_path / "n")
        assert code == 2
        assert "noise.rate" in capsys.readouterr().err

    def test_noisy_reports_subset_accuracies(self, tiny_cfg, tmp_path, capsys):
        out = tmp_path / "n"
        code = run_cli("noisy", "--config", tiny_cfg, "--out", out,
                       "--rate", "0.3")
        assert code == 0
        captured = capsys.readouterr().out
        assert "noise.n_flipped" in captured
        assert (out / "noise_indices.csv").exists()


class TestEstimateDog:
    def test_estimates_and_updates_summary(self, tiny_cfg, tmp_path, capsys):
        out = tmp_path / "dog"
        code = run_cli("estimate-dog", "--config", tiny_cfg, "--out", out)
        assert code == 0
        captured = capsys.readouterr().out
        assert "dog_estimate = " in captured
        data = json.loads((out / "summary.json").read_text())
        assert data["dog_estimate"] > 0

    def test_rejects_non_fixed_mode(self, tiny_cfg, tmp_path, capsys):
        code = run_cli("estimate-dog", "--config", tiny_cfg,
                       "--out", tmp_path / "x",
                       "--override", "optimizer.mode=adaptive")
        assert code == 2
        assert "fixed" in capsys.readouterr().err


class TestGrids:
    def test_grid2d_writes_table(self, tiny_cfg, tmp_path, capsys):
        out = tmp_path / "grid"
        code = run_cli("grid2d", "--config", tiny_cfg, "--out", out,
                       "--override", "train.epochs=1",
                       "--lrs", "0.01,0.1", "--lams", "0.0005,0.005")
        assert code == 0
        captured = capsys.readouterr().out
        assert "best.lr" in captured
        lines = (out / "grid.csv").read_text().splitlines()
        assert lines[0] == "lr,lambda_or_dog,val_acc"
        assert len(lines) == 5

    def test_grid1d_on_synthetic_surface_finds_trap(self, tmp_path, capsys):
        out = tmp_path / "g1"
        code = run_cli("grid1d", "--out", out,
                       "--lrs", "0.001,0.01,0.1,1.0",
                       "--lams", "5e-05,0.000158,0.0005,0.00158,0.005",
                       "--start-lr", "0.01", "--landscape", "synthetic")
        assert code == 0
        captured = capsys.readouterr().out
        assert "converged = true" in captured
        assert "final.lr = 0.01" in captured
        assert "final.lambda_or_dog = 0.005" in captured
        assert (out / "search_path.csv").exists()

    def test_grid1d_with_real_runs(self, tiny_cfg, tmp_path, capsys):
        out = tmp_path / "g1r"
        code = run_cli("grid1d", "--config", tiny_cfg, "--out", out,
                       "--override", "train.epochs=1",
                       "--lrs", "0.01,0.1", "--lams", "0.0005,0.005",
                       "--start-lr", "0.01", "--landscape", "runs")
        assert code == 0
        assert "final.val_acc" in capsys.readouterr().out

    def test_grid2d_bad_lr_list_exits_2(self, tiny_cfg, tmp_path, capsys):
        code = run_cli("grid2d", "--config", tiny_cfg,
                       "--out", tmp_path / "x",
                       "--lrs", "abc", "--lams", "0.1")
        assert code == 2


class TestCheckpointTools:
    @pytest.fixture
    def trained(self, tiny_cfg, tmp_path):
        out = tmp_path / "base"
        assert run_cli("train", "--config", tiny_cfg, "--out", out) == 0
        return out

    def test_prune_uses_sibling_config(self, trained, tmp_path, capsys):
        out = tmp_path / "prune"
        code = run_cli("prune", "--checkpoint", trained / "final.ckpt",
                       "--out", out, "--sparsities", "0.0,0.5,0.9")
        assert code == 0
        captured = capsys.readouterr().out
        assert "sparsity 0.50" in captured
        lines = (out / "prune_sweep.csv").read_text().splitlines()
        assert lines[0] == "sparsity,test_acc"
        assert len(lines) == 4

    def test_prune_without_config_anywhere_exits_2(self, tmp_path, capsys):
        ckpt = tmp_path / "orphan.ckpt"
        ckpt.write_bytes(b"AWDLAB01")
        code = run_cli("prune", "--checkpoint", ckpt, "--sparsities", "0.5")
        assert code == 2
        assert "config.effective.toml" in capsys.readouterr().err

    def test_eval_clean(self, trained, capsys):
        code = run_cli("eval", "--checkpoint", trained / "best.ckpt")
        assert code == 0
        assert "clean_test_acc" in capsys.readouterr().out

    def test_eval_robust_flag(self, trained, capsys):
        code = run_cli("eval", "--checkpoint", trained / "best.ckpt",
                       "--robust", "--override", "attack.eval_steps=2")
        assert code == 0
        captured = capsys.readouterr().out
        assert "robust_test_acc" in captured


class TestTopLevel:
    def test_no_command_prints_help(self, capsys):
        assert run_cli() == 2
        assert "COMMAND" in capsys.readouterr().out

    def test_help_exits_zero(self, capsys):
        assert run_cli("--help") == 0
        assert "training laboratory" in capsys.readouterr().out.lower()

    def test_unknown_command_exits_2(self, capsys):
        assert run_cli("frobnicate") == 2
