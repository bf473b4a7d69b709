"""Tests for the command-line interface: subcommands, exit codes, determinism."""

import json

import pytest

from fednsim.cli import main

TINY_CONFIG = """\
data = synth
synth_classes = 3
synth_per_class = 20
synth_test_per_class = 15
synth_dim = 6
synth_separation = 3.0
partition = sharding
clients = 4
shards_per_client = 1
hidden_dims = 8
method = fedntd
rounds = 3
local_epochs = 1
batch_size = 10
sampling_ratio = 1.0
lr0 = 0.05
seed = 5
"""


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "exp.cfg"
    path.write_text(TINY_CONFIG)
    return path


def run_cli(*argv) -> int:
    return main([str(a) for a in argv])


class TestRunCommand:
    def test_run_writes_outputs(self, tiny_config, tmp_path, capsys):
        out = tmp_path / "out"
        assert run_cli("run", tiny_config, "--out", out) == 0
        assert (out / "rounds.csv").exists()
        assert (out / "summary.json").exists()
        summary = json.loads((out / "summary.json").read_text())
        assert summary["logged_rounds"] == 3

    def test_repeat_runs_byte_identical(self, tiny_config, tmp_path):
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        assert run_cli("run", tiny_config, "--out", out_a) == 0
        assert run_cli("run", tiny_config, "--out", out_b) == 0
        assert (out_a / "rounds.csv").read_bytes() == (out_b / "rounds.csv").read_bytes()
        # summaries differ only in the echoed out_dir; compare with it patched out
        sa = json.loads((out_a / "summary.json").read_text())
        sb = json.loads((out_b / "summary.json").read_text())
        sa["config"]["out_dir"] = sb["config"]["out_dir"] = ""
        sa["config_hash"] = sb["config_hash"] = ""
        assert sa == sb

    def test_thread_counts_byte_identical(self, tiny_config, tmp_path):
        out_a, out_b = tmp_path / "t1", tmp_path / "t2"
        assert run_cli("run", tiny_config, "--out", out_a, "--threads", 1) == 0
        assert run_cli("run", tiny_config, "--out", out_b, "--threads", 4) == 0
        assert (out_a / "rounds.csv").read_bytes() == (out_b / "rounds.csv").read_bytes()

    def test_seed_override_changes_results(self, tiny_config, tmp_path):
        out_a, out_b = tmp_path / "s1", tmp_path / "s2"
        assert run_cli("run", tiny_config, "--out", out_a) == 0
        assert run_cli("run", tiny_config, "--out", out_b, "--seed", 6) == 0
        assert (out_a / "rounds.csv").read_bytes() != (out_b / "rounds.csv").read_bytes()

    def test_threads_env_fallback(self, tiny_config, tmp_path, monkeypatch):
        monkeypatch.setenv("FEDNSIM_THREADS", "2")
        out = tmp_path / "env"
        assert run_cli("run", tiny_config, "--out", out) == 0

    def test_checkpoints_written(self, tmp_path):
        path = tmp_path / "exp.cfg"
        path.write_text(TINY_CONFIG + "checkpoint_stride = 2\n")
        out = tmp_path / "ck"
        assert run_cli("run", path, "--out", out) == 0
        assert (out / "checkpoint_round_00002.fntd").exists()
        assert not (out / "checkpoint_round_00003.fntd").exists()

    def test_bad_config_exit_1(self, tmp_path, capsys):
        path = tmp_path / "bad.cfg"
        path.write_text("beta = -1\n")
        assert run_cli("run", path) == 1
        assert "beta" in capsys.readouterr().err

    def test_missing_config_exit_1(self, tmp_path):
        assert run_cli("run", tmp_path / "missing.cfg") == 1

    def test_divergence_exit_2(self, tmp_path, capsys):
        import numpy as np

        path = tmp_path / "explode.cfg"
        path.write_text(TINY_CONFIG.replace("lr0 = 0.05", "lr0 = 1e150"))
        with np.errstate(all="ignore"):
            assert run_cli("run", path, "--out", tmp_path / "x") == 2


class TestIdxDataSource:
    def test_run_from_idx_files(self, tmp_path):
        import numpy as np

        from test_data import write_idx_images, write_idx_labels

        rng = np.random.default_rng(0)
        # 2x2 images whose mean brightness encodes the class
        train_imgs = np.where(rng.uniform(size=(40, 2, 2)) < 0.5, 40, 210).astype(np.uint8)
        train_labels = (train_imgs.mean(axis=(1, 2)) > 125).astype(np.uint8)
        test_imgs = np.where(rng.uniform(size=(16, 2, 2)) < 0.5, 40, 210).astype(np.uint8)
        test_labels = (test_imgs.mean(axis=(1, 2)) > 125).astype(np.uint8)
        write_idx_images(tmp_path / "train-images", train_imgs)
        write_idx_labels(tmp_path / "train-labels", train_labels)
        write_idx_images(tmp_path / "test-images", test_imgs)
        write_idx_labels(tmp_path / "test-labels", test_labels)

        config = tmp_path / "idx.cfg"
        config.write_text(
            "data = idx\n"
            f"idx_train_images = {tmp_path / 'train-images'}\n"
            f"idx_train_labels = {tmp_path / 'train-labels'}\n"
            f"idx_test_images = {tmp_path / 'test-images'}\n"
            f"idx_test_labels = {tmp_path / 'test-labels'}\n"
            "partition = iid\nclients = 2\nhidden_dims = 4\n"
            "rounds = 2\nlocal_epochs = 1\nbatch_size = 10\n"
            "sampling_ratio = 1.0\nlr0 = 0.1\nseed = 3\n"
        )
        out = tmp_path / "out"
        assert run_cli("run", config, "--out", out) == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["logged_rounds"] == 2

    def test_bad_idx_file_exit_1(self, tmp_path):
        config = tmp_path / "idx.cfg"
        (tmp_path / "garbage").write_bytes(b"\x00" * 8)
        config.write_text(
            "data = idx\n"
            + "".join(
                f"idx_{k} = {tmp_path / 'garbage'}\n"
                for k in ("train_images", "train_labels", "test_images", "test_labels")
            )
        )
        assert run_cli("run", config) == 1


class TestPartitionCommand:
    def test_stats_output(self, tiny_config, capsys):
        assert run_cli("partition", tiny_config, "--stats") == 0
        out = capsys.readouterr().out
        assert "client 0:" in out
        assert "summary:" in out

    def test_json_export(self, tiny_config, tmp_path):
        target = tmp_path / "partition.json"
        assert run_cli("partition", tiny_config, "--out", target) == 0
        obj = json.loads(target.read_text())
        assert len(obj) == 4
        assert all("p_tilde" in entry for entry in obj.values())


class TestVerifyCommand:
    def test_passes_and_prints_lines(self, capsys):
        assert run_cli("verify", "--trials", 10) == 0
        lines = [l for l in capsys.readouterr().out.splitlines() if l]
        assert all(l.startswith("PASS") for l in lines)
        assert any("kl_split_identity" in l for l in lines)


class TestMetricsCommand:
    def test_recomputes_from_csv(self, tiny_config, tmp_path, capsys):
        out = tmp_path / "out"
        assert run_cli("run", tiny_config, "--out", out) == 0
        capsys.readouterr()
        assert run_cli("metrics", out / "rounds.csv") == 0
        text = capsys.readouterr().out
        assert "forgetting_F" in text
        assert "cosine_to_previous" in text

    def test_missing_csv_exit_1(self, tmp_path):
        assert run_cli("metrics", tmp_path / "nope.csv") == 1


class TestUsage:
    def test_unknown_subcommand_exit_1(self, capsys):
        assert run_cli("frobnicate") == 1
        assert "usage" in capsys.readouterr().err.lower()

    def test_no_arguments_exit_1(self):
        assert main([]) == 1

    def test_help_exit_0(self, capsys):
        assert main(["--help"]) == 0
        assert "usage" in capsys.readouterr().out.lower()
