import subprocess
import sys

import pytest

from atx.checkpoint import save_checkpoint
from atx.cli import EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, main
from atx.models import build_densenet_scaled

from conftest import tiny_arch, write_spec

AT_MODE = ("repetitions = 2", "repetitions = 2\nmode = \"attention_transfer\"\nbeta = 10.0")


@pytest.fixture
def spec(tmp_path):
    return str(write_spec(tmp_path / "spec.toml"))


@pytest.fixture
def teacher_ckpt(tmp_path):
    return str(save_checkpoint(tmp_path / "teacher.ckpt", build_densenet_scaled(tiny_arch(growth_rate=6), seed=1), 0))


def test_train_writes_one_run_per_repetition(spec, tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["train", "--spec", spec, "--out", str(out)]) == EXIT_OK
    for seed in (0, 1):
        assert len((out / f"rep_{seed}" / "epochs.csv").read_text().splitlines()) == 3
        assert (out / f"rep_{seed}" / "best.ckpt").exists()
    assert "best_val:" in capsys.readouterr().out
    assert (out / "report.txt").exists()


def test_reps_and_seed_flags(spec, tmp_path):
    out = tmp_path / "run"
    assert main(["train", "--spec", spec, "--out", str(out), "--reps", "1", "--seed", "7"]) == EXIT_OK
    assert [p.name for p in out.glob("rep_*")] == ["rep_7"]


def test_attention_transfer_needs_a_teacher(tmp_path, teacher_ckpt, capsys):
    at_spec = str(write_spec(tmp_path / "at.toml", AT_MODE))
    out = tmp_path / "run"
    assert main(["train", "--spec", at_spec, "--out", str(out)]) == EXIT_USAGE
    assert "--teacher" in capsys.readouterr().err
    assert not out.exists()  # rejected before any data or training work
    assert main(["train", "--spec", at_spec, "--out", str(out), "--teacher", teacher_ckpt, "--reps", "1"]) == EXIT_OK
    assert (out / "rep_0" / "epochs.csv").exists()


def test_teacher_flag_rejected_in_transfer_mode(spec, tmp_path, teacher_ckpt):
    assert main(["train", "--spec", spec, "--out", str(tmp_path / "o"), "--teacher", teacher_ckpt]) == EXIT_USAGE


def test_usage_errors(spec, tmp_path, capsys):
    out = str(tmp_path / "o")
    assert main([]) == EXIT_USAGE
    assert main(["fly"]) == EXIT_USAGE
    assert main(["train", "--spec", spec]) == EXIT_USAGE
    assert main(["train", "--spec", str(tmp_path / "missing.toml"), "--out", out]) == EXIT_USAGE
    assert main(["train", "--spec", str(write_spec(tmp_path / "b.toml", ("seed = 3", "seed = 3\nx = 1"))), "--out", out]) == EXIT_USAGE
    assert main(["compare", out]) == EXIT_USAGE
    assert main(["beta-search", "--spec", spec, "--out", out, "--grid", "0"]) == EXIT_USAGE
    assert main(["--help"]) == EXIT_OK
    capsys.readouterr()


def test_runtime_failure_exit_code(tmp_path):
    bad = tmp_path / "teacher.ckpt"
    bad.write_bytes(b"garbage")
    at_spec = str(write_spec(tmp_path / "at.toml", AT_MODE))
    assert main(["train", "--spec", at_spec, "--out", str(tmp_path / "o"), "--teacher", str(bad)]) == EXIT_RUNTIME


def test_beta_search_single_value_grid(spec, tmp_path, teacher_ckpt, capsys):
    out = tmp_path / "bs"
    assert main(["beta-search", "--spec", spec, "--out", str(out), "--teacher", teacher_ckpt, "--grid", "30"]) == EXIT_OK
    assert "best beta 30" in capsys.readouterr().out
    assert float((out / "best_beta.txt").read_text()) == 30.0


def test_size_sweep_and_compare(spec, tmp_path, capsys):
    out = tmp_path / "sweep"
    assert main(["size-sweep", "--spec", spec, "--out", str(out), "--sizes", "4", "8", "--reps", "1"]) == EXIT_OK
    lines = (out / "curve_transfer_learning.csv").read_text().splitlines()
    assert lines[0] == "size,metric,ci" and len(lines) == 3
    assert main(["size-sweep", "--spec", spec, "--out", str(out), "--sizes", "5000"]) == EXIT_USAGE
    assert main(["size-sweep", "--spec", spec, "--out", str(out)]) == EXIT_USAGE  # no sizes anywhere
    runs = [str(out / "transfer_learning" / "size_4"), str(out / "transfer_learning" / "size_8")]
    capsys.readouterr()
    assert main(["compare", *runs, "--out", str(tmp_path / "cmp")]) == EXIT_OK
    assert "| size_4 |" in capsys.readouterr().out
    assert (tmp_path / "cmp" / "comparison.csv").exists()


def test_gen_data(spec, tmp_path):
    out = tmp_path / "data"
    assert main(["gen-data", "--spec", spec, "--out", str(out), "--seed", "5"]) == EXIT_OK
    assert (out / "manifest.csv").exists() and (out / "synthetic_spec.json").exists()


def test_console_entry_point_runs_as_module(tmp_path):
    done = subprocess.run([sys.executable, "-m", "atx.cli", "bogus"], capture_output=True, text=True)
    assert done.returncode == EXIT_USAGE and "invalid choice" in done.stderr
