import json
import subprocess
import sys

import pytest

from schauderlab.cli import EXIT_BREACH, EXIT_INVALID, EXIT_OK, main
from schauderlab.config import EXPERIMENTS


@pytest.mark.parametrize("exp", EXPERIMENTS)
def test_subcommand_runs(exp, tmp_path, capsys):
    out = tmp_path / exp
    rc = main([exp, "--seed", "3", "--out", str(out), "--instances", "1", "--m", "33"])
    assert rc == EXIT_OK
    summary = json.loads(capsys.readouterr().out)
    assert summary["experiment"] == exp and summary["failures"] == 0
    report = json.loads((out / "report.json").read_text())
    assert report["config"]["seed"] == 3
    assert (out / "rows.csv").exists() and (out / "headline.dat").exists()


def test_rows_are_reproducible(tmp_path):
    args = ["norms", "--seed", "5", "--instances", "2", "--m", "33"]
    assert main(args + ["--out", str(tmp_path / "a")]) == EXIT_OK
    assert main(args + ["--out", str(tmp_path / "b")]) == EXIT_OK
    assert (tmp_path / "a" / "rows.csv").read_bytes() == (tmp_path / "b" / "rows.csv").read_bytes()


def test_config_file_and_override(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text('experiment = "solve"\nm = 17\ninstances = 1\n')
    assert main(["solve", "--config", str(cfg), "--m", "33", "--out", str(tmp_path / "o")]) == EXIT_OK
    rep = json.loads((tmp_path / "o" / "report.json").read_text())
    assert rep["config"]["m"] == 33


@pytest.mark.parametrize("argv", [
    ["solve", "--m", "64"],
    ["solve", "--eps", "2"],
    ["rhi", "--alpha", "0.5", "--p", "0.9"],
    ["solve", "--m", "abc"],
    ["frobnicate"],
    [],
])
def test_validation_errors_exit_2(argv, tmp_path, capsys):
    assert main(argv + (["--out", str(tmp_path)] if argv and argv[0] != "frobnicate" else [])) == EXIT_INVALID


def test_config_experiment_mismatch(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text('experiment = "rhi"\n')
    assert main(["solve", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_INVALID


def test_assert_breach_exit_3(tmp_path, capsys):
    # an unreachable residual target makes the solver fail, which counts as a breach
    argv = ["solve", "--instances", "1", "--m", "17", "--tol", "1e-30", "--out", str(tmp_path)]
    assert main(argv) == EXIT_OK
    assert main(argv + ["--assert"]) == EXIT_BREACH
    assert "breach" in capsys.readouterr().err


def test_console_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "schauderlab.cli", "norms", "--instances", "1", "--m", "33",
                        "--out", str(tmp_path)], capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    r = subprocess.run([sys.executable, "-m", "schauderlab.cli", "solve", "--m", "4"], capture_output=True, text=True)
    assert r.returncode == 2 and "m must be" in r.stderr
