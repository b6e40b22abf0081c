import csv
import re

import numpy as np
import pytest
from typer.testing import CliRunner

from app.cli import cli

runner = CliRunner()

SMALL_TRAIN = ["train", "--n", "64", "--d", "6", "--classes", "3", "--hidden", "8", "--steps", "10"]


def _reported(output: str, quantity: str) -> float:
    line = next(line for line in output.splitlines() if quantity in line)
    return float(re.findall(r"-?\d+\.\d+", line)[-1])


def _rows(path):
    with path.open(newline="") as f:
        return list(csv.reader(f))


def test_transform_worked_example():
    result = runner.invoke(cli, ["transform", "--kind", "cosh-rms", "--shape", "2x2", "--matrix", "1,0;0,0"])
    assert result.exit_code == 0, result.output
    assert _reported(result.output, "rms_statistic") == pytest.approx(1.159859, abs=1e-6)
    assert _reported(result.output, "output_spectral_norm") == pytest.approx(0.862174, abs=1e-6)
    first_row = next(line for line in result.output.splitlines() if line.endswith(",0.000000") and "," in line)
    assert [float(x) for x in first_row.split(",")] == pytest.approx([0.862174, 0.0], abs=1e-6)


def test_transform_identity_echoes_input():
    result = runner.invoke(cli, ["transform", "--kind", "identity", "--matrix", "1,2;3,4"])
    assert result.exit_code == 0, result.output
    assert "1.000000,2.000000" in result.output
    assert "3.000000,4.000000" in result.output


def test_transform_writes_output_matrix(tmp_path):
    out = tmp_path / "u.csv"
    result = runner.invoke(cli, ["transform", "--kind", "polar", "--shape", "5x3", "--seed", "2", "--out", str(out)])
    assert result.exit_code == 0, result.output
    u = np.loadtxt(out, delimiter=",", ndmin=2)
    assert u.shape == (5, 3)
    np.testing.assert_allclose(u.T @ u, np.eye(3), atol=1e-10)


def test_transform_reports_zero_matrix():
    result = runner.invoke(cli, ["transform", "--kind", "polar", "--matrix", "0,0;0,0"])
    assert result.exit_code == 1
    assert "zero matrix" in result.output


def test_transform_rejects_mismatched_shape():
    result = runner.invoke(cli, ["transform", "--shape", "3x3", "--matrix", "1,0;0,1"])
    assert result.exit_code == 1
    assert "does not match" in result.output


def test_transform_requires_an_input():
    result = runner.invoke(cli, ["transform"])
    assert result.exit_code == 1


def test_verify_small_battery_passes():
    result = runner.invoke(cli, ["verify", "--samples", "10", "--seed", "1"])
    assert result.exit_code == 0, result.output
    assert "trust_region" in result.output
    assert "FAIL" not in result.output


def test_verify_rejects_empty_battery():
    result = runner.invoke(cli, ["verify", "--samples", "0"])
    assert result.exit_code == 1


def test_bench_writes_csv(tmp_path):
    result = runner.invoke(cli, ["bench", "--size", "16", "--repeats", "2", "--out-dir", str(tmp_path)])
    assert result.exit_code == 0, result.output
    rows = _rows(tmp_path / "bench.csv")
    assert rows[0] == ["size", "transform", "mean_seconds", "std_seconds"]
    assert [row[1] for row in rows[1:]] == ["auon", "hybrid_auon1", "newton_schulz5", "exact_polar"]
    assert "n=16: auon is" in result.output


def test_bench_rejects_tiny_sizes(tmp_path):
    result = runner.invoke(cli, ["bench", "--size", "8", "--out-dir", str(tmp_path)])
    assert result.exit_code == 1
    assert not (tmp_path / "bench.csv").exists()


def test_spectra_writes_both_files(tmp_path):
    result = runner.invoke(cli, ["spectra", "--shape", "8x6", "--steps", "3", "--out-dir", str(tmp_path)])
    assert result.exit_code == 0, result.output
    spectra = _rows(tmp_path / "spectra.csv")
    gram = _rows(tmp_path / "gram.csv")
    assert spectra[0] == ["step", "index", "sigma"]
    assert len(spectra) - 1 == 4 * 6
    assert gram[0] == ["step", "frobenius_distance_to_identity"]
    assert len(gram) - 1 == 4


def test_train_writes_artifacts(tmp_path):
    result = runner.invoke(cli, SMALL_TRAIN + ["--output-dir", str(tmp_path)])
    assert result.exit_code == 0, result.output
    assert "kappa median" in result.output
    assert (tmp_path / "runlog.json").exists()
    diagnostics = _rows(tmp_path / "diagnostics.csv")
    assert diagnostics[0] == ["step", "loss", "kappa_median_sofar", "sigma2_mean_sofar"]
    assert len(diagnostics) == 11


def test_train_is_reproducible(tmp_path):
    for name in ("a", "b"):
        result = runner.invoke(cli, SMALL_TRAIN + ["--seed", "5", "--output-dir", str(tmp_path / name)])
        assert result.exit_code == 0, result.output
    first = (tmp_path / "a" / "diagnostics.csv").read_bytes()
    assert first == (tmp_path / "b" / "diagnostics.csv").read_bytes()


def test_train_with_zero_learning_rate_keeps_loss_constant(tmp_path):
    args = SMALL_TRAIN + ["--optimizer", "sgdm", "--lr", "0", "--output-dir", str(tmp_path), "--emit", "diagnostics"]
    result = runner.invoke(cli, args)
    assert result.exit_code == 0, result.output
    losses = {row[1] for row in _rows(tmp_path / "diagnostics.csv")[1:]}
    assert len(losses) == 1
    assert not (tmp_path / "runlog.json").exists()


def test_train_flags_override_config_file(tmp_path):
    config = tmp_path / "run.cfg"
    config.write_text("optimizer=hybrid-auon\nsteps=4\nn=40\nd=4\nclasses=2\nhidden=6\n")
    result = runner.invoke(cli, ["train", "--config", str(config), "--steps", "6", "--output-dir", str(tmp_path)])
    assert result.exit_code == 0, result.output
    assert "hybrid-auon, 6 steps" in result.output
    assert len(_rows(tmp_path / "diagnostics.csv")) == 7


def test_train_rejects_bad_flags(tmp_path):
    assert runner.invoke(cli, ["train", "--optimizer", "lion"]).exit_code != 0
    result = runner.invoke(cli, SMALL_TRAIN[:-2] + ["--steps", "0", "--output-dir", str(tmp_path)])
    assert result.exit_code == 1
    assert "invalid run config" in result.output
