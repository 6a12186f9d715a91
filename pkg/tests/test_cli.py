# -*- coding: utf-8 -*-

import csv

import pytest
from click.testing import CliRunner

from vpt_nullspace.checks import PROPERTIES
from vpt_nullspace.commands.vptns import vptns
from vpt_nullspace.errors import TrainingError


def _invoke(*args):
    return CliRunner().invoke(vptns, ["--no-ansi"] + list(args))


def _rows(path):
    with open(path, newline="") as f:
        return list(csv.reader(f))


def test_run_writes_the_result_files(tiny_config_file, tmp_path):
    out = tmp_path / "results"
    result = _invoke("run", "-c", str(tiny_config_file), "-o", str(out), "--silent")
    assert result.exit_code == 0, result.output
    rows = _rows(out / "summary.csv")
    assert rows[0] == ["method", "seed", "final_avg_accuracy", "final_avg_forgetting"]
    assert [r[:2] for r in rows[1:]] == [["seq", "0"], ["nsp2", "0"]]
    assert _rows(out / "aggregate.csv")[0][0] == "method"
    accuracy = _rows(out / "nsp2_seed0_accuracy.csv")
    assert accuracy[0] == ["after_task", "task_1", "task_2"]
    assert accuracy[1][2] == ""
    assert _rows(out / "nsp2_seed0_residuals.csv")[0] == ["task", "layer", "residual_omega1", "residual_omega2"]
    assert len(_rows(out / "seq_seed0_loss_drift.csv")) == 1 + 3
    assert (out / "nsp2_seed0_spectrum.csv").exists()
    assert (out / "nsp2_seed0_report.yaml").exists()
    assert (out / "config.echo").exists()
    assert not (out / "PARTIAL").exists()
    assert "METHOD" in result.output and "nsp2" in result.output


def test_run_uses_configured_output_dir(tiny_config_file):
    result = _invoke("run", "-c", str(tiny_config_file), "--silent")
    assert result.exit_code == 0, result.output
    assert (tiny_config_file.parent / "out" / "summary.csv").exists()


def test_identical_reruns_give_identical_summaries(tiny_config_file, tmp_path):
    for name in ("a", "b"):
        assert _invoke("run", "-c", str(tiny_config_file), "-o", str(tmp_path / name), "-s").exit_code == 0
    assert (tmp_path / "a" / "summary.csv").read_bytes() == (tmp_path / "b" / "summary.csv").read_bytes()
    assert (tmp_path / "a" / "nsp2_seed0_accuracy.csv").read_bytes() == (tmp_path / "b" / "nsp2_seed0_accuracy.csv").read_bytes()


def test_echo_reproduces_the_run(tiny_config_file, tmp_path):
    assert _invoke("run", "-c", str(tiny_config_file), "-o", str(tmp_path / "a"), "-s").exit_code == 0
    echo = tmp_path / "a" / "config.echo"
    assert _invoke("run", "-c", str(echo), "-o", str(tmp_path / "b"), "-s").exit_code == 0
    assert (tmp_path / "a" / "summary.csv").read_bytes() == (tmp_path / "b" / "summary.csv").read_bytes()


def test_unknown_key_exits_with_config_error(tiny_config_file, tmp_path):
    tiny_config_file.write_text(tiny_config_file.read_text() + "foo = 1\n")
    out = tmp_path / "results"
    result = _invoke("run", "-c", str(tiny_config_file), "-o", str(out))
    assert result.exit_code == 1
    assert "foo" in result.output
    assert not out.exists()


def test_capacity_error_writes_nothing(tiny_config_file, tmp_path):
    text = tiny_config_file.read_text().replace("stream.classes_per_task = 2", "stream.classes_per_task = 40")
    tiny_config_file.write_text(text)
    out = tmp_path / "results"
    result = _invoke("run", "-c", str(tiny_config_file), "-o", str(out))
    assert result.exit_code == 1
    assert not out.exists()


def test_runtime_failure_marks_partial_results(tiny_config_file, tmp_path, monkeypatch):
    from vpt_nullspace.harness import experiment

    train_task = experiment.train_task

    def failing(model, state, task, method, seeds, silent=True):
        if method.method == "nsp2" and task.index == 1:
            raise TrainingError("The training loss is not finite", dict(task=1))
        return train_task(model, state, task, method, seeds, silent=silent)

    monkeypatch.setattr(experiment, "train_task", failing)
    out = tmp_path / "results"
    result = _invoke("run", "-c", str(tiny_config_file), "-o", str(out), "-s")
    assert result.exit_code == 2
    assert "not finite" in (out / "PARTIAL").read_text()
    # the finished seq run is kept
    assert [r[0] for r in _rows(out / "summary.csv")[1:]] == ["seq"]
    assert (out / "seq_seed0_accuracy.csv").exists()


def test_sweep(tiny_config_file, tmp_path):
    out = tmp_path / "sweep"
    result = _invoke("sweep", "-c", str(tiny_config_file), "--eta", "0,1.0", "-o", str(out), "-s")
    assert result.exit_code == 0, result.output
    rows = _rows(out / "sweep.csv")
    assert rows[0] == ["eta", "seed", "final_avg_accuracy", "final_avg_forgetting"]
    assert [r[:2] for r in rows[1:]] == [["0.0", "0"], ["1.0", "0"]]

    # eta = 1 is the plain nsp2 run
    run_out = tmp_path / "run"
    assert _invoke("run", "-c", str(tiny_config_file), "-o", str(run_out), "-s").exit_code == 0
    nsp2 = [r for r in _rows(run_out / "summary.csv") if r[0] == "nsp2"][0]
    assert rows[2][2:] == nsp2[2:]
    assert (out / "nsp2_eta1.0_seed0_accuracy.csv").read_bytes() == (run_out / "nsp2_seed0_accuracy.csv").read_bytes()


@pytest.mark.parametrize("eta", ["1.5", "a,b", ","])
def test_sweep_rejects_invalid_grid(tiny_config_file, tmp_path, eta):
    result = _invoke("sweep", "-c", str(tiny_config_file), "--eta", eta, "-o", str(tmp_path / "sweep"))
    assert result.exit_code == 1
    assert "--eta" in result.output


def test_check_passes():
    result = _invoke("check")
    assert result.exit_code == 0, result.output
    for p in PROPERTIES:
        assert p.name in result.output
    assert "FAIL" not in result.output


def test_check_with_injected_fault():
    result = _invoke("check", "--inject-fault")
    assert result.exit_code == 3
    assert "projector_residuals" in result.output
    assert "FAIL" in result.output


def test_config_keys():
    result = _invoke("config-keys")
    assert result.exit_code == 0
    assert "stream.image_size" in result.output
    assert "audit.residual_tol" in result.output


def test_missing_config_option():
    result = _invoke("run")
    assert result.exit_code != 0
