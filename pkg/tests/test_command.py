import json
from io import StringIO

import pytest
from django.core.management import call_command
from django.core.management.base import CommandError

from apps.experiments.services.storage import read_edges, read_model


def _run(*args):
    out = StringIO()
    call_command("cif", *[str(a) for a in args], stdout=out)
    return out.getvalue()


def _config(tmp_path, document):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(document))
    return path


def test_select_with_hypothesis_test(tmp_path, binary_csv):
    out_dir = tmp_path / "select"
    output = _run("select", "--data", binary_csv, "--header", "--out", out_dir)
    assert "selected:" in output
    assert (0, 1) in read_edges(out_dir / "edges.csv")


def test_select_with_cross_validation(tmp_path, binary_csv):
    config = _config(tmp_path, {"cv": {"k": 3, "grid": [0, 1, 6]}, "train": {"max_epochs": 100}})
    out_dir = tmp_path / "cv"
    output = _run("select", "--data", binary_csv, "--header", "--method", "cif_cv", "--config", config, "--out", out_dir)
    assert "budget:" in output
    assert len((out_dir / "cv_table.csv").read_text().splitlines()) == 1 + 3 * 3


def test_train_then_eval_hamming(tmp_path, binary_csv):
    edges = tmp_path / "edges.csv"
    edges.write_text("i,j\n0,1\n")
    config = _config(tmp_path, {"hamming": {"n_gen": 50, "burn_in": 5, "thin": 1, "n_chains": 10}})
    out_dir = tmp_path / "model"
    output = _run("train", "--data", binary_csv, "--header", "--edges", edges, "--out", out_dir)
    assert "converged: True" in output
    model = read_model(out_dir / "model.json")
    assert model.enabled_edges() == [(0, 1)]
    assert (out_dir / "trace.csv").exists()

    output = _run(
        "eval-hamming", "--data", binary_csv, "--header", "--model", out_dir / "model.json",
        "--config", config, "--seed", 3, "--out", out_dir,
    )
    assert "d_ham:" in output
    result = json.loads((out_dir / "hamming.json").read_text())
    assert result["rows"] == 200
    assert 0.0 <= result["d_ham"] <= 4.0


def test_fid_table_experiment(tmp_path):
    config = _config(tmp_path, {"n_vars": [3], "replicates": 2})
    out_dir = tmp_path / "fid"
    output = _run("fid-table", "--config", config, "--seed", 2, "--out", out_dir)
    assert "table1:" in output
    assert len((out_dir / "table1.csv").read_text().splitlines()) == 3
    assert (out_dir / "fid_table.summary.json").exists()


def test_malformed_data_exits_with_input_error(tmp_path):
    data = tmp_path / "bad.csv"
    data.write_text("0,1\n1,2\n")
    with pytest.raises(CommandError) as exc:
        _run("select", "--data", data, "--out", tmp_path)
    assert exc.value.returncode == 2
    with pytest.raises(CommandError) as exc:
        _run("select", "--data", tmp_path / "missing.csv", "--out", tmp_path)
    assert exc.value.returncode == 2


def test_invalid_config_exits_with_input_error(tmp_path):
    config = _config(tmp_path, {"n_vars": [9]})
    with pytest.raises(CommandError) as exc:
        _run("fid-table", "--config", config, "--out", tmp_path)
    assert exc.value.returncode == 2


def test_strict_training_failure_exits_with_numerical_error(tmp_path, binary_csv):
    config = _config(tmp_path, {"strict": True, "train": {"optimizer": "gradient", "max_epochs": 1}})
    with pytest.raises(CommandError) as exc:
        _run("train", "--data", binary_csv, "--header", "--config", config, "--out", tmp_path)
    assert exc.value.returncode == 3
