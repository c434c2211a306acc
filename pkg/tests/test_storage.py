import json

import numpy as np
import pytest
from numpy.testing import assert_allclose

from apps.experiments.services.boltzmann import BmModel
from apps.experiments.services.cif import Table1Result, Table1Row
from apps.experiments.services.errors import DimensionMismatch, ParseError
from apps.experiments.services.fisher import fisher_mixed
from apps.experiments.services.harness import RunRecord
from apps.experiments.services.selection import EdgeTest
from apps.experiments.services.storage import (
    Storage,
    load_binary_csv,
    model_from_dict,
    read_edges,
    read_fisher,
    read_model,
    read_records,
    read_table_csv,
    read_table_json,
    write_binary_csv,
    write_edges,
    write_fisher,
    write_model,
    write_projection_trace,
    write_records,
    write_table1,
    write_table_csv,
    write_table_json,
)


def test_storage_creates_root(tmp_path):
    storage = Storage(tmp_path / "nested" / "out")
    path = storage.path("a.csv")
    assert path.parent.is_dir()


def test_load_binary_csv(tmp_path):
    path = tmp_path / "data.csv"
    path.write_text("a,b,c\n0,1,1\n1,0,0\n\n1,1,1\n")
    samples = load_binary_csv(path, header=True)
    assert samples.dtype == np.uint8
    assert samples.tolist() == [[0, 1, 1], [1, 0, 0], [1, 1, 1]]


def test_load_binary_csv_reports_position(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("0,1\n1,x\n")
    with pytest.raises(ParseError) as exc:
        load_binary_csv(path)
    assert (exc.value.row, exc.value.col) == (2, 2)


def test_load_binary_csv_rejects_ragged_rows(tmp_path):
    path = tmp_path / "ragged.csv"
    path.write_text("0,1\n1,0,1\n")
    with pytest.raises(ParseError) as exc:
        load_binary_csv(path)
    assert exc.value.row == 2


def test_binary_csv_written_with_header(tmp_path):
    samples = np.array([[0, 1], [1, 1]], dtype=np.uint8)
    path = write_binary_csv(samples, tmp_path / "s.csv")
    assert path.read_text().splitlines()[0] == "x1,x2"
    assert load_binary_csv(path, header=True).tolist() == samples.tolist()


def test_table_formats(tmp_path, skewed_pair):
    payload = json.loads(write_table_json(skewed_pair, tmp_path / "t.json").read_text())
    assert payload["n"] == 2
    assert payload["probs"] == pytest.approx([0.4, 0.2, 0.3, 0.1])
    assert read_table_json(tmp_path / "t.json").allclose(skewed_pair)
    lines = write_table_csv(skewed_pair, tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "bitmask,probability"
    assert len(lines) == 5
    assert lines[2].startswith("1,")
    assert float(lines[2].split(",")[1]) == pytest.approx(0.2)
    assert read_table_csv(tmp_path / "t.csv").allclose(skewed_pair)


def test_table_csv_rejects_missing_cells(tmp_path):
    path = tmp_path / "t.csv"
    path.write_text("bitmask,probability\n0,0.5\n2,0.5\n")
    with pytest.raises(DimensionMismatch):
        read_table_csv(path)
    path.write_text("cell,p\n0,1.0\n")
    with pytest.raises(ParseError):
        read_table_csv(path)


def test_fisher_long_format(tmp_path, rng, make_table):
    matrix = fisher_mixed(make_table(3, rng, floor=0.2), 1)
    csv_path, manifest_path = write_fisher(matrix, tmp_path / "g.csv")
    manifest = json.loads(manifest_path.read_text())
    assert manifest["coord_system"] == "mixed"
    assert manifest["tag"] == "mixed(1)"
    assert manifest["index_order"] == [1, 2, 4, 3, 5, 6, 7]
    assert manifest["labels"][3] == "{1,2}"
    rows = csv_path.read_text().splitlines()
    assert rows[0] == "row,col,value"
    assert len(rows) == 1 + 7 * 7
    row, col, value = rows[1 + 7 * 2 + 3].split(",")
    assert (int(row), int(col)) == (2, 3)
    assert float(value) == pytest.approx(matrix.entries[2, 3])
    loaded = read_fisher(csv_path)
    assert loaded.tag == "mixed(1)"
    assert loaded.index_order.tolist() == manifest["index_order"]
    assert_allclose(loaded.entries, matrix.entries)


def test_model_round_trip(tmp_path, rng):
    model = BmModel.vrbm(3, 2, [(0, 2)])
    model = model.with_parameters(rng.normal(size=model.n_parameters))
    restored = read_model(write_model(model, tmp_path / "model.json"))
    assert restored.kind is model.kind
    assert_allclose(restored.parameters(), model.parameters())
    assert restored.enabled_edges() == [(0, 2)]


def test_malformed_model_document():
    with pytest.raises(DimensionMismatch):
        model_from_dict({"n_x": 2, "n_h": 0, "U": [[0.0]], "V": [], "W": [], "b": [0, 0], "d": [], "mask": {}})


def test_edges_file(tmp_path):
    tests = [EdgeTest(0, 1, 0.2, 40.0, 1e-9, True), EdgeTest(0, 2, 0.0, 0.1, 0.9, False)]
    path = write_edges(tests, tmp_path / "edges.csv")
    assert path.read_text().splitlines()[0] == "i,j,rho,p_value,selected"
    assert read_edges(path) == [(0, 1)]
    plain = tmp_path / "plain.csv"
    plain.write_text("i,j\n0,2\n1,2\n")
    assert read_edges(plain) == [(0, 2), (1, 2)]
    broken = tmp_path / "broken.csv"
    broken.write_text("a,b\n0,1\n")
    with pytest.raises(ParseError):
        read_edges(broken)


def test_records_round_trip(tmp_path):
    records = [
        RunRecord("vbm_density", 1, "full", 100, 0, "kl_to_target", 0.125),
        RunRecord("vbm_density", 1, "cif_cv", 100, 0, "complexity_ratio", 1 / 3),
    ]
    path = write_records(records, tmp_path / "records.csv")
    assert path.read_text().splitlines()[0] == "experiment,seed,method,N,replicate,metric,value"
    rows = read_records(path)
    assert rows[1]["value"] == 1 / 3
    assert rows[0]["N"] == 100
    empty = write_records([], tmp_path / "empty.csv")
    assert empty.read_text().strip() == "experiment,seed,method,N,replicate,metric,value"


def test_table1_outputs(tmp_path):
    result = Table1Result((Table1Row(3, 0, 6 / 7, 0.99), Table1Row(3, 1, 6 / 7, 0.97)))
    csv_path, json_path = write_table1(result, tmp_path / "table1.csv", tmp_path / "table1.json")
    assert csv_path.read_text().splitlines()[0] == "n,replicate,param_ratio,fid_ratio"
    summary = json.loads(json_path.read_text())
    assert summary["3"]["mean"] == pytest.approx(0.98)
    assert summary["3"]["replicates"] == 2


def test_projection_trace(tmp_path):
    path = write_projection_trace([(1, 0.5, 0.25)], tmp_path / "trace.csv")
    assert path.read_text().splitlines() == ["round,kl_before,kl_after", "1,0.5,0.25"]
