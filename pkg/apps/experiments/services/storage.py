"""Reading and writing the engine's file formats (CSV and JSON)."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, fields
from pathlib import Path
from typing import Iterable, Sequence

import logging

import numpy as np

from .boltzmann import BmKind, BmModel
from .cif import Table1Result
from .coords import JointTable, SubsetIndex
from .errors import DimensionMismatch, ParseError
from .fisher import FisherMatrix


logger = logging.getLogger(__name__)


class Storage:
    """Resolves output names against one results directory, creating it on first write."""

    def __init__(self, root: str | Path):
        self.root = Path(root)

    def path(self, name: str) -> Path:
        self.root.mkdir(parents=True, exist_ok=True)
        return self.root / name


def _write_json(path: str | Path, payload) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    return path


def _fmt(value: float) -> str:
    return repr(float(value))


# ---------------------------------------------------------------------------
# Sample matrices
# ---------------------------------------------------------------------------


def load_binary_csv(path: str | Path, header: bool = False) -> np.ndarray:
    """Strict 0/1 matrix reader; ParseError positions are 1-based file rows and columns."""
    rows: list[list[int]] = []
    width = None
    with Path(path).open(newline="", encoding="utf-8") as fh:
        for row_no, row in enumerate(csv.reader(fh), start=1):
            if header and row_no == 1:
                continue
            if not row or all(not cell.strip() for cell in row):
                continue
            values = []
            for col_no, cell in enumerate(row, start=1):
                cell = cell.strip()
                if cell not in ("0", "1"):
                    raise ParseError(f"expected 0 or 1, found {cell!r}", row=row_no, col=col_no)
                values.append(int(cell))
            if width is None:
                width = len(values)
            elif len(values) != width:
                raise ParseError(f"expected {width} columns, found {len(values)}", row=row_no, col=len(values))
            rows.append(values)
    logger.debug("Loaded %s binary rows from %s", len(rows), path)
    return np.array(rows, dtype=np.uint8).reshape(len(rows), width or 0)


def write_binary_csv(samples: np.ndarray, path: str | Path) -> Path:
    samples = np.asarray(samples, dtype=np.uint8)
    return _write_csv(path, [f"x{i + 1}" for i in range(samples.shape[1])], samples.tolist())


# ---------------------------------------------------------------------------
# Tables and Fisher matrices
# ---------------------------------------------------------------------------


def table_to_dict(t: JointTable) -> dict:
    return {"n": t.n, "probs": t.probs.tolist()}


def table_from_dict(data: dict) -> JointTable:
    return JointTable(int(data["n"]), np.asarray(data["probs"], dtype=np.float64))


def write_table_json(t: JointTable, path: str | Path) -> Path:
    return _write_json(path, table_to_dict(t))


def read_table_json(path: str | Path) -> JointTable:
    return table_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def write_table_csv(t: JointTable, path: str | Path) -> Path:
    """One row per cell in bitmask order: bitmask, probability."""
    return _write_csv(path, ["bitmask", "probability"], ([cell, _fmt(p)] for cell, p in enumerate(t.probs)))


def read_table_csv(path: str | Path) -> JointTable:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"bitmask", "probability"} <= set(reader.fieldnames):
            raise ParseError("table file needs bitmask and probability columns", row=1, col=1)
        cells: dict[int, float] = {}
        for row_no, row in enumerate(reader, start=2):
            try:
                cells[int(row["bitmask"])] = float(row["probability"])
            except (TypeError, ValueError) as exc:
                raise ParseError(f"bad table row: {exc}", row=row_no, col=1) from exc
    if not cells or sorted(cells) != list(range(len(cells))):
        raise DimensionMismatch("table rows must cover every bitmask from 0 exactly once")
    return JointTable.from_probs([cells[cell] for cell in range(len(cells))])


def write_fisher(matrix: FisherMatrix, path: str | Path) -> tuple[Path, Path]:
    """Entries as long-format CSV rows (row, col, value) plus a JSON manifest giving the index order."""
    dimension = matrix.dimension
    rows = ([i, j, _fmt(matrix.entries[i, j])] for i in range(dimension) for j in range(dimension))
    csv_path = _write_csv(path, ["row", "col", "value"], rows)
    manifest = {
        "coord_system": matrix.coord_system,
        "tag": matrix.tag,
        "l": matrix.l,
        "dimension": dimension,
        "index_order": [int(mask) for mask in matrix.index_order],
        "labels": [str(SubsetIndex(int(mask))) for mask in matrix.index_order],
    }
    return csv_path, _write_json(Path(path).with_suffix(".json"), manifest)


def read_fisher(path: str | Path) -> FisherMatrix:
    manifest = json.loads(Path(path).with_suffix(".json").read_text(encoding="utf-8"))
    dimension = int(manifest["dimension"])
    entries = np.full((dimension, dimension), np.nan)
    with Path(path).open(newline="", encoding="utf-8") as fh:
        for row_no, row in enumerate(csv.DictReader(fh), start=2):
            try:
                entries[int(row["row"]), int(row["col"])] = float(row["value"])
            except (KeyError, IndexError, TypeError, ValueError) as exc:
                raise ParseError(f"bad Fisher entry: {exc}", row=row_no, col=1) from exc
    if np.isnan(entries).any():
        raise DimensionMismatch(f"Fisher file does not cover all {dimension}x{dimension} entries")
    return FisherMatrix(manifest["coord_system"], np.asarray(manifest["index_order"], dtype=np.int64), entries, manifest["l"])


# ---------------------------------------------------------------------------
# Models and training traces
# ---------------------------------------------------------------------------


def model_to_dict(model: BmModel) -> dict:
    return {
        "n_x": model.n_x,
        "n_h": model.n_h,
        "kind": model.kind.value,
        "U": model.U.tolist(),
        "V": model.V.tolist(),
        "W": model.W.tolist(),
        "b": model.b.tolist(),
        "d": model.d.tolist(),
        "mask": {"U": model.mask_U.tolist(), "V": model.mask_V.tolist(), "W": model.mask_W.tolist()},
    }


def model_from_dict(data: dict) -> BmModel:
    n_x, n_h = int(data["n_x"]), int(data["n_h"])
    try:
        return BmModel(
            n_x,
            n_h,
            np.asarray(data["U"], dtype=np.float64).reshape(n_x, n_x),
            np.asarray(data["V"], dtype=np.float64).reshape(n_h, n_h),
            np.asarray(data["W"], dtype=np.float64).reshape(n_x, n_h),
            np.asarray(data["b"], dtype=np.float64).reshape(n_x),
            np.asarray(data["d"], dtype=np.float64).reshape(n_h),
            np.asarray(data["mask"]["U"], dtype=bool).reshape(n_x, n_x),
            np.asarray(data["mask"]["V"], dtype=bool).reshape(n_h, n_h),
            np.asarray(data["mask"]["W"], dtype=bool).reshape(n_x, n_h),
            BmKind(data["kind"]),
        )
    except (KeyError, ValueError) as exc:
        raise DimensionMismatch(f"malformed model document: {exc}") from exc


def write_model(model: BmModel, path: str | Path) -> Path:
    return _write_json(path, model_to_dict(model))


def read_model(path: str | Path) -> BmModel:
    return model_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def write_trace(trace: Iterable[tuple[int, float, float]], path: str | Path) -> Path:
    return _write_csv(path, ["epoch", "grad_norm", "kl_to_data"], ([e, _fmt(g), _fmt(k)] for e, g, k in trace))


def write_projection_trace(trace: Iterable[tuple[int, float, float]], path: str | Path) -> Path:
    return _write_csv(path, ["round", "kl_before", "kl_after"], ([r, _fmt(b), _fmt(a)] for r, b, a in trace))


# ---------------------------------------------------------------------------
# Selection outputs
# ---------------------------------------------------------------------------


def write_edges(tests, path: str | Path) -> Path:
    """Edge rows (i, j, rho, p_value, selected) with 0-based indices."""
    return _write_csv(
        path,
        ["i", "j", "rho", "p_value", "selected"],
        ([t.i, t.j, _fmt(t.rho), _fmt(t.p_value), int(t.selected)] for t in tests),
    )


def read_edges(path: str | Path) -> list[tuple[int, int]]:
    """Edges of an edge CSV; when a ``selected`` column is present only selected rows count."""
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"i", "j"} <= set(reader.fieldnames):
            raise ParseError("edge file needs i and j columns", row=1, col=1)
        edges = []
        for row_no, row in enumerate(reader, start=2):
            try:
                if "selected" in row and int(row["selected"]) == 0:
                    continue
                edges.append((int(row["i"]), int(row["j"])))
            except (TypeError, ValueError) as exc:
                raise ParseError(f"bad edge row: {exc}", row=row_no, col=1) from exc
    return edges


def write_cv_table(cv_table: Iterable[tuple[int, int, float]], path: str | Path) -> Path:
    return _write_csv(path, ["budget", "fold", "score"], ([b, f, _fmt(s)] for b, f, s in cv_table))


# ---------------------------------------------------------------------------
# Experiment results
# ---------------------------------------------------------------------------


def write_table1(result: Table1Result, csv_path: str | Path, json_path: str | Path) -> tuple[Path, Path]:
    rows = ([r.n, r.replicate, _fmt(r.param_ratio), _fmt(r.fid_ratio)] for r in result.rows)
    written = _write_csv(csv_path, ["n", "replicate", "param_ratio", "fid_ratio"], rows)
    summary = {str(n): stats for n, stats in result.summary().items()}
    return written, _write_json(json_path, summary)


def write_records(records: Sequence, path: str | Path) -> Path:
    """RunRecords in fixed column order (experiment, seed, method, N, replicate, metric, value)."""
    if records:
        header = [f.name for f in fields(records[0])]
    else:
        header = ["experiment", "seed", "method", "N", "replicate", "metric", "value"]
    rows = ([*(v for k, v in asdict(r).items() if k != "value"), _fmt(r.value)] for r in records)
    return _write_csv(path, header, rows)


def read_records(path: str | Path) -> list[dict]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        row["seed"], row["N"], row["replicate"] = int(row["seed"]), int(row["N"]), int(row["replicate"])
        row["value"] = float(row["value"])
    return rows


def write_summary(summary: list[dict], path: str | Path) -> Path:
    return _write_json(path, summary)
