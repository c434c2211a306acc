"""Seeded experiment protocols.

An experiment is planned as a list of independent cells. Each cell derives its
own random streams from the experiment seed and its coordinates, so cells can
run in any order (locally with ``map``, or as Celery tasks) and the merged
records are identical.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from functools import partial
from pathlib import Path
from typing import Callable

import logging

import numpy as np
from scipy.spatial.distance import cdist

from .boltzmann import BmModel, TrainResult, marginal_visible, sample_model, train
from .cif import Table1Result, Table1Row, jeffreys_weights, parameter_ratio, table1_replicate
from .config import ExperimentConfig, HammingConfig
from .coords import MAX_VARIABLES, JointTable, sample_cells, state_matrix
from .errors import NoConvergence, SizeCap
from .fisher import kl
from .selection import (
    EdgeSet,
    build_model,
    cif_htest,
    cif_rank,
    cv_select,
    default_grid,
    edges_for_ratio,
    model_complexity_ratio,
    pairwise_confidence,
)
from .storage import Storage, load_binary_csv, write_records, write_summary, write_table1


logger = logging.getLogger(__name__)


JEFFREYS_MAX_N = 12
METRICS = ("kl_to_target", "kl_to_sample", "d_ham", "fid_ratio", "complexity_ratio")


@dataclass(frozen=True)
class RunRecord:
    experiment: str
    seed: int
    method: str
    N: int
    replicate: int
    metric: str
    value: float

    def __post_init__(self) -> None:
        if self.metric not in METRICS:
            raise ValueError(f"unknown metric {self.metric!r}")


@dataclass(frozen=True)
class Cell:
    index: int
    n: int
    N: int
    replicate: int


# ---------------------------------------------------------------------------
# Data generation and evaluation
# ---------------------------------------------------------------------------


def gen_jeffreys_target(n: int, rng: np.random.Generator) -> JointTable:
    """Target table drawn from the symmetric Dirichlet(1/2) over all 2**n cells."""
    if n > JEFFREYS_MAX_N:
        raise SizeCap(f"Jeffreys targets are limited to n <= {JEFFREYS_MAX_N}, got {n}")
    return JointTable(n, jeffreys_weights(1 << n, rng))


def sample_dataset(t: JointTable, N: int, rng: np.random.Generator) -> np.ndarray:
    return state_matrix(t.n)[sample_cells(t, N, rng)].astype(np.uint8)


def generate_samples(model: BmModel, n: int, rng: np.random.Generator, cfg: HammingConfig | None = None) -> np.ndarray:
    cfg = cfg or HammingConfig()
    return sample_model(model, n, rng, burn_in=cfg.burn_in, thin=cfg.thin, n_chains=cfg.n_chains)


def hamming_eval(
    data: np.ndarray,
    model: BmModel,
    *,
    rng: np.random.Generator | int,
    n_gen: int | None = None,
    cfg: HammingConfig | None = None,
) -> float:
    """Mean over data rows of the Hamming distance to the nearest generated row.

    ``rng`` is a generator or an integer seed; the result is a pure function of it.
    """
    if rng is None:
        raise ValueError("hamming_eval needs a generator or an integer seed")
    data = np.asarray(data)
    rng = np.random.default_rng(rng)
    cfg = cfg or HammingConfig()
    generated = generate_samples(model, n_gen or cfg.n_gen or len(data), rng, cfg)
    distances = cdist(data.astype(np.float64), generated.astype(np.float64), metric="hamming") * model.n_x
    return float(np.rint(distances).min(axis=1).mean())


# ---------------------------------------------------------------------------
# Planning and running cells
# ---------------------------------------------------------------------------


def plan_cells(cfg: ExperimentConfig) -> list[Cell]:
    if cfg.experiment == "fid_table":
        keys = [(n, 0, r) for n in cfg.n_values for r in range(cfg.replicates)]
    elif cfg.experiment == "real_data":
        keys = [(0, 0, r) for r in range(cfg.replicates)]
    else:
        keys = [(cfg.n_values[0], N, r) for N in cfg.sample_sizes for r in range(cfg.replicates)]
    return [Cell(index, n, N, r) for index, (n, N, r) in enumerate(keys)]


def _check_training(cfg: ExperimentConfig, result: TrainResult, method: str) -> BmModel:
    if not result.converged and cfg.strict:
        raise NoConvergence(f"training for {method} did not converge after {result.epochs} epochs")
    return result.model


def _fit(cfg: ExperimentConfig, model: BmModel, samples: np.ndarray, stream: list[int], method: str) -> BmModel:
    result = train(model, samples, cfg.train, rng=np.random.default_rng(stream))
    return _check_training(cfg, result, method)


def _cell_seed(cfg: ExperimentConfig, cell: Cell, salt: int) -> int:
    return int(np.random.default_rng([cfg.seed, cell.index, salt]).integers(2**31 - 1))


def _run_fid_cell(cfg: ExperimentConfig, cell: Cell) -> list[RunRecord]:
    perturbation = cfg.perturbation.model_copy(update={"seed": cfg.seed})
    row = table1_replicate(perturbation, cell.n, cell.replicate)
    method = f"l{perturbation.order}_n{cell.n}"
    return [RunRecord(cfg.experiment, cfg.seed, method, 0, cell.replicate, "fid_ratio", row.fid_ratio)]


def _density_records(
    cfg: ExperimentConfig,
    cell: Cell,
    method: str,
    model: BmModel,
    target: JointTable,
    sample_table: JointTable,
    complexity: float,
) -> list[RunRecord]:
    marginal = marginal_visible(model)
    values = {
        "kl_to_target": kl(target, marginal),
        "kl_to_sample": kl(sample_table, marginal),
        "complexity_ratio": complexity,
    }
    return [RunRecord(cfg.experiment, cfg.seed, method, cell.N, cell.replicate, m, float(v)) for m, v in values.items()]


def _run_density_cell(cfg: ExperimentConfig, cell: Cell) -> list[RunRecord]:
    n = cell.n
    n_hidden = cfg.n_hidden if cfg.experiment == "vrbm_density" else 0
    # targets depend on (seed, replicate) only, so every N sees the same target
    target = gen_jeffreys_target(n, np.random.default_rng([cfg.seed, cell.replicate]))
    samples = sample_dataset(target, cell.N, np.random.default_rng([cfg.seed, cell.replicate, cell.N]))
    sample_table = JointTable.from_samples(samples, n, clamp=False)
    rho = pairwise_confidence(samples, cfg.htest.smoothing)
    cv_cfg = cfg.cv.model_copy(update={"seed": _cell_seed(cfg, cell, 0)})
    init_seed = cfg.train.seed

    records: list[RunRecord] = []
    for salt, method in enumerate(cfg.methods, start=1):
        if method == "rbm_baseline":
            model = BmModel.rbm(n, n_hidden, seed=init_seed)
            edges = EdgeSet(n)
        else:
            if method == "full":
                edges = EdgeSet.complete(n)
            elif method == "cif_htest":
                edges = cif_htest(samples, cfg.htest)
            else:
                selector = "cif" if method == "cif_cv" else "rand"
                edges = cv_select(samples, selector, cv_cfg, cfg.train, n_hidden=n_hidden, smoothing=cfg.htest.smoothing).edges
            model = build_model(n, edges, n_hidden, seed=init_seed)
        fitted = _fit(cfg, model, samples, [cfg.seed, cell.index, salt], method)
        records += _density_records(cfg, cell, method, fitted, target, sample_table, model_complexity_ratio(edges, rho))
        logger.debug("cell %s method %s: %s edges", cell.index, method, len(edges))

    if cfg.sweep:
        records += _run_sweep(cfg, cell, samples, target, sample_table, rho, n_hidden)
    return records


def _random_order(n: int, seed: int) -> list[tuple[int, int]]:
    candidates = EdgeSet.complete(n).sorted()
    return [candidates[k] for k in np.random.default_rng(seed).permutation(len(candidates))]


def _run_sweep(cfg, cell, samples, target, sample_table, rho, n_hidden) -> list[RunRecord]:
    """KL and complexity at every budget of the grid for the cif and random orderings."""
    n = cell.n
    cif_order = [edge for edge, _ in cif_rank(samples, smoothing=cfg.htest.smoothing)]
    orders = {"cif": cif_order, "rand": _random_order(n, _cell_seed(cfg, cell, 1))}
    grid = cfg.cv.grid if cfg.cv.grid is not None else default_grid(len(cif_order), cfg.cv.grid_points)
    records: list[RunRecord] = []
    for name, order in orders.items():
        for budget in sorted(set(grid)):
            edges = EdgeSet(n, frozenset(order[:budget]))
            method = f"{name}_budget_{budget}"
            model = build_model(n, edges, n_hidden, seed=cfg.train.seed)
            fitted = _fit(cfg, model, samples, [cfg.seed, cell.index, 1000 + budget, len(name)], method)
            records += _density_records(cfg, cell, method, fitted, target, sample_table, model_complexity_ratio(edges, rho))
    return records


def _run_real_data_cell(cfg: ExperimentConfig, cell: Cell) -> list[RunRecord]:
    data = load_binary_csv(cfg.data_path, header=cfg.header)
    n = data.shape[1]
    order = np.random.default_rng([cfg.seed, cell.replicate]).permutation(len(data))
    n_test = int(round(cfg.test_fraction * len(data)))
    test, train_x = data[order[:n_test]], data[order[n_test:]]
    train_cfg = cfg.train
    if n > MAX_VARIABLES and train_cfg.method != "cd":
        logger.info("%s visible units exceed the enumeration cap, training with contrastive divergence", n)
        train_cfg = train_cfg.model_copy(update={"method": "cd"})
    cfg = cfg.model_copy(update={"train": train_cfg})

    rho = pairwise_confidence(train_x, cfg.htest.smoothing)
    ranking = cif_rank(train_x, smoothing=cfg.htest.smoothing)
    random_order = _random_order(n, _cell_seed(cfg, cell, 1))
    edge_sets: dict[str, EdgeSet] = {}
    if "full" in cfg.methods:
        edge_sets["full"] = EdgeSet.complete(n)
    if "cif_htest" in cfg.methods:
        edge_sets["cif_htest"] = cif_htest(train_x, cfg.htest)
    for ratio in cfg.complexity_ratios:
        cif_edges = edges_for_ratio(ranking, ratio, n)
        edge_sets[f"cif_ratio_{ratio:g}"] = cif_edges
        edge_sets[f"rand_ratio_{ratio:g}"] = EdgeSet(n, frozenset(random_order[: len(cif_edges)]))

    records: list[RunRecord] = []
    for salt, (method, edges) in enumerate(edge_sets.items(), start=1):
        model = _fit(cfg, BmModel.vbm(n, edges, seed=cfg.train.seed), train_x, [cfg.seed, cell.index, salt], method)
        d_ham = hamming_eval(
            test, model, rng=np.random.default_rng([cfg.seed, cell.index, salt, 1]), n_gen=cfg.hamming.n_gen, cfg=cfg.hamming
        )
        for metric, value in (("d_ham", d_ham), ("complexity_ratio", model_complexity_ratio(edges, rho))):
            records.append(RunRecord(cfg.experiment, cfg.seed, method, len(train_x), cell.replicate, metric, float(value)))
        logger.info("real-data %s: d_ham=%.4f with %s edges", method, d_ham, len(edges))
    return records


def run_cell(cfg: ExperimentConfig, cell: Cell) -> list[RunRecord]:
    runner = {
        "fid_table": _run_fid_cell,
        "vbm_density": _run_density_cell,
        "vrbm_density": _run_density_cell,
        "real_data": _run_real_data_cell,
    }[cfg.experiment]
    return runner(cfg, cell)


def run_experiment(cfg: ExperimentConfig, mapper: Callable = map) -> list[RunRecord]:
    """Run every cell through ``mapper``; it must keep input order, as ``map`` and executor maps do."""
    cells = plan_cells(cfg)
    logger.info("Running %s: %s cells", cfg.experiment, len(cells))
    results = list(mapper(partial(run_cell, cfg), cells))
    return [record for cell_records in results for record in cell_records]


def run_fid_table(cfg: ExperimentConfig) -> Table1Result:
    return table1_from_records(cfg, run_experiment(cfg))


def run_vbm_density(cfg: ExperimentConfig) -> list[RunRecord]:
    return run_experiment(cfg.model_copy(update={"experiment": "vbm_density"}))


def run_vrbm_density(cfg: ExperimentConfig) -> list[RunRecord]:
    return run_experiment(cfg.model_copy(update={"experiment": "vrbm_density"}))


def run_real_data(cfg: ExperimentConfig) -> list[RunRecord]:
    return run_experiment(cfg.model_copy(update={"experiment": "real_data"}))


# ---------------------------------------------------------------------------
# Aggregation and outputs
# ---------------------------------------------------------------------------


def table1_from_records(cfg: ExperimentConfig, records: list[RunRecord]) -> Table1Result:
    order = cfg.perturbation.order
    rows = []
    for record in records:
        if record.metric != "fid_ratio":
            continue
        n = int(record.method.rsplit("_n", 1)[1])
        rows.append(Table1Row(n, record.replicate, parameter_ratio(n, order), record.value))
    return Table1Result(tuple(sorted(rows, key=lambda r: (r.n, r.replicate))))


def summarize(records: list[RunRecord]) -> list[dict]:
    """Mean and standard deviation per (method, N, metric), sorted by that key."""
    groups: dict[tuple[str, int, str], list[float]] = {}
    for record in records:
        groups.setdefault((record.method, record.N, record.metric), []).append(record.value)
    summary = []
    for (method, N, metric), values in sorted(groups.items()):
        values = np.asarray(values)
        summary.append({
            "method": method,
            "N": N,
            "metric": metric,
            "mean": float(values.mean()),
            "std": float(values.std(ddof=1)) if values.size > 1 else 0.0,
            "count": int(values.size),
        })
    return summary


def write_experiment_outputs(cfg: ExperimentConfig, records: list[RunRecord]) -> dict[str, Path]:
    storage = Storage(cfg.output_dir)
    paths = {
        "records": write_records(records, storage.path(f"{cfg.experiment}.csv")),
        "summary": write_summary(summarize(records), storage.path(f"{cfg.experiment}.summary.json")),
    }
    if cfg.experiment == "fid_table":
        paths["table1"], paths["table1_summary"] = write_table1(
            table1_from_records(cfg, records), storage.path("table1.csv"), storage.path("table1.json")
        )
    logger.info("Wrote %s records to %s", len(records), storage.root)
    return paths


def records_to_dicts(records: list[RunRecord]) -> list[dict]:
    return [asdict(record) for record in records]


def records_from_dicts(rows: list[dict]) -> list[RunRecord]:
    return [RunRecord(**row) for row in rows]
