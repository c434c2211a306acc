import json
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from scipy.stats import ttest_rel

from apps.experiments.services.boltzmann import BmModel, marginal_visible, train
from apps.experiments.services.cif import simulate_table1
from apps.experiments.services.config import HammingConfig, PerturbationConfig, TrainConfig, parse_experiment_config
from apps.experiments.services.coords import JointTable
from apps.experiments.services.errors import SizeCap
from apps.experiments.services.fisher import kl
from apps.experiments.services.harness import (
    RunRecord,
    gen_jeffreys_target,
    hamming_eval,
    plan_cells,
    records_from_dicts,
    records_to_dicts,
    run_experiment,
    run_fid_table,
    sample_dataset,
    summarize,
    write_experiment_outputs,
)
from apps.experiments.services.storage import read_records, write_binary_csv

SMALL_HAMMING = {"n_gen": 40, "burn_in": 5, "thin": 1, "n_chains": 10}


def _vbm_density_config(tmp_path, **extra):
    data = {
        "experiment": "vbm_density",
        "n_vars": 3,
        "sample_sizes": [60],
        "replicates": 1,
        "cv": {"k": 3, "grid": [0, 1, 3]},
        "train": {"max_epochs": 200},
        "seed": 4,
        "output_dir": str(tmp_path),
    }
    return parse_experiment_config({**data, **extra})


def test_jeffreys_target(rng):
    target = gen_jeffreys_target(4, rng)
    assert target.n == 4
    assert target.probs.sum() == pytest.approx(1.0)
    with pytest.raises(SizeCap):
        gen_jeffreys_target(13, rng)


def test_sample_dataset(rng, make_table):
    target = make_table(4, rng)
    assert sample_dataset(target, 0, rng).shape == (0, 4)
    samples = sample_dataset(target, 100_000, rng)
    assert samples.dtype == np.uint8
    assert JointTable.from_samples(samples, clamp=False).tv(target) < 0.02


def test_hamming_eval_of_a_frozen_model(rng):
    model = BmModel.vbm(3, []).with_parameters(np.full(3, -30.0))
    cfg = HammingConfig(**SMALL_HAMMING)
    assert hamming_eval(np.zeros((5, 3), dtype=np.uint8), model, rng=rng, cfg=cfg) == 0.0
    assert hamming_eval(np.ones((5, 3), dtype=np.uint8), model, n_gen=20, rng=rng, cfg=cfg) == 3.0


def test_hamming_eval_is_a_function_of_its_seed(rng):
    model = BmModel.vbm(3, [(0, 1)], seed=2)
    data = (rng.random((30, 3)) < 0.5).astype(np.uint8)
    cfg = HammingConfig(**SMALL_HAMMING)
    first = hamming_eval(data, model, rng=11, cfg=cfg)
    assert hamming_eval(data, model, rng=11, cfg=cfg) == first
    assert hamming_eval(data, model, rng=np.random.default_rng(11), cfg=cfg) == first
    with pytest.raises(ValueError):
        hamming_eval(data, model, rng=None, cfg=cfg)
    with pytest.raises(TypeError):
        hamming_eval(data, model, cfg=cfg)


def test_plan_cells():
    fid = parse_experiment_config({"experiment": "fid_table", "n_vars": [3, 4], "replicates": 2})
    assert [(c.index, c.n, c.replicate) for c in plan_cells(fid)] == [(0, 3, 0), (1, 3, 1), (2, 4, 0), (3, 4, 1)]
    density = parse_experiment_config({"experiment": "vbm_density", "n_vars": 5, "sample_sizes": [10, 20], "replicates": 2})
    assert [(c.N, c.replicate) for c in plan_cells(density)] == [(10, 0), (10, 1), (20, 0), (20, 1)]
    real = parse_experiment_config({"experiment": "real_data", "data_path": "x.csv", "replicates": 3})
    assert len(plan_cells(real)) == 3


def test_fid_table_experiment(tmp_path):
    cfg = parse_experiment_config({"experiment": "fid_table", "n_vars": [3], "replicates": 2, "seed": 3})
    records = run_experiment(cfg)
    assert [(r.method, r.metric) for r in records] == [("l2_n3", "fid_ratio")] * 2
    table = run_fid_table(cfg)
    assert table == simulate_table1(PerturbationConfig(seed=3), [3], replicates=2)


def test_vbm_density_experiment(tmp_path):
    cfg = _vbm_density_config(tmp_path)
    records = run_experiment(cfg)
    assert len(records) == 12
    assert {r.method for r in records} == {"full", "rand_cv", "cif_cv", "cif_htest"}
    by_key = {(r.method, r.metric): r.value for r in records}
    assert by_key[("full", "complexity_ratio")] == pytest.approx(1.0)
    for (method, metric), value in by_key.items():
        if metric.startswith("kl"):
            assert value >= 0


def test_density_runs_are_deterministic(tmp_path):
    cfg = _vbm_density_config(tmp_path, methods=["full", "cif_htest", "rand_cv"])
    with ThreadPoolExecutor(max_workers=2) as pool:
        threaded = run_experiment(cfg, mapper=pool.map)
    assert threaded == run_experiment(cfg)


def test_density_sweep(tmp_path):
    cfg = _vbm_density_config(tmp_path, methods=["full"], sweep=True)
    methods = {r.method for r in run_experiment(cfg)}
    assert {"cif_budget_0", "cif_budget_3", "rand_budget_1"} <= methods


def test_vrbm_density_experiment(tmp_path):
    cfg = parse_experiment_config({
        "experiment": "vrbm_density",
        "n_vars": 3,
        "n_hidden": 1,
        "sample_sizes": [50],
        "replicates": 1,
        "methods": ["full", "rbm_baseline"],
        "train": {"max_epochs": 50},
    })
    records = run_experiment(cfg)
    assert len(records) == 6
    baseline = {r.metric: r.value for r in records if r.method == "rbm_baseline"}
    assert baseline["complexity_ratio"] == 0.0


def test_real_data_experiment(tmp_path, binary_csv):
    cfg = parse_experiment_config({
        "experiment": "real_data",
        "data_path": str(binary_csv),
        "header": True,
        "replicates": 1,
        "methods": ["full"],
        "complexity_ratios": [0.5, 1.0],
        "hamming": SMALL_HAMMING,
        "train": {"max_epochs": 200},
        "output_dir": str(tmp_path),
    })
    records = run_experiment(cfg)
    methods = {r.method for r in records}
    assert methods == {"full", "cif_ratio_0.5", "rand_ratio_0.5", "cif_ratio_1", "rand_ratio_1"}
    assert len(records) == 10
    for record in records:
        assert record.N == 160
        if record.metric == "d_ham":
            assert 0.0 <= record.value <= 4.0


def test_real_data_from_written_samples(tmp_path, rng):
    samples = (rng.random((40, 3)) < 0.5).astype(np.uint8)
    path = write_binary_csv(samples, tmp_path / "small.csv")
    cfg = parse_experiment_config({
        "experiment": "real_data",
        "data_path": str(path),
        "header": True,
        "replicates": 1,
        "methods": ["cif_htest"],
        "complexity_ratios": [1.0],
        "hamming": SMALL_HAMMING,
    })
    records = run_experiment(cfg)
    assert {r.method for r in records} == {"cif_htest", "cif_ratio_1", "rand_ratio_1"}
    assert len(records) == 6


def test_summarize():
    records = [
        RunRecord("vbm_density", 0, "full", 100, 0, "kl_to_target", 1.0),
        RunRecord("vbm_density", 0, "full", 100, 1, "kl_to_target", 3.0),
        RunRecord("vbm_density", 0, "cif_cv", 100, 0, "kl_to_target", 0.5),
    ]
    summary = summarize(records)
    assert [row["method"] for row in summary] == ["cif_cv", "full"]
    assert summary[0]["std"] == 0.0
    assert summary[1]["mean"] == pytest.approx(2.0)
    assert summary[1]["std"] == pytest.approx(np.sqrt(2.0))
    assert summary[1]["count"] == 2


def test_write_experiment_outputs(tmp_path):
    cfg = parse_experiment_config({"experiment": "fid_table", "n_vars": [3], "replicates": 2, "output_dir": str(tmp_path)})
    records = run_experiment(cfg)
    paths = write_experiment_outputs(cfg, records)
    assert set(paths) == {"records", "summary", "table1", "table1_summary"}
    assert len(read_records(paths["records"])) == 2
    assert json.loads(paths["table1_summary"].read_text())["3"]["replicates"] == 2


def test_run_record_checks_metric():
    with pytest.raises(ValueError):
        RunRecord("vbm_density", 0, "full", 10, 0, "accuracy", 1.0)
    record = RunRecord("vbm_density", 0, "full", 10, 0, "d_ham", 1.5)
    assert records_from_dicts(records_to_dicts([record])) == [record]


def test_outputs_are_byte_identical_across_runs(tmp_path):
    contents = []
    for name in ("first", "second"):
        cfg = parse_experiment_config({"experiment": "fid_table", "n_vars": [3], "replicates": 3, "output_dir": str(tmp_path / name)})
        paths = write_experiment_outputs(cfg, run_experiment(cfg))
        contents.append({key: path.read_bytes() for key, path in paths.items()})
    assert contents[0] == contents[1]


def test_vrbm_without_visible_edges_matches_rbm(rng):
    target = gen_jeffreys_target(3, rng)
    samples = sample_dataset(target, 200, rng)
    cfg = TrainConfig(max_epochs=100)
    vrbm = train(BmModel.vrbm(3, 2, [], seed=7), samples, cfg).model
    rbm = train(BmModel.rbm(3, 2, seed=7), samples, cfg).model
    assert abs(kl(target, marginal_visible(vrbm)) - kl(target, marginal_visible(rbm))) < 1e-9


def test_cif_cv_at_the_full_budget_is_the_full_model(tmp_path):
    cfg = _vbm_density_config(tmp_path, methods=["full", "cif_cv"], cv={"k": 3, "grid": [3]})
    by_key = {(r.method, r.metric): r.value for r in run_experiment(cfg)}
    assert by_key[("cif_cv", "kl_to_target")] == pytest.approx(by_key[("full", "kl_to_target")], abs=1e-9)
    assert by_key[("cif_cv", "kl_to_sample")] == pytest.approx(by_key[("full", "kl_to_sample")], abs=1e-9)
    assert by_key[("cif_cv", "complexity_ratio")] == pytest.approx(1.0)


def _mean_kl(records, method, N, metric="kl_to_target"):
    values = [r.value for r in records if r.method == method and r.N == N and r.metric == metric]
    return float(np.mean(values)), values


@pytest.mark.slow
def test_selection_never_worse_than_full_vbm_at_small_n():
    cfg = parse_experiment_config({"experiment": "vbm_density", "n_vars": 10, "sample_sizes": [300], "replicates": 4})
    records = run_experiment(cfg)
    full, _ = _mean_kl(records, "full", 300)
    for method in ("rand_cv", "cif_cv", "cif_htest"):
        assert _mean_kl(records, method, 300)[0] <= full


@pytest.mark.slow
def test_vbm_density_orderings():
    cfg = parse_experiment_config({
        "experiment": "vbm_density",
        "n_vars": 10,
        "sample_sizes": [300, 1500, 3000],
        "replicates": 20,
        "sweep": True,
    })
    records = run_experiment(cfg)
    full, _ = _mean_kl(records, "full", 300)
    for method in ("rand_cv", "cif_cv", "cif_htest"):
        assert _mean_kl(records, method, 300)[0] <= full
    budgets = sorted({int(r.method.rsplit("_", 1)[1]) for r in records if r.method.startswith("cif_budget_")})
    for N in (1500, 3000):
        cif_values = _mean_kl(records, "cif_cv", N)[1]
        rand_values = _mean_kl(records, "rand_cv", N)[1]
        assert ttest_rel(cif_values, rand_values).pvalue > 0.05
        for budget in budgets:
            cif_fit = _mean_kl(records, f"cif_budget_{budget}", N, "kl_to_sample")[0]
            rand_fit = _mean_kl(records, f"rand_budget_{budget}", N, "kl_to_sample")[0]
            assert cif_fit <= rand_fit + 1e-9


@pytest.mark.slow
def test_vrbm_selection_beats_rbm_baseline():
    cfg = parse_experiment_config({
        "experiment": "vrbm_density",
        "n_vars": 10,
        "n_hidden": 10,
        "sample_sizes": [1000],
        "replicates": 20,
        "methods": ["cif_htest", "rbm_baseline"],
    })
    records = run_experiment(cfg)
    assert _mean_kl(records, "cif_htest", 1000)[0] < _mean_kl(records, "rbm_baseline", 1000)[0]
