import json
import logging
from pathlib import Path

import numpy as np
from django.core.management.base import BaseCommand, CommandError

from apps.experiments.services.boltzmann import train
from apps.experiments.services.config import parse_experiment_config, parse_tool_config
from apps.experiments.services.errors import CifInputError, NoConvergence, NumericalError
from apps.experiments.services.harness import hamming_eval, run_experiment, summarize, write_experiment_outputs
from apps.experiments.services.selection import build_model, cv_select, edge_tests
from apps.experiments.services.storage import (
    Storage,
    load_binary_csv,
    read_edges,
    read_model,
    write_cv_table,
    write_edges,
    write_model,
    write_trace,
)

logger = logging.getLogger(__name__)

EXPERIMENTS = {
    "fid-table": "fid_table",
    "vbm-density": "vbm_density",
    "vrbm-density": "vrbm_density",
    "real-data": "real_data",
}
FID_TABLE_DEFAULTS = {"n_vars": [3, 4, 5, 6, 7], "replicates": 50}


class Command(BaseCommand):
    help = "Run CIF experiments and the standalone select/train/eval-hamming tools"

    def add_arguments(self, parser):
        sub = parser.add_subparsers(dest="subcommand", required=True)
        for name in (*EXPERIMENTS, "select", "train", "eval-hamming"):
            p = sub.add_parser(name)
            p.add_argument("--config", help="JSON config file")
            p.add_argument("--seed", type=int)
            p.add_argument("--out", help="output directory")
            if name == "real-data" or name in ("select", "train", "eval-hamming"):
                p.add_argument("--data", required=name != "real-data", help="binary sample CSV")
                p.add_argument("--header", action="store_true", help="the data file has a header row")
        sub.choices["select"].add_argument("--method", choices=("htest", "cif_cv", "rand_cv"), default="htest")
        sub.choices["select"].add_argument("--hidden", type=int, default=0)
        sub.choices["train"].add_argument("--edges", help="edge CSV; all pairs when omitted")
        sub.choices["train"].add_argument("--hidden", type=int, default=0)
        sub.choices["eval-hamming"].add_argument("--model", required=True, help="model JSON")

    def handle(self, *args, **opts):
        name = opts["subcommand"]
        try:
            if name in EXPERIMENTS:
                self.run_experiment(EXPERIMENTS[name], opts)
            else:
                getattr(self, "run_" + name.replace("-", "_"))(opts)
        except (CifInputError, OSError, json.JSONDecodeError) as e:
            raise CommandError(str(e), returncode=2) from e
        except NumericalError as e:
            raise CommandError(str(e), returncode=3) from e

    # -- helpers ---------------------------------------------------------------

    def _document(self, opts) -> dict:
        if not opts.get("config"):
            return {}
        return json.loads(Path(opts["config"]).read_text(encoding="utf-8"))

    def _overrides(self, opts) -> dict:
        keys = {"seed": "seed", "out": "output_dir"}
        return {field: opts[key] for key, field in keys.items() if opts.get(key) is not None}

    def _tool_config(self, opts):
        return parse_tool_config(self._document(opts), **self._overrides(opts))

    def _write(self, label: str, path):
        self.stdout.write(f"{label}: {path}")

    # -- experiments -----------------------------------------------------------

    def run_experiment(self, experiment: str, opts):
        document = self._document(opts)
        if not opts.get("config") and experiment == "fid_table":
            document = dict(FID_TABLE_DEFAULTS)
        overrides = {"experiment": experiment, **self._overrides(opts)}
        if opts.get("data"):
            overrides.update(data_path=opts["data"], header=opts["header"])
        cfg = parse_experiment_config(document, **overrides)
        records = run_experiment(cfg)
        for label, path in write_experiment_outputs(cfg, records).items():
            self._write(label, path)
        for row in summarize(records):
            self.stdout.write(
                f"{row['method']:>20} N={row['N']:<6} {row['metric']:<16} mean={row['mean']:.6f} std={row['std']:.6f}"
            )

    # -- tools -----------------------------------------------------------------

    def run_select(self, opts):
        cfg = self._tool_config(opts)
        samples = load_binary_csv(opts["data"], header=opts["header"])
        storage = Storage(cfg.output_dir)
        tests = edge_tests(samples, cfg.htest)
        if opts["method"] != "htest":
            selector = "cif" if opts["method"] == "cif_cv" else "rand"
            result = cv_select(samples, selector, cfg.cv, cfg.train, n_hidden=opts["hidden"], smoothing=cfg.htest.smoothing)
            chosen = result.edges
            tests = [type(t)(t.i, t.j, t.rho, t.statistic, t.p_value, (t.i, t.j) in chosen) for t in tests]
            self._write("cv_table", write_cv_table(result.cv_table, storage.path("cv_table.csv")))
            self.stdout.write(f"budget: {result.budget}")
        self._write("edges", write_edges(tests, storage.path("edges.csv")))
        self.stdout.write(f"selected: {sum(t.selected for t in tests)} of {len(tests)}")

    def run_train(self, opts):
        cfg = self._tool_config(opts)
        samples = load_binary_csv(opts["data"], header=opts["header"])
        n = samples.shape[1]
        edges = read_edges(opts["edges"]) if opts.get("edges") else [(i, j) for i in range(n) for j in range(i + 1, n)]
        model = build_model(n, edges, opts["hidden"], seed=cfg.train.seed)
        logger.info("Training %s model with %s edges on %s rows", model.kind.value, len(edges), len(samples))
        result = train(model, samples, cfg.train, rng=np.random.default_rng(cfg.seed))
        storage = Storage(cfg.output_dir)
        self._write("model", write_model(result.model, storage.path("model.json")))
        self._write("trace", write_trace(result.trace, storage.path("trace.csv")))
        self.stdout.write(f"epochs: {result.epochs} converged: {result.converged}")
        if not result.converged and cfg.strict:
            raise NoConvergence(f"training did not converge after {result.epochs} epochs")

    def run_eval_hamming(self, opts):
        cfg = self._tool_config(opts)
        samples = load_binary_csv(opts["data"], header=opts["header"])
        model = read_model(opts["model"])
        d_ham = hamming_eval(samples, model, rng=cfg.seed, n_gen=cfg.hamming.n_gen, cfg=cfg.hamming)
        path = Storage(cfg.output_dir).path("hamming.json")
        path.write_text(json.dumps({"d_ham": d_ham, "rows": int(len(samples))}, indent=2) + "\n", encoding="utf-8")
        self._write("hamming", path)
        self.stdout.write(f"d_ham: {d_ham:.6f}")
