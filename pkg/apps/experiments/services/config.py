"""Validated experiment descriptions (JSON in, frozen pydantic models out)."""
from __future__ import annotations

from pathlib import Path
from typing import Any, Literal

import logging

from decouple import config as env
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError


logger = logging.getLogger(__name__)


DEFAULT_OUTPUT_DIR = env("CIF_OUTPUT_DIR", default="results")

Method = Literal["full", "rand_cv", "cif_cv", "cif_htest", "rbm_baseline"]
Experiment = Literal["fid_table", "vbm_density", "vrbm_density", "real_data"]


class _Config(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class PerturbationConfig(_Config):
    a: float = Field(0.1, gt=0)
    eps: float = Field(1e-6, gt=0)
    seed: int = 0
    order: int = Field(2, ge=1)
    mode: Literal["empirical", "analytic"] = "empirical"
    sample_factor: int = Field(10, ge=1)
    # Unseen cells of the empirical estimate sit at ``eps`` (as in the target) or at PROB_FLOOR.
    empirical_floor: Literal["eps", "prob_floor"] = "eps"
    pseudo_count: float = Field(0.0, ge=0)


class TrainConfig(_Config):
    method: Literal["exact_ml", "cd"] = "exact_ml"
    optimizer: Literal["auto", "newton", "lbfgs", "gradient"] = "auto"
    cd_steps: int = Field(1, ge=1)
    learning_rate: float = Field(0.01, gt=0)
    max_epochs: int = Field(2000, ge=0)
    tol: float = Field(1e-7, gt=0)
    batch_size: int | None = Field(None, ge=1)
    trace_every: int = Field(1, ge=1)
    seed: int = 0


class HtestConfig(_Config):
    alpha: float = Field(0.05, gt=0, lt=1)
    smoothing: float = Field(0.5, ge=0)


class CvConfig(_Config):
    k: int = Field(5, ge=2)
    grid: list[int] | None = None
    grid_points: int = Field(11, ge=1)
    score: Literal["heldout_loglik"] = "heldout_loglik"
    seed: int = 0

    @field_validator("grid")
    @classmethod
    def _budgets_non_negative(cls, grid: list[int] | None) -> list[int] | None:
        if grid is not None and (not grid or min(grid) < 0):
            raise ValueError("grid must be a non-empty list of non-negative edge counts")
        return grid


class HammingConfig(_Config):
    n_gen: int | None = Field(None, ge=1)
    burn_in: int = Field(1000, ge=0)
    thin: int = Field(10, ge=1)
    n_chains: int = Field(100, ge=1)


class ExperimentConfig(_Config):
    experiment: Experiment
    n_vars: int | list[int] = 10
    n_hidden: int = Field(10, ge=0)
    sample_sizes: list[int] = Field(default_factory=lambda: [100, 300, 500, 1000, 1500, 3000])
    replicates: int = Field(20, ge=1)
    methods: list[Method] = Field(default_factory=lambda: ["full", "rand_cv", "cif_cv", "cif_htest"])
    train: TrainConfig = Field(default_factory=TrainConfig)
    htest: HtestConfig = Field(default_factory=HtestConfig)
    cv: CvConfig = Field(default_factory=CvConfig)
    perturbation: PerturbationConfig = Field(default_factory=PerturbationConfig)
    hamming: HammingConfig = Field(default_factory=HammingConfig)
    sweep: bool = False
    complexity_ratios: list[float] = Field(default_factory=lambda: [0.2, 0.4, 0.6, 0.8, 1.0])
    test_fraction: float = Field(0.2, gt=0, lt=1)
    data_path: str | None = None
    header: bool = False
    strict: bool = False
    seed: int = 0
    output_dir: str = DEFAULT_OUTPUT_DIR

    @field_validator("sample_sizes")
    @classmethod
    def _sample_sizes_positive(cls, sizes: list[int]) -> list[int]:
        if not sizes or min(sizes) < 1:
            raise ValueError("sample_sizes must be a non-empty list of positive integers")
        return sizes

    @field_validator("complexity_ratios")
    @classmethod
    def _ratios_in_unit_interval(cls, ratios: list[float]) -> list[float]:
        if not ratios or min(ratios) < 0 or max(ratios) > 1:
            raise ValueError("complexity_ratios must lie in [0, 1]")
        return ratios

    @model_validator(mode="after")
    def _experiment_limits(self) -> "ExperimentConfig":
        n_values = self.n_values
        if not n_values:
            raise ValueError("n_vars must name at least one variable count")
        if self.experiment == "fid_table" and not all(3 <= n <= 7 for n in n_values):
            raise ValueError("fid_table needs 3 <= n_vars <= 7")
        if self.experiment in ("vbm_density", "vrbm_density") and len(n_values) != 1:
            raise ValueError(f"{self.experiment} takes a single n_vars")
        if self.experiment == "vbm_density" and not 2 <= n_values[0] <= 12:
            raise ValueError("vbm_density needs 2 <= n_vars <= 12")
        if self.experiment == "vrbm_density" and n_values[0] + self.n_hidden > 20:
            raise ValueError("vrbm_density needs n_vars + n_hidden <= 20")
        if self.experiment == "real_data" and not self.data_path:
            raise ValueError("real_data needs data_path")
        if "rbm_baseline" in self.methods and self.experiment != "vrbm_density":
            raise ValueError("rbm_baseline only applies to vrbm_density")
        return self

    @property
    def n_values(self) -> list[int]:
        return list(self.n_vars) if isinstance(self.n_vars, list) else [self.n_vars]


def parse_experiment_config(data: dict[str, Any] | str | bytes, **overrides: Any) -> ExperimentConfig:
    """Validate a config mapping or JSON document; ``overrides`` replace top-level fields."""
    try:
        if isinstance(data, (str, bytes)):
            parsed = ExperimentConfig.model_validate_json(data)
            if not overrides:
                return parsed
            data = parsed.model_dump()
        return ExperimentConfig.model_validate({**data, **overrides})
    except ValidationError as exc:
        raise ConfigError(f"invalid experiment config: {exc}") from exc


def load_experiment_config(path: str | Path, **overrides: Any) -> ExperimentConfig:
    text = Path(path).read_text(encoding="utf-8")
    logger.debug("Loaded experiment config from %s", path)
    return parse_experiment_config(text, **overrides)


class ToolConfig(BaseModel):
    """Sections of a config document used by the standalone select/train/eval tools."""

    model_config = ConfigDict(extra="ignore", frozen=True)

    train: TrainConfig = Field(default_factory=TrainConfig)
    htest: HtestConfig = Field(default_factory=HtestConfig)
    cv: CvConfig = Field(default_factory=CvConfig)
    hamming: HammingConfig = Field(default_factory=HammingConfig)
    seed: int = 0
    strict: bool = False
    output_dir: str = DEFAULT_OUTPUT_DIR


def parse_tool_config(data: dict[str, Any] | str | bytes | None = None, **overrides: Any) -> ToolConfig:
    try:
        if isinstance(data, (str, bytes)):
            data = ToolConfig.model_validate_json(data).model_dump()
        return ToolConfig.model_validate({**(data or {}), **overrides})
    except ValidationError as exc:
        raise ConfigError(f"invalid config: {exc}") from exc
