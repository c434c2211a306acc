"""Sample-specific structure selection for Boltzmann machines.

Every visible pair (i, j) gets a confidence ρ_ij, the Fisher-information
contribution of its pairwise θ-coordinate in the smoothed 2×2 marginal.
``cif_htest`` keeps the pairs whose N·ρ_ij is significant under χ²(1);
``cv_select`` ranks pairs by ρ (or at random) and picks an edge budget by
k-fold cross-validated held-out log-likelihood.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Iterator, Literal, Mapping

import logging

import numpy as np
from scipy.special import erfc

from .boltzmann import BmModel, marginal_visible, train
from .cif import confidence_from_cells
from .config import CvConfig, HtestConfig, TrainConfig
from .coords import encode_states
from .errors import ConfigError, DimensionMismatch, InsufficientSamples, NegativeInput, NonPositiveProbability


logger = logging.getLogger(__name__)


Edge = tuple[int, int]
SelectionMethod = Literal["cif", "rand"]


@dataclass(frozen=True)
class EdgeSet:
    n: int
    edges: frozenset[Edge] = field(default_factory=frozenset)
    scope: str = "visible_visible"

    def __post_init__(self) -> None:
        normalised = set()
        for i, j in self.edges:
            i, j = int(i), int(j)
            if i == j or not (0 <= i < self.n and 0 <= j < self.n):
                raise DimensionMismatch(f"invalid edge ({i}, {j}) for {self.n} nodes")
            normalised.add((min(i, j), max(i, j)))
        object.__setattr__(self, "edges", frozenset(normalised))

    @classmethod
    def complete(cls, n: int) -> "EdgeSet":
        return cls(n, frozenset((i, j) for i in range(n) for j in range(i + 1, n)))

    def sorted(self) -> list[Edge]:
        return sorted(self.edges)

    def __len__(self) -> int:
        return len(self.edges)

    def __iter__(self) -> Iterator[Edge]:
        return iter(self.sorted())

    def __contains__(self, edge: object) -> bool:
        return edge in self.edges


@dataclass(frozen=True)
class EdgeTest:
    i: int
    j: int
    rho: float
    statistic: float
    p_value: float
    selected: bool


def chi2_sf_1df(x):
    """Upper tail of χ² with one degree of freedom, erfc(√(x/2))."""
    values = np.asarray(x, dtype=np.float64)
    if np.any(values < 0) or np.any(np.isnan(values)):
        raise NegativeInput("χ² statistics must be non-negative")
    result = erfc(np.sqrt(values / 2.0))
    return float(result) if result.ndim == 0 else result


def _as_samples(samples: np.ndarray, min_vars: int = 2) -> np.ndarray:
    samples = np.asarray(samples)
    if samples.ndim != 2 or samples.shape[1] < min_vars:
        raise DimensionMismatch(f"expected an (N, n) sample matrix with n >= {min_vars}, got shape {samples.shape}")
    if samples.shape[0] < 1:
        raise InsufficientSamples("need at least one sample")
    if not np.isin(samples, (0, 1)).all():
        raise DimensionMismatch("samples must be binary")
    return samples.astype(np.float64)


def pairwise_confidence(samples: np.ndarray, smoothing: float = 0.5) -> np.ndarray:
    """Symmetric matrix of ρ_ij from the smoothed 2×2 marginal of every pair (zero diagonal)."""
    xs = _as_samples(samples)
    count = xs.shape[0]
    n11 = xs.T @ xs
    ones = np.diag(n11)
    n10 = ones[:, None] - n11
    n01 = ones[None, :] - n11
    n00 = count - n11 - n10 - n01
    total = count + 4.0 * smoothing
    cells = [(c + smoothing) / total for c in (n00, n01, n10, n11)]
    off_diagonal = ~np.eye(xs.shape[1], dtype=bool)
    if any(np.any(c[off_diagonal] <= 0) for c in cells):
        raise NonPositiveProbability("a pairwise marginal has an empty cell; use a positive smoothing")
    with np.errstate(divide="ignore", invalid="ignore"):
        rho = confidence_from_cells(*cells)
    np.fill_diagonal(rho, 0.0)
    return rho


def edge_tests(samples: np.ndarray, cfg: HtestConfig | None = None) -> list[EdgeTest]:
    cfg = cfg or HtestConfig()
    xs = _as_samples(samples)
    rho = pairwise_confidence(xs, cfg.smoothing)
    rows, cols = np.triu_indices(xs.shape[1], 1)
    statistic = xs.shape[0] * rho[rows, cols]
    two_sided = 2.0 * chi2_sf_1df(np.maximum(statistic, 0.0))
    return [
        EdgeTest(int(i), int(j), float(r), float(s), float(min(1.0, p)), bool(p < cfg.alpha))
        for i, j, r, s, p in zip(rows, cols, rho[rows, cols], statistic, two_sided)
    ]


def cif_htest(samples: np.ndarray, cfg: HtestConfig | None = None) -> EdgeSet:
    """Edges whose doubled χ²(1) tail probability of N·ρ falls strictly below α."""
    tests = edge_tests(samples, cfg)
    selected = EdgeSet(np.shape(samples)[1], frozenset((t.i, t.j) for t in tests if t.selected))
    logger.debug("hypothesis test kept %s of %s edges", len(selected), len(tests))
    return selected


def cif_rank(
    samples: np.ndarray, candidate_edges: EdgeSet | None = None, smoothing: float = 0.5
) -> list[tuple[Edge, float]]:
    """Candidate edges by descending ρ, ties broken lexicographically."""
    rho = pairwise_confidence(samples, smoothing)
    candidates = EdgeSet.complete(rho.shape[0]) if candidate_edges is None else candidate_edges
    return sorted(((edge, float(rho[edge])) for edge in candidates), key=lambda item: (-item[1], item[0]))


def _rho_lookup(all_rho: Mapping[Edge, float] | np.ndarray) -> dict[Edge, float]:
    if isinstance(all_rho, np.ndarray):
        rows, cols = np.triu_indices(all_rho.shape[0], 1)
        return {(int(i), int(j)): float(all_rho[i, j]) for i, j in zip(rows, cols)}
    return {(min(i, j), max(i, j)): float(v) for (i, j), v in all_rho.items()}


def model_complexity_ratio(selected: Iterable[Edge], all_rho: Mapping[Edge, float] | np.ndarray) -> float:
    """Share of the total confidence carried by the selected edges; 0 when every ρ is zero."""
    lookup = _rho_lookup(all_rho)
    total = sum(lookup.values())
    if total <= 0:
        return 0.0
    chosen = sum(lookup[(min(i, j), max(i, j))] for i, j in selected)
    return float(min(max(chosen / total, 0.0), 1.0))


def edges_for_ratio(ranking: list[tuple[Edge, float]], ratio: float, n: int) -> EdgeSet:
    """Shortest top-ρ prefix of ``ranking`` whose share of the total confidence reaches ``ratio``."""
    if ratio <= 0:
        return EdgeSet(n)
    weights = np.array([rho for _, rho in ranking])
    total = weights.sum()
    if total <= 0:
        return EdgeSet(n, frozenset(edge for edge, _ in ranking))
    reached = np.cumsum(weights) / total >= ratio - 1e-12
    count = int(np.argmax(reached)) + 1 if reached.any() else len(ranking)
    return EdgeSet(n, frozenset(edge for edge, _ in ranking[:count]))


# ---------------------------------------------------------------------------
# Cross-validated selection
# ---------------------------------------------------------------------------


@dataclass
class CvResult:
    edges: EdgeSet
    budget: int
    cv_table: list[tuple[int, int, float]]
    scores: dict[int, float]


def default_grid(n_edges: int, points: int = 11) -> list[int]:
    return sorted({int(round(b)) for b in np.linspace(0, n_edges, points)})


def build_model(n: int, edges: Iterable[Edge], n_hidden: int = 0, seed: int = 0) -> BmModel:
    """Masked VBM, or vRBM when ``n_hidden`` > 0, with only ``edges`` enabled among the visible pairs."""
    edges = list(edges)
    if n_hidden:
        return BmModel.vrbm(n, n_hidden, edges, seed=seed)
    return BmModel.vbm(n, edges, seed=seed)


def heldout_loglik(model: BmModel, samples: np.ndarray) -> float:
    log_p = np.log(marginal_visible(model).probs)
    return float(log_p[encode_states(samples)].mean())


def _budget_edges(
    method: SelectionMethod, budget: int, train_x: np.ndarray, candidates: list[Edge], seed: int, smoothing: float
) -> list[Edge]:
    if method == "cif":
        return [edge for edge, _ in cif_rank(train_x, smoothing=smoothing)[:budget]]
    # one fixed random subset per budget, shared by every fold
    rng = np.random.default_rng([seed, budget])
    picks = rng.choice(len(candidates), size=budget, replace=False)
    return [candidates[k] for k in sorted(picks)]


def cv_select(
    samples: np.ndarray,
    method: SelectionMethod,
    cfg: CvConfig | None = None,
    train_cfg: TrainConfig | None = None,
    *,
    n_hidden: int = 0,
    smoothing: float = 0.5,
) -> CvResult:
    """Choose an edge budget by k-fold cross-validated held-out mean log-likelihood."""
    cfg = cfg or CvConfig()
    train_cfg = train_cfg or TrainConfig()
    if method not in ("cif", "rand"):
        raise ConfigError(f"unknown selection method {method!r}")
    xs = _as_samples(samples)
    count, n = xs.shape
    if count < cfg.k:
        raise InsufficientSamples(f"{count} samples cannot be split into {cfg.k} folds")

    candidates = EdgeSet.complete(n).sorted()
    grid = cfg.grid if cfg.grid is not None else default_grid(len(candidates), cfg.grid_points)
    if max(grid) > len(candidates):
        raise ConfigError(f"edge budget {max(grid)} exceeds the {len(candidates)} available pairs")

    folds = np.array_split(np.random.default_rng(cfg.seed).permutation(count), cfg.k)
    cv_table: list[tuple[int, int, float]] = []
    for budget in sorted(set(grid)):
        for fold, held_out in enumerate(folds):
            train_x = np.delete(xs, held_out, axis=0)
            edges = _budget_edges(method, budget, train_x, candidates, cfg.seed, smoothing)
            model = build_model(n, edges, n_hidden, seed=train_cfg.seed)
            fitted = train(model, train_x, train_cfg, rng=np.random.default_rng([train_cfg.seed, budget, fold])).model
            cv_table.append((budget, fold, heldout_loglik(fitted, xs[held_out])))

    scores = {
        budget: float(np.mean([score for b, _, score in cv_table if b == budget])) for budget in sorted(set(grid))
    }
    best = max(scores, key=lambda b: (scores[b], -b))
    edges = EdgeSet(n, frozenset(_budget_edges(method, best, xs, candidates, cfg.seed, smoothing)))
    logger.info("%s cross-validation picked %s edges (score %.4f)", method, best, scores[best])
    return CvResult(edges, best, cv_table, scores)
