"""Confident-information-first tailoring and the FID-preservation simulation.

Tailoring keeps the η-coordinates up to order ``l`` and sets every θ-coordinate
above order ``l`` to zero. The simulation measures how much of the Fisher
information distance between a typical distribution and a finite-sample
estimate survives that reduction.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import partial
from math import comb
from typing import Callable, Iterable

import logging

import numpy as np

from .config import PerturbationConfig
from .coords import (
    PROB_FLOOR,
    JointTable,
    MixedCoords,
    from_mixed,
    sample_cells,
    to_mixed,
)
from .errors import ConfigError, DimensionMismatch
from .fisher import fid, fisher_mixed


logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class TailoredCoords:
    base: MixedCoords

    def __post_init__(self) -> None:
        if np.any(self.base.theta_high != 0):
            raise ValueError("tailored coordinates have an all-zero θ block")

    @property
    def l(self) -> int:
        return self.base.l

    @property
    def k(self) -> int:
        return free_parameter_count(self.base.n, self.base.l)

    def to_table(self) -> JointTable:
        return from_mixed(self.base)


def free_parameter_count(n: int, l: int) -> int:
    return sum(comb(n, i) for i in range(1, l + 1))


def parameter_ratio(n: int, l: int) -> float:
    return free_parameter_count(n, l) / ((1 << n) - 1)


def tailored_coords(t: JointTable, l: int) -> TailoredCoords:
    mixed = to_mixed(t, l)
    return TailoredCoords(MixedCoords(t.n, l, mixed.eta_low, np.zeros_like(mixed.theta_high)))


def tailor(t: JointTable, l: int) -> JointTable:
    return tailored_coords(t, l).to_table()


def fid_preservation_ratio(p_t: JointTable, p_s: JointTable, l: int) -> float:
    """FID over the η block divided by FID over all ζ-coordinates, G_ζ taken at ``p_s``.

    Identical tables give 0/0, reported as 1.
    """
    if p_t.n != p_s.n:
        raise DimensionMismatch(f"tables over {p_t.n} and {p_s.n} variables")
    a_block, b_block = fisher_mixed(p_s, l).blocks()
    target, sample = to_mixed(p_t, l), to_mixed(p_s, l)
    d_low = target.eta_low - sample.eta_low
    d_high = target.theta_high - sample.theta_high
    low = max(float(d_low @ a_block @ d_low), 0.0)
    total = low + max(float(d_high @ b_block @ d_high), 0.0)
    if total <= 0.0:
        return 1.0
    return float(min(np.sqrt(low / total), 1.0))


def preserved_fid_ratio(p_t: JointTable, p_s: JointTable, l: int, selection: np.ndarray) -> float:
    """Share of FID kept by an arbitrary subset of ζ-coordinates.

    Uses the per-coordinate decomposition Δζ_i (G_ζ)_ii Δζ_i so subsets of
    different blocks compare on the same footing. ``selection`` is a boolean
    mask or index array over the ζ order (η block first).
    """
    contributions = fid(p_s, p_t, "mixed", l).contributions
    total = float(contributions.sum())
    if total <= 0.0:
        return 1.0
    return float(np.sqrt(max(float(contributions[selection].sum()), 0.0) / total))


@dataclass(frozen=True)
class SpotCheck:
    low_ratio: float
    alternative_ratios: tuple[float, ...]

    @property
    def wins(self) -> bool:
        return all(self.low_ratio >= ratio for ratio in self.alternative_ratios)


def optimality_spot_check(
    p_t: JointTable, p_s: JointTable, l: int, rng: np.random.Generator, n_alternatives: int = 50
) -> SpotCheck:
    """Compare the η block against random coordinate subsets of the same size."""
    dimension = (1 << p_t.n) - 1
    k = free_parameter_count(p_t.n, l)
    contributions = fid(p_s, p_t, "mixed", l).contributions
    total = float(contributions.sum())

    def ratio(indices: np.ndarray) -> float:
        return 1.0 if total <= 0 else float(np.sqrt(max(float(contributions[indices].sum()), 0.0) / total))

    alternatives = tuple(ratio(rng.choice(dimension, size=k, replace=False)) for _ in range(n_alternatives))
    return SpotCheck(ratio(np.arange(k)), alternatives)


# ---------------------------------------------------------------------------
# Distributions for the simulation
# ---------------------------------------------------------------------------


def jeffreys_weights(size: int, rng: np.random.Generator) -> np.ndarray:
    """A point of the simplex drawn from the symmetric Dirichlet(1/2), floored at PROB_FLOOR."""
    draws = rng.standard_gamma(0.5, size)
    weights = draws / draws.sum()
    weights = np.maximum(weights, PROB_FLOOR)
    return weights / weights.sum()


def typical_distribution(n: int, eps: float, rng: np.random.Generator) -> JointTable:
    """2^⌊n/2⌋ Jeffreys-drawn significant cells; every other cell set to ``eps``."""
    significant = 1 << (n // 2)
    weights = np.full(1 << n, eps)
    cells = rng.choice(1 << n, size=significant, replace=False)
    weights[cells] = jeffreys_weights(significant, rng)
    return JointTable.from_weights(weights, n)


def empirical_estimate(
    t: JointTable,
    n_samples: int,
    rng: np.random.Generator,
    *,
    floor: float = PROB_FLOOR,
    pseudo_count: float = 0.0,
) -> JointTable:
    """Frequencies of ``n_samples`` draws from ``t`` plus ``pseudo_count`` per cell, clamped at ``floor``."""
    counts = np.bincount(sample_cells(t, n_samples, rng), minlength=t.probs.size) + pseudo_count
    return JointTable.from_weights(counts, t.n, clamp=True, eps=floor)


def perturb_analytic(t: JointTable, cfg: PerturbationConfig, rng: np.random.Generator) -> JointTable:
    """Δp_I = a·√p_I·u for significant cells and a·p_I·u for small ones, u ~ U[−1, 1]."""
    u = rng.uniform(-1.0, 1.0, t.probs.size)
    significant = t.probs > 100.0 * cfg.eps
    delta = np.where(significant, cfg.a * np.sqrt(t.probs), cfg.a * t.probs) * u
    return JointTable.from_weights(np.maximum(t.probs + delta, PROB_FLOOR), t.n)


# ---------------------------------------------------------------------------
# FID-preservation table
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Table1Row:
    n: int
    replicate: int
    param_ratio: float
    fid_ratio: float


@dataclass(frozen=True)
class Table1Result:
    rows: tuple[Table1Row, ...]

    def summary(self) -> dict[int, dict[str, float]]:
        out: dict[int, dict[str, float]] = {}
        for n in sorted({row.n for row in self.rows}):
            rows = [row for row in self.rows if row.n == n]
            ratios = np.array([row.fid_ratio for row in rows])
            out[n] = {
                "param_ratio": rows[0].param_ratio,
                "mean": float(ratios.mean()),
                "std": float(ratios.std(ddof=1)) if ratios.size > 1 else 0.0,
                "replicates": int(ratios.size),
            }
        return out


def table1_replicate(cfg: PerturbationConfig, n: int, replicate: int) -> Table1Row:
    rng = np.random.default_rng([cfg.seed, n, replicate])
    p_t = typical_distribution(n, cfg.eps, rng)
    if cfg.mode == "empirical":
        floor = cfg.eps if cfg.empirical_floor == "eps" else PROB_FLOOR
        p_s = empirical_estimate(p_t, cfg.sample_factor * (1 << n), rng, floor=floor, pseudo_count=cfg.pseudo_count)
    else:
        p_s = perturb_analytic(p_t, cfg, rng)
    ratio = fid_preservation_ratio(p_t, p_s, cfg.order)
    logger.debug("table1 n=%s replicate=%s fid_ratio=%.6f", n, replicate, ratio)
    return Table1Row(n, replicate, parameter_ratio(n, cfg.order), ratio)


def simulate_table1(
    cfg: PerturbationConfig,
    n_vars: int | Iterable[int],
    replicates: int,
    *,
    mapper: Callable = map,
) -> Table1Result:
    """Run the FID-preservation simulation; rows come back ordered by (n, replicate)."""
    n_values = [n_vars] if isinstance(n_vars, int) else list(n_vars)
    if not all(3 <= n <= 7 for n in n_values):
        raise ConfigError("the FID-preservation simulation supports 3 <= n <= 7")
    if cfg.order >= min(n_values):
        raise ConfigError(f"split order {cfg.order} needs more than {cfg.order} variables")
    rows: list[Table1Row] = []
    for n in n_values:
        rows.extend(mapper(partial(table1_replicate, cfg, n), range(replicates)))
    logger.info("FID-preservation simulation finished: %s rows", len(rows))
    return Table1Result(tuple(rows))


# ---------------------------------------------------------------------------
# Pairwise confidence
# ---------------------------------------------------------------------------


def confidence_from_cells(p00, p01, p10, p11):
    """ρ = θ^{ij} · g · θ^{ij} for 2×2 cell probabilities (scalars or arrays)."""
    theta = np.log(p00) - np.log(p01) - np.log(p10) + np.log(p11)
    g = 1.0 / (1.0 / p00 + 1.0 / p01 + 1.0 / p10 + 1.0 / p11)
    return theta * g * theta


def edge_confidence(p_ij: JointTable) -> float:
    if p_ij.n != 2:
        raise DimensionMismatch(f"edge confidence needs a 2-variable marginal, got n={p_ij.n}")
    p_ij.require_positive("edge confidence")
    p00, p10, p01, p11 = p_ij.probs
    return float(confidence_from_cells(p00, p01, p10, p11))
