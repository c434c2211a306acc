"""Exact binary multivariate distributions and their coordinate systems.

A distribution over ``n`` binary variables is stored as its ``2**n`` cell
probabilities (p-coordinates). Cells and coordinates are indexed by subset
bitmasks: variable ``i`` (1-based) maps to bit ``i - 1`` and every vector is
kept in increasing-bitmask order. The η-, θ- and mixed ζ-coordinates are
computed with fast zeta/Möbius transforms over the subset lattice.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Iterable, Sequence

import logging

import numpy as np
from decouple import config
from scipy import linalg
from scipy.optimize import linprog
from scipy.special import logsumexp

from .errors import (
    BadSplit,
    DimensionMismatch,
    InfeasibleMoments,
    InvalidMoments,
    InvalidTable,
    NoConvergence,
    NonPositiveProbability,
    NumericOverflow,
    SizeCap,
)


logger = logging.getLogger(__name__)


MAX_VARIABLES = config("CIF_MAX_VARIABLES", default=20, cast=int)
PROB_FLOOR = 1e-9
SUM_TOLERANCE = 1e-9

# the LP feasibility probe is only attempted on lattices this small
FEASIBILITY_PROBE_MAX_N = 14


# ---------------------------------------------------------------------------
# Subset indexing
# ---------------------------------------------------------------------------


@dataclass(frozen=True, order=True)
class SubsetIndex:
    bits: int

    def __post_init__(self) -> None:
        if self.bits < 0:
            raise ValueError("subset bitmask must be non-negative")

    @classmethod
    def of(cls, *variables: int) -> "SubsetIndex":
        """Build an index from 1-based variable numbers."""
        bits = 0
        for var in variables:
            if var < 1:
                raise ValueError(f"variables are numbered from 1, got {var}")
            bits |= 1 << (var - 1)
        return cls(bits)

    @property
    def order(self) -> int:
        return self.bits.bit_count()

    def variables(self) -> tuple[int, ...]:
        return tuple(i + 1 for i in range(self.bits.bit_length()) if self.bits >> i & 1)

    def __str__(self) -> str:
        return "{" + ",".join(str(v) for v in self.variables()) + "}"


def _readonly(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


@lru_cache(maxsize=None)
def popcounts(n: int) -> np.ndarray:
    masks = np.arange(1 << n, dtype=np.int64)
    counts = np.zeros(1 << n, dtype=np.int64)
    for bit in range(n):
        counts += (masks >> bit) & 1
    return _readonly(counts)


@lru_cache(maxsize=None)
def state_matrix(n: int) -> np.ndarray:
    """Row ``m`` holds the 0/1 states of cell ``m`` (column ``i`` is bit ``i``)."""
    masks = np.arange(1 << n, dtype=np.int64)[:, None]
    return _readonly(((masks >> np.arange(n)) & 1).astype(np.float64))


def masks_by_order(n: int, min_order: int = 1, max_order: int | None = None) -> np.ndarray:
    max_order = n if max_order is None else max_order
    orders = popcounts(n)
    return np.flatnonzero((orders >= min_order) & (orders <= max_order)).astype(np.int64)


def split_masks(n: int, l: int) -> tuple[np.ndarray, np.ndarray]:
    """Index sets of the η block (order ≤ l) and θ block (order > l)."""
    _check_split(n, l)
    return masks_by_order(n, 1, l), masks_by_order(n, l + 1, n)


def encode_states(samples: np.ndarray) -> np.ndarray:
    """Map rows of a 0/1 matrix to cell bitmasks."""
    samples = np.asarray(samples)
    weights = np.left_shift(1, np.arange(samples.shape[1], dtype=np.int64))
    return samples.astype(np.int64) @ weights


def sample_cells(t: "JointTable", size: int, rng: np.random.Generator) -> np.ndarray:
    """Draw i.i.d. cell indices from ``t`` by inverse CDF."""
    cdf = np.cumsum(t.probs)
    cells = np.searchsorted(cdf, rng.random(size) * cdf[-1], side="right")
    return np.minimum(cells, t.probs.size - 1)


def check_size(n: int) -> None:
    if n < 1:
        raise InvalidTable(f"need at least one variable, got n={n}")
    if n > MAX_VARIABLES:
        raise SizeCap(f"n={n} exceeds the enumeration cap of {MAX_VARIABLES} variables")


def _check_split(n: int, l: int) -> None:
    if not 1 <= l <= n - 1:
        raise BadSplit(f"split order l={l} outside 1..{n - 1} for n={n}")


# ---------------------------------------------------------------------------
# Lattice transforms
# ---------------------------------------------------------------------------


def _lattice_transform(values: np.ndarray, n: int, *, upward: bool, sign: float) -> np.ndarray:
    cube = np.array(values, dtype=np.float64).reshape((2,) * n)
    for axis in range(n):
        low = [slice(None)] * n
        high = [slice(None)] * n
        low[axis], high[axis] = 0, 1
        if upward:
            cube[tuple(high)] += sign * cube[tuple(low)]
        else:
            cube[tuple(low)] += sign * cube[tuple(high)]
    return cube.reshape(-1)


def subset_sum(values: np.ndarray, n: int) -> np.ndarray:
    """out[K] = sum of values[I] over I ⊆ K."""
    return _lattice_transform(values, n, upward=True, sign=1.0)


def subset_mobius(values: np.ndarray, n: int) -> np.ndarray:
    return _lattice_transform(values, n, upward=True, sign=-1.0)


def superset_sum(values: np.ndarray, n: int) -> np.ndarray:
    """out[I] = sum of values[K] over K ⊇ I."""
    return _lattice_transform(values, n, upward=False, sign=1.0)


def superset_mobius(values: np.ndarray, n: int) -> np.ndarray:
    return _lattice_transform(values, n, upward=False, sign=-1.0)


# ---------------------------------------------------------------------------
# Coordinate types
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class JointTable:
    """p-coordinates: ``probs[I]`` is the probability that exactly the variables in I are 1.

    Entries must be non-negative and sum to one; strict positivity is checked by the
    operations that need it. The stored vector is renormalised on construction.
    """

    n: int
    probs: np.ndarray

    def __post_init__(self) -> None:
        check_size(self.n)
        probs = np.array(self.probs, dtype=np.float64).reshape(-1)
        if probs.shape != (1 << self.n,):
            raise DimensionMismatch(f"expected {1 << self.n} probabilities for n={self.n}, got {probs.size}")
        if not np.all(np.isfinite(probs)) or np.any(probs < 0):
            raise InvalidTable("probabilities must be finite and non-negative")
        total = probs.sum()
        if abs(total - 1.0) > SUM_TOLERANCE:
            raise InvalidTable(f"probabilities sum to {total!r}, not 1")
        object.__setattr__(self, "probs", _readonly(probs / total))

    @classmethod
    def uniform(cls, n: int) -> "JointTable":
        return cls(n, np.full(1 << n, 1.0 / (1 << n)))

    @classmethod
    def from_probs(cls, probs: Sequence[float] | np.ndarray, *, clamp: bool = False, eps: float = PROB_FLOOR) -> "JointTable":
        probs = np.asarray(probs, dtype=np.float64).reshape(-1)
        n = int(probs.size).bit_length() - 1
        if probs.size != 1 << n:
            raise DimensionMismatch(f"{probs.size} probabilities is not a power of two")
        if clamp:
            return cls.from_weights(np.maximum(probs, eps), n)
        return cls(n, probs)

    @classmethod
    def from_weights(cls, weights: np.ndarray, n: int, *, clamp: bool = False, eps: float = PROB_FLOOR) -> "JointTable":
        """Normalise non-negative weights (counts, Gamma draws) into a table."""
        weights = np.asarray(weights, dtype=np.float64)
        total = weights.sum()
        if not np.isfinite(total) or total <= 0:
            raise InvalidTable("weights must have a positive finite sum")
        probs = weights / total
        if clamp:
            probs = np.maximum(probs, eps)
            probs = probs / probs.sum()
        return cls(n, probs)

    @classmethod
    def from_samples(cls, samples: np.ndarray, n: int | None = None, *, clamp: bool = True, eps: float = PROB_FLOOR) -> "JointTable":
        """Empirical table of a 0/1 sample matrix, clamped to ``eps`` by default."""
        samples = np.asarray(samples)
        n = samples.shape[1] if n is None else n
        if samples.ndim != 2 or samples.shape[1] != n:
            raise DimensionMismatch(f"expected an (N, {n}) sample matrix, got shape {samples.shape}")
        if samples.shape[0] == 0:
            raise InvalidTable("cannot build an empirical table from zero samples")
        check_size(n)
        counts = np.bincount(encode_states(samples), minlength=1 << n).astype(np.float64)
        return cls.from_weights(counts, n, clamp=clamp, eps=eps)

    @property
    def is_positive(self) -> bool:
        return bool(np.all(self.probs > 0))

    def require_positive(self, what: str = "operation") -> None:
        if not self.is_positive:
            raise NonPositiveProbability(f"{what} requires strictly positive probabilities")

    def log_probs(self) -> np.ndarray:
        self.require_positive("log-probabilities")
        return np.log(self.probs)

    def marginal(self, positions: Sequence[int]) -> "JointTable":
        """Marginal over the given 0-based variable positions (bit k of the result = positions[k])."""
        positions = list(positions)
        if not positions or len(set(positions)) != len(positions) or max(positions) >= self.n or min(positions) < 0:
            raise DimensionMismatch(f"invalid marginal positions {positions} for n={self.n}")
        index = encode_states(state_matrix(self.n)[:, positions])
        return JointTable(len(positions), np.bincount(index, weights=self.probs, minlength=1 << len(positions)))

    def expectation(self, values: np.ndarray | Callable[[np.ndarray], np.ndarray]) -> float:
        """E_p[f]; ``values`` is f per cell, or a function of the (2**n, n) state matrix."""
        if callable(values):
            values = values(state_matrix(self.n))
        values = np.asarray(values, dtype=np.float64)
        if values.shape != self.probs.shape:
            raise DimensionMismatch(f"expected {self.probs.size} cell values, got shape {values.shape}")
        return float(self.probs @ values)

    def tv(self, other: "JointTable") -> float:
        _same_size(self, other)
        return 0.5 * float(np.abs(self.probs - other.probs).sum())

    def allclose(self, other: "JointTable", atol: float = 1e-12) -> bool:
        return self.n == other.n and bool(np.allclose(self.probs, other.probs, rtol=0.0, atol=atol))


def _same_size(first: JointTable, second: JointTable) -> None:
    if first.n != second.n:
        raise DimensionMismatch(f"tables over {first.n} and {second.n} variables")


@dataclass(frozen=True, eq=False)
class EtaVector:
    """η_I = E[∏_{i∈I} x_i] for the nonempty subsets, in increasing-bitmask order."""

    n: int
    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=np.float64).reshape(-1)
        if values.shape != ((1 << self.n) - 1,):
            raise DimensionMismatch(f"expected {(1 << self.n) - 1} η-coordinates, got {values.size}")
        object.__setattr__(self, "values", _readonly(values))

    def full(self) -> np.ndarray:
        return np.concatenate(([1.0], self.values))

    def __getitem__(self, index: SubsetIndex | int) -> float:
        bits = index.bits if isinstance(index, SubsetIndex) else int(index)
        if not 1 <= bits < 1 << self.n:
            raise KeyError(bits)
        return float(self.values[bits - 1])


@dataclass(frozen=True, eq=False)
class ThetaVector:
    """θ^I for the nonempty subsets plus the log-partition ψ = −log p_{0..0}."""

    n: int
    values: np.ndarray
    psi: float = float("nan")

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=np.float64).reshape(-1)
        if values.shape != ((1 << self.n) - 1,):
            raise DimensionMismatch(f"expected {(1 << self.n) - 1} θ-coordinates, got {values.size}")
        object.__setattr__(self, "values", _readonly(values))

    def full(self) -> np.ndarray:
        return np.concatenate(([0.0], self.values))

    def __getitem__(self, index: SubsetIndex | int) -> float:
        bits = index.bits if isinstance(index, SubsetIndex) else int(index)
        if not 1 <= bits < 1 << self.n:
            raise KeyError(bits)
        return float(self.values[bits - 1])


@dataclass(frozen=True, eq=False)
class MixedCoords:
    """l-mixed ζ-coordinates: η for |I| ≤ l followed by θ for |J| > l."""

    n: int
    l: int
    eta_low: np.ndarray
    theta_high: np.ndarray
    low_masks: np.ndarray = field(init=False, repr=False)
    high_masks: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        low, high = split_masks(self.n, self.l)
        eta_low = np.array(self.eta_low, dtype=np.float64).reshape(-1)
        theta_high = np.array(self.theta_high, dtype=np.float64).reshape(-1)
        if eta_low.shape != low.shape or theta_high.shape != high.shape:
            raise DimensionMismatch(
                f"mixed coordinates for n={self.n}, l={self.l} need {low.size} + {high.size} entries"
            )
        object.__setattr__(self, "eta_low", _readonly(eta_low))
        object.__setattr__(self, "theta_high", _readonly(theta_high))
        object.__setattr__(self, "low_masks", _readonly(low))
        object.__setattr__(self, "high_masks", _readonly(high))

    @property
    def dimension(self) -> int:
        return self.eta_low.size + self.theta_high.size

    def index_order(self) -> np.ndarray:
        return np.concatenate((self.low_masks, self.high_masks))

    def as_vector(self) -> np.ndarray:
        return np.concatenate((self.eta_low, self.theta_high))


# ---------------------------------------------------------------------------
# Transforms
# ---------------------------------------------------------------------------


def p_to_eta(t: JointTable) -> EtaVector:
    return EtaVector(t.n, superset_sum(t.probs, t.n)[1:])


def p_to_theta(t: JointTable) -> ThetaVector:
    t.require_positive("θ-coordinates")
    log_p = np.log(t.probs)
    theta = subset_mobius(log_p, t.n)
    return ThetaVector(t.n, theta[1:], psi=float(-log_p[0]))


def eta_to_p(e: EtaVector) -> JointTable:
    probs = superset_mobius(e.full(), e.n)
    if np.any(probs <= 0) or not np.all(np.isfinite(probs)):
        raise InvalidMoments("η-coordinates do not correspond to a positive distribution")
    return JointTable(e.n, probs)


def _log_weights(theta_full: np.ndarray, n: int) -> np.ndarray:
    log_w = subset_sum(theta_full, n)
    if not np.all(np.isfinite(log_w)):
        raise NumericOverflow("θ-coordinates produce non-finite log-weights")
    return log_w


def theta_to_p(th: ThetaVector) -> JointTable:
    """Normalised table of θ; any stored ψ is ignored and recomputed."""
    log_w = _log_weights(th.full(), th.n)
    probs = np.exp(log_w - logsumexp(log_w))
    if not np.all(np.isfinite(probs)) or np.any(probs <= 0):
        raise NumericOverflow("θ-coordinates exceed the representable probability range")
    return JointTable(th.n, probs)


def psi(th: ThetaVector) -> float:
    return float(logsumexp(_log_weights(th.full(), th.n)))


def phi(e: EtaVector) -> float:
    """Negative entropy Σ p log p of the distribution with the given η."""
    probs = eta_to_p(e).probs
    return float(np.sum(probs * np.log(probs)))


def to_mixed(t: JointTable, l: int) -> MixedCoords:
    low, high = split_masks(t.n, l)
    eta = p_to_eta(t).values
    theta = p_to_theta(t).values
    return MixedCoords(t.n, l, eta[low - 1], theta[high - 1])


def from_mixed(m: MixedCoords, *, max_iter: int = 500, tol: float = 1e-10, theta_init: np.ndarray | None = None) -> JointTable:
    """Reconstruct the table with the given low-order η and high-order θ.

    ``theta_init`` is an optional full-length θ vector (index 0 ignored) used to
    warm-start the low-order block.
    """
    fixed = np.zeros(1 << m.n)
    fixed[m.high_masks] = m.theta_high
    result = solve_moment_matching(
        m.n, m.low_masks, m.eta_low, fixed, theta_init=theta_init, max_iter=max_iter, tol=tol
    )
    return result.table


# ---------------------------------------------------------------------------
# Moment matching
# ---------------------------------------------------------------------------


def covariance_block(eta_full: np.ndarray, rows: np.ndarray, cols: np.ndarray | None = None) -> np.ndarray:
    """Entries η_{I∪J} − η_I η_J of G_θ for the given row/column masks."""
    cols = rows if cols is None else cols
    return eta_full[np.bitwise_or.outer(rows, cols)] - np.outer(eta_full[rows], eta_full[cols])


@dataclass
class _MomentState:
    probs: np.ndarray
    eta_full: np.ndarray
    residual: np.ndarray
    objective: float

    @property
    def max_residual(self) -> float:
        return float(np.max(np.abs(self.residual))) if self.residual.size else 0.0


@dataclass
class MomentMatchingResult:
    theta: np.ndarray
    table: JointTable
    iterations: int
    converged: bool
    max_residual: float
    history: list[tuple[int, float, float]]


def _evaluate(n: int, theta: np.ndarray, free: np.ndarray, target: np.ndarray) -> _MomentState:
    log_w = _log_weights(theta, n)
    log_z = logsumexp(log_w)
    probs = np.exp(log_w - log_z)
    if not np.all(np.isfinite(probs)) or np.any(probs <= 0):
        raise NumericOverflow("iterate left the representable probability range")
    eta_full = superset_sum(probs, n)
    residual = eta_full[free] - target
    objective = float(log_z - theta[free] @ target)
    return _MomentState(probs, eta_full, residual, objective)


def _check_moment_bounds(free: np.ndarray, target: np.ndarray) -> None:
    if np.any(target <= 0) or np.any(target >= 1):
        raise InfeasibleMoments("target moments must lie strictly between 0 and 1")
    for a, mask_a in enumerate(free):
        for b, mask_b in enumerate(free):
            if mask_a != mask_b and mask_a & mask_b == mask_a and target[b] > target[a]:
                raise InfeasibleMoments(
                    f"moment of {SubsetIndex(int(mask_b))} exceeds that of its subset {SubsetIndex(int(mask_a))}"
                )


def moments_feasible(n: int, free: np.ndarray, target: np.ndarray) -> bool:
    """Whether some strictly positive table has the given moments (LP probe).

    Writes p_K = t + r_K with r, t ≥ 0 and maximises t subject to the moment
    equalities; a positive optimum means a positive table exists.
    """
    size = 1 << n
    cells = np.arange(size, dtype=np.int64)
    containment = (cells[None, :] & free[:, None]) == free[:, None]
    a_eq = np.vstack((containment, np.ones((1, size)))).astype(np.float64)
    a_eq = np.hstack((a_eq, a_eq.sum(axis=1, keepdims=True)))
    b_eq = np.concatenate((target, [1.0]))
    cost = np.zeros(size + 1)
    cost[-1] = -1.0
    result = linprog(cost, A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    return bool(result.status == 0 and -result.fun > 1e-12)


def _line_search(n, theta, direction, free, target, state, *, max_halvings: int = 40):
    slope = float(state.residual @ direction)
    step = 1.0
    for _ in range(max_halvings):
        candidate = theta.copy()
        candidate[free] += step * direction
        try:
            new = _evaluate(n, candidate, free, target)
        except NumericOverflow:
            step *= 0.5
            continue
        if new.objective <= state.objective + 1e-4 * step * slope or new.max_residual < state.max_residual:
            return candidate, new
        step *= 0.5
    return None


def solve_moment_matching(
    n: int,
    free_masks: Iterable[int] | np.ndarray,
    target: np.ndarray,
    fixed_theta: np.ndarray | None = None,
    *,
    theta_init: np.ndarray | None = None,
    max_iter: int = 500,
    tol: float = 1e-10,
    ridge: float = 0.0,
    raise_on_failure: bool = True,
    callback: Callable[[int, float, float], None] | None = None,
) -> MomentMatchingResult:
    """Find θ on the free masks so that η matches ``target``; other θ stay at ``fixed_theta``.

    Minimises the convex objective ψ(θ) − Σ θ^I η*_I with Newton steps whose
    Jacobian is the G_θ block of the free masks, halving the step until the
    objective or the residual decreases, and falling back to gradient steps
    when the Newton direction cannot be used.
    """
    check_size(n)
    free = np.asarray(free_masks, dtype=np.int64)
    target = np.asarray(target, dtype=np.float64)
    if free.shape != target.shape:
        raise DimensionMismatch(f"{free.size} free coordinates but {target.size} targets")
    if raise_on_failure:
        _check_moment_bounds(free, target)

    theta = np.zeros(1 << n) if fixed_theta is None else np.array(fixed_theta, dtype=np.float64)
    theta[0] = 0.0
    if theta_init is not None:
        theta[free] = np.asarray(theta_init, dtype=np.float64)[free]
    else:
        singles = popcounts(n)[free] == 1
        clipped = np.clip(target[singles], 1e-6, 1 - 1e-6)
        theta[free[singles]] = np.log(clipped / (1 - clipped))

    state = _evaluate(n, theta, free, target)
    history: list[tuple[int, float, float]] = []
    iterations = 0
    while state.max_residual > tol and iterations < max_iter:
        iterations += 1
        hessian = covariance_block(state.eta_full, free)
        if ridge:
            hessian[np.diag_indices_from(hessian)] += ridge
        try:
            direction = -linalg.solve(hessian, state.residual, assume_a="pos")
        except (linalg.LinAlgError, ValueError):
            direction = -state.residual
        if not np.all(np.isfinite(direction)) or direction @ state.residual >= 0:
            direction = -state.residual

        step = _line_search(n, theta, direction, free, target, state)
        if step is None and not np.array_equal(direction, -state.residual):
            logger.debug("Newton step rejected at iteration %s, trying a gradient step", iterations)
            step = _line_search(n, theta, -state.residual, free, target, state)
        if step is None:
            logger.debug("moment matching stalled at iteration %s (max residual %.3e)", iterations, state.max_residual)
            break
        theta, state = step
        history.append((iterations, state.max_residual, state.objective))
        if callback is not None:
            callback(iterations, state.max_residual, state.objective)

    converged = state.max_residual <= tol
    if not converged and raise_on_failure:
        if n <= FEASIBILITY_PROBE_MAX_N and not moments_feasible(n, free, target):
            raise InfeasibleMoments("no positive distribution has the requested moments")
        raise NoConvergence(
            f"moment matching did not reach tol {tol:g} after {iterations} iterations "
            f"(max residual {state.max_residual:.3e})"
        )
    return MomentMatchingResult(
        theta=theta,
        table=JointTable(n, state.probs),
        iterations=iterations,
        converged=converged,
        max_residual=state.max_residual,
        history=history,
    )
