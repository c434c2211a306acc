"""Fisher information matrices, Fisher information distance and KL divergence."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import logging

import numpy as np
from scipy import linalg
from scipy.special import rel_entr

from .coords import (
    EtaVector,
    JointTable,
    MixedCoords,
    ThetaVector,
    covariance_block,
    eta_to_p,
    from_mixed,
    masks_by_order,
    p_to_eta,
    p_to_theta,
    popcounts,
    split_masks,
    subset_sum,
    superset_sum,
    theta_to_p,
    to_mixed,
)
from .errors import DimensionMismatch, SingularBlock


logger = logging.getLogger(__name__)


CoordSystem = Literal["theta", "eta", "mixed"]

SINGULAR_TOLERANCE = 1e-12
ORACLE_SOLVER_TOL = 1e-13


@dataclass(frozen=True, eq=False)
class FisherMatrix:
    coord_system: CoordSystem
    index_order: np.ndarray
    entries: np.ndarray
    l: int | None = None

    @property
    def tag(self) -> str:
        return f"mixed({self.l})" if self.coord_system == "mixed" else self.coord_system

    @property
    def dimension(self) -> int:
        return int(self.index_order.size)

    def is_symmetric(self, atol: float = 1e-10) -> bool:
        return bool(np.allclose(self.entries, self.entries.T, rtol=0.0, atol=atol))

    def eigenvalues(self) -> np.ndarray:
        return linalg.eigvalsh(self.entries)

    def blocks(self) -> tuple[np.ndarray, np.ndarray]:
        """(A, B): the η block and the θ block of a mixed-coordinate matrix."""
        if self.coord_system != "mixed":
            raise ValueError("only mixed-coordinate matrices have an η/θ block split")
        k = sum(1 for mask in self.index_order if int(mask).bit_count() <= self.l)
        return self.entries[:k, :k], self.entries[k:, k:]


@dataclass(frozen=True, eq=False)
class FidResult:
    distance: float
    squared: float
    contributions: np.ndarray
    index_order: np.ndarray


def _all_masks(n: int) -> np.ndarray:
    return masks_by_order(n, 1, n)


def _signs(masks: np.ndarray, n: int) -> np.ndarray:
    return np.where(popcounts(n)[masks] % 2 == 0, 1.0, -1.0)


def _eta_block(t: JointTable, rows: np.ndarray, cols: np.ndarray | None = None) -> np.ndarray:
    """Entries Σ_{K ⊆ I∩J} (−1)^{|I−K|+|J−K|} / p_K of G_η.

    The sign only depends on |I| + |J|, so each entry is a signed subset sum of 1/p.
    """
    t.require_positive("the η-coordinate Fisher matrix")
    cols = rows if cols is None else cols
    inverse_sums = subset_sum(1.0 / t.probs, t.n)
    return np.outer(_signs(rows, t.n), _signs(cols, t.n)) * inverse_sums[np.bitwise_and.outer(rows, cols)]


def _invert(matrix: np.ndarray, what: str) -> np.ndarray:
    lu, piv = linalg.lu_factor(matrix)
    pivots = np.abs(np.diag(lu))
    if pivots.size and pivots.min() <= SINGULAR_TOLERANCE * pivots.max():
        raise SingularBlock(f"{what} is numerically singular (pivot ratio {pivots.min() / pivots.max():.2e})")
    inverse = linalg.lu_solve((lu, piv), np.eye(matrix.shape[0]))
    return 0.5 * (inverse + inverse.T)


def fisher_theta(t: JointTable) -> FisherMatrix:
    masks = _all_masks(t.n)
    entries = covariance_block(superset_sum(t.probs, t.n), masks)
    return FisherMatrix("theta", masks, entries)


def fisher_eta(t: JointTable) -> FisherMatrix:
    masks = _all_masks(t.n)
    return FisherMatrix("eta", masks, _eta_block(t, masks))


def fisher_mixed(t: JointTable, l: int) -> FisherMatrix:
    """Block-diagonal G_ζ: A inverts the η block of G_θ, B inverts the θ block of G_η."""
    low, high = split_masks(t.n, l)
    a_block = _invert(covariance_block(superset_sum(t.probs, t.n), low), "η block of G_θ")
    b_block = _invert(_eta_block(t, high), "θ block of G_η")
    return FisherMatrix("mixed", np.concatenate((low, high)), linalg.block_diag(a_block, b_block), l=l)


def fisher_matrix(t: JointTable, coord_system: CoordSystem, l: int | None = None) -> FisherMatrix:
    if coord_system == "theta":
        return fisher_theta(t)
    if coord_system == "eta":
        return fisher_eta(t)
    if coord_system == "mixed":
        return fisher_mixed(t, _require_l(l))
    raise ValueError(f"unknown coordinate system {coord_system!r}")


def _require_l(l: int | None) -> int:
    if l is None:
        raise ValueError("mixed coordinates need a split order l")
    return l


def coordinates(t: JointTable, coord_system: CoordSystem, l: int | None = None) -> np.ndarray:
    if coord_system == "theta":
        return p_to_theta(t).values
    if coord_system == "eta":
        return p_to_eta(t).values
    if coord_system == "mixed":
        return to_mixed(t, _require_l(l)).as_vector()
    raise ValueError(f"unknown coordinate system {coord_system!r}")


def _reconstruct(vector: np.ndarray, t: JointTable, coord_system: CoordSystem, l: int | None) -> JointTable:
    if coord_system == "theta":
        return theta_to_p(ThetaVector(t.n, vector))
    if coord_system == "eta":
        return eta_to_p(EtaVector(t.n, vector))
    mixed = to_mixed(t, _require_l(l))
    k = mixed.eta_low.size
    warm = p_to_theta(t).full()
    return from_mixed(
        MixedCoords(t.n, mixed.l, vector[:k], vector[k:]), tol=ORACLE_SOLVER_TOL, theta_init=warm
    )


def fisher_oracle(t: JointTable, coord_system: CoordSystem = "theta", step: float = 1e-5, l: int | None = None) -> FisherMatrix:
    """Score covariance E[∂_i log p · ∂_j log p] with central finite-difference scores.

    Test oracle only: every column costs two reconstructions of the table.
    """
    t.require_positive("the score-covariance oracle")
    xi = coordinates(t, coord_system, l)
    scores = np.empty((t.probs.size, xi.size))
    for i in range(xi.size):
        forward, backward = xi.copy(), xi.copy()
        forward[i] += step
        backward[i] -= step
        log_forward = np.log(_reconstruct(forward, t, coord_system, l).probs)
        log_backward = np.log(_reconstruct(backward, t, coord_system, l).probs)
        scores[:, i] = (log_forward - log_backward) / (2.0 * step)
    entries = scores.T @ (t.probs[:, None] * scores)
    if coord_system == "mixed":
        order = np.concatenate(split_masks(t.n, _require_l(l)))
    else:
        order = _all_masks(t.n)
    return FisherMatrix(coord_system, order, 0.5 * (entries + entries.T), l=l)


def fid(t1: JointTable, t2: JointTable, coord_system: CoordSystem = "theta", l: int | None = None) -> FidResult:
    """Quadratic-form Fisher information distance with G evaluated at ``t1``."""
    if t1.n != t2.n:
        raise DimensionMismatch(f"tables over {t1.n} and {t2.n} variables")
    matrix = fisher_matrix(t1, coord_system, l)
    delta = coordinates(t1, coord_system, l) - coordinates(t2, coord_system, l)
    squared = max(float(delta @ matrix.entries @ delta), 0.0)
    return FidResult(
        distance=float(np.sqrt(squared)),
        squared=squared,
        contributions=delta * np.diag(matrix.entries) * delta,
        index_order=matrix.index_order,
    )


def kl(t1: JointTable, t2: JointTable) -> float:
    """KL(t1 || t2); cells where t1 is zero contribute nothing."""
    if t1.n != t2.n:
        raise DimensionMismatch(f"tables over {t1.n} and {t2.n} variables")
    t2.require_positive("KL divergence")
    return float(np.sum(rel_entr(t1.probs, t2.probs)))
