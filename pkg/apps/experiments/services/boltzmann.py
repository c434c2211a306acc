"""Boltzmann machines over binary units: exact distributions, training and sampling.

Energy convention: E(x, h) = −½xᵀUx − ½hᵀVh − xᵀWh − bᵀx − dᵀh with symmetric,
zero-diagonal U and V, so a visible pair (i, j) contributes U_ij·x_i·x_j once.
Joint states of (x, h) use the coords bitmask convention with the visible units
on the low bits: cell ``x + (h << n_x)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable

import logging

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, logsumexp, rel_entr

from .config import TrainConfig
from .coords import (
    MAX_VARIABLES,
    JointTable,
    ThetaVector,
    check_size,
    p_to_eta,
    solve_moment_matching,
    state_matrix,
)
from .errors import ConfigError, DimensionMismatch, NoConvergence
from .fisher import kl


logger = logging.getLogger(__name__)


INIT_SCALE = 0.01
PROJECTION_TOL = 1e-8

Edge = tuple[int, int]


class BmKind(str, Enum):
    VBM = "vbm"
    RBM = "rbm"
    VRBM = "vrbm"
    GENERAL = "general"


def edge_mask(n: int, edges: Iterable[Edge] | None) -> np.ndarray:
    """Symmetric boolean mask of the given 0-based pairs; ``None`` enables every pair."""
    if edges is None:
        return ~np.eye(n, dtype=bool)
    mask = np.zeros((n, n), dtype=bool)
    for i, j in edges:
        if i == j or not (0 <= i < n and 0 <= j < n):
            raise DimensionMismatch(f"invalid edge ({i}, {j}) for {n} units")
        mask[i, j] = mask[j, i] = True
    return mask


def _symmetric_draw(rng: np.random.Generator, n: int) -> np.ndarray:
    upper = np.triu(rng.uniform(-INIT_SCALE, INIT_SCALE, (n, n)), 1)
    return upper + upper.T


def _readonly(array: np.ndarray) -> np.ndarray:
    array = np.array(array, dtype=np.float64)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class BmModel:
    n_x: int
    n_h: int
    U: np.ndarray
    V: np.ndarray
    W: np.ndarray
    b: np.ndarray
    d: np.ndarray
    mask_U: np.ndarray
    mask_V: np.ndarray
    mask_W: np.ndarray
    kind: BmKind = BmKind.GENERAL
    _layout: tuple = field(init=False, repr=False)

    def __post_init__(self) -> None:
        shapes = {
            "U": (self.n_x, self.n_x),
            "V": (self.n_h, self.n_h),
            "W": (self.n_x, self.n_h),
            "b": (self.n_x,),
            "d": (self.n_h,),
        }
        for name, shape in shapes.items():
            if np.shape(getattr(self, name)) != shape:
                raise DimensionMismatch(f"{name} has shape {np.shape(getattr(self, name))}, expected {shape}")
            if name in ("U", "V", "W") and np.shape(getattr(self, f"mask_{name}")) != shape:
                raise DimensionMismatch(f"mask_{name} does not match the shape of {name}")

        kind = BmKind(self.kind)
        mask_u = np.array(self.mask_U, dtype=bool)
        mask_v = np.array(self.mask_V, dtype=bool)
        for name, mask in (("U", mask_u), ("V", mask_v)):
            if np.any(np.diag(mask)) or not np.array_equal(mask, mask.T):
                raise ValueError(f"mask_{name} must be symmetric with an empty diagonal")
        if kind is BmKind.VBM and self.n_h:
            raise ConfigError("a fully visible machine has no hidden units")
        if kind is BmKind.RBM and (mask_u.any() or mask_v.any()):
            raise ConfigError("a restricted machine has no visible-visible or hidden-hidden connections")
        if kind is BmKind.VRBM and mask_v.any():
            raise ConfigError("a vRBM has no hidden-hidden connections")

        u = np.where(mask_u, self.U, 0.0)
        v = np.where(mask_v, self.V, 0.0)
        for name, matrix in (("U", u), ("V", v)):
            if not np.allclose(matrix, matrix.T, rtol=0.0, atol=1e-12):
                raise ValueError(f"{name} must be symmetric")
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "U", _readonly(0.5 * (u + u.T)))
        object.__setattr__(self, "V", _readonly(0.5 * (v + v.T)))
        object.__setattr__(self, "W", _readonly(np.where(self.mask_W, self.W, 0.0)))
        object.__setattr__(self, "b", _readonly(self.b))
        object.__setattr__(self, "d", _readonly(self.d))
        for name, mask in (("mask_U", mask_u), ("mask_V", mask_v), ("mask_W", np.array(self.mask_W, dtype=bool))):
            mask.setflags(write=False)
            object.__setattr__(self, name, mask)
        object.__setattr__(self, "_layout", (
            np.nonzero(np.triu(mask_u, 1)),
            np.nonzero(np.triu(mask_v, 1)),
            np.nonzero(self.mask_W),
        ))

    # -- constructors -----------------------------------------------------

    @classmethod
    def _init(cls, kind: BmKind, n_x: int, n_h: int, mask_u, mask_v, mask_w, seed: int | np.random.Generator) -> "BmModel":
        # The full U, V, W shapes are always drawn so models that differ only by
        # mask start from the same weights for a given seed.
        rng = np.random.default_rng(seed)
        u = _symmetric_draw(rng, n_x)
        v = _symmetric_draw(rng, n_h)
        w = rng.uniform(-INIT_SCALE, INIT_SCALE, (n_x, n_h))
        return cls(n_x, n_h, u, v, w, np.zeros(n_x), np.zeros(n_h), mask_u, mask_v, mask_w, kind)

    @classmethod
    def vbm(cls, n_x: int, edges: Iterable[Edge] | None = None, seed: int | np.random.Generator = 0) -> "BmModel":
        return cls._init(
            BmKind.VBM, n_x, 0, edge_mask(n_x, edges), np.zeros((0, 0), bool), np.zeros((n_x, 0), bool), seed
        )

    @classmethod
    def rbm(cls, n_x: int, n_h: int, seed: int | np.random.Generator = 0) -> "BmModel":
        return cls._init(
            BmKind.RBM, n_x, n_h, np.zeros((n_x, n_x), bool), np.zeros((n_h, n_h), bool),
            np.ones((n_x, n_h), bool), seed,
        )

    @classmethod
    def vrbm(cls, n_x: int, n_h: int, edges: Iterable[Edge] | None = None, seed: int | np.random.Generator = 0) -> "BmModel":
        return cls._init(
            BmKind.VRBM, n_x, n_h, edge_mask(n_x, edges), np.zeros((n_h, n_h), bool),
            np.ones((n_x, n_h), bool), seed,
        )

    @classmethod
    def general(cls, n_x: int, n_h: int, seed: int | np.random.Generator = 0) -> "BmModel":
        return cls._init(
            BmKind.GENERAL, n_x, n_h, edge_mask(n_x, None), edge_mask(n_h, None), np.ones((n_x, n_h), bool), seed
        )

    @classmethod
    def zeros(cls, n_x: int, n_h: int = 0, kind: BmKind | str | None = None) -> "BmModel":
        kind = BmKind(kind) if kind is not None else (BmKind.VBM if n_h == 0 else BmKind.GENERAL)
        template = {
            BmKind.VBM: cls.vbm,
            BmKind.RBM: cls.rbm,
            BmKind.VRBM: cls.vrbm,
            BmKind.GENERAL: cls.general,
        }[kind]
        model = template(n_x) if kind is BmKind.VBM else template(n_x, n_h)
        return model.with_parameters(np.zeros(model.n_parameters))

    # -- parameters -------------------------------------------------------

    @property
    def n_units(self) -> int:
        return self.n_x + self.n_h

    @property
    def n_parameters(self) -> int:
        (u_rows, _), (v_rows, _), (w_rows, _) = self._layout
        return self.n_x + self.n_h + u_rows.size + v_rows.size + w_rows.size

    def enabled_edges(self) -> list[Edge]:
        rows, cols = self._layout[0]
        return [(int(i), int(j)) for i, j in zip(rows, cols)]

    def parameters(self) -> np.ndarray:
        """Enabled parameters in the order b, d, U (upper triangle), V (upper triangle), W."""
        (ur, uc), (vr, vc), (wr, wc) = self._layout
        return np.concatenate((self.b, self.d, self.U[ur, uc], self.V[vr, vc], self.W[wr, wc]))

    def with_parameters(self, vector: np.ndarray) -> "BmModel":
        vector = np.asarray(vector, dtype=np.float64)
        if vector.shape != (self.n_parameters,):
            raise DimensionMismatch(f"expected {self.n_parameters} parameters, got {vector.size}")
        (ur, uc), (vr, vc), (wr, wc) = self._layout
        sizes = np.cumsum([self.n_x, self.n_h, ur.size, vr.size])
        b, d, u_vals, v_vals, w_vals = np.split(vector, sizes)
        u = np.zeros((self.n_x, self.n_x))
        u[ur, uc] = u_vals
        v = np.zeros((self.n_h, self.n_h))
        v[vr, vc] = v_vals
        w = np.zeros((self.n_x, self.n_h))
        w[wr, wc] = w_vals
        return replace(self, U=u + u.T, V=v + v.T, W=w, b=b, d=d)

    def coupling(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Full symmetric weight matrix, bias vector and mask over the joint units (visible first)."""
        weights = np.block([[self.U, self.W], [self.W.T, self.V]])
        mask = np.block([[self.mask_U, self.mask_W], [self.mask_W.T, self.mask_V]])
        return weights, np.concatenate((self.b, self.d)), mask


@dataclass(frozen=True, eq=False)
class BmGradient:
    U: np.ndarray
    V: np.ndarray
    W: np.ndarray
    b: np.ndarray
    d: np.ndarray
    model: BmModel = field(repr=False)

    def vector(self) -> np.ndarray:
        (ur, uc), (vr, vc), (wr, wc) = self.model._layout
        return np.concatenate((self.b, self.d, self.U[ur, uc], self.V[vr, vc], self.W[wr, wc]))

    def max_norm(self) -> float:
        vector = self.vector()
        return float(np.max(np.abs(vector))) if vector.size else 0.0

    def as_dict(self) -> dict[tuple, float]:
        out: dict[tuple, float] = {("b", i): float(v) for i, v in enumerate(self.b)}
        out.update({("d", j): float(v) for j, v in enumerate(self.d)})
        (ur, uc), (vr, vc), (wr, wc) = self.model._layout
        out.update({("U", int(i), int(j)): float(self.U[i, j]) for i, j in zip(ur, uc)})
        out.update({("V", int(i), int(j)): float(self.V[i, j]) for i, j in zip(vr, vc)})
        out.update({("W", int(i), int(j)): float(self.W[i, j]) for i, j in zip(wr, wc)})
        return out


# ---------------------------------------------------------------------------
# Energy and exact distributions
# ---------------------------------------------------------------------------


def energy(model: BmModel, x, h=None):
    x = np.asarray(x, dtype=np.float64)
    h = np.zeros(x.shape[:-1] + (model.n_h,)) if h is None else np.asarray(h, dtype=np.float64)
    if x.shape[-1] != model.n_x or h.shape[-1] != model.n_h:
        raise DimensionMismatch(f"state sizes ({x.shape[-1]}, {h.shape[-1]}) do not match ({model.n_x}, {model.n_h})")
    value = (
        0.5 * np.einsum("...i,ij,...j->...", x, model.U, x)
        + 0.5 * np.einsum("...i,ij,...j->...", h, model.V, h)
        + np.einsum("...i,ij,...j->...", x, model.W, h)
        + x @ model.b
        + h @ model.d
    )
    return -value


def _log_weight_matrix(model: BmModel) -> np.ndarray:
    """Unnormalised log-probabilities, rows indexed by hidden state and columns by visible state."""
    check_size(model.n_units)
    xs, hs = state_matrix(model.n_x), state_matrix(model.n_h)
    visible = xs @ model.b + 0.5 * np.einsum("ki,ij,kj->k", xs, model.U, xs)
    hidden = hs @ model.d + 0.5 * np.einsum("ki,ij,kj->k", hs, model.V, hs)
    return hidden[:, None] + visible[None, :] + (hs @ model.W.T) @ xs.T


def log_partition(model: BmModel) -> float:
    return float(logsumexp(_log_weight_matrix(model)))


def _joint_probabilities(model: BmModel) -> np.ndarray:
    log_w = _log_weight_matrix(model)
    return np.exp(log_w - logsumexp(log_w))


def exact_distribution(model: BmModel) -> JointTable:
    return JointTable(model.n_units, _joint_probabilities(model).reshape(-1))


def marginal_visible(model: BmModel) -> JointTable:
    log_w = _log_weight_matrix(model)
    return JointTable(model.n_x, np.exp(logsumexp(log_w, axis=0) - logsumexp(log_w)))


def bm_to_theta(model: BmModel) -> ThetaVector:
    """Embed the machine in θ-coordinates over (x, h): biases at order 1, weights at order 2."""
    n = model.n_units
    check_size(n)
    weights, bias, _ = model.coupling()
    theta = np.zeros(1 << n)
    theta[1 << np.arange(n)] = bias
    rows, cols = np.triu_indices(n, 1)
    theta[(1 << rows) | (1 << cols)] = weights[rows, cols]
    return ThetaVector(n, theta[1:], psi=log_partition(model))


def hidden_posterior(model: BmModel, x: np.ndarray) -> np.ndarray:
    """p(h | x) over all 2**n_h hidden states, one row per visible state in ``x``."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    hs = state_matrix(model.n_h)
    hidden = hs @ model.d + 0.5 * np.einsum("ki,ij,kj->k", hs, model.V, hs)
    log_w = hidden[None, :] + x @ model.W @ hs.T
    return np.exp(log_w - logsumexp(log_w, axis=1, keepdims=True))


def hidden_activation(model: BmModel, x: np.ndarray) -> np.ndarray:
    """E[h | x] for each row of ``x``."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if not model.mask_V.any():
        return expit(model.d + x @ model.W)
    return hidden_posterior(model, x) @ state_matrix(model.n_h)


# ---------------------------------------------------------------------------
# Gradients
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _Moments:
    x: np.ndarray
    h: np.ndarray
    xx: np.ndarray
    hh: np.ndarray
    xh: np.ndarray


def _table_moments(joint: np.ndarray, model: BmModel) -> _Moments:
    """Sufficient-statistic expectations under a (2**n_h, 2**n_x) joint probability matrix."""
    xs, hs = state_matrix(model.n_x), state_matrix(model.n_h)
    px, ph = joint.sum(axis=0), joint.sum(axis=1)
    return _Moments(
        x=xs.T @ px,
        h=hs.T @ ph,
        xx=xs.T @ (px[:, None] * xs),
        hh=hs.T @ (ph[:, None] * hs),
        xh=xs.T @ joint.T @ hs,
    )


def _sample_moments(xs: np.ndarray, hs: np.ndarray) -> _Moments:
    count = xs.shape[0]
    return _Moments(xs.mean(axis=0), hs.mean(axis=0), xs.T @ xs / count, hs.T @ hs / count, xs.T @ hs / count)


def _gradient(model: BmModel, positive: _Moments, negative: _Moments) -> BmGradient:
    u = np.where(model.mask_U, positive.xx - negative.xx, 0.0)
    v = np.where(model.mask_V, positive.hh - negative.hh, 0.0)
    w = np.where(model.mask_W, positive.xh - negative.xh, 0.0)
    return BmGradient(u, v, w, positive.x - negative.x, positive.h - negative.h, model)


def _clamped_joint(q_x: JointTable, model: BmModel) -> np.ndarray:
    log_w = _log_weight_matrix(model)
    posterior = np.exp(log_w - logsumexp(log_w, axis=0, keepdims=True))
    return posterior * q_x.probs[None, :]


def _require_visible_table(q_x: JointTable, model: BmModel) -> None:
    if q_x.n != model.n_x:
        raise DimensionMismatch(f"data over {q_x.n} variables, model has {model.n_x} visible units")


def ml_gradient_exact(model: BmModel, data_table: JointTable) -> BmGradient:
    """∂/∂ξ of the expected log-likelihood: clamped minus free expectations, enabled entries only."""
    _require_visible_table(data_table, model)
    positive = _table_moments(_clamped_joint(data_table, model), model)
    negative = _table_moments(_joint_probabilities(model), model)
    return _gradient(model, positive, negative)


def _kl_to_data(q_x: JointTable, model: BmModel) -> float:
    return kl(q_x, marginal_visible(model))


# ---------------------------------------------------------------------------
# Gibbs sampling and contrastive divergence
# ---------------------------------------------------------------------------


def gibbs_sweep(model: BmModel, state: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Resample every unit once, in ascending index order (visible units first).

    ``state`` holds joint (x, h) states, one per row for parallel chains.
    """
    weights, bias, _ = model.coupling()
    states = np.atleast_2d(np.array(state, dtype=np.float64))
    if states.shape[1] != model.n_units:
        raise DimensionMismatch(f"state has {states.shape[1]} units, model has {model.n_units}")
    for unit in range(model.n_units):
        active = expit(bias[unit] + states @ weights[:, unit])
        states[:, unit] = rng.random(states.shape[0]) < active
    return states.reshape(np.shape(state))


def _sample_hidden(model: BmModel, xs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    if model.n_h == 0:
        return np.zeros((xs.shape[0], 0))
    if not model.mask_V.any():
        return (rng.random((xs.shape[0], model.n_h)) < expit(model.d + xs @ model.W)).astype(np.float64)
    posterior = hidden_posterior(model, xs)
    cells = (posterior.cumsum(axis=1) < rng.random((xs.shape[0], 1))).sum(axis=1)
    return state_matrix(model.n_h)[np.minimum(cells, posterior.shape[1] - 1)]


def cd_gradient(model: BmModel, batch: np.ndarray, m: int, rng: np.random.Generator) -> BmGradient:
    """CD-m estimate: exact clamped expectations minus statistics after m sweeps from the data."""
    if m < 1:
        raise ConfigError("contrastive divergence needs at least one Gibbs sweep")
    xs = np.asarray(batch, dtype=np.float64)
    if xs.ndim != 2 or xs.shape[1] != model.n_x:
        raise DimensionMismatch(f"expected a batch with {model.n_x} columns, got shape {xs.shape}")
    if model.n_h and model.mask_V.any():
        posterior = hidden_posterior(model, xs)
        hs = state_matrix(model.n_h)
        mean_h = posterior @ hs
        positive = _Moments(
            xs.mean(axis=0), mean_h.mean(axis=0), xs.T @ xs / len(xs),
            hs.T @ (posterior.sum(axis=0)[:, None] * hs) / len(xs), xs.T @ mean_h / len(xs),
        )
    else:
        mean_h = hidden_activation(model, xs) if model.n_h else np.zeros((len(xs), 0))
        positive = _Moments(
            xs.mean(axis=0), mean_h.mean(axis=0), xs.T @ xs / len(xs), mean_h.T @ mean_h / len(xs), xs.T @ mean_h / len(xs)
        )

    chains = np.hstack((xs, _sample_hidden(model, xs, rng)))
    for _ in range(m):
        chains = gibbs_sweep(model, chains, rng)
    negative = _sample_moments(chains[:, : model.n_x], chains[:, model.n_x :])
    return _gradient(model, positive, negative)


def cd_update(model: BmModel, batch: np.ndarray, m: int, rng: np.random.Generator, learning_rate: float = 0.01) -> BmModel:
    gradient = cd_gradient(model, batch, m, rng)
    return model.with_parameters(model.parameters() + learning_rate * gradient.vector())


def sample_model(
    model: BmModel,
    n_samples: int,
    rng: np.random.Generator,
    *,
    burn_in: int = 1000,
    thin: int = 10,
    n_chains: int = 100,
) -> np.ndarray:
    """Visible samples from parallel Gibbs chains started at uniform random states."""
    chains = (rng.random((n_chains, model.n_units)) < 0.5).astype(np.float64)
    for _ in range(burn_in):
        chains = gibbs_sweep(model, chains, rng)
    collected: list[np.ndarray] = []
    total = 0
    while total < n_samples:
        for _ in range(thin):
            chains = gibbs_sweep(model, chains, rng)
        collected.append(chains[:, : model.n_x].copy())
        total += n_chains
    samples = np.vstack(collected)[:n_samples] if collected else np.zeros((0, model.n_x))
    return samples.astype(np.uint8)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    model: BmModel
    trace: list[tuple[int, float, float]]
    converged: bool
    epochs: int


def _as_table(data: JointTable | np.ndarray, model: BmModel) -> JointTable:
    table = data if isinstance(data, JointTable) else JointTable.from_samples(np.asarray(data), model.n_x)
    _require_visible_table(table, model)
    return table


def _visible_theta_masks(model: BmModel) -> np.ndarray:
    singles = [1 << i for i in range(model.n_x)]
    pairs = [(1 << i) | (1 << j) for i, j in model.enabled_edges()]
    return np.array(sorted(singles + pairs), dtype=np.int64)


def _model_from_theta(model: BmModel, theta: np.ndarray) -> BmModel:
    (ur, uc), _, _ = model._layout
    b = theta[1 << np.arange(model.n_x)]
    u = theta[(1 << ur) | (1 << uc)]
    return model.with_parameters(np.concatenate((b, u)))


def _train_newton(model: BmModel, q_x: JointTable, cfg: TrainConfig) -> TrainResult:
    if model.n_h:
        raise ConfigError("Newton moment matching only trains machines without hidden units")
    free = _visible_theta_masks(model)
    target = p_to_eta(q_x).full()[free]
    neg_entropy = float(np.sum(rel_entr(q_x.probs, 1.0)))
    trace = [(0, ml_gradient_exact(model, q_x).max_norm(), _kl_to_data(q_x, model))]

    def record(iteration: int, max_residual: float, objective: float) -> None:
        if iteration % cfg.trace_every == 0:
            trace.append((iteration, max_residual, objective + neg_entropy))

    result = solve_moment_matching(
        model.n_x,
        free,
        target,
        theta_init=bm_to_theta(model).full(),
        max_iter=cfg.max_epochs,
        tol=cfg.tol,
        raise_on_failure=False,
        callback=record,
    )
    trained = _model_from_theta(model, result.theta)
    return TrainResult(trained, trace, result.converged, result.iterations)


def _negative_log_likelihood(model: BmModel, q_x: JointTable) -> tuple[float, BmGradient]:
    log_w = _log_weight_matrix(model)
    log_marginal = logsumexp(log_w, axis=0) - logsumexp(log_w)
    gradient = ml_gradient_exact(model, q_x)
    return -float(q_x.probs @ log_marginal), gradient


def _train_lbfgs(model: BmModel, q_x: JointTable, cfg: TrainConfig) -> TrainResult:
    neg_entropy = float(np.sum(rel_entr(q_x.probs, 1.0)))
    state = {"epoch": 0}
    trace = [(0, ml_gradient_exact(model, q_x).max_norm(), _kl_to_data(q_x, model))]

    def objective(vector: np.ndarray) -> tuple[float, np.ndarray]:
        value, gradient = _negative_log_likelihood(model.with_parameters(vector), q_x)
        return value, -gradient.vector()

    def record(vector: np.ndarray) -> None:
        state["epoch"] += 1
        if state["epoch"] % cfg.trace_every == 0:
            value, gradient = _negative_log_likelihood(model.with_parameters(vector), q_x)
            trace.append((state["epoch"], gradient.max_norm(), value + neg_entropy))

    result = minimize(
        objective,
        model.parameters(),
        jac=True,
        method="L-BFGS-B",
        callback=record,
        options={"maxiter": cfg.max_epochs, "gtol": cfg.tol, "ftol": 0.0},
    )
    trained = model.with_parameters(result.x)
    grad_norm = ml_gradient_exact(trained, q_x).max_norm()
    logger.debug("L-BFGS finished after %s iterations: %s", result.nit, result.message)
    return TrainResult(trained, trace, grad_norm <= cfg.tol, int(result.nit))


def _train_gradient(model: BmModel, q_x: JointTable, cfg: TrainConfig) -> TrainResult:
    trace: list[tuple[int, float, float]] = []
    epoch = 0
    gradient = ml_gradient_exact(model, q_x)
    trace.append((0, gradient.max_norm(), _kl_to_data(q_x, model)))
    while gradient.max_norm() >= cfg.tol and epoch < cfg.max_epochs:
        epoch += 1
        model = model.with_parameters(model.parameters() + cfg.learning_rate * gradient.vector())
        gradient = ml_gradient_exact(model, q_x)
        if epoch % cfg.trace_every == 0:
            trace.append((epoch, gradient.max_norm(), _kl_to_data(q_x, model)))
    return TrainResult(model, trace, gradient.max_norm() < cfg.tol, epoch)


def _train_cd(model: BmModel, samples: np.ndarray, cfg: TrainConfig, rng: np.random.Generator) -> TrainResult:
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2 or samples.shape[1] != model.n_x:
        raise DimensionMismatch(f"expected an (N, {model.n_x}) sample matrix, got shape {samples.shape}")
    track_kl = model.n_units <= MAX_VARIABLES
    q_x = JointTable.from_samples(samples, model.n_x, clamp=False) if track_kl else None
    batch_size = cfg.batch_size or len(samples)
    trace: list[tuple[int, float, float]] = []
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(samples))
        grad_norm = 0.0
        for start in range(0, len(samples), batch_size):
            gradient = cd_gradient(model, samples[order[start : start + batch_size]], cfg.cd_steps, rng)
            model = model.with_parameters(model.parameters() + cfg.learning_rate * gradient.vector())
            grad_norm = gradient.max_norm()
        if not np.all(np.isfinite(model.parameters())):
            raise NoConvergence(f"contrastive divergence diverged at epoch {epoch}")
        if epoch % cfg.trace_every == 0:
            trace.append((epoch, grad_norm, _kl_to_data(q_x, model) if track_kl else float("nan")))
    return TrainResult(model, trace, True, cfg.max_epochs)


def train(
    model: BmModel,
    data: JointTable | np.ndarray,
    cfg: TrainConfig | None = None,
    *,
    rng: np.random.Generator | None = None,
) -> TrainResult:
    """Fit ``model`` to a data table (exact ML) or to a binary sample matrix (exact ML or CD).

    A run that stops on the epoch budget comes back with ``converged=False``;
    callers decide whether that is fatal.
    """
    cfg = cfg or TrainConfig()
    if cfg.max_epochs == 0:
        return TrainResult(model, [], False, 0)
    if cfg.method == "cd":
        if isinstance(data, JointTable):
            raise ConfigError("contrastive divergence trains on a sample matrix, not a table")
        result = _train_cd(model, data, cfg, rng or np.random.default_rng(cfg.seed))
    else:
        q_x = _as_table(data, model)
        optimizer = cfg.optimizer
        if optimizer == "auto":
            optimizer = "newton" if model.n_h == 0 else "lbfgs"
        runner = {"newton": _train_newton, "lbfgs": _train_lbfgs, "gradient": _train_gradient}[optimizer]
        result = runner(model, q_x, cfg)
    if not result.converged:
        logger.warning(
            "%s training (%s units) stopped after %s epochs without converging",
            cfg.method, model.n_units, result.epochs,
        )
    return result


# ---------------------------------------------------------------------------
# Iterative projection learning
# ---------------------------------------------------------------------------


def project_H(q_x: JointTable, model: BmModel) -> JointTable:
    """q(x, h) = q_x(x) · p(h | x; model)."""
    _require_visible_table(q_x, model)
    return JointTable(model.n_units, _clamped_joint(q_x, model).reshape(-1))


def as_joint_vbm(model: BmModel) -> BmModel:
    """The same energy function viewed as a fully visible machine over (x, h)."""
    weights, bias, mask = model.coupling()
    n = model.n_units
    return BmModel(n, 0, weights, np.zeros((0, 0)), np.zeros((n, 0)), bias, np.zeros(0),
                   mask, np.zeros((0, 0), bool), np.zeros((n, 0), bool), BmKind.VBM)


def from_joint_vbm(joint: BmModel, template: BmModel) -> BmModel:
    n_x = template.n_x
    return replace(
        template,
        U=joint.U[:n_x, :n_x],
        V=joint.U[n_x:, n_x:],
        W=joint.U[:n_x, n_x:],
        b=joint.b[:n_x],
        d=joint.b[n_x:],
    )


def project_B(q_xh: JointTable, init_model: BmModel, cfg: TrainConfig | None = None) -> BmModel:
    """Maximum-likelihood machine for the joint table q_xh, treating every unit as visible."""
    if q_xh.n != init_model.n_units:
        raise DimensionMismatch(f"joint table over {q_xh.n} variables, model has {init_model.n_units} units")
    cfg = (cfg or TrainConfig()).model_copy(
        update={"method": "exact_ml", "optimizer": "newton", "tol": min((cfg or TrainConfig()).tol, PROJECTION_TOL)}
    )
    result = _train_newton(as_joint_vbm(init_model), q_xh, cfg)
    if not result.converged:
        raise NoConvergence(f"projection onto the machine family did not converge in {result.epochs} iterations")
    return from_joint_vbm(result.model, init_model)


@dataclass
class ProjectionResult:
    model: BmModel
    trace: list[tuple[int, float, float]]
    converged: bool


def iterative_projection(
    q_x: JointTable,
    init_model: BmModel,
    cfg: TrainConfig | None = None,
    *,
    max_rounds: int = 100,
    tol: float = 1e-9,
) -> ProjectionResult:
    """Alternate the data-side and model-side projections until the KL decrease falls below ``tol``.

    Trace rows are (round, KL(q_{i+1}, p_i), KL(q_{i+1}, p_{i+1})).
    """
    model = init_model
    p_joint = exact_distribution(model)
    trace: list[tuple[int, float, float]] = []
    for round_ in range(1, max_rounds + 1):
        q_joint = project_H(q_x, model)
        before = kl(q_joint, p_joint)
        model = project_B(q_joint, model, cfg)
        p_joint = exact_distribution(model)
        after = kl(q_joint, p_joint)
        trace.append((round_, before, after))
        logger.debug("projection round %s: %.3e -> %.3e", round_, before, after)
        if before - after < tol:
            return ProjectionResult(model, trace, True)
    logger.warning("iterative projection stopped after %s rounds without reaching tol %g", max_rounds, tol)
    return ProjectionResult(model, trace, False)
