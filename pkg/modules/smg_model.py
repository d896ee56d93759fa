"""
The singular matrix-variate Gaussian (SMG): sampling, density, exact
conditional predictives given noisy entries, and coherence analytics.

All covariance blocks are assembled with kron_restricted, so nothing of size
m1*m2 x m1*m2 is ever formed.
"""
import logging
import math
from dataclasses import dataclass
from typing import Iterator, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.stats import norm

from modules.errors import (
    DimensionMismatchError,
    IndexOutOfGridError,
    InputDomainError,
    NumericalError,
)
from modules.linalg import EntryIndex, Frame, check_finite, index_arrays, kron_restricted
from modules.samplers import RngStream

logger = logging.getLogger(__name__)

SUPPORT_TOL = 1e-8
CLAMP_LOG_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class SmgParams:
    U: Frame
    V: Frame
    sigma2: float

    def __post_init__(self):
        if self.U.rank != self.V.rank:
            raise DimensionMismatchError(f"U has rank {self.U.rank}, V has rank {self.V.rank}")
        if not (math.isfinite(self.sigma2) and self.sigma2 > 0):
            raise InputDomainError(f"sigma2 must be positive, got {self.sigma2}")

    @property
    def rank(self) -> int:
        return self.U.rank

    @property
    def shape(self) -> Tuple[int, int]:
        return self.U.m, self.V.m


@dataclass(frozen=True, eq=False)
class ObservationSet:
    """Noisy entries Y_Omega on an m1 x m2 grid, held as parallel index/value arrays."""

    m1: int
    m2: int
    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.int64).ravel()
        cols = np.asarray(self.cols, dtype=np.int64).ravel()
        values = check_finite(self.values, "observed values").ravel()
        if not (rows.shape == cols.shape == values.shape):
            raise DimensionMismatchError("rows, cols and values must have equal length")
        if self.m1 < 1 or self.m2 < 1:
            raise InputDomainError(f"grid must be non-empty, got {self.m1}x{self.m2}")
        index_arrays(list(zip(rows, cols)), self.m1, self.m2)
        linear = cols * self.m1 + rows
        if np.unique(linear).shape[0] != linear.shape[0]:
            raise InputDomainError("observation indices must be distinct")
        for name, arr in (("rows", rows), ("cols", cols), ("values", values)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def from_entries(cls, m1: int, m2: int, entries: Sequence[Tuple[Tuple[int, int], float]]) -> "ObservationSet":
        if not entries:
            return cls(m1, m2, np.zeros(0), np.zeros(0), np.zeros(0))
        idx, vals = zip(*entries)
        rows, cols = zip(*idx)
        return cls(m1, m2, np.array(rows), np.array(cols), np.array(vals, dtype=np.float64))

    @classmethod
    def from_mask(cls, Y: np.ndarray, mask: np.ndarray) -> "ObservationSet":
        """Observations at mask==True, listed in column-stacking order."""
        Y = np.asarray(Y, dtype=np.float64)
        cols, rows = np.nonzero(np.asarray(mask, dtype=bool).T)
        return cls(Y.shape[0], Y.shape[1], rows, cols, Y[rows, cols])

    @property
    def n(self) -> int:
        return int(self.values.shape[0])

    @property
    def shape(self) -> Tuple[int, int]:
        return self.m1, self.m2

    @property
    def indices(self) -> List[EntryIndex]:
        return [EntryIndex(int(i), int(j)) for i, j in zip(self.rows, self.cols)]

    @property
    def entries(self) -> Iterator[Tuple[EntryIndex, float]]:
        for i, j, v in zip(self.rows, self.cols, self.values):
            yield EntryIndex(int(i), int(j)), float(v)

    def mask(self) -> np.ndarray:
        m = np.zeros((self.m1, self.m2), dtype=bool)
        m[self.rows, self.cols] = True
        return m

    def to_dense(self, fill: float = 0.0) -> np.ndarray:
        Y = np.full((self.m1, self.m2), fill, dtype=np.float64)
        Y[self.rows, self.cols] = self.values
        return Y

    def contains(self, index: Tuple[int, int]) -> bool:
        return bool(np.any((self.rows == index[0]) & (self.cols == index[1])))

    def subset(self, positions: np.ndarray) -> "ObservationSet":
        positions = np.asarray(positions, dtype=np.int64)
        return ObservationSet(self.m1, self.m2, self.rows[positions], self.cols[positions],
                              self.values[positions])

    def with_entry(self, index: Tuple[int, int], value: float) -> "ObservationSet":
        return ObservationSet(self.m1, self.m2, np.append(self.rows, index[0]),
                              np.append(self.cols, index[1]), np.append(self.values, value))


@dataclass(frozen=True, eq=False)
class ConditionalPredictive:
    targets: List[EntryIndex]
    mean: np.ndarray
    cov: np.ndarray
    gamma2: float

    @property
    def variances(self) -> np.ndarray:
        return np.diag(self.cov).copy()

    def intervals(self, level: float = 0.95) -> Tuple[np.ndarray, np.ndarray]:
        z = norm.ppf(0.5 + level / 2.0)
        half = z * np.sqrt(self.variances)
        return self.mean - half, self.mean + half


class VarianceReduction(NamedTuple):
    before: float
    after: float
    reduction: float


def _check_grid(obs: ObservationSet, p: SmgParams):
    if obs.shape != p.shape:
        raise DimensionMismatchError(f"observation grid {obs.shape} does not match subspaces {p.shape}")


def all_grid_indices(m1: int, m2: int) -> List[EntryIndex]:
    """Every grid entry in column-stacking order."""
    return [EntryIndex(i, j) for j in range(m2) for i in range(m1)]


def smg_sample(p: SmgParams, rng: RngStream) -> np.ndarray:
    """X = P_U Z P_V with Z having i.i.d. N(0, sigma2) entries."""
    U, V = p.U.columns, p.V.columns
    Z = rng.generator.normal(0.0, math.sqrt(p.sigma2), size=p.shape)
    return U @ (U.T @ Z @ V) @ V.T


def smg_log_density(X: np.ndarray, p: SmgParams) -> float:
    """Log density on the support: -(R^2/2) log(2 pi sigma2) - |U^T X V|_F^2 / (2 sigma2)."""
    X = check_finite(X, "X")
    if X.shape != p.shape:
        raise DimensionMismatchError(f"X has shape {X.shape}, model expects {p.shape}")
    U, V = p.U.columns, p.V.columns
    core = U.T @ X @ V
    residual = np.linalg.norm(X - U @ core @ V.T)
    if residual > SUPPORT_TOL * np.linalg.norm(X):
        raise InputDomainError(f"X lies outside the SMG support (re-projection residual {residual:.2e})")
    R = p.rank
    return -0.5 * R * R * math.log(2.0 * math.pi * p.sigma2) - 0.5 * float(np.sum(core ** 2)) / p.sigma2


def _factor(A: np.ndarray):
    try:
        return cho_factor(A, lower=True, check_finite=False)
    except LinAlgError as exc:
        raise NumericalError("Cholesky factorisation of R_N(Omega) + gamma^2 I failed",
                             condition=float(np.linalg.cond(A))) from exc


def _clamp_diagonal(cov: np.ndarray) -> np.ndarray:
    diag = np.diag(cov)
    low = diag < 0
    if np.any(low):
        worst = float(diag.min())
        if worst < -CLAMP_LOG_TOL:
            logger.warning(f"Clamped negative predictive variance {worst:.3e} to 0")
        idx = np.flatnonzero(low)
        cov[idx, idx] = 0.0
    return cov


def conditional_predictive(obs: ObservationSet, p: SmgParams, eta2: float,
                           targets: Sequence) -> ConditionalPredictive:
    """Mean and covariance of X at `targets` given Y_Omega, at fixed subspaces.

    mean = K^T (R_N + gamma2 I)^{-1} Y_Omega,
    cov  = sigma2 (K_tt - K^T (R_N + gamma2 I)^{-1} K),  gamma2 = eta2 / sigma2.
    Targets may include observed entries.
    """
    _check_grid(obs, p)
    if not (math.isfinite(eta2) and eta2 > 0):
        raise InputDomainError(f"eta2 must be positive, got {eta2}")
    targets = [EntryIndex(int(a), int(b)) for a, b in targets]
    gamma2 = eta2 / p.sigma2
    K_tt = kron_restricted(p.U, p.V, targets, targets)
    if obs.n == 0:
        return ConditionalPredictive(targets, np.zeros(len(targets)), p.sigma2 * K_tt, gamma2)

    omega = obs.indices
    A = kron_restricted(p.U, p.V, omega, omega)
    A[np.diag_indices_from(A)] += gamma2
    factor = _factor(A)
    K = kron_restricted(p.U, p.V, omega, targets)
    mean = K.T @ cho_solve(factor, obs.values)
    cov = p.sigma2 * (K_tt - K.T @ cho_solve(factor, K))
    cov = 0.5 * (cov + cov.T)
    return ConditionalPredictive(targets, mean, _clamp_diagonal(cov), gamma2)


def coherence(F: Frame, i: int) -> float:
    """mu_i = |P_U e_i|^2."""
    if not 0 <= i < F.m:
        raise IndexOutOfGridError(f"basis index {i} outside [0, {F.m})")
    return float(np.sum(F.columns[i] ** 2))


def coherence_vector(F: Frame) -> np.ndarray:
    return np.sum(F.columns ** 2, axis=1)


def overall_coherence(F: Frame) -> float:
    """mu(U) = max_i mu_i(U)."""
    return float(coherence_vector(F).max())


def cross_coherence(F: Frame, i: int, i2: int) -> float:
    """nu_{i,i2} = e_{i2}^T P_U e_i."""
    for k in (i, i2):
        if not 0 <= k < F.m:
            raise IndexOutOfGridError(f"basis index {k} outside [0, {F.m})")
    return float(F.columns[i] @ F.columns[i2])


def cross_coherence_matrix(F: Frame) -> np.ndarray:
    return F.columns @ F.columns.T


def coherence_conditional_variance(obs: ObservationSet, p: SmgParams, eta2: float,
                                   target: Tuple[int, int]) -> float:
    """Var(X_ij | Y_Omega) written with coherences and cross-coherence vectors.

    sigma2 mu_i(U) mu_j(V) - sigma2 nu_ij^T (R_N + gamma2 I)^{-1} nu_ij, where
    nu_ij stacks nu_{i,i_n}(U) nu_{j,j_n}(V) over the observed entries.
    """
    _check_grid(obs, p)
    i, j = int(target[0]), int(target[1])
    prior = p.sigma2 * coherence(p.U, i) * coherence(p.V, j)
    if obs.n == 0:
        return prior
    U, V = p.U.columns, p.V.columns
    nu = (U[obs.rows] @ U[i]) * (V[obs.cols] @ V[j])
    A = kron_restricted(p.U, p.V, obs.indices, obs.indices)
    A[np.diag_indices_from(A)] += eta2 / p.sigma2
    return max(prior - p.sigma2 * float(nu @ cho_solve(_factor(A), nu)), 0.0)


def variance_reduction(obs: ObservationSet, p: SmgParams, eta2: float,
                       new_entry: Tuple[int, int], target: Tuple[int, int]) -> VarianceReduction:
    """Drop in Var(X_target) from observing one more noisy entry, at fixed subspaces.

    reduction = Cov(X_target, X_new | Y)^2 / (Var(X_new | Y) + eta2), and
    before - after equals it by the Schur complement identity.
    """
    new_entry = EntryIndex(int(new_entry[0]), int(new_entry[1]))
    target = EntryIndex(int(target[0]), int(target[1]))
    if obs.contains(new_entry):
        raise InputDomainError(f"entry {tuple(new_entry)} is already observed")
    joint = conditional_predictive(obs, p, eta2, [target, new_entry])
    before = float(joint.cov[0, 0])
    reduction = float(joint.cov[0, 1] ** 2 / (joint.cov[1, 1] + eta2))
    # the value at the new entry does not enter the conditional variance
    after = float(conditional_predictive(obs.with_entry(new_entry, 0.0), p, eta2, [target]).cov[0, 0])
    gap = abs(before - after - reduction)
    if gap >= 1e-8 * max(1.0, before):
        logger.warning(f"Variance-reduction identity off by {gap:.3e} (before={before:.6g})")
    return VarianceReduction(before, after, reduction)


def monotonicity_trace(p: SmgParams, eta2: float, order: Sequence,
                       target: Tuple[int, int]) -> np.ndarray:
    """Var(X_target | Y at the first N entries of `order`) for N = 0 .. m1*m2.

    Uses sequential rank-one Schur updates of the joint covariance; the data
    values never enter.
    """
    m1, m2 = p.shape
    if not (math.isfinite(eta2) and eta2 > 0):
        raise InputDomainError(f"eta2 must be positive, got {eta2}")
    order = [EntryIndex(int(a), int(b)) for a, b in order]
    rows, cols = index_arrays(order, m1, m2)
    linear = cols * m1 + rows
    if len(order) != m1 * m2 or np.unique(linear).shape[0] != m1 * m2:
        raise InputDomainError("order must be a permutation of every grid entry")
    target = EntryIndex(int(target[0]), int(target[1]))
    index_arrays([target], m1, m2)

    points = [target] + order
    cov = p.sigma2 * kron_restricted(p.U, p.V, points, points)
    trace = np.empty(len(order) + 1)
    trace[0] = cov[0, 0]
    for step in range(len(order)):
        k = step + 1
        s = cov[:, k].copy()
        cov -= np.outer(s, s) / (s[k] + eta2)
        trace[step + 1] = max(cov[0, 0], 0.0)
    return trace
