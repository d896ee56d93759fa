"""
Nuclear-norm point estimation (soft-impute), cross-validated choice of the
penalty, and the approximate MAP rank used to start the Gibbs sampler.

Objective minimised by soft_impute, in the scaled form used throughout:

    0.5 * sum_{(i,j) in Omega} (Y_ij - X_ij)^2 + lam * ||X||_*

which is the unscaled least-squares + nuclear-norm problem with weight 2*lam.
Each iteration soft-thresholds the singular values of the filled-in matrix
at lam.
"""
import logging
import math
from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Sequence

import numpy as np

from modules.errors import ConfigError, InputDomainError
from modules.linalg import check_finite
from modules.samplers import RngStream
from modules.smg_model import ObservationSet

logger = logging.getLogger(__name__)

MAP_RANK_TOL = 1e-8


@dataclass(frozen=True)
class SolverConfig:
    lam: Optional[float] = None
    tol: float = 1e-5
    max_iter: int = 500
    cv_folds: int = 5
    lambda_grid: Optional[Sequence[float]] = None
    n_lambdas: int = 15
    lambda_min_ratio: float = 1e-3
    rank_tol: float = 1e-2

    def __post_init__(self):
        if not self.tol > 0:
            raise ConfigError(f"solver.tol must be positive, got {self.tol}")
        if self.max_iter < 1:
            raise ConfigError(f"solver.max_iter must be >= 1, got {self.max_iter}")
        if self.cv_folds < 2:
            raise ConfigError(f"solver.cv_folds must be >= 2, got {self.cv_folds}")
        if self.lam is not None and self.lam < 0:
            raise ConfigError(f"solver.lam must be non-negative, got {self.lam}")
        if self.lambda_grid is not None:
            grid = tuple(float(x) for x in self.lambda_grid)
            if not grid:
                raise ConfigError("solver.lambda_grid is empty")
            if any(x <= 0 for x in grid) or any(b <= a for a, b in zip(grid, grid[1:])):
                raise ConfigError("solver.lambda_grid must be strictly positive and strictly increasing")
            object.__setattr__(self, "lambda_grid", grid)
        if not 0 < self.lambda_min_ratio < 1:
            raise ConfigError(f"solver.lambda_min_ratio must lie in (0, 1), got {self.lambda_min_ratio}")
        if not self.rank_tol > 0:
            raise ConfigError(f"solver.rank_tol must be positive, got {self.rank_tol}")


class SoftImputeResult(NamedTuple):
    X: np.ndarray
    objectives: List[float]
    n_iter: int
    converged: bool


def nuclear_objective(X: np.ndarray, obs: ObservationSet, lam: float) -> float:
    resid = obs.values - X[obs.rows, obs.cols]
    return 0.5 * float(resid @ resid) + lam * float(np.linalg.svd(X, compute_uv=False).sum())


def _shrink(Z: np.ndarray, lam: float):
    u, d, vt = np.linalg.svd(Z, full_matrices=False)
    d = np.maximum(d - lam, 0.0)
    keep = d > 0
    return (u[:, keep] * d[keep]) @ vt[keep], float(d.sum())


def soft_impute_trace(obs: ObservationSet, cfg: SolverConfig, lam: Optional[float] = None,
                      warm_start: Optional[np.ndarray] = None) -> SoftImputeResult:
    """Soft-impute iterations with the objective recorded after every step."""
    if obs.n == 0:
        raise InputDomainError("soft_impute needs at least one observed entry")
    lam = cfg.lam if lam is None else lam
    if lam is None:
        raise ConfigError("no lambda given; run cv_select_lambda first or set solver.lam")
    if lam < 0:
        raise InputDomainError(f"lambda must be non-negative, got {lam}")

    X = np.zeros(obs.shape) if warm_start is None else check_finite(warm_start, "warm start").copy()
    rows, cols, vals = obs.rows, obs.cols, obs.values
    objectives = []
    converged = False
    it = 0
    for it in range(1, cfg.max_iter + 1):
        filled = X.copy()
        filled[rows, cols] = vals
        X_new, nuclear = _shrink(filled, lam)
        resid = vals - X_new[rows, cols]
        objectives.append(0.5 * float(resid @ resid) + lam * nuclear)
        change = np.linalg.norm(X_new - X)
        scale = np.linalg.norm(X)
        X = X_new
        if change == 0.0 or (scale > 0 and change / scale < cfg.tol):
            converged = True
            break
    if not converged:
        logger.debug(f"soft-impute hit max_iter={cfg.max_iter} at lambda={lam:.4g}")
    return SoftImputeResult(X, objectives, it, converged)


def soft_impute(obs: ObservationSet, cfg: SolverConfig, lam: Optional[float] = None,
                warm_start: Optional[np.ndarray] = None) -> np.ndarray:
    return soft_impute_trace(obs, cfg, lam, warm_start).X


def default_lambda_grid(obs: ObservationSet, cfg: SolverConfig) -> np.ndarray:
    """Log-spaced grid from lambda_min_ratio * d1 to d1 of the zero-filled observations."""
    if cfg.lambda_grid is not None:
        return np.asarray(cfg.lambda_grid)
    d1 = float(np.linalg.svd(obs.to_dense(), compute_uv=False)[0])
    if d1 == 0.0:
        raise InputDomainError("all observed values are zero; the lambda grid is degenerate")
    return np.geomspace(cfg.lambda_min_ratio * d1, d1, cfg.n_lambdas)


def assign_folds(obs: ObservationSet, n_folds: int, rng: RngStream) -> np.ndarray:
    """Fold label per observed entry; labels depend on entry positions, not list order."""
    linear = obs.cols * obs.m1 + obs.rows
    order = np.argsort(linear, kind="stable")
    labels_sorted = rng.generator.permutation(obs.n) % n_folds
    folds = np.empty(obs.n, dtype=np.int64)
    folds[order] = labels_sorted
    return folds


def cv_select_lambda(obs: ObservationSet, cfg: SolverConfig, rng: RngStream) -> float:
    """Grid lambda minimising the summed held-out squared error; ties go to the larger lambda."""
    grid = default_lambda_grid(obs, cfg)
    if grid.size == 0:
        raise ConfigError("lambda grid is empty")
    if grid.size == 1:
        return float(grid[0])
    if obs.n < cfg.cv_folds:
        raise InputDomainError(f"{obs.n} observations cannot fill {cfg.cv_folds} folds")
    folds = assign_folds(obs, cfg.cv_folds, rng)

    errors = np.zeros(grid.size)
    for fold in range(cfg.cv_folds):
        held = np.flatnonzero(folds == fold)
        if held.size == 0 or held.size == obs.n:
            raise InputDomainError(f"fold {fold} has no usable entries")
        train = obs.subset(np.flatnonzero(folds != fold))
        test = obs.subset(held)
        X = None
        # walk the path from the largest lambda down, warm-starting each fit
        for g in range(grid.size - 1, -1, -1):
            X = soft_impute(train, cfg, lam=float(grid[g]), warm_start=X)
            resid = test.values - X[test.rows, test.cols]
            errors[g] += float(resid @ resid)
    best = float(errors.min())
    chosen = float(grid[np.flatnonzero(errors == best)[-1]])
    logger.info(f"Cross-validation selected lambda={chosen:.4g} ({cfg.cv_folds} folds, {grid.size} candidates)")
    return chosen


def estimate_rank(X_hat: np.ndarray, rank_tol: float) -> int:
    """Number of singular values above rank_tol * d1, clamped to [1, min(m1, m2) - 1]."""
    X_hat = check_finite(X_hat, "matrix estimate")
    d = np.linalg.svd(X_hat, compute_uv=False)
    upper = max(min(X_hat.shape) - 1, 1)
    if d.size == 0 or d[0] == 0.0:
        return 1
    count = int(np.sum(d > rank_tol * d[0]))
    return int(min(max(count, 1), upper))


def map_objective(X: np.ndarray, obs: ObservationSet, sigma2: float, eta2: float) -> float:
    """|Y_Omega - X_Omega|^2 / eta2 + log(2 pi sigma2) rank(X)^2 + |X|_F^2 / sigma2."""
    X = check_finite(X, "X")
    if not (sigma2 > 0 and eta2 > 0):
        raise InputDomainError(f"sigma2 and eta2 must be positive, got ({sigma2}, {eta2})")
    resid = obs.values - X[obs.rows, obs.cols]
    rank = estimate_rank(X, MAP_RANK_TOL)
    return (float(resid @ resid) / eta2
            + math.log(2.0 * math.pi * sigma2) * rank ** 2
            + float(np.sum(X ** 2)) / sigma2)
