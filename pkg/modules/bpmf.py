"""
Bayesian probabilistic matrix factorisation (X = M N^T) with Gaussian row
priors and Normal-Inverse-Wishart hyperpriors, used as the comparison
baseline for BayeSMG.

Missing entries are handled inside the row conditionals: only the observed
columns of a row enter its likelihood.
"""
import logging
import math
from dataclasses import dataclass, replace
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy.stats import invwishart

from modules.errors import BayesmgError, ChainAbortedError, ConfigError, DimensionMismatchError, InputDomainError
from modules.gibbs import GibbsConfig, PosteriorSamples, initial_eta2
from modules.linalg import check_finite, svd
from modules.map_init import SolverConfig, cv_select_lambda, estimate_rank, soft_impute
from modules.samplers import RngStream, sample_inverse_gamma
from modules.smg_model import ObservationSet

logger = logging.getLogger(__name__)

RIDGE = 1e-10
PD_TOL = 1e-9
INIT_SCALE = 0.1


@dataclass(frozen=True, eq=False)
class BpmfHyper:
    """mu ~ N(mu0, Sigma / beta), Sigma ~ IW(nu, W) for both factor matrices."""

    rank: Optional[int] = None
    beta: float = 2.0
    W: Optional[np.ndarray] = None
    nu: Optional[float] = None
    alpha_eta2: float = 0.01
    beta_eta2: float = 0.01

    def __post_init__(self):
        if not self.beta > 0:
            raise ConfigError(f"bpmf.beta must be positive, got {self.beta}")
        if not (self.alpha_eta2 > 0 and self.beta_eta2 > 0):
            raise ConfigError("bpmf noise prior parameters must be positive")
        if self.rank is None:
            return
        R = self.rank
        if R < 1:
            raise ConfigError(f"rank must be >= 1, got {R}")
        W = np.eye(R) if self.W is None else check_finite(self.W, "W")
        if W.shape != (R, R):
            raise DimensionMismatchError(f"W has shape {W.shape}, expected {(R, R)}")
        if not np.allclose(W, W.T, atol=PD_TOL) or np.linalg.eigvalsh(W).min() <= 0:
            raise ConfigError("bpmf.W must be symmetric positive-definite")
        object.__setattr__(self, "W", W)
        if self.nu is None:
            object.__setattr__(self, "nu", float(R + 2))
            logger.info(f"Using default Inverse-Wishart degrees of freedom nu=R+2={R + 2}")
        elif self.nu < R:
            raise ConfigError(f"bpmf.nu must be >= rank {R}, got {self.nu}")

    def with_rank(self, rank: int) -> "BpmfHyper":
        keep_w = self.W is not None and self.W.shape == (rank, rank)
        return replace(self, rank=int(rank), W=self.W if keep_w else None,
                       nu=self.nu if self.rank == rank else None)


@dataclass(frozen=True, eq=False)
class BpmfState:
    M: np.ndarray
    N: np.ndarray
    mu_M: np.ndarray
    mu_N: np.ndarray
    Sigma_M: np.ndarray
    Sigma_N: np.ndarray
    eta2: float

    def __post_init__(self):
        R = self.M.shape[1]
        if self.N.shape[1] != R or self.mu_M.shape != (R,) or self.mu_N.shape != (R,):
            raise DimensionMismatchError("factor matrices and means disagree on the rank")
        for name in ("Sigma_M", "Sigma_N"):
            S = getattr(self, name)
            if S.shape != (R, R) or not np.allclose(S, S.T, atol=PD_TOL):
                raise InputDomainError(f"{name} must be a symmetric {R}x{R} matrix")
        if not (math.isfinite(self.eta2) and self.eta2 > 0):
            raise InputDomainError(f"eta2 must be positive, got {self.eta2}")

    @property
    def rank(self) -> int:
        return self.M.shape[1]

    def reconstruct(self) -> np.ndarray:
        return self.M @ self.N.T


class NiwPosterior(NamedTuple):
    mu: np.ndarray
    beta: float
    nu: float
    W: np.ndarray


def niw_posterior(Z: np.ndarray, mu0: np.ndarray, beta0: float, nu0: float, W0: np.ndarray) -> NiwPosterior:
    """Conjugate Normal-Inverse-Wishart update from the rows of Z."""
    n = Z.shape[0]
    zbar = Z.mean(axis=0)
    centred = Z - zbar
    S = centred.T @ centred
    beta_n = beta0 + n
    dev = (zbar - mu0)[:, None]
    W_n = W0 + S + (beta0 * n / beta_n) * (dev @ dev.T)
    return NiwPosterior((beta0 * mu0 + n * zbar) / beta_n, beta_n, nu0 + n, 0.5 * (W_n + W_n.T))


def _sample_niw(post: NiwPosterior, gen: np.random.Generator):
    R = post.W.shape[0]
    Sigma = np.atleast_2d(invwishart.rvs(df=post.nu, scale=post.W, random_state=gen)).reshape(R, R)
    Sigma = 0.5 * (Sigma + Sigma.T)
    mu = post.mu + _cholesky(Sigma / post.beta, "mean covariance") @ gen.standard_normal(R)
    return mu, Sigma


def _cholesky(A: np.ndarray, what: str) -> np.ndarray:
    try:
        return np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        logger.warning(f"Singular {what}; adding ridge {RIDGE:g}")
        return np.linalg.cholesky(A + RIDGE * np.eye(A.shape[0]))


def _update_rows(other: np.ndarray, row_obs, mu: np.ndarray, Sigma: np.ndarray,
                 eta2: float, noise: np.ndarray) -> np.ndarray:
    """Draw each factor row from its Gaussian conditional; noise[i] is that row's N(0, I) vector."""
    prior_prec = np.linalg.inv(Sigma)
    prior_term = prior_prec @ mu
    out = np.empty((len(row_obs), mu.shape[0]))
    for i, (idx, vals) in enumerate(row_obs):
        G = other[idx]
        prec = prior_prec + G.T @ G / eta2
        prec = 0.5 * (prec + prec.T)
        L = _cholesky(prec, f"row precision (row {i})")
        rhs = prior_term + G.T @ vals / eta2
        mean = np.linalg.solve(L.T, np.linalg.solve(L, rhs))
        out[i] = mean + np.linalg.solve(L.T, noise[i])
    return out


def _group(keys: np.ndarray, others: np.ndarray, values: np.ndarray, size: int):
    return [(others[keys == k], values[keys == k]) for k in range(size)]


def _labels(labels: Optional[Sequence[int]], size: int) -> np.ndarray:
    if labels is None:
        return np.arange(size)
    labels = np.asarray(labels, dtype=np.int64)
    if sorted(labels.tolist()) != list(range(size)):
        raise InputDomainError(f"labels must be a permutation of 0..{size - 1}")
    return labels


def init_bpmf_state(obs: ObservationSet, hyper: BpmfHyper, cfg: GibbsConfig, rng: RngStream,
                    row_labels: Optional[Sequence[int]] = None,
                    col_labels: Optional[Sequence[int]] = None) -> BpmfState:
    R = hyper.rank
    gen = rng.generator
    M = INIT_SCALE * gen.standard_normal((obs.m1, R))[_labels(row_labels, obs.m1)]
    N = INIT_SCALE * gen.standard_normal((obs.m2, R))[_labels(col_labels, obs.m2)]
    eta2 = initial_eta2(obs, cfg, hyper.alpha_eta2, hyper.beta_eta2, rng)
    return BpmfState(M, N, np.zeros(R), np.zeros(R), hyper.W.copy(), hyper.W.copy(), eta2)


def bpmf_sweep(state: BpmfState, obs: ObservationSet, hyper: BpmfHyper, cfg: GibbsConfig,
               rng: RngStream, row_labels: Optional[Sequence[int]] = None,
               col_labels: Optional[Sequence[int]] = None) -> BpmfState:
    """Rows of M, rows of N, then (mu_M, Sigma_M), (mu_N, Sigma_N) and, when sampled, eta2.

    Row noise is drawn as one block per factor and row i reads the block row
    row_labels[i]; relabelling the rows of the grid relabels the draws with them.
    """
    gen = rng.generator
    m1, m2 = obs.shape
    R = state.rank
    rl, cl = _labels(row_labels, m1), _labels(col_labels, m2)

    noise_M = gen.standard_normal((m1, R))[rl]
    M = _update_rows(state.N, _group(obs.rows, obs.cols, obs.values, m1),
                     state.mu_M, state.Sigma_M, state.eta2, noise_M)
    noise_N = gen.standard_normal((m2, R))[cl]
    N = _update_rows(M, _group(obs.cols, obs.rows, obs.values, m2),
                     state.mu_N, state.Sigma_N, state.eta2, noise_N)

    mu0 = np.zeros(R)
    mu_M, Sigma_M = _sample_niw(niw_posterior(M, mu0, hyper.beta, hyper.nu, hyper.W), gen)
    mu_N, Sigma_N = _sample_niw(niw_posterior(N, mu0, hyper.beta, hyper.nu, hyper.W), gen)

    eta2 = state.eta2
    if cfg.eta2_mode == "sampled":
        resid = obs.values - np.einsum("nr,nr->n", M[obs.rows], N[obs.cols])
        eta2 = sample_inverse_gamma(hyper.alpha_eta2 + obs.n / 2.0,
                                    hyper.beta_eta2 + float(resid @ resid) / 2.0, rng)
    return BpmfState(M, N, mu_M, mu_N, Sigma_M, Sigma_N, eta2)


def _resolve_rank(obs: ObservationSet, hyper: BpmfHyper, solver: Optional[SolverConfig],
                  rng: RngStream) -> BpmfHyper:
    if hyper.rank is not None:
        return hyper
    solver = solver or SolverConfig()
    lam = solver.lam if solver.lam is not None else cv_select_lambda(obs, solver, rng)
    rank = estimate_rank(soft_impute(obs, solver, lam=lam), solver.rank_tol)
    logger.info(f"Estimated rank R={rank} for BPMF from the nuclear-norm fit")
    return hyper.with_rank(rank)


def run_single_bpmf_chain(obs: ObservationSet, hyper: BpmfHyper, cfg: GibbsConfig,
                          solver: Optional[SolverConfig] = None, chain: int = 0,
                          row_labels: Optional[Sequence[int]] = None,
                          col_labels: Optional[Sequence[int]] = None) -> PosteriorSamples:
    if obs.n == 0:
        raise InputDomainError("BPMF needs at least one observed entry")
    rng = RngStream(cfg.seed).derive(chain)
    T = cfg.total_iters
    step = max(T // 10, 1)
    try:
        hyper = _resolve_rank(obs, hyper, solver, rng)
        state = init_bpmf_state(obs, hyper, cfg, rng, row_labels, col_labels)
    except BayesmgError as exc:
        raise ChainAbortedError(chain, 0, exc) from exc
    logger.info(f"Starting BPMF chain {chain}: R={hyper.rank}, {T} iterations, burn-in {cfg.burn}")

    kept = []
    for t in range(T):
        try:
            state = bpmf_sweep(state, obs, hyper, cfg, rng, row_labels, col_labels)
        except (BayesmgError, np.linalg.LinAlgError) as exc:
            raise ChainAbortedError(chain, t + 1, exc) from exc
        if t >= cfg.burn and (t - cfg.burn) % cfg.thin == 0:
            kept.append(state)
        if (t + 1) % step == 0:
            logger.info(f"BPMF chain {chain} progress: iteration {t + 1}/{T} (eta2={state.eta2:.4g})")

    x_samples = np.stack([s.reconstruct() for s in kept])
    frames = [svd(X, rank=hyper.rank) for X in x_samples]
    logger.info(f"Completed BPMF chain {chain}: kept {len(kept)} draws")
    return PosteriorSamples(
        states=kept,
        x_samples=x_samples,
        chain_ids=np.full(len(kept), chain, dtype=np.int64),
        u_frames=[f[0] for f in frames],
        v_frames=[f[2] for f in frames],
        meta={"rank": hyper.rank, "method": "bpmf", "burn_in": cfg.burn, "thin": cfg.thin},
    )


def run_bpmf(obs: ObservationSet, hyper: BpmfHyper, cfg: GibbsConfig,
             solver: Optional[SolverConfig] = None) -> PosteriorSamples:
    return PosteriorSamples.merge([run_single_bpmf_chain(obs, hyper, cfg, solver, chain=c)
                                   for c in range(cfg.n_chains)])
