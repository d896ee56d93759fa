"""
BayeSMG Gibbs sampler: nuclear-norm initialisation, missing-data imputation
and the (U, V, D, sigma2, eta2) full-conditional sweep.

Chains run independently on RngStream(seed + chain_index); a single chain is
strictly sequential.
"""
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from modules.errors import (
    BayesmgError,
    ChainAbortedError,
    ConfigError,
    DimensionMismatchError,
    InputDomainError,
)
from modules.linalg import Frame, check_finite, svd
from modules.map_init import SolverConfig, cv_select_lambda, estimate_rank, soft_impute
from modules.samplers import (
    DEFAULT_MAX_PROPOSALS,
    DEFAULT_T_DF,
    AcceptanceCounter,
    RepulsedNormalParams,
    RngStream,
    VmfParams,
    sample_inverse_gamma,
    sample_matrix_vmf,
    sample_repulsed_normal,
)
from modules.smg_model import ObservationSet

logger = logging.getLogger(__name__)

TIE_RTOL = 1e-12
TIE_JITTER = 1e-9
INIT_FLOOR = 1e-6
ETA2_MODES = ("fixed", "sampled")
ETA2_INITS = ("capped", "prior")


@dataclass(frozen=True, eq=False)
class Hyperparams:
    """Priors: U ~ MF(F1), V ~ MF(F2), sigma2 ~ IG, eta2 ~ IG.

    rank=None means "estimate from the nuclear-norm fit"; F1/F2=None mean zero
    concentration (uniform subspaces).
    """

    rank: Optional[int] = None
    F1: Optional[np.ndarray] = None
    F2: Optional[np.ndarray] = None
    alpha_sigma2: float = 0.01
    beta_sigma2: float = 0.01
    alpha_eta2: float = 0.01
    beta_eta2: float = 0.01

    def __post_init__(self):
        for name in ("alpha_sigma2", "beta_sigma2", "alpha_eta2", "beta_eta2"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ConfigError(f"prior.{name} must be positive, got {value}")
        if self.rank is not None and self.rank < 1:
            raise ConfigError(f"rank must be >= 1, got {self.rank}")
        for name in ("F1", "F2"):
            F = getattr(self, name)
            if F is not None:
                F = check_finite(F, name)
                if F.ndim != 2:
                    raise DimensionMismatchError(f"{name} must be 2-D, got shape {F.shape}")
                if self.rank is not None and F.shape[1] != self.rank:
                    raise DimensionMismatchError(f"{name} has {F.shape[1]} columns, rank is {self.rank}")
                object.__setattr__(self, name, F)

    def concentrations(self, m1: int, m2: int) -> Tuple[np.ndarray, np.ndarray]:
        if self.rank is None:
            raise ConfigError("rank is unresolved; call with_rank first")
        out = []
        for name, m in (("F1", m1), ("F2", m2)):
            F = getattr(self, name)
            if F is None:
                F = np.zeros((m, self.rank))
            elif F.shape != (m, self.rank):
                raise DimensionMismatchError(f"{name} has shape {F.shape}, expected {(m, self.rank)}")
            out.append(F)
        return out[0], out[1]

    def with_rank(self, rank: int) -> "Hyperparams":
        return replace(self, rank=int(rank))


@dataclass(frozen=True, eq=False)
class ModelState:
    U: Frame
    D: np.ndarray
    V: Frame
    sigma2: float
    eta2: float

    def __post_init__(self):
        D = np.atleast_1d(check_finite(self.D, "singular values")).copy()
        if D.shape != (self.U.rank,) or self.V.rank != self.U.rank:
            raise DimensionMismatchError(
                f"D has shape {D.shape}; frames have ranks {self.U.rank} and {self.V.rank}")
        if np.any(D <= 0):
            raise InputDomainError("singular values must be strictly positive")
        if D.shape[0] > 1 and np.min(np.diff(np.sort(D))) == 0:
            raise InputDomainError("singular values must be pairwise distinct")
        if not (math.isfinite(self.sigma2) and self.sigma2 > 0):
            raise InputDomainError(f"sigma2 must be positive, got {self.sigma2}")
        if not (math.isfinite(self.eta2) and self.eta2 >= 0):
            raise InputDomainError(f"eta2 must be non-negative, got {self.eta2}")
        D.setflags(write=False)
        object.__setattr__(self, "D", D)

    @property
    def rank(self) -> int:
        return self.U.rank

    def reconstruct(self) -> np.ndarray:
        return (self.U.columns * self.D) @ self.V.columns.T


@dataclass(frozen=True)
class GibbsConfig:
    total_iters: int = 1000
    burn_in: Optional[int] = None
    thin: int = 1
    eta2_mode: str = "sampled"
    eta2_value: Optional[float] = None
    eta2_init: str = "capped"
    n_chains: int = 1
    seed: int = 0
    mh_steps: int = 5
    t_df: float = DEFAULT_T_DF
    vmf_max_proposals: int = DEFAULT_MAX_PROPOSALS

    def __post_init__(self):
        if self.total_iters < 1:
            raise ConfigError(f"gibbs.total_iters must be >= 1, got {self.total_iters}")
        if not 0 <= self.burn < self.total_iters:
            raise ConfigError(f"burn-in {self.burn} must lie in [0, {self.total_iters})")
        if self.thin < 1:
            raise ConfigError(f"gibbs.thin must be >= 1, got {self.thin}")
        if self.n_chains < 1:
            raise ConfigError(f"gibbs.n_chains must be >= 1, got {self.n_chains}")
        if self.eta2_mode not in ETA2_MODES:
            raise ConfigError(f"gibbs.eta2_mode must be one of {ETA2_MODES}, got {self.eta2_mode!r}")
        if self.eta2_mode == "fixed" and not (self.eta2_value is not None and self.eta2_value > 0):
            raise ConfigError(f"fixed eta2 mode needs a positive eta2_value, got {self.eta2_value}")
        if self.eta2_init not in ETA2_INITS:
            raise ConfigError(f"gibbs.eta2_init must be one of {ETA2_INITS}, got {self.eta2_init!r}")
        if self.mh_steps < 1:
            raise ConfigError(f"gibbs.mh_steps must be >= 1, got {self.mh_steps}")
        if not self.t_df > 0:
            raise ConfigError(f"gibbs.t_df must be positive, got {self.t_df}")

    @property
    def burn(self) -> int:
        """Burn-in length; defaults to 20% of the iterations."""
        return int(self.total_iters // 5) if self.burn_in is None else int(self.burn_in)

    @property
    def retained_per_chain(self) -> int:
        return len(range(self.burn, self.total_iters, self.thin))


def parse_eta2_mode(text: str) -> Tuple[str, Optional[float]]:
    """'sampled' -> ('sampled', None); 'fixed:<v>' -> ('fixed', v)."""
    text = text.strip()
    if text == "sampled":
        return "sampled", None
    if text.startswith("fixed:"):
        try:
            value = float(text.split(":", 1)[1])
        except ValueError:
            raise ConfigError(f"cannot parse eta2 value in {text!r}") from None
        if not value > 0:
            raise ConfigError(f"fixed eta2 must be positive, got {value}")
        return "fixed", value
    raise ConfigError(f"eta2 mode must be 'sampled' or 'fixed:<value>', got {text!r}")


@dataclass(eq=False)
class PosteriorSamples:
    """Retained (post burn-in, thinned) draws of one or more chains.

    states hold ModelState for BayeSMG and BpmfState for the baseline; both
    expose reconstruct().  u_frames/v_frames are the matching subspace samples.
    """

    states: List
    x_samples: np.ndarray
    chain_ids: np.ndarray
    u_frames: List[Frame]
    v_frames: List[Frame]
    acceptance_rates: List[float] = field(default_factory=list)
    meta: Dict = field(default_factory=dict)

    @property
    def n_samples(self) -> int:
        return int(self.x_samples.shape[0])

    @property
    def shape(self) -> Tuple[int, int]:
        return int(self.x_samples.shape[1]), int(self.x_samples.shape[2])

    @property
    def n_chains(self) -> int:
        return int(np.unique(self.chain_ids).shape[0]) if self.chain_ids.size else 0

    def posterior_mean(self) -> np.ndarray:
        return self.x_samples.mean(axis=0)

    def by_chain(self, chain: int) -> np.ndarray:
        return np.flatnonzero(self.chain_ids == chain)

    @classmethod
    def merge(cls, parts: Sequence["PosteriorSamples"]) -> "PosteriorSamples":
        if not parts:
            raise InputDomainError("nothing to merge")
        meta = dict(parts[0].meta)
        return cls(
            states=[s for p in parts for s in p.states],
            x_samples=np.concatenate([p.x_samples for p in parts], axis=0),
            chain_ids=np.concatenate([p.chain_ids for p in parts]),
            u_frames=[f for p in parts for f in p.u_frames],
            v_frames=[f for p in parts for f in p.v_frames],
            acceptance_rates=[r for p in parts for r in p.acceptance_rates],
            meta=meta,
        )


# ---------------------------------------------------------------------------
# initialisation
# ---------------------------------------------------------------------------

def separate_ties(D: np.ndarray, scale: float) -> np.ndarray:
    """Push apart singular values tied within TIE_RTOL * max|D| by TIE_JITTER * scale."""
    D = np.array(D, dtype=np.float64)
    if D.shape[0] < 2:
        return D
    tol = TIE_RTOL * float(np.max(np.abs(D)))
    step = TIE_JITTER * (scale if scale > 0 else 1.0)
    order = np.argsort(-D, kind="stable")
    changed = False
    # walk from the smallest upward so bumps never create new ties below
    for pos in range(len(order) - 2, -1, -1):
        hi, lo = order[pos], order[pos + 1]
        if D[hi] - D[lo] <= tol:
            D[hi] = D[lo] + step
            changed = True
    if changed:
        logger.warning(f"Separated tied singular values with jitter {step:.3e}")
    return D


def _positive_distinct(d: np.ndarray) -> np.ndarray:
    """Lift zero (or tiny) truncated singular values to distinct values >= INIT_FLOOR * d1."""
    d1 = float(d[0]) if d.size and d[0] > 0 else 1.0
    floor = INIT_FLOOR * d1
    d = d.copy()
    R = d.shape[0]
    for k in range(R):
        if d[k] < floor:
            d[k] = floor * (R - k)
    return separate_ties(d, d1)


def initial_eta2(obs: ObservationSet, cfg: GibbsConfig, alpha: float, beta: float, rng: RngStream) -> float:
    """Fixed value, or a prior draw; eta2_init="capped" clips the draw at the spread of the observed values."""
    if cfg.eta2_mode == "fixed":
        return float(cfg.eta2_value)
    draw = sample_inverse_gamma(alpha, beta, rng)
    if cfg.eta2_init == "prior":
        return draw
    cap = float(np.var(obs.values)) or float(np.mean(obs.values ** 2)) or 1.0
    if draw > cap:
        logger.debug(f"Initial eta2 draw {draw:.3e} capped at {cap:.3e}")
    return min(draw, cap)


def init_state(obs: ObservationSet, hyper: Hyperparams, cfg: GibbsConfig,
               solver: SolverConfig, rng: RngStream) -> ModelState:
    """Nuclear-norm completion, rank-R SVD, and prior draws for the variances."""
    if obs.n == 0:
        raise InputDomainError("cannot initialise from an empty observation set")
    lam = solver.lam if solver.lam is not None else cv_select_lambda(obs, solver, rng)
    X0 = soft_impute(obs, solver, lam=lam)
    rank = hyper.rank
    if rank is None:
        rank = estimate_rank(X0, solver.rank_tol)
        logger.info(f"Estimated rank R={rank} from the nuclear-norm fit (lambda={lam:.4g})")
    upper = min(obs.shape) - 1
    if not 1 <= rank <= upper:
        raise ConfigError(f"rank {rank} must lie in [1, {upper}] for a {obs.m1}x{obs.m2} grid")
    U0, d0, V0 = svd(X0, rank=rank)
    D0 = _positive_distinct(d0)
    sigma2 = sample_inverse_gamma(hyper.alpha_sigma2, hyper.beta_sigma2, rng)
    eta2 = initial_eta2(obs, cfg, hyper.alpha_eta2, hyper.beta_eta2, rng)
    return ModelState(U0, D0, V0, sigma2, eta2)


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------

def impute_missing(state: ModelState, obs: ObservationSet, rng: RngStream) -> np.ndarray:
    """Observed entries verbatim; the rest X_ij + N(0, eta2)."""
    X = state.reconstruct()
    if X.shape != obs.shape:
        raise DimensionMismatchError(f"state grid {X.shape} does not match observations {obs.shape}")
    noise = rng.generator.standard_normal(X.shape)
    Y = X + math.sqrt(state.eta2) * noise
    Y[obs.rows, obs.cols] = obs.values
    return Y


def conjugate_sigma2(D: np.ndarray, hyper: Hyperparams, rng: RngStream) -> float:
    """sigma2 | D ~ IG(alpha_sigma2 + R/2, beta_sigma2 + tr(D^2)/2)."""
    D = np.asarray(D, dtype=np.float64)
    return sample_inverse_gamma(hyper.alpha_sigma2 + D.shape[0] / 2.0,
                                hyper.beta_sigma2 + float(np.sum(D ** 2)) / 2.0, rng)


def conjugate_eta2(resid: np.ndarray, hyper: Hyperparams, rng: RngStream) -> float:
    """eta2 | residual ~ IG(alpha_eta2 + m1 m2 / 2, beta_eta2 + ||resid||_F^2 / 2)."""
    return sample_inverse_gamma(hyper.alpha_eta2 + resid.size / 2.0,
                                hyper.beta_eta2 + float(np.sum(resid ** 2)) / 2.0, rng)


def gibbs_sweep(state: ModelState, Y_full: np.ndarray, hyper: Hyperparams, cfg: GibbsConfig,
                rng: RngStream, counter: Optional[AcceptanceCounter] = None) -> ModelState:
    """One pass over U, V, D, sigma2 and (when sampled) eta2, in that order."""
    Y = check_finite(Y_full, "completed data")
    m1, m2 = Y.shape
    F1, F2 = hyper.with_rank(state.rank).concentrations(m1, m2)
    eta2, sigma2 = state.eta2, state.sigma2
    if not eta2 > 0:
        raise InputDomainError("the sweep needs eta2 > 0")

    U = sample_matrix_vmf(VmfParams(Y @ (state.V.columns * state.D) / eta2 + F1), rng,
                          cfg.vmf_max_proposals)
    V = sample_matrix_vmf(VmfParams(Y.T @ (U.columns * state.D) / eta2 + F2), rng,
                          cfg.vmf_max_proposals)

    shrink = 1.0 / (1.0 + eta2 / sigma2)
    mu = np.einsum("ir,ij,jr->r", U.columns, Y, V.columns) * shrink
    current = separate_ties(state.D, float(np.max(state.D)))
    mh = sample_repulsed_normal(RepulsedNormalParams(mu, eta2 * shrink), rng,
                                current=current, n_steps=cfg.mh_steps, df=cfg.t_df)
    if counter is not None:
        counter.add(mh)
    D = mh.value

    sigma2 = conjugate_sigma2(D, hyper, rng)
    if cfg.eta2_mode == "sampled":
        resid = Y - (U.columns * D) @ V.columns.T
        eta2 = conjugate_eta2(resid, hyper, rng)
    return ModelState(U, D, V, sigma2, eta2)


# ---------------------------------------------------------------------------
# chains
# ---------------------------------------------------------------------------

def run_single_chain(obs: ObservationSet, hyper: Hyperparams, cfg: GibbsConfig,
                     solver: SolverConfig, chain: int = 0) -> PosteriorSamples:
    """One seeded chain (RngStream(cfg.seed + chain)) with its retained draws."""
    rng = RngStream(cfg.seed).derive(chain)
    T = cfg.total_iters
    step = max(T // 10, 1)
    try:
        state = init_state(obs, hyper, cfg, solver, rng)
    except BayesmgError as exc:
        raise ChainAbortedError(chain, 0, exc) from exc
    hyper = hyper.with_rank(state.rank)
    logger.info(f"Starting chain {chain}: R={state.rank}, {T} iterations, burn-in {cfg.burn}, thin {cfg.thin}")

    counter = AcceptanceCounter()
    kept = []
    for t in range(T):
        try:
            Y_full = impute_missing(state, obs, rng)
            state = gibbs_sweep(state, Y_full, hyper, cfg, rng, counter)
        except BayesmgError as exc:
            raise ChainAbortedError(chain, t + 1, exc) from exc
        if t >= cfg.burn and (t - cfg.burn) % cfg.thin == 0:
            kept.append(state)
        if (t + 1) % step == 0:
            logger.info(f"Chain {chain} progress: iteration {t + 1}/{T} "
                        f"(sigma2={state.sigma2:.4g}, eta2={state.eta2:.4g})")
    rate = counter.check(f"chain {chain} repulsed-normal")
    logger.info(f"Completed chain {chain}: kept {len(kept)} draws, D acceptance rate {rate:.3f}")

    return PosteriorSamples(
        states=kept,
        x_samples=np.stack([s.reconstruct() for s in kept]),
        chain_ids=np.full(len(kept), chain, dtype=np.int64),
        u_frames=[s.U for s in kept],
        v_frames=[s.V for s in kept],
        acceptance_rates=[rate],
        meta={"rank": state.rank, "method": "bayesmg", "burn_in": cfg.burn, "thin": cfg.thin},
    )


def run_chain(obs: ObservationSet, hyper: Hyperparams, cfg: GibbsConfig,
              solver: SolverConfig) -> PosteriorSamples:
    """All cfg.n_chains chains, merged in chain order."""
    return PosteriorSamples.merge([run_single_chain(obs, hyper, cfg, solver, chain=c)
                                   for c in range(cfg.n_chains)])

