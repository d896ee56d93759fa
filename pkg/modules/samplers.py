"""
Random-variate generators: matrix von Mises-Fisher on the Stiefel manifold,
the repulsed normal law of singular values, and the inverse gamma.

The matrix vMF sampler draws one column at a time from a vector vMF on the
null space of the columns already drawn, then corrects with a single
accept/reject step (Hoff, 2009).  Vector vMF draws use Wood's (1994)
rejection scheme for the cosine to the mean direction.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Tuple

import numpy as np
from scipy.linalg import null_space
from scipy.special import ive

from modules.errors import DimensionMismatchError, InputDomainError, SamplerError
from modules.linalg import Frame, check_finite

logger = logging.getLogger(__name__)

DEFAULT_MAX_PROPOSALS = 10**6
DEFAULT_T_DF = 4.0
ACCEPTANCE_FLAG_RANGE = (0.05, 0.95)
_SEED_MASK = (1 << 64) - 1


class RngStream:
    """Seeded random stream; identical seeds give identical draw sequences."""

    def __init__(self, seed: int = 0):
        self.seed = int(seed) & _SEED_MASK
        self.generator = np.random.Generator(np.random.PCG64(self.seed))

    def derive(self, offset: int) -> "RngStream":
        """Independent stream for a chain or replication (seed + offset)."""
        return RngStream(self.seed + int(offset))

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed})"


@dataclass(frozen=True, eq=False)
class VmfParams:
    F: np.ndarray

    def __post_init__(self):
        F = check_finite(self.F, "concentration matrix")
        if F.ndim == 1:
            F = F[:, None]
        m, r = F.shape
        if not 1 <= r < m:
            raise DimensionMismatchError(f"vMF rank R={r} must satisfy 1 <= R < m={m}")
        object.__setattr__(self, "F", F)

    @property
    def m(self) -> int:
        return self.F.shape[0]

    @property
    def rank(self) -> int:
        return self.F.shape[1]


@dataclass(frozen=True, eq=False)
class RepulsedNormalParams:
    mu: np.ndarray
    delta2: float

    def __post_init__(self):
        mu = np.atleast_1d(check_finite(self.mu, "location"))
        if not (np.isfinite(self.delta2) and self.delta2 > 0):
            raise InputDomainError(f"delta2 must be positive, got {self.delta2}")
        object.__setattr__(self, "mu", mu)

    @property
    def rank(self) -> int:
        return self.mu.shape[0]


class MHResult(NamedTuple):
    value: np.ndarray
    accepted: int
    proposed: int


@dataclass
class AcceptanceCounter:
    accepted: int = 0
    proposed: int = 0
    flagged: bool = field(default=False, init=False)

    def add(self, result: MHResult):
        self.accepted += result.accepted
        self.proposed += result.proposed

    @property
    def rate(self) -> float:
        return self.accepted / self.proposed if self.proposed else float("nan")

    def check(self, label: str = "repulsed-normal") -> float:
        """Log (do not fail) when the acceptance rate leaves the healthy range."""
        rate = self.rate
        lo, hi = ACCEPTANCE_FLAG_RANGE
        if self.proposed and not lo <= rate <= hi:
            self.flagged = True
            logger.warning(f"{label} MH acceptance rate {rate:.3f} outside [{lo}, {hi}]")
        return rate


# ---------------------------------------------------------------------------
# von Mises-Fisher
# ---------------------------------------------------------------------------

def vmf_log_kernel(W: Frame, p: VmfParams) -> float:
    """tr(F^T W); the 0F1 normaliser is left out (it cancels wherever this is used)."""
    if W.columns.shape != p.F.shape:
        raise DimensionMismatchError(f"frame shape {W.columns.shape} != concentration shape {p.F.shape}")
    return float(np.sum(p.F * W.columns))


def _wood_cosine(kappa: float, dim: int, gen: np.random.Generator, max_proposals: int) -> Tuple[float, float]:
    """Cosine w = mu^T x of a vMF draw on S^{dim-1}.

    Returns (w, 1 - w); every quantity is written in terms of b so that very
    large concentrations stay finite.
    """
    d1 = dim - 1
    b = d1 / (math.hypot(2.0 * kappa, d1) + 2.0 * kappa)
    for _ in range(max_proposals):
        z = gen.beta(d1 / 2.0, d1 / 2.0)
        u = gen.uniform()
        den = 1.0 - (1.0 - b) * z
        one_minus_w = 2.0 * b * z / den
        w = 1.0 - one_minus_w
        # kappa*(w - x0) + d1*[log(1 - x0 w) - log(1 - x0^2)], x0 = (1-b)/(1+b)
        log_ratio = (kappa * 2.0 * b * (1.0 - 2.0 * z) / ((1.0 + b) * den)
                     + d1 * (-math.log(2.0) - math.log((1.0 + b) * den) + 2.0 * math.log1p(b)))
        if u == 0.0 or log_ratio >= math.log(u):
            return w, one_minus_w
    raise SamplerError(f"vMF cosine rejection exceeded {max_proposals} proposals (kappa={kappa:.3e})")


def sample_vector_vmf(kmu: np.ndarray, gen: np.random.Generator,
                      max_proposals: int = DEFAULT_MAX_PROPOSALS) -> np.ndarray:
    """Unit vector from vMF(kmu): mean direction kmu/|kmu|, concentration |kmu|."""
    kmu = np.asarray(kmu, dtype=np.float64).ravel()
    m = kmu.shape[0]
    kappa = float(np.linalg.norm(kmu))
    if kappa == 0.0:
        x = gen.standard_normal(m)
        return x / np.linalg.norm(x)
    mu = kmu / kappa
    if m == 1:
        # two-point law on {-1, +1}
        p_minus = 1.0 / (1.0 + math.exp(min(2.0 * kappa * mu[0], 700.0)))
        return np.array([-1.0 if gen.uniform() < p_minus else 1.0])
    w, one_minus_w = _wood_cosine(kappa, m, gen, max_proposals)
    v = gen.standard_normal(m - 1)
    v /= np.linalg.norm(v)
    sin = math.sqrt(max(one_minus_w * (1.0 + w), 0.0))
    tangent = null_space(mu[None, :])
    return tangent @ (sin * v) + w * mu


def sample_matrix_vmf(p: VmfParams, rng: RngStream,
                      max_proposals: int = DEFAULT_MAX_PROPOSALS) -> Frame:
    """Frame distributed as MF(m, R, F); F = 0 gives the uniform law on the Stiefel manifold."""
    gen = rng.generator
    m, R = p.F.shape
    if R == 1:
        return Frame(sample_vector_vmf(p.F[:, 0], gen, max_proposals)[:, None])

    left, d, right_t = np.linalg.svd(p.F, full_matrices=False)
    H = left * d
    for _ in range(max_proposals):
        W = np.zeros((m, R))
        W[:, 0] = sample_vector_vmf(H[:, 0], gen, max_proposals)
        log_ratio = 0.0
        for j in range(1, R):
            N = null_space(W[:, :j].T)
            h_null = N.T @ H[:, j]
            W[:, j] = N @ sample_vector_vmf(h_null, gen, max_proposals)
            if d[j] > 0:
                nu = 0.5 * (m - j - 2)
                xn = float(np.linalg.norm(h_null))
                xd = float(np.linalg.norm(H[:, j]))
                with np.errstate(divide="ignore", invalid="ignore"):
                    lbr = float(np.log(ive(nu, xn)) - np.log(ive(nu, xd)))
                if not math.isfinite(lbr):
                    lbr = 0.5 * (math.log(xd) - math.log(max(xn, 1e-300)))
                log_ratio += lbr + (xn - xd) + nu * (math.log(xd) - math.log(max(xn, 1e-300)))
        if math.log1p(-gen.uniform()) < log_ratio:
            return Frame(_reorthonormalize(W @ right_t))
    raise SamplerError(f"matrix vMF rejection exceeded {max_proposals} proposals")


def _reorthonormalize(W: np.ndarray) -> np.ndarray:
    # one Newton-Schulz step keeps the frame within tolerance after rotation
    return W @ (1.5 * np.eye(W.shape[1]) - 0.5 * (W.T @ W))


# ---------------------------------------------------------------------------
# repulsed normal
# ---------------------------------------------------------------------------

def repulsed_normal_log_density_unnorm(d: np.ndarray, p: RepulsedNormalParams) -> float:
    """-(1/2 delta2) sum (d_k - mu_k)^2 + sum_{k<l} log|d_k^2 - d_l^2|; Z_R is never computed."""
    d = np.atleast_1d(np.asarray(d, dtype=np.float64))
    if d.shape != p.mu.shape:
        raise DimensionMismatchError(f"d has shape {d.shape}, location has {p.mu.shape}")
    if np.any(~np.isfinite(d)) or np.any(d <= 0):
        raise InputDomainError("repulsed normal support is d_k > 0")
    gauss = -0.5 * float(np.sum((d - p.mu) ** 2)) / p.delta2
    if d.shape[0] == 1:
        return gauss
    sq = d ** 2
    diffs = np.abs(sq[:, None] - sq[None, :])[np.triu_indices(d.shape[0], k=1)]
    if np.any(diffs == 0):
        return -math.inf
    return gauss + float(np.sum(np.log(diffs)))


def _t_log_kernel(x: np.ndarray, mu: np.ndarray, delta2: float, df: float) -> float:
    return -0.5 * (df + x.shape[0]) * math.log1p(float(np.sum((x - mu) ** 2)) / (df * delta2))


def sample_repulsed_normal(p: RepulsedNormalParams, rng: RngStream,
                           current: Optional[np.ndarray] = None,
                           n_steps: int = 1, df: float = DEFAULT_T_DF) -> MHResult:
    """Independence Metropolis-Hastings transitions targeting the repulsed normal.

    Proposals come from a multivariate t centred at mu with scale delta*I;
    any proposal with a non-positive coordinate is rejected outright.
    """
    gen = rng.generator
    R = p.rank
    delta = math.sqrt(p.delta2)
    if current is None:
        current = np.maximum(p.mu, delta)
    x = np.array(current, dtype=np.float64)
    log_target = repulsed_normal_log_density_unnorm(x, p) if np.all(x > 0) else -math.inf
    log_prop = _t_log_kernel(x, p.mu, p.delta2, df)
    accepted = 0
    for _ in range(n_steps):
        y = p.mu + delta * gen.standard_normal(R) / math.sqrt(gen.chisquare(df) / df)
        if np.any(y <= 0):
            continue
        log_target_y = repulsed_normal_log_density_unnorm(y, p)
        if log_target_y == -math.inf:
            continue
        log_prop_y = _t_log_kernel(y, p.mu, p.delta2, df)
        log_alpha = (log_target_y - log_target) - (log_prop_y - log_prop)
        if log_target == -math.inf or math.log1p(-gen.uniform()) < log_alpha:
            x, log_target, log_prop = y, log_target_y, log_prop_y
            accepted += 1
    return MHResult(x, accepted, n_steps)


# ---------------------------------------------------------------------------
# inverse gamma
# ---------------------------------------------------------------------------

def sample_inverse_gamma(alpha: float, beta: float, rng: RngStream) -> float:
    """Draw from IG(alpha, beta) with shape alpha and rate beta."""
    if not (alpha > 0 and beta > 0 and math.isfinite(alpha) and math.isfinite(beta)):
        raise InputDomainError(f"inverse gamma needs alpha, beta > 0, got ({alpha}, {beta})")
    g = rng.generator.gamma(shape=alpha, scale=1.0 / beta)
    # very small shapes can underflow the gamma draw to zero
    return 1.0 / max(g, np.finfo(np.float64).tiny)
