"""
Observation-mask generators: MCAR, fixed-count uniform, intensity-band MNAR
and explicit index lists, followed by Gaussian observation noise.
"""
import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from modules.errors import MaskError
from modules.linalg import check_finite, index_arrays
from modules.samplers import RngStream
from modules.smg_model import ObservationSet

logger = logging.getLogger(__name__)

MASK_MODES = ("mcar", "count", "mnar_intensity", "explicit")


@dataclass(frozen=True)
class MaskSpec:
    """How entries are chosen for observation.

    mnar_intensity: band k holds values between the (k-1)-th and k-th population
    quantile of the true matrix; values exactly at a quantile use at_threshold.
    """

    mode: str = "mcar"
    p: Optional[float] = None
    n_obs: Optional[int] = None
    quantiles: Tuple[float, ...] = (0.5,)
    probabilities: Tuple[float, ...] = (0.10, 0.40)
    at_threshold: Optional[Tuple[float, ...]] = (0.25,)
    indices: Optional[Tuple[Tuple[int, int], ...]] = None

    def __post_init__(self):
        if self.mode not in MASK_MODES:
            raise MaskError(f"unknown mask mode {self.mode!r}; expected one of {MASK_MODES}")
        if self.mode == "mcar" and not (self.p is not None and 0 <= self.p <= 1):
            raise MaskError(f"mcar probability must lie in [0, 1], got {self.p}")
        if self.mode == "count" and not (self.n_obs is not None and self.n_obs >= 1):
            raise MaskError(f"count mode needs n_obs >= 1, got {self.n_obs}")
        if self.mode == "mnar_intensity":
            q = tuple(float(x) for x in self.quantiles)
            if not q or any(not 0 < x < 1 for x in q) or any(b <= a for a, b in zip(q, q[1:])):
                raise MaskError("mnar quantiles must be strictly increasing inside (0, 1)")
            if len(self.probabilities) != len(q) + 1:
                raise MaskError(f"{len(q)} quantiles need {len(q) + 1} band probabilities")
            ties = self.at_threshold if self.at_threshold is not None else ()
            if self.at_threshold is not None and len(ties) != len(q):
                raise MaskError(f"{len(q)} quantiles need {len(q)} at-threshold probabilities")
            if any(not 0 <= x <= 1 for x in tuple(self.probabilities) + tuple(ties)):
                raise MaskError("mask probabilities must lie in [0, 1]")
        if self.mode == "explicit" and not self.indices:
            raise MaskError("explicit mask needs a non-empty index list")

    @classmethod
    def mcar(cls, p: float) -> "MaskSpec":
        return cls(mode="mcar", p=p)

    @classmethod
    def count(cls, n_obs: int) -> "MaskSpec":
        return cls(mode="count", n_obs=n_obs)

    @classmethod
    def mnar_intensity(cls, quantiles=(0.5,), probabilities=(0.10, 0.40), at_threshold=(0.25,)) -> "MaskSpec":
        return cls(mode="mnar_intensity", quantiles=tuple(quantiles), probabilities=tuple(probabilities),
                   at_threshold=None if at_threshold is None else tuple(at_threshold))

    @classmethod
    def explicit(cls, indices: Sequence[Tuple[int, int]]) -> "MaskSpec":
        return cls(mode="explicit", indices=tuple((int(i), int(j)) for i, j in indices))


def observation_probabilities(X: np.ndarray, spec: MaskSpec) -> np.ndarray:
    """Per-entry inclusion probability for the random modes."""
    if spec.mode == "mcar":
        return np.full(X.shape, float(spec.p))
    if spec.mode != "mnar_intensity":
        raise MaskError(f"mode {spec.mode!r} has no per-entry probabilities")
    cuts = np.quantile(X, spec.quantiles)
    band = np.searchsorted(cuts, X, side="left")
    probs = np.asarray(spec.probabilities, dtype=np.float64)[band]
    if spec.at_threshold is not None:
        for k, cut in enumerate(cuts):
            probs[X == cut] = spec.at_threshold[k]
    return probs


def select_mask(X: np.ndarray, spec: MaskSpec, rng: RngStream) -> np.ndarray:
    gen = rng.generator
    if spec.mode == "explicit":
        rows, cols = index_arrays(spec.indices, *X.shape)
        mask = np.zeros(X.shape, dtype=bool)
        mask[rows, cols] = True
        if np.count_nonzero(mask) != len(spec.indices):
            raise MaskError("explicit mask lists an entry more than once")
        return mask
    if spec.mode == "count":
        if spec.n_obs > X.size:
            raise MaskError(f"cannot observe {spec.n_obs} of {X.size} entries")
        chosen = gen.choice(X.size, size=spec.n_obs, replace=False)
        mask = np.zeros(X.size, dtype=bool)
        mask[chosen] = True
        # linear positions follow the column-stacking convention
        return mask.reshape(X.shape[1], X.shape[0]).T
    return gen.uniform(size=X.shape) < observation_probabilities(X, spec)


def apply_mask(X: np.ndarray, spec: MaskSpec, eta: float, rng: RngStream) -> ObservationSet:
    """Select entries per spec and add i.i.d. N(0, eta^2) noise to them."""
    X = check_finite(X, "matrix")
    if X.ndim != 2:
        raise MaskError(f"mask needs a 2-D matrix, got shape {X.shape}")
    if eta < 0:
        raise MaskError(f"noise standard deviation must be non-negative, got {eta}")
    mask = select_mask(X, spec, rng)
    if not mask.any():
        raise MaskError(f"{spec.mode} mask selected no entries")
    noisy = X + eta * rng.generator.standard_normal(X.shape)
    obs = ObservationSet.from_mask(noisy, mask)
    logger.info(f"Masked {obs.n}/{X.size} entries ({obs.n / X.size:.1%}, mode={spec.mode})")
    return obs
