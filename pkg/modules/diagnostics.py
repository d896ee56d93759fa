"""
Posterior summaries and recovery metrics: MFE, spectral distance / MSD,
empirical HPD intervals, coverage, Gelman-Rubin and trace tables.
"""
import logging
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from modules.errors import DimensionMismatchError, InputDomainError, TooFewSamplesError
from modules.gibbs import PosteriorSamples
from modules.linalg import Frame, check_finite, index_arrays, svd

logger = logging.getLogger(__name__)

MIN_HPD_SAMPLES = 20
MIN_GR_LENGTH = 10
SCALAR_SUMMARIES = ("sigma2", "eta2", "mu1")


@dataclass(frozen=True, eq=False)
class IntervalSet:
    lower: np.ndarray
    upper: np.ndarray
    level: float

    def __post_init__(self):
        lower = check_finite(self.lower, "lower bounds")
        upper = check_finite(self.upper, "upper bounds")
        if lower.shape != upper.shape:
            raise DimensionMismatchError(f"bound shapes differ: {lower.shape} vs {upper.shape}")
        if np.any(lower > upper):
            raise InputDomainError("lower bound exceeds upper bound")
        if not 0 < self.level < 1:
            raise InputDomainError(f"level must lie in (0, 1), got {self.level}")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)


@dataclass
class MetricReport:
    mfe: Optional[float] = None
    msd_row: Optional[float] = None
    msd_col: Optional[float] = None
    coverage: Optional[float] = None
    mean_hpd_width: Optional[float] = None
    gelman_rubin: Dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> "OrderedDict":
        return OrderedDict([
            ("mfe", self.mfe),
            ("msd_row", self.msd_row),
            ("msd_col", self.msd_col),
            ("coverage", self.coverage),
            ("mean_hpd_width", self.mean_hpd_width),
            ("gelman_rubin", OrderedDict(self.gelman_rubin)),
        ])


def _check_truth(samples: PosteriorSamples, truth: np.ndarray) -> np.ndarray:
    truth = check_finite(truth, "truth")
    if truth.shape != samples.shape:
        raise DimensionMismatchError(f"truth has shape {truth.shape}, samples are {samples.shape}")
    if samples.n_samples < 1:
        raise TooFewSamplesError("no retained samples")
    return truth


def mfe(samples: PosteriorSamples, truth: np.ndarray) -> float:
    """Mean Frobenius distance of the sampled matrices to the truth."""
    truth = _check_truth(samples, truth)
    return float(np.mean(np.linalg.norm(samples.x_samples - truth, axis=(1, 2))))


def spectral_distance(A: Frame, B: Frame) -> float:
    """sqrt(1 - ||A^T B||_2^2), clipped to [0, 1]."""
    if A.columns.shape != B.columns.shape:
        raise DimensionMismatchError(f"frames differ in shape: {A.columns.shape} vs {B.columns.shape}")
    top = np.linalg.norm(A.columns.T @ B.columns, 2)
    return float(math.sqrt(min(max(1.0 - top * top, 0.0), 1.0)))


def msd(frame_samples: Sequence[Frame], truth: Frame) -> float:
    if len(frame_samples) == 0:
        raise TooFewSamplesError("no frame samples")
    return float(np.mean([spectral_distance(F, truth) for F in frame_samples]))


def hpd_intervals(samples: PosteriorSamples, level: float = 0.95) -> IntervalSet:
    """Entrywise shortest window covering ceil(level * T) sorted draws (first one on ties)."""
    return hpd_from_draws(samples.x_samples, level)


def hpd_from_draws(draws: np.ndarray, level: float = 0.95) -> IntervalSet:
    draws = np.asarray(draws, dtype=np.float64)
    if not 0 < level < 1:
        raise InputDomainError(f"level must lie in (0, 1), got {level}")
    T = draws.shape[0]
    if T < MIN_HPD_SAMPLES:
        raise TooFewSamplesError(f"HPD intervals need at least {MIN_HPD_SAMPLES} samples, got {T}")
    k = max(int(math.ceil(level * T - 1e-9)), 1)
    ordered = np.sort(draws, axis=0)
    widths = ordered[k - 1:] - ordered[:T - k + 1]
    start = np.argmin(widths, axis=0)[None]
    lower = np.take_along_axis(ordered, start, axis=0)[0]
    upper = np.take_along_axis(ordered, start + k - 1, axis=0)[0]
    return IntervalSet(lower, upper, level)


def coverage_ratio(intervals: IntervalSet, truth: np.ndarray, restrict: Optional[Sequence] = None) -> float:
    """Fraction of (restricted) entries whose true value lies in its interval.

    restrict is a boolean mask of the grid or a sequence of (i, j) entries.
    """
    truth = check_finite(truth, "truth")
    if truth.shape != intervals.lower.shape:
        raise DimensionMismatchError(f"truth has shape {truth.shape}, intervals {intervals.lower.shape}")
    hit = (intervals.lower <= truth) & (truth <= intervals.upper)
    if restrict is None:
        return float(hit.mean())
    restrict_arr = np.asarray(restrict)
    if restrict_arr.dtype == bool:
        if restrict_arr.shape != truth.shape:
            raise DimensionMismatchError("restriction mask shape does not match the grid")
        selected = hit[restrict_arr]
    else:
        rows, cols = index_arrays(list(restrict), *truth.shape)
        selected = hit[rows, cols]
    if selected.size == 0:
        raise InputDomainError("restriction selects no entries")
    return float(selected.mean())


def gelman_rubin(chains: Sequence[Sequence[float]]) -> float:
    """Potential scale reduction sqrt(((n-1)/n W + B/n) / W) of one scalar summary."""
    if len(chains) < 2:
        raise TooFewSamplesError(f"Gelman-Rubin needs at least 2 chains, got {len(chains)}")
    lengths = {len(c) for c in chains}
    if len(lengths) != 1:
        raise DimensionMismatchError(f"chains have unequal lengths {sorted(lengths)}")
    n = lengths.pop()
    if n < MIN_GR_LENGTH:
        raise TooFewSamplesError(f"chains must have length >= {MIN_GR_LENGTH}, got {n}")
    X = np.asarray(chains, dtype=np.float64)
    B = n * np.var(X.mean(axis=1), ddof=1)
    W = np.mean(np.var(X, axis=1, ddof=1))
    if W == 0:
        logger.warning("Gelman-Rubin undefined: zero within-chain variance")
        return float("nan")
    return float(math.sqrt(((n - 1) / n * W + B / n) / W))


def _summary_column(samples: PosteriorSamples, name: str, positions: np.ndarray) -> np.ndarray:
    if name == "mu1":
        return np.array([float(np.sum(samples.u_frames[p].columns[0] ** 2)) for p in positions])
    return np.array([float(getattr(samples.states[p], name, float("nan"))) for p in positions])


def trace_table(samples: PosteriorSamples, entries: Sequence = (), chain: int = 0) -> Tuple[List[str], np.ndarray]:
    """Header and rows (iter, sigma2, eta2, mu1, x_<i>_<j>...) for one chain's retained draws."""
    positions = samples.by_chain(chain)
    rows_idx, cols_idx = index_arrays(list(entries), *samples.shape)
    burn = int(samples.meta.get("burn_in", 0))
    thin = int(samples.meta.get("thin", 1))
    header = ["iter"] + list(SCALAR_SUMMARIES) + [f"x_{i}_{j}" for i, j in zip(rows_idx, cols_idx)]
    columns = [burn + thin * np.arange(positions.shape[0]) + 1]
    columns += [_summary_column(samples, name, positions) for name in SCALAR_SUMMARIES]
    columns += [samples.x_samples[positions, i, j] for i, j in zip(rows_idx, cols_idx)]
    return header, np.column_stack(columns)


def gelman_rubin_table(samples: PosteriorSamples, entries: Sequence = ()) -> Dict[str, float]:
    """Gelman-Rubin per registered scalar summary; empty for a single chain."""
    chains = sorted(set(samples.chain_ids.tolist()))
    if len(chains) < 2:
        return {}
    tables = [trace_table(samples, entries, c) for c in chains]
    header = tables[0][0]
    out = {}
    for col, name in enumerate(header[1:], start=1):
        traces = [t[1][:, col] for t in tables]
        if any(np.any(~np.isfinite(t)) for t in traces):
            continue
        out[name] = gelman_rubin(traces)
    return out


def build_report(samples: PosteriorSamples, truth: Optional[np.ndarray] = None, level: float = 0.95,
                 restrict: Optional[Sequence] = None, entries: Sequence = (),
                 truth_frames: Optional[Tuple[Frame, Frame]] = None) -> MetricReport:
    """MetricReport for a run; truth-dependent fields stay None without a truth matrix."""
    report = MetricReport()
    intervals = hpd_intervals(samples, level) if samples.n_samples >= MIN_HPD_SAMPLES else None
    if intervals is not None:
        report.mean_hpd_width = float(intervals.width.mean())
    report.gelman_rubin = gelman_rubin_table(samples, entries)
    if truth is None:
        return report

    truth = _check_truth(samples, truth)
    report.mfe = mfe(samples, truth)
    rank = samples.u_frames[0].rank
    if truth_frames is None and np.linalg.norm(truth) > 0:
        U_true, _, V_true = svd(truth, rank=rank)
        truth_frames = (U_true, V_true)
    if truth_frames is not None and truth_frames[0].rank == rank:
        report.msd_row = msd(samples.u_frames, truth_frames[0])
        report.msd_col = msd(samples.v_frames, truth_frames[1])
    if intervals is not None:
        report.coverage = coverage_ratio(intervals, truth, restrict)
    return report
