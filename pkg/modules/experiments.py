"""
Simulation recipes and the named desk-scale experiments run by `replicate`.

Each experiment exposes one function computing a single replication; it takes
plain JSON-compatible parameters and returns a list of JSON rows so the same
call can run in-process or as a Celery task.
"""
import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional

import numpy as np
from scipy.stats import norm

from modules.bpmf import BpmfHyper, run_bpmf
from modules.diagnostics import IntervalSet, coverage_ratio, hpd_intervals, mfe, msd
from modules.errors import ConfigError, InputDomainError
from modules.gibbs import GibbsConfig, Hyperparams, run_chain
from modules.linalg import Frame, svd
from modules.map_init import SolverConfig, cv_select_lambda, estimate_rank, soft_impute
from modules.masking import MaskSpec, apply_mask, observation_probabilities
from modules.samplers import RngStream
from modules.smg_model import ObservationSet, SmgParams, all_grid_indices, conditional_predictive, smg_sample

logger = logging.getLogger(__name__)

FRAME_RECIPES = ("uniform", "uniform-svd")


def uniform_frame(m: int, rank: int, rng: RngStream) -> Frame:
    """Haar-distributed frame: QR of a Gaussian matrix with a sign fix."""
    return Frame.orthonormalize(rng.generator.standard_normal((m, rank)))


def uniform_svd_frame(m: int, rank: int, rng: RngStream) -> Frame:
    """Leading left singular vectors of an m x m matrix with i.i.d. U[0, 1] entries.

    Not uniform on the Stiefel manifold: the all-ones direction dominates.
    """
    U, _, _ = svd(rng.generator.uniform(size=(m, m)), rank=rank)
    return U


@dataclass(frozen=True, eq=False)
class SimulatedProblem:
    truth: np.ndarray
    params: SmgParams
    obs: ObservationSet
    eta: float


def simulate_problem(m1: int, m2: int, rank: int, sigma2: float, eta: float, mask: MaskSpec,
                     rng: RngStream, frames: str = "uniform") -> SimulatedProblem:
    """Frames, an SMG truth, a mask and noisy observations, all from one stream."""
    if frames not in FRAME_RECIPES:
        raise ConfigError(f"unknown frame recipe {frames!r}; expected one of {FRAME_RECIPES}")
    make = uniform_frame if frames == "uniform" else uniform_svd_frame
    U, V = make(m1, rank, rng), make(m2, rank, rng)
    params = SmgParams(U, V, sigma2)
    truth = smg_sample(params, rng)
    obs = apply_mask(truth, mask, eta, rng)
    return SimulatedProblem(truth, params, obs, eta)


def plugin_interval_baseline(obs: ObservationSet, eta2: float, level: float = 0.95,
                             rank: Optional[int] = None, solver: Optional[SolverConfig] = None,
                             rng: Optional[RngStream] = None) -> IntervalSet:
    """Gaussian intervals from the fixed-subspace predictive at point-estimated subspaces.

    sigma2 is plugged in as ||X_hat||_F^2 / R^2, the moment estimate under the SMG model.
    """
    if obs.n == 0:
        raise InputDomainError("plug-in baseline needs at least one observation")
    solver = solver or SolverConfig()
    lam = solver.lam
    if lam is None:
        lam = cv_select_lambda(obs, solver, rng or RngStream(0))
    X_hat = soft_impute(obs, solver, lam=lam)
    R = rank or estimate_rank(X_hat, solver.rank_tol)
    U, _, V = svd(X_hat, rank=R)
    sigma2 = float(np.sum(X_hat ** 2)) / R ** 2 or 1.0
    pred = conditional_predictive(obs, SmgParams(U, V, sigma2), eta2, all_grid_indices(*obs.shape))
    z = norm.ppf(0.5 + level / 2.0)
    half = z * np.sqrt(pred.variances)
    # targets are listed in column-stacking order
    shape = (obs.m2, obs.m1)
    return IntervalSet((pred.mean - half).reshape(shape).T, (pred.mean + half).reshape(shape).T, level)


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------

def _gibbs(params: Dict, seed: int, eta2: Optional[float]) -> GibbsConfig:
    mode = "fixed" if eta2 is not None else "sampled"
    return GibbsConfig(total_iters=int(params["iters"]), burn_in=params.get("burn_in"), eta2_mode=mode,
                       eta2_value=eta2, seed=seed, mh_steps=int(params.get("mh_steps", 5)))


def prior_hyperparams(params: Dict, rank: int) -> Hyperparams:
    """Default weak priors, or an IG(a, (a - 1) * sigma2) signal prior centred on the simulated sigma2."""
    shape = params.get("sigma2_prior_shape")
    if shape is None:
        return Hyperparams(rank=rank)
    if not shape > 1:
        raise ConfigError(f"sigma2_prior_shape must exceed 1, got {shape}")
    return Hyperparams(rank=rank, alpha_sigma2=float(shape), beta_sigma2=(shape - 1.0) * float(params["sigma2"]))


def coverage_replication(rep: int, seed: int, params: Dict) -> List[Dict]:
    """Posterior-interval vs plug-in coverage of the unobserved truth."""
    rng = RngStream(seed)
    m, R, eta = params["m"], params["rank"], params["eta"]
    prob = simulate_problem(m, m, R, params["sigma2"], eta, MaskSpec.count(params["n_obs"]), rng,
                            frames=params["frames"])
    hidden = ~prob.obs.mask()
    eta2 = eta ** 2
    samples = run_chain(prob.obs, prior_hyperparams(params, R), _gibbs(params, seed, eta2), SolverConfig())
    bayes = coverage_ratio(hpd_intervals(samples, params["level"]), prob.truth, hidden)
    plugin = coverage_ratio(plugin_interval_baseline(prob.obs, eta2, params["level"], rank=R, rng=rng),
                            prob.truth, hidden)
    return [{"rep": rep, "seed": seed, "coverage_bayesmg": bayes, "coverage_plugin": plugin}]


def synthetic_replication(rep: int, seed: int, params: Dict) -> List[Dict]:
    """Paired BayeSMG vs BPMF recovery on one planted problem."""
    rng = RngStream(seed)
    m, R, eta = params["m"], params["rank"], params["eta"]
    prob = simulate_problem(m, m, R, params["sigma2"], eta, MaskSpec.mcar(params["p_obs"]), rng)
    cfg = _gibbs(params, seed, eta ** 2)
    row = {"rep": rep, "seed": seed}
    for name, samples in (("bayesmg", run_chain(prob.obs, prior_hyperparams(params, R), cfg, SolverConfig())),
                          ("bpmf", run_bpmf(prob.obs, BpmfHyper(rank=R), cfg))):
        row[f"mfe_{name}"] = mfe(samples, prob.truth)
        row[f"msd_row_{name}"] = msd(samples.u_frames, prob.params.U)
        row[f"hpd_width_{name}"] = float(hpd_intervals(samples, params["level"]).width.mean())
    return [row]


def noise_replication(rep: int, seed: int, params: Dict) -> List[Dict]:
    """MFE across noise levels on one planted matrix and one mask."""
    rng = RngStream(seed)
    m, R = params["m"], params["rank"]
    U, V = uniform_frame(m, R, rng), uniform_frame(m, R, rng)
    truth = smg_sample(SmgParams(U, V, params["sigma2"]), rng)
    rows = []
    for k, eta in enumerate(params["etas"]):
        obs = apply_mask(truth, MaskSpec.mcar(params["p_obs"]), eta, RngStream(seed).derive(k + 1))
        samples = run_chain(obs, prior_hyperparams(params, R), _gibbs(params, seed, None), SolverConfig())
        eta_hat = float(np.mean([np.sqrt(s.eta2) for s in samples.states]))
        rows.append({"rep": rep, "seed": seed, "eta": eta, "mfe": mfe(samples, truth), "eta_hat": eta_hat})
    return rows


def mnar_replication(rep: int, seed: int, params: Dict) -> List[Dict]:
    """Intensity-band MNAR vs MCAR at the MNAR mask's expected observed fraction."""
    rng = RngStream(seed)
    m, R, eta = params["m"], params["rank"], params["eta"]
    U, V = uniform_frame(m, R, rng), uniform_frame(m, R, rng)
    truth = smg_sample(SmgParams(U, V, params["sigma2"]), rng)
    mnar = MaskSpec.mnar_intensity(params["quantiles"], params["probabilities"], params["at_threshold"])
    p_match = float(observation_probabilities(truth, mnar).mean())
    cfg = _gibbs(params, seed, eta ** 2)
    row = {"rep": rep, "seed": seed, "p_match": p_match}
    for k, (name, spec) in enumerate((("mnar", mnar), ("mcar", MaskSpec.mcar(p_match)))):
        obs = apply_mask(truth, spec, eta, RngStream(seed).derive(k + 1))
        samples = run_chain(obs, prior_hyperparams(params, R), cfg, SolverConfig())
        row[f"observed_{name}"] = obs.n / truth.size
        row[f"mfe_{name}"] = mfe(samples, truth)
    return [row]


EXPERIMENTS: Dict[str, Callable[[int, int, Dict], List[Dict]]] = {
    "coverage-8x8": coverage_replication,
    "synthetic-24": synthetic_replication,
    "noise-sweep": noise_replication,
    "mnar-robustness": mnar_replication,
}

EXPERIMENT_DEFAULTS: Dict[str, Dict] = {
    "coverage-8x8": {"reps": 50, "m": 8, "rank": 2, "sigma2": 1.0, "eta": 0.5, "n_obs": 36,
                     "frames": "uniform-svd", "sigma2_prior_shape": 50.0, "iters": 10000, "burn_in": 2000,
                     "level": 0.95},
    "synthetic-24": {"reps": 10, "m": 24, "rank": 2, "sigma2": 1.0, "eta": 0.05, "p_obs": 0.2,
                     "iters": 10000, "burn_in": 2000, "level": 0.95},
    "noise-sweep": {"reps": 5, "m": 32, "rank": 2, "sigma2": 1.0, "etas": [0.05, 0.1, 0.3, 0.5],
                    "p_obs": 0.5, "iters": 2000, "burn_in": 400},
    "mnar-robustness": {"reps": 5, "m": 32, "rank": 2, "sigma2": 1.0, "eta": 0.05, "quantiles": [0.5],
                        "probabilities": [0.10, 0.40], "at_threshold": [0.25], "iters": 2000, "burn_in": 400},
}


def experiment_params(name: str, overrides: Optional[Dict] = None) -> Dict:
    if name not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {name!r}; expected one of {sorted(EXPERIMENTS)}")
    params = dict(EXPERIMENT_DEFAULTS[name])
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in params:
            raise ConfigError(f"experiment {name} has no parameter '{key}'")
        params[key] = value
    return params


def replication_seed(seed: int, rep: int) -> int:
    return int(seed) ^ int(rep)


def run_replication(name: str, rep: int, seed: int, params: Dict) -> List[Dict]:
    rep_seed = replication_seed(seed, rep)
    logger.info(f"Starting {name} replication {rep} (seed {rep_seed})")
    rows = EXPERIMENTS[name](rep, rep_seed, params)
    logger.info(f"Completed {name} replication {rep}")
    return rows


def summarize(name: str, rows: List[Dict]) -> Dict:
    """Experiment-level summary printed by `replicate` and stored in its report."""
    if not rows:
        return {"experiment": name, "reps": 0}
    summary = {"experiment": name, "reps": len({r["rep"] for r in rows})}
    if name == "coverage-8x8":
        summary["mean_coverage_bayesmg"] = float(np.mean([r["coverage_bayesmg"] for r in rows]))
        summary["mean_coverage_plugin"] = float(np.mean([r["coverage_plugin"] for r in rows]))
    elif name == "synthetic-24":
        summary["mfe_wins_bayesmg"] = int(sum(r["mfe_bayesmg"] < r["mfe_bpmf"] for r in rows))
        summary["msd_wins_bayesmg"] = int(sum(r["msd_row_bayesmg"] < r["msd_row_bpmf"] for r in rows))
        summary["mean_hpd_width_bayesmg"] = float(np.mean([r["hpd_width_bayesmg"] for r in rows]))
        summary["mean_hpd_width_bpmf"] = float(np.mean([r["hpd_width_bpmf"] for r in rows]))
    elif name == "noise-sweep":
        etas = sorted({r["eta"] for r in rows})
        means = [float(np.mean([r["mfe"] for r in rows if r["eta"] == e])) for e in etas]
        summary["etas"] = etas
        summary["mean_mfe"] = means
        summary["mfe_increasing"] = bool(all(b > a for a, b in zip(means, means[1:])))
    elif name == "mnar-robustness":
        mnar = float(np.mean([r["mfe_mnar"] for r in rows]))
        mcar = float(np.mean([r["mfe_mcar"] for r in rows]))
        summary["mean_mfe_mnar"] = mnar
        summary["mean_mfe_mcar"] = mcar
        summary["relative_gap"] = (mnar - mcar) / mcar if mcar > 0 else float("nan")
    return summary
