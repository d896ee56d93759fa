import math

import numpy as np
import pytest

from modules.errors import ConfigError, InputDomainError
from modules.map_init import (SolverConfig, assign_folds, cv_select_lambda, default_lambda_grid, estimate_rank,
                              map_objective, nuclear_objective, soft_impute, soft_impute_trace)
from modules.samplers import RngStream
from modules.smg_model import ObservationSet

TIGHT = SolverConfig(tol=1e-10, max_iter=5000)


class TestSoftImpute:
    def test_recovers_planted_rank_two(self, planted_rank2):
        X, obs = planted_rank2
        X_hat = soft_impute(obs, TIGHT, lam=0.05)
        assert np.linalg.norm(X_hat - X) / np.linalg.norm(X) < 1e-2
        assert estimate_rank(X_hat, 1e-2) == 2

    def test_objective_is_monotone(self, planted_rank2):
        _, obs = planted_rank2
        result = soft_impute_trace(obs, TIGHT, lam=0.5)
        obj = np.asarray(result.objectives)
        assert np.all(np.diff(obj) <= 1e-9 * np.abs(obj[:-1]))
        assert result.converged

    def test_recorded_objective_matches_direct_evaluation(self, planted_rank2):
        _, obs = planted_rank2
        result = soft_impute_trace(obs, SolverConfig(max_iter=7, tol=1e-12), lam=0.3)
        assert result.objectives[-1] == pytest.approx(nuclear_objective(result.X, obs, 0.3), rel=1e-10)

    def test_large_lambda_annihilates(self, planted_rank2):
        _, obs = planted_rank2
        d1 = np.linalg.svd(obs.to_dense(), compute_uv=False)[0]
        np.testing.assert_array_equal(soft_impute(obs, SolverConfig(), lam=1.01 * d1), 0.0)

    def test_needs_lambda(self, planted_rank2):
        _, obs = planted_rank2
        with pytest.raises(ConfigError):
            soft_impute(obs, SolverConfig())

    def test_needs_observations(self):
        with pytest.raises(InputDomainError):
            soft_impute(ObservationSet.from_entries(3, 3, []), SolverConfig(), lam=1.0)


class TestCrossValidation:
    def test_grid_spans_to_top_singular_value(self, planted_rank2):
        _, obs = planted_rank2
        grid = default_lambda_grid(obs, SolverConfig(n_lambdas=5))
        d1 = np.linalg.svd(obs.to_dense(), compute_uv=False)[0]
        assert grid.size == 5
        assert grid[-1] == pytest.approx(d1)
        assert grid[0] == pytest.approx(1e-3 * d1)

    def test_selects_from_grid_deterministically(self, planted_rank2):
        _, obs = planted_rank2
        cfg = SolverConfig(n_lambdas=6, max_iter=200)
        first = cv_select_lambda(obs, cfg, RngStream(3))
        assert first in default_lambda_grid(obs, cfg)
        assert cv_select_lambda(obs, cfg, RngStream(3)) == first

    def test_folds_ignore_listing_order(self, planted_rank2):
        _, obs = planted_rank2
        perm = np.random.default_rng(0).permutation(obs.n)
        shuffled = obs.subset(perm)
        folds = assign_folds(obs, 5, RngStream(9))
        folds_shuffled = assign_folds(shuffled, 5, RngStream(9))
        np.testing.assert_array_equal(folds[perm], folds_shuffled)
        assert np.bincount(folds).min() >= obs.n // 5

    @pytest.mark.slow
    def test_selection_is_close_to_the_oracle(self, planted_rank2):
        X, obs = planted_rank2
        noisy = ObservationSet(obs.m1, obs.m2, obs.rows, obs.cols,
                               obs.values + 0.1 * np.random.default_rng(5).standard_normal(obs.n))
        cfg = SolverConfig(n_lambdas=20, tol=1e-7, max_iter=2000)
        hidden = ~noisy.mask()

        def error(lam):
            return float(np.sum((soft_impute(noisy, cfg, lam=lam) - X)[hidden] ** 2))

        oracle = min(error(float(lam)) for lam in default_lambda_grid(noisy, cfg))
        chosen = cv_select_lambda(noisy, cfg, RngStream(1))
        assert error(chosen) <= 1.1 * oracle

    def test_single_candidate_short_circuits(self, planted_rank2):
        _, obs = planted_rank2
        assert cv_select_lambda(obs, SolverConfig(lambda_grid=[0.7]), RngStream(0)) == 0.7

    def test_too_few_observations(self):
        obs = ObservationSet.from_entries(3, 3, [((0, 0), 1.0), ((1, 1), 2.0)])
        with pytest.raises(InputDomainError):
            cv_select_lambda(obs, SolverConfig(), RngStream(0))


class TestRankAndMap:
    def test_rank_clamped_to_valid_range(self):
        assert estimate_rank(np.zeros((4, 4)), 1e-2) == 1
        assert estimate_rank(np.eye(3), 1e-2) == 2

    def test_rank_threshold_is_relative(self):
        X = np.diag([10.0, 1.0, 0.05, 0.0])
        assert estimate_rank(X, 1e-2) == 3
        assert estimate_rank(X, 0.2) == 1

    def test_map_objective_value(self):
        X = np.diag([2.0, 0.0, 0.0])
        obs = ObservationSet.from_entries(3, 3, [((0, 0), 1.0), ((1, 1), 1.0)])
        expected = 2.0 / 0.5 + math.log(2 * math.pi * 1.5) + 4.0 / 1.5
        assert map_objective(X, obs, sigma2=1.5, eta2=0.5) == pytest.approx(expected)

    def test_map_objective_rejects_bad_variances(self):
        obs = ObservationSet.from_entries(2, 2, [((0, 0), 1.0)])
        with pytest.raises(InputDomainError):
            map_objective(np.zeros((2, 2)), obs, sigma2=0.0, eta2=1.0)


class TestSolverConfig:
    @pytest.mark.parametrize("kwargs", [
        {"tol": 0.0},
        {"max_iter": 0},
        {"cv_folds": 1},
        {"lam": -1.0},
        {"lambda_grid": [1.0, 0.5]},
        {"lambda_min_ratio": 1.5},
    ])
    def test_invalid_values(self, kwargs):
        with pytest.raises(ConfigError):
            SolverConfig(**kwargs)
