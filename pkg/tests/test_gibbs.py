import numpy as np
import pytest

from modules.diagnostics import msd
from modules.errors import ChainAbortedError, ConfigError, DimensionMismatchError, InputDomainError
from modules.experiments import uniform_frame
from modules.gibbs import (GibbsConfig, Hyperparams, ModelState, PosteriorSamples, conjugate_eta2, conjugate_sigma2,
                           gibbs_sweep, impute_missing, init_state, initial_eta2, parse_eta2_mode, run_chain,
                           separate_ties)
from modules.linalg import Frame
from modules.map_init import SolverConfig
from modules.masking import MaskSpec, apply_mask
from modules.samplers import AcceptanceCounter, RngStream, sample_inverse_gamma
from modules.smg_model import ObservationSet, SmgParams, smg_sample

SOLVER = SolverConfig(n_lambdas=6, max_iter=200)


@pytest.fixture
def small_problem():
    stream = RngStream(17)
    params = SmgParams(uniform_frame(8, 2, stream), uniform_frame(8, 2, stream), 4.0)
    truth = smg_sample(params, stream)
    obs = apply_mask(truth, MaskSpec.mcar(0.6), 0.05, stream)
    return truth, obs


class TestConfig:
    def test_default_burn_in_is_a_fifth(self):
        cfg = GibbsConfig(total_iters=1000)
        assert cfg.burn == 200
        assert cfg.retained_per_chain == 800

    def test_thinning(self):
        assert GibbsConfig(total_iters=100, burn_in=10, thin=3).retained_per_chain == 30

    @pytest.mark.parametrize("kwargs", [
        {"total_iters": 0},
        {"total_iters": 10, "burn_in": 10},
        {"thin": 0},
        {"n_chains": 0},
        {"eta2_mode": "fixed"},
        {"eta2_mode": "guess"},
        {"mh_steps": 0},
        {"eta2_init": "data"},
    ])
    def test_invalid_values(self, kwargs):
        with pytest.raises(ConfigError):
            GibbsConfig(**kwargs)

    def test_parse_eta2_mode(self):
        assert parse_eta2_mode("sampled") == ("sampled", None)
        assert parse_eta2_mode("fixed:0.25") == ("fixed", 0.25)
        for bad in ("fixed:", "fixed:-1", "auto"):
            with pytest.raises(ConfigError):
                parse_eta2_mode(bad)


class TestHyperparams:
    def test_zero_concentrations_by_default(self):
        F1, F2 = Hyperparams(rank=2).concentrations(5, 4)
        assert F1.shape == (5, 2) and F2.shape == (4, 2)
        assert not F1.any() and not F2.any()

    def test_unresolved_rank(self):
        with pytest.raises(ConfigError):
            Hyperparams().concentrations(4, 4)

    def test_concentration_shape_checked(self):
        with pytest.raises(DimensionMismatchError):
            Hyperparams(rank=2, F1=np.ones((3, 2))).concentrations(4, 4)

    def test_non_positive_prior(self):
        with pytest.raises(ConfigError):
            Hyperparams(alpha_sigma2=0.0)


class TestModelState:
    def _frames(self):
        return Frame(np.eye(4)[:, :2]), Frame(np.eye(3)[:, :2])

    def test_reconstruct(self):
        U, V = self._frames()
        state = ModelState(U, np.array([3.0, 1.0]), V, 1.0, 0.1)
        expected = np.zeros((4, 3))
        expected[0, 0], expected[1, 1] = 3.0, 1.0
        np.testing.assert_array_equal(state.reconstruct(), expected)

    def test_tied_singular_values_rejected(self):
        U, V = self._frames()
        with pytest.raises(InputDomainError):
            ModelState(U, np.array([1.0, 1.0]), V, 1.0, 0.1)

    def test_non_positive_singular_values_rejected(self):
        U, V = self._frames()
        with pytest.raises(InputDomainError):
            ModelState(U, np.array([1.0, 0.0]), V, 1.0, 0.1)

    def test_separate_ties(self):
        D = separate_ties(np.array([2.0, 2.0, 2.0]), 2.0)
        assert np.unique(D).size == 3
        assert np.all(D >= 2.0)

    def test_tie_tolerance_is_relative(self):
        D = np.array([3e-18, 2e-18, 1e-18])
        np.testing.assert_array_equal(separate_ties(D, 3e-18), D)
        tied = separate_ties(np.array([1e-18, 1e-18]), 1e-18)
        assert tied[0] > tied[1] == 1e-18
        assert tied[0] - tied[1] == pytest.approx(1e-27)


class TestSweep:
    def test_impute_keeps_observations(self, small_problem, rng):
        truth, obs = small_problem
        state = init_state(obs, Hyperparams(rank=2), GibbsConfig(), SOLVER, rng)
        Y = impute_missing(state, obs, rng)
        np.testing.assert_array_equal(Y[obs.rows, obs.cols], obs.values)
        assert np.all(np.isfinite(Y))

    def test_sweep_returns_valid_state(self, small_problem, rng):
        _, obs = small_problem
        cfg = GibbsConfig(eta2_mode="fixed", eta2_value=0.0025)
        state = init_state(obs, Hyperparams(rank=2), cfg, SOLVER, rng)
        counter = AcceptanceCounter()
        new = gibbs_sweep(state, impute_missing(state, obs, rng), Hyperparams(rank=2), cfg, rng, counter)
        np.testing.assert_allclose(new.U.columns.T @ new.U.columns, np.eye(2), atol=1e-10)
        assert new.eta2 == 0.0025
        assert counter.proposed == cfg.mh_steps

    def test_initial_eta2_capped_by_data_spread(self, small_problem, rng):
        _, obs = small_problem
        draw = initial_eta2(obs, GibbsConfig(), 0.01, 0.01, rng)
        assert 0 < draw <= np.var(obs.values)

    def test_initial_eta2_from_prior(self, small_problem):
        _, obs = small_problem
        cfg = GibbsConfig(eta2_init="prior")
        draws = [initial_eta2(obs, cfg, 3.0, 2.0, RngStream(s)) for s in range(200)]
        expected = [sample_inverse_gamma(3.0, 2.0, RngStream(s)) for s in range(200)]
        assert draws == expected
        assert max(draws) > np.var(obs.values)

    def test_impute_noise_matches_eta2(self):
        stream = RngStream(21)
        U, V = uniform_frame(6, 2, stream), uniform_frame(5, 2, stream)
        truth = smg_sample(SmgParams(U, V, 2.0), stream)
        obs = apply_mask(truth, MaskSpec.count(10), 0.1, stream)
        state = ModelState(U, np.array([2.0, 1.0]), V, 1.0, 0.04)
        X = state.reconstruct()
        hidden = ~obs.mask()
        resid = np.concatenate([(impute_missing(state, obs, stream) - X)[hidden] for _ in range(10000)])
        assert np.var(resid) == pytest.approx(0.04, rel=0.05)

    def test_noiseless_imputation_returns_prediction(self, small_problem, rng):
        _, obs = small_problem
        U, V = Frame(np.eye(8)[:, :2]), Frame(np.eye(8)[:, 1:3])
        state = ModelState(U, np.array([3.0, 1.0]), V, 1.0, 0.0)
        Y = impute_missing(state, obs, rng)
        hidden = ~obs.mask()
        np.testing.assert_array_equal(Y[hidden], state.reconstruct()[hidden])

    def test_sigma2_update_long_run_mean(self):
        hyper = Hyperparams(rank=2, alpha_sigma2=2.0, beta_sigma2=1.0)
        D = np.array([2.0, 1.0])
        stream = RngStream(31)
        draws = np.array([conjugate_sigma2(D, hyper, stream) for _ in range(100000)])
        expected = (1.0 + np.sum(D ** 2) / 2.0) / (2.0 + 2 / 2.0 - 1.0)
        se = draws.std() / np.sqrt(draws.size)
        assert abs(draws.mean() - expected) < 3 * se

    def test_eta2_update_uses_every_grid_entry(self):
        hyper = Hyperparams(alpha_eta2=1.0, beta_eta2=1.0)
        resid = np.full((4, 5), 0.5)
        a = conjugate_eta2(resid, hyper, RngStream(2))
        b = sample_inverse_gamma(1.0 + 10.0, 1.0 + 2.5, RngStream(2))
        assert a == b

    @pytest.mark.slow
    def test_sweeps_recover_planted_subspace(self):
        stream = RngStream(8)
        U_true, V_true = uniform_frame(10, 2, stream), uniform_frame(10, 2, stream)
        Y = (U_true.columns * np.array([3.0, 1.5])) @ V_true.columns.T
        state = ModelState(uniform_frame(10, 2, stream), np.array([1.0, 0.5]), uniform_frame(10, 2, stream),
                           1.0, 1e-6)
        hyper = Hyperparams(rank=2)
        cfg = GibbsConfig(eta2_mode="fixed", eta2_value=1e-6)
        frames = []
        for _ in range(200):
            state = gibbs_sweep(state, Y, hyper, cfg, stream)
            frames.append(state.U)
        assert msd(frames[-50:], U_true) < 0.1

    @pytest.mark.slow
    def test_initial_frame_beats_random_frame(self):
        wins = 0
        for seed in range(20):
            stream = RngStream(seed)
            params = SmgParams(uniform_frame(12, 2, stream), uniform_frame(12, 2, stream), 4.0)
            obs = apply_mask(smg_sample(params, stream), MaskSpec.mcar(0.5), 0.05, stream)
            state = init_state(obs, Hyperparams(rank=2), GibbsConfig(), SOLVER, stream)
            random = uniform_frame(12, 2, stream)
            wins += msd([state.U], params.U) < msd([random], params.U)
        assert wins >= 18

    def test_rank_must_leave_a_complement(self, small_problem, rng):
        _, obs = small_problem
        with pytest.raises(ConfigError):
            init_state(obs, Hyperparams(rank=8), GibbsConfig(), SOLVER, rng)


class TestChains:
    def test_retained_draws_and_shapes(self, small_problem):
        _, obs = small_problem
        cfg = GibbsConfig(total_iters=60, burn_in=20, thin=2, seed=3)
        samples = run_chain(obs, Hyperparams(rank=2), cfg, SOLVER)
        assert samples.n_samples == cfg.retained_per_chain == 20
        assert samples.x_samples.shape == (20, 8, 8)
        assert samples.meta["rank"] == 2
        assert len(samples.u_frames) == len(samples.v_frames) == 20

    def test_same_seed_same_draws(self, small_problem):
        _, obs = small_problem
        cfg = GibbsConfig(total_iters=30, burn_in=10, seed=5)
        a = run_chain(obs, Hyperparams(rank=2), cfg, SOLVER)
        b = run_chain(obs, Hyperparams(rank=2), cfg, SOLVER)
        np.testing.assert_array_equal(a.x_samples, b.x_samples)

    def test_chains_are_merged_in_order(self, small_problem):
        _, obs = small_problem
        cfg = GibbsConfig(total_iters=30, burn_in=10, n_chains=2, seed=1)
        samples = run_chain(obs, Hyperparams(rank=2), cfg, SOLVER)
        assert samples.n_chains == 2
        np.testing.assert_array_equal(samples.chain_ids, [0] * 20 + [1] * 20)
        assert not np.array_equal(samples.x_samples[0], samples.x_samples[20])
        assert samples.by_chain(1).tolist() == list(range(20, 40))

    def test_rank_estimated_when_omitted(self, small_problem):
        _, obs = small_problem
        samples = run_chain(obs, Hyperparams(), GibbsConfig(total_iters=10, burn_in=2), SOLVER)
        assert 1 <= samples.meta["rank"] <= 7

    def test_init_failure_aborts_chain(self, small_problem):
        _, obs = small_problem
        with pytest.raises(ChainAbortedError) as info:
            run_chain(obs, Hyperparams(rank=8), GibbsConfig(total_iters=10), SOLVER)
        assert info.value.iteration == 0

    def test_merge_needs_parts(self):
        with pytest.raises(InputDomainError):
            PosteriorSamples.merge([])

    @pytest.mark.slow
    def test_posterior_mean_recovers_truth(self, small_problem):
        truth, obs = small_problem
        cfg = GibbsConfig(total_iters=400, burn_in=100, eta2_mode="fixed", eta2_value=0.0025, seed=2)
        samples = run_chain(obs, Hyperparams(rank=2), cfg, SolverConfig())
        err = np.linalg.norm(samples.posterior_mean() - truth) / np.linalg.norm(truth)
        assert err < 0.25

    def test_empty_observations(self, rng):
        with pytest.raises(InputDomainError):
            init_state(ObservationSet.from_entries(4, 4, []), Hyperparams(rank=1), GibbsConfig(), SOLVER, rng)
