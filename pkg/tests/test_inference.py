import dataclasses
import math
import warnings

import numpy as np
import pytest

from nowcasting.epi import ModelSpec
from nowcasting.errors import ConfigError, DomainError, InferenceError, InitializationError
from nowcasting.inference import (
    DegenerateDiagnosticWarning,
    NowcastTarget,
    PosteriorSamples,
    SamplerConfig,
    build_target,
    effective_sample_size,
    empirical_logit_hazard,
    ess,
    rhat,
    run_mcmc,
    sample,
    split_rhat,
)
from nowcasting.posterior import NowcastPosterior, gradient_check


class Gaussian:
    """Correlated bivariate normal test posterior."""

    mean = np.array([1.0, -2.0])
    cov = np.array([[1.0, 0.8], [0.8, 2.0]])
    dim = 2
    parameter_names = ["a", "b"]

    def __init__(self):
        self.prec = np.linalg.inv(self.cov)

    def logp(self, x):
        r = np.asarray(x) - self.mean
        return -0.5 * float(r @ self.prec @ r)

    def logp_and_grad(self, x):
        r = np.asarray(x) - self.mean
        g = -self.prec @ r
        return -0.5 * float(r @ self.prec @ r), g

    def initial_point(self, rng):
        return self.mean + 3.0 * rng.standard_normal(2)


class WrongGradient(Gaussian):
    def logp_and_grad(self, x):
        lp, g = super().logp_and_grad(x)
        return lp, 1.1 * g


class Impossible(Gaussian):
    def logp(self, x):
        return -math.inf

    def logp_and_grad(self, x):
        return -math.inf, np.zeros(2)


def check_moments(samples: PosteriorSamples, target: Gaussian):
    x = samples.pooled()
    for j, name in enumerate(samples.parameter_names):
        mcse = x[:, j].std() / math.sqrt(samples.ess(name))
        assert abs(x[:, j].mean() - target.mean[j]) < 3 * mcse
    cov = np.cov(x.T)
    assert np.all(np.abs(cov - target.cov) <= 0.1 * np.abs(target.cov))


class TestConfig:
    @pytest.mark.parametrize("field", ["chains", "warmup_iters", "sampling_iters", "workers"])
    def test_zero_rejected(self, field):
        with pytest.raises(ConfigError):
            SamplerConfig(**{field: 0})

    def test_bad_values(self):
        with pytest.raises(ConfigError):
            SamplerConfig(algorithm="nuts")
        with pytest.raises(ConfigError):
            SamplerConfig(seed=-1)
        with pytest.raises(ConfigError):
            SamplerConfig(target_acceptance=1.5)

    def test_acceptance_defaults(self):
        assert SamplerConfig(algorithm="adaptive_blockwise_metropolis").acceptance_target == 0.234
        assert SamplerConfig(algorithm="gradient_hmc").acceptance_target == 0.8


class TestSamplersOnGaussian:
    def test_metropolis_moments_and_acceptance(self):
        target = Gaussian()
        cfg = SamplerConfig(chains=4, warmup_iters=2000, sampling_iters=6000, seed=3, algorithm="adaptive_blockwise_metropolis")
        s = sample(target, cfg)
        assert s.draws.shape == (4, 6000, 2)
        check_moments(s, target)
        for rate in s.acceptance["all"]:
            assert 0.15 <= rate <= 0.45
        assert max(s.rhat(n) for n in s.parameter_names) < 1.01

    def test_hmc_moments(self):
        target = Gaussian()
        cfg = SamplerConfig(chains=4, warmup_iters=500, sampling_iters=2000, seed=4, algorithm="gradient_hmc")
        s = sample(target, cfg)
        check_moments(s, target)
        assert all(0.6 < a < 1.0 for a in s.acceptance["hmc"])

    def test_hmc_refuses_wrong_gradient(self):
        with pytest.raises(InferenceError, match="finite-difference"):
            sample(WrongGradient(), SamplerConfig(chains=1, warmup_iters=10, sampling_iters=10, algorithm="gradient_hmc"))

    @pytest.mark.parametrize("algorithm", ["adaptive_blockwise_metropolis", "gradient_hmc"])
    def test_initialization_error(self, algorithm):
        with pytest.raises(InitializationError, match="100"):
            sample(Impossible(), SamplerConfig(chains=1, warmup_iters=5, sampling_iters=5, algorithm=algorithm))

    @pytest.mark.parametrize("algorithm", ["adaptive_blockwise_metropolis", "gradient_hmc"])
    def test_deterministic_and_worker_independent(self, algorithm):
        cfg = SamplerConfig(chains=3, warmup_iters=100, sampling_iters=100, seed=9, algorithm=algorithm)
        a = sample(Gaussian(), cfg)
        b = sample(Gaussian(), cfg)
        c = sample(Gaussian(), dataclasses.replace(cfg, workers=3))
        assert np.array_equal(a.draws, b.draws)
        assert np.array_equal(a.draws, c.draws)
        d = sample(Gaussian(), dataclasses.replace(cfg, seed=10))
        assert not np.array_equal(a.draws, d.draws)


class TestDiagnostics:
    def test_identical_chains(self):
        seq = np.tile([0.0, 1.0], 1_000_000)
        x = np.stack([seq, seq])
        assert abs(split_rhat(x) - 1.0) < 1e-6

    def test_constant_draws_degenerate(self):
        s = PosteriorSamples(np.ones((3, 50, 1)), ["c"])
        with pytest.warns(DegenerateDiagnosticWarning):
            assert math.isnan(rhat(s, "c"))
        with pytest.warns(DegenerateDiagnosticWarning):
            assert math.isnan(ess(s, "c"))
        assert bool(s.diagnostics.loc["c", "degenerate"])

    def test_separated_chains(self):
        rng = np.random.default_rng(0)
        x = np.stack([rng.normal(0, 1, 1000), rng.normal(10, 1, 1000)])
        # direct formula on the four split halves
        s = np.concatenate([x[:, :500], x[:, 500:]])
        W = s.var(axis=1, ddof=1).mean()
        B = 500 * s.mean(axis=1).var(ddof=1)
        expect = math.sqrt((499 / 500 * W + B / 500) / W)
        assert split_rhat(x) == pytest.approx(expect, rel=1e-12)
        assert split_rhat(x) > 1.1 * 3

    def test_well_mixed(self):
        x = np.random.default_rng(1).normal(size=(4, 5000))
        assert split_rhat(x) < 1.01

    def test_ess_independent(self):
        x = np.random.default_rng(2).normal(size=(4, 2500))
        assert abs(effective_sample_size(x) - x.size) <= 0.2 * x.size

    def test_ess_highly_correlated(self):
        rng = np.random.default_rng(3)
        rho = 0.999
        x = np.empty((4, 5000))
        x[:, 0] = rng.normal(size=4)
        for t in range(1, 5000):
            x[:, t] = rho * x[:, t - 1] + math.sqrt(1 - rho**2) * rng.normal(size=4)
        e = effective_sample_size(x)
        assert e < 0.02 * x.size
        assert e >= 1

    def test_ess_capped(self):
        # anti-correlated draws would give ESS above the draw count
        x = np.tile([1.0, -1.0], (2, 500)) + np.random.default_rng(4).normal(0, 0.01, (2, 1000))
        assert effective_sample_size(x) <= x.size

    def test_chain_order_irrelevant(self):
        d = np.random.default_rng(5).normal(size=(4, 200, 3)).cumsum(axis=1)
        a = PosteriorSamples(d, ["x", "y", "z"])
        b = PosteriorSamples(d[::-1].copy(), ["x", "y", "z"])
        assert np.allclose(a.diagnostics[["rhat", "ess"]], b.diagnostics[["rhat", "ess"]], rtol=1e-12)
        assert np.allclose(np.sort(a.pooled(), axis=0), np.sort(b.pooled(), axis=0))

    def test_too_few(self):
        with pytest.raises(DomainError):
            split_rhat(np.zeros((1, 100)))
        with pytest.raises(DomainError):
            effective_sample_size(np.zeros((2, 3)))

    def test_samples_validation(self):
        with pytest.raises(DomainError):
            PosteriorSamples(np.zeros((2, 3, 2)), ["a", "a"])
        with pytest.raises(DomainError):
            PosteriorSamples(np.full((2, 3, 1), np.nan), ["a"])
        with pytest.raises(KeyError):
            PosteriorSamples(np.zeros((2, 3, 1)), ["a"]).index("b")


class TestNowcastTarget:
    @pytest.mark.parametrize("variant", ["R", "L", "RL"])
    def test_noncentred_round_trip_and_gradient(self, specs, small_triangle, variant):
        post = NowcastPosterior(specs[variant], small_triangle)
        target = NowcastTarget(post, noncentered=True)
        rng = np.random.default_rng(0)
        u = target.initial_point(rng)
        x = target.to_output(u)
        assert np.allclose(target.from_output(x), u, rtol=1e-10, atol=1e-10)
        assert gradient_check(target, u) <= 1.0
        assert gradient_check(NowcastTarget(post), x) <= 1.0

    def test_noncentred_density_is_change_of_variables(self, specs, small_triangle):
        post = NowcastPosterior(specs["RL"], small_triangle)
        target = NowcastTarget(post, noncentered=True)
        u = target.initial_point(np.random.default_rng(1))
        x = target.to_output(u)
        n = post.n_dates - 1
        assert target.logp(u) == pytest.approx(post.logp(x) + n * x[post.slices["log_sigma"]][0], rel=1e-12)

    def test_initial_point_finite(self, specs, small_triangle):
        for spec in specs.values():
            t = NowcastTarget(NowcastPosterior(spec, small_triangle))
            rng = np.random.default_rng(2)
            for _ in range(5):
                assert math.isfinite(t.logp(t.initial_point(rng)))

    def test_empirical_hazard(self, small_sim, small_triangle):
        g = empirical_logit_hazard(small_triangle)
        assert g.shape == (small_triangle.max_delay + 1,)
        # on reporting-day cells the pooled hazard is near the generating baseline
        true = small_sim.config.gamma
        assert abs(g[3] - true[3]) < 1.0

    def test_blocks_cover_parameters(self, specs, small_triangle):
        t = NowcastTarget(NowcastPosterior(specs["L"], small_triangle))
        covered = np.concatenate([b.indices for b in t.blocks()])
        assert set(covered.tolist()) == set(range(t.dim))
        with pytest.raises(InferenceError):
            NowcastTarget(t.posterior, noncentered=True).blocks()


class TestRunMcmc:
    @pytest.mark.parametrize("algorithm", ["adaptive_blockwise_metropolis", "gradient_hmc"])
    def test_rl_frozen_zero_draws_equal_r(self, specs, small_triangle, algorithm):
        frozen = ModelSpec("RL", specs["RL"].indicators, max_delay=10, window_length=small_triangle.n_dates, fixed_beta=[0.0])
        cfg = SamplerConfig(chains=2, warmup_iters=60, sampling_iters=40, seed=5, algorithm=algorithm)
        a = run_mcmc(specs["R"], small_triangle, cfg)
        b = run_mcmc(frozen, small_triangle, cfg)
        assert a.parameter_names == b.parameter_names
        assert np.array_equal(a.draws, b.draws)

    def test_deterministic(self, specs, small_triangle):
        cfg = SamplerConfig(chains=2, warmup_iters=40, sampling_iters=30, seed=1, algorithm="gradient_hmc")
        a = run_mcmc(specs["L"], small_triangle, cfg)
        b = run_mcmc(specs["L"], small_triangle, dataclasses.replace(cfg, workers=2))
        assert np.array_equal(a.draws, b.draws)

    def test_draws_on_log_lambda_scale(self, specs, small_triangle):
        cfg = SamplerConfig(chains=2, warmup_iters=150, sampling_iters=50, seed=2, algorithm="gradient_hmc")
        s = run_mcmc(specs["R"], small_triangle, cfg)
        ll = s.pooled([n for n in s.parameter_names if n.startswith("log_lambda")])
        totals = small_triangle.partial_totals[:20]
        # early rows are complete, so log lambda sits near the log of their totals
        assert abs(np.median(ll[:, :20]) - np.log(np.median(totals))) < 0.5

    def test_window_applied(self, small_triangle):
        spec = ModelSpec("R", max_delay=10, window_length=28)
        t = build_target(spec, small_triangle)
        assert t.posterior.n_dates == 28
