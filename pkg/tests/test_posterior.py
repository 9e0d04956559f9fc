import datetime as dt
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from nowcasting.data import ReportingCalendar, ReportingTriangle
from nowcasting.delay import DelayParams, delay_probabilities, hazard_matrix
from nowcasting.epi import LatentPath, ModelSpec, indicator_covariates, path_logdensity
from nowcasting.errors import DataError, DomainError
from nowcasting.posterior import (
    NowcastPosterior,
    ParameterState,
    design_for,
    gradient_check,
    initial_mean,
    log_likelihood,
    log_posterior,
    log_prior,
    model_window,
    nb_logpmf,
)


def random_state(post: NowcastPosterior, rng, scale=1.0) -> np.ndarray:
    x = np.zeros(post.dim)
    s = post.slices
    x[s["log_lambda"]] = math.log(30) + 0.5 * scale * rng.standard_normal(post.n_dates)
    x[s["gamma"]] = -1.0 + scale * rng.standard_normal(post.D)
    x[s["eta"]] = 0.3 * scale * rng.standard_normal(post.K)
    x[s["beta"]] = 0.5 * scale * rng.standard_normal(post.n_free_beta)
    x[s["log_sigma"]] = math.log(0.2) + 0.5 * scale * rng.standard_normal()
    x[s["log_phi"]] = math.log(8) + 0.5 * scale * rng.standard_normal()
    return x


def naive_loglik(triangle, state, design):
    """Double loop over cells with the NB pmf written out from gamma functions."""
    p = delay_probabilities(hazard_matrix(state.delay, design))
    lam = np.exp(state.path.log_lambda)
    phi = state.phi
    total = 0.0
    for t in range(triangle.n_dates):
        for d in range(triangle.max_delay + 1):
            if not triangle.observed[t, d] or triangle.structural_zero[t, d]:
                continue
            y = int(triangle.cells[t, d])
            mu = lam[t] * p[t, d]
            total += (
                math.lgamma(y + phi) - math.lgamma(phi) - math.lgamma(y + 1)
                + phi * math.log(phi / (phi + mu)) + y * math.log(mu / (phi + mu))
            )
    return total


class TestNegativeBinomial:
    def test_zero_count(self):
        assert nb_logpmf(0, 1.0, 1.0) == pytest.approx(math.log(0.5), abs=1e-12)

    @pytest.mark.parametrize("mu", [0.01, 1.0, 7.5, 300.0])
    def test_poisson_limit(self, mu):
        y = np.arange(0, int(mu * 3) + 20)
        assert np.allclose(nb_logpmf(y, mu, 1e8), stats.poisson.logpmf(y, mu), atol=1e-6)

    @settings(max_examples=60, deadline=None)
    @given(mu=st.floats(0.01, 200), phi=st.floats(0.05, 1e4))
    def test_normalised(self, mu, phi):
        sd = math.sqrt(mu + mu * mu / phi)
        top = int(mu + 60 * sd + 200)
        while stats.nbinom.sf(top, phi, phi / (phi + mu)) > 1e-12:
            top *= 2
        total = math.fsum(np.exp(nb_logpmf(np.arange(top + 1), mu, phi)))
        assert abs(total - 1.0) < 1e-8

    def test_matches_scipy(self):
        rng = np.random.default_rng(0)
        y = rng.integers(0, 100, 50)
        mu = rng.uniform(0.1, 80, 50)
        phi = rng.uniform(0.1, 50, 50)
        assert np.allclose(nb_logpmf(y, mu, phi), stats.nbinom.logpmf(y, phi, phi / (phi + mu)), rtol=1e-10)

    @pytest.mark.parametrize("args", [(1, 0.0, 1.0), (1, 1.0, -1.0), (-1, 1.0, 1.0), (1, np.inf, 1.0), (0.5, 1.0, 1.0)])
    def test_domain(self, args):
        with pytest.raises(DomainError):
            nb_logpmf(*args)


class TestLikelihood:
    def test_empty_observed_set(self, specs, small_triangle):
        tri = small_triangle
        empty = ReportingTriangle(
            tri.start, tri.now, tri.max_delay, np.zeros_like(tri.cells), np.zeros_like(tri.observed),
            tri.structural_zero.copy(), tri.calendar,
        )
        post = NowcastPosterior(specs["R"], empty)
        x = random_state(post, np.random.default_rng(0))
        assert log_likelihood(empty, post.unpack(x), specs["R"]) == 0.0
        assert post.loglik_rows(x).sum() == 0.0

    def test_single_cell(self, specs, small_triangle):
        tri = small_triangle
        obs = np.zeros_like(tri.observed)
        t, d = np.argwhere(tri.likelihood_mask & (tri.cells > 0))[0]
        obs[t, d] = True
        one = ReportingTriangle(tri.start, tri.now, tri.max_delay, tri.cells.copy(), obs, tri.structural_zero.copy(), tri.calendar)
        post = NowcastPosterior(specs["R"], one)
        state = post.unpack(random_state(post, np.random.default_rng(1)))
        p = delay_probabilities(hazard_matrix(state.delay, post.design))
        mu = math.exp(state.path.log_lambda[t]) * p[t, d]
        assert log_likelihood(one, state, specs["R"]) == pytest.approx(nb_logpmf(tri.cells[t, d], mu, state.phi), rel=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_double_loop_oracle(self, specs, small_triangle, seed):
        post = NowcastPosterior(specs["RL"], small_triangle)
        x = random_state(post, np.random.default_rng(seed))
        state = post.unpack(x)
        expect = naive_loglik(small_triangle, state, post.design)
        assert log_likelihood(small_triangle, state, specs["RL"]) == pytest.approx(expect, rel=1e-10)
        assert post.loglik_rows(x).sum() == pytest.approx(expect, rel=1e-10)

    def test_masking_one_cell(self, specs, small_triangle):
        tri = small_triangle
        post = NowcastPosterior(specs["R"], tri)
        state = post.unpack(random_state(post, np.random.default_rng(2)))
        full = log_likelihood(tri, state, specs["R"])
        p = delay_probabilities(hazard_matrix(state.delay, post.design))
        lam = np.exp(state.path.log_lambda)
        cells = np.argwhere(tri.likelihood_mask)
        for t, d in cells[:: max(1, len(cells) // 15)]:
            obs = tri.observed.copy()
            obs[t, d] = False
            masked = ReportingTriangle(tri.start, tri.now, tri.max_delay, tri.cells.copy(), obs, tri.structural_zero.copy(), tri.calendar)
            term = nb_logpmf(tri.cells[t, d], lam[t] * p[t, d], state.phi)
            assert full - log_likelihood(masked, state, specs["R"]) == pytest.approx(term, rel=1e-9, abs=1e-9)

    def test_zero_probability_with_count(self, specs, small_triangle):
        post = NowcastPosterior(specs["R"], small_triangle)
        x = random_state(post, np.random.default_rng(3))
        x[post.slices["gamma"]][0] = -800.0  # p[t, 0] underflows to 0
        state = post.unpack(x)
        has_day0 = (small_triangle.cells[:, 0] > 0) & small_triangle.likelihood_mask[:, 0]
        assert has_day0.any()
        assert log_likelihood(small_triangle, state, specs["R"]) == -math.inf


class TestPosterior:
    @pytest.mark.parametrize("variant", ["R", "L", "RL"])
    def test_decomposition(self, specs, small_triangle, variant):
        spec = specs[variant]
        post = NowcastPosterior(spec, small_triangle)
        cov = indicator_covariates(spec, small_triangle.dates, small_triangle.now)
        rng = np.random.default_rng(4)
        for _ in range(100):
            x = random_state(post, rng)
            state = post.unpack(x)
            parts = (
                log_likelihood(small_triangle, state, spec, post.design),
                path_logdensity(spec, state.path, cov, initial_mean(small_triangle)),
                log_prior(state, spec),
            )
            total = log_posterior(state, small_triangle, spec, post.design)
            assert total == pytest.approx(sum(parts), rel=1e-12)
            assert post.logp(x) == pytest.approx(total, rel=1e-10)
            comps = post.components(x)
            assert comps["log_likelihood"] == pytest.approx(parts[0], rel=1e-10)
            assert comps["path"] == pytest.approx(parts[1], rel=1e-10)
            assert comps["prior"] == pytest.approx(parts[2], rel=1e-10)

    def test_rl_zero_beta_plus_prior_equals_r(self, specs, small_triangle):
        r = NowcastPosterior(specs["R"], small_triangle)
        rl = NowcastPosterior(specs["RL"], small_triangle)
        rng = np.random.default_rng(5)
        beta_prior = -0.5 * math.log(2 * math.pi)  # N(0, 1) density at 0
        for _ in range(50):
            x = random_state(r, rng)
            xr = np.insert(x, rl.slices["beta"].start, 0.0)
            assert rl.logp(xr) == pytest.approx(r.logp(x) + beta_prior, rel=1e-13)

    def test_rl_frozen_beta_identical_to_r(self, specs, small_triangle):
        frozen = ModelSpec("RL", specs["RL"].indicators, max_delay=10, window_length=small_triangle.n_dates, fixed_beta=[0.0])
        r = NowcastPosterior(specs["R"], small_triangle)
        rl = NowcastPosterior(frozen, small_triangle)
        assert rl.dim == r.dim
        rng = np.random.default_rng(6)
        for _ in range(200):
            x = random_state(r, rng, scale=2.0)
            assert rl.logp(x) == r.logp(x)
            assert np.array_equal(rl.logp_and_grad(x)[1], r.logp_and_grad(x)[1])

    def test_sigma_penalty_monotone(self, specs, small_triangle):
        post = NowcastPosterior(specs["R"], small_triangle)
        state = post.unpack(random_state(post, np.random.default_rng(7)))
        vals = []
        for sigma in (2.0, 4.0, 8.0, 16.0):
            s = ParameterState(LatentPath(state.path.log_lambda, sigma), state.delay, state.phi)
            vals.append(log_prior(s, specs["R"]))
        assert all(b < a for a, b in zip(vals, vals[1:]))

    @pytest.mark.parametrize("variant", ["R", "L", "RL"])
    def test_gradient_finite_differences(self, specs, small_triangle, variant):
        post = NowcastPosterior(specs[variant], small_triangle)
        rng = np.random.default_rng(8)
        for _ in range(3):
            assert gradient_check(post, random_state(post, rng)) <= 1.0

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), scale=st.floats(0.1, 4.0))
    def test_finite_everywhere(self, specs, small_triangle, seed, scale):
        post = NowcastPosterior(specs["RL"], small_triangle)
        x = random_state(post, np.random.default_rng(seed), scale)
        lp, g = post.logp_and_grad(x)
        assert math.isfinite(post.logp(x)) and math.isfinite(lp)
        assert np.all(np.isfinite(g))

    def test_parameter_names_unique(self, specs, small_triangle):
        post = NowcastPosterior(specs["L"], small_triangle)
        names = post.parameter_names
        assert len(names) == post.dim == len(set(names))
        assert names[-2:] == ["log_sigma", "log_phi"]

    def test_pack_unpack(self, specs, small_triangle):
        post = NowcastPosterior(specs["RL"], small_triangle)
        x = random_state(post, np.random.default_rng(9))
        assert np.allclose(post.pack(post.unpack(x)), x, rtol=1e-14)


class TestWindow:
    def test_model_window(self, small_triangle):
        spec = ModelSpec("R", max_delay=10, window_length=28)
        w = model_window(small_triangle, spec)
        assert w.n_dates == 28 and w.now == small_triangle.now
        with pytest.raises(DataError):
            model_window(small_triangle, ModelSpec("R", max_delay=11, window_length=28))
        with pytest.raises(DataError):
            model_window(small_triangle, ModelSpec("R", max_delay=10, window_length=500))

    def test_initial_mean_floor(self, small_triangle):
        assert initial_mean(small_triangle) == pytest.approx(math.log(small_triangle.partial_totals[:7].mean()))
        zero = ReportingTriangle(
            small_triangle.start, small_triangle.now, 10, np.zeros_like(small_triangle.cells),
            small_triangle.observed.copy(), small_triangle.structural_zero.copy(), small_triangle.calendar,
        )
        assert initial_mean(zero) == 0.0
