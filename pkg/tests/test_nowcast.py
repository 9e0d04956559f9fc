import json
import math

import numpy as np
import pytest

from nowcasting.data import ReportingTriangle
from nowcasting.errors import DataError, DomainError
from nowcasting.inference import PosteriorSamples
from nowcasting.nowcast import (
    NowcastResult,
    beta_summary,
    cumulative_probability_frame,
    level_label,
    nearest_rank,
    predictive_draws,
    quantiles,
    write_nowcast_csv,
    write_nowcast_json,
)
from nowcasting.posterior import NowcastPosterior


def frozen_samples(post: NowcastPosterior, x: np.ndarray, n: int) -> PosteriorSamples:
    """Degenerate posterior: ``n`` copies of one parameter vector."""
    return PosteriorSamples(np.tile(x, (1, n, 1)), post.parameter_names)


@pytest.fixture(scope="module")
def truth_setup(small_sim, small_triangle, specs):
    post = NowcastPosterior(specs["R"], small_triangle)
    truth = small_sim.params
    n = small_triangle.n_dates
    x = np.empty(post.dim)
    x[post.slices["log_lambda"]] = truth.path.log_lambda[:n]
    x[post.slices["gamma"]] = truth.delay.gamma
    x[post.slices["eta"]] = truth.delay.eta
    x[post.slices["log_sigma"]] = math.log(truth.path.sigma)
    x[post.slices["log_phi"]] = math.log(truth.phi)
    return post, x


def result_from(draws):
    draws = np.asarray(draws)
    n = draws.shape[1]
    return NowcastResult(None, [None] * n, np.zeros(n, int), draws, np.zeros((n, 2)), np.zeros_like(draws, float), np.zeros((n, 2)))


class TestPredictive:
    def test_complete_rows_fixed(self, truth_setup, small_triangle, specs):
        post, x = truth_setup
        res = predictive_draws(frozen_samples(post, x, 200), small_triangle, specs["R"], seed=1)
        complete = small_triangle.complete_rows
        assert complete.any()
        assert np.all(res.draws[:, complete] == small_triangle.partial_totals[complete])
        assert np.all(res.draws.var(axis=0)[complete] == 0)

    def test_lower_bound_and_shape(self, truth_setup, small_triangle, specs):
        post, x = truth_setup
        res = predictive_draws(frozen_samples(post, x, 300), small_triangle, specs["R"], seed=2)
        assert res.draws.shape == (300, small_triangle.n_dates)
        assert np.all(res.draws >= res.observed)
        assert np.allclose(res.cumulative_probability[:, -1], 1.0)

    def test_single_unobserved_cell_mean(self, truth_setup, small_triangle, specs):
        post, x = truth_setup
        todo = small_triangle.unobserved_mask
        t = int(np.nonzero(todo.sum(axis=1) == 1)[0][0])
        d = int(np.nonzero(todo[t])[0][0])
        S = 4000
        res = predictive_draws(frozen_samples(post, x, S), small_triangle, specs["R"], seed=3)
        p = np.exp(post.log_p(x[post.slices["gamma"]], x[post.slices["eta"]]))
        mu = math.exp(x[post.slices["log_lambda"]][t]) * p[t, d]
        phi = math.exp(x[post.slices["log_phi"]][0])
        se = math.sqrt((mu + mu * mu / phi) / S)
        assert abs(res.draws[:, t].mean() - (res.observed[t] + mu)) < 3 * se

    def test_expected_total_mean(self, truth_setup, small_triangle, specs):
        post, x = truth_setup
        S = 4000
        res = predictive_draws(frozen_samples(post, x, S), small_triangle, specs["R"], seed=4)
        p = np.exp(post.log_p(x[post.slices["gamma"]], x[post.slices["eta"]]))
        lam = np.exp(x[post.slices["log_lambda"]])
        phi = math.exp(x[post.slices["log_phi"]][0])
        mu = np.where(small_triangle.unobserved_mask, lam[:, None] * p, 0.0)
        mean = res.observed + mu.sum(axis=1)
        sd = np.sqrt((mu + mu**2 / phi).sum(axis=1) / S)
        assert np.all(np.abs(res.draws.mean(axis=0) - mean) <= 4 * sd + 1e-12)

    def test_zero_probability_unobserved(self, truth_setup, small_triangle, specs):
        post, x = truth_setup
        y = x.copy()
        y[post.slices["gamma"]] = 1e3  # everything reported on the first reporting day
        y[post.slices["eta"]] = 0.0
        res = predictive_draws(frozen_samples(post, y, 50), small_triangle, specs["R"], seed=5)
        assert np.all(res.draws == res.observed)

    def test_more_information_less_variance(self, truth_setup, small_triangle, specs):
        post, x = truth_setup
        tri = small_triangle
        t = tri.n_dates - 3
        d = int(np.nonzero(tri.unobserved_mask[t])[0][0])
        obs = tri.observed.copy()
        obs[t, d] = True
        more = ReportingTriangle(tri.start, tri.now, tri.max_delay, tri.cells.copy(), obs, tri.structural_zero.copy(), tri.calendar)
        S = 4000
        a = predictive_draws(frozen_samples(post, x, S), tri, specs["R"], seed=6).draws[:, t]
        b = predictive_draws(frozen_samples(post, x, S), more, specs["R"], seed=6).draws[:, t]
        p = np.exp(post.log_p(x[post.slices["gamma"]], x[post.slices["eta"]]))
        lam = np.exp(x[post.slices["log_lambda"]][t])
        phi = math.exp(x[post.slices["log_phi"]][0])
        cells = tri.unobserved_mask[t]
        v_less = sum(lam * p[t, k] + (lam * p[t, k]) ** 2 / phi for k in np.nonzero(cells)[0])
        v_cell = lam * p[t, d] + (lam * p[t, d]) ** 2 / phi
        # independent NB cells: observing one removes exactly its variance
        assert a.var() == pytest.approx(v_less, rel=0.15)
        assert b.var() == pytest.approx(v_less - v_cell, rel=0.15)
        assert b.var() <= a.var() + 4 * a.var() * math.sqrt(2 / S)

    def test_deterministic_seed(self, truth_setup, small_triangle, specs):
        post, x = truth_setup
        smp = frozen_samples(post, x, 100)
        a = predictive_draws(smp, small_triangle, specs["R"], seed=7).draws
        b = predictive_draws(smp, small_triangle, specs["R"], seed=7).draws
        c = predictive_draws(smp, small_triangle, specs["R"], seed=8).draws
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_mismatched_samples(self, truth_setup, small_triangle, specs):
        post, x = truth_setup
        smp = PosteriorSamples(np.zeros((1, 2, 3)), ["a", "b", "c"])
        with pytest.raises(DataError):
            predictive_draws(smp, small_triangle, specs["R"])


class TestQuantiles:
    def test_constant(self):
        q = quantiles(result_from(np.full((10, 2), 7)), (0.025, 0.5, 0.975))
        assert all(np.all(v == 7) for v in q.values())

    def test_one_to_hundred(self):
        q = quantiles(result_from(np.arange(1, 101)[::-1, None]), (0.5, 0.025, 0.975))
        assert q[0.5][0] == 50
        assert q[0.025][0] == 3 and q[0.975][0] == 98

    def test_bracket_and_monotone(self):
        rng = np.random.default_rng(0)
        draws = rng.poisson(20, (1000, 5))
        q = quantiles(result_from(draws), (0.025, 0.25, 0.5, 0.75, 0.975))
        inside = (draws >= q[0.025]) & (draws <= q[0.975])
        assert np.all(inside.mean(axis=0) >= 0.95)
        levels = sorted(q)
        for a, b in zip(levels, levels[1:]):
            assert np.all(q[a] <= q[b])

    def test_errors(self):
        with pytest.raises(DomainError):
            quantiles(result_from(np.zeros((0, 2))), (0.5,))
        with pytest.raises(DomainError):
            quantiles(result_from(np.zeros((3, 2))), (1.0,))

    def test_labels(self):
        assert [level_label(q) for q in (0.025, 0.25, 0.5, 0.975, 0.05)] == ["q2.5", "q25", "q50", "q97.5", "q5"]
        assert nearest_rank(np.arange(1, 11), 0.1) == 1


class TestExport:
    def test_csv_and_json(self, truth_setup, small_triangle, specs, tmp_path):
        post, x = truth_setup
        res = predictive_draws(frozen_samples(post, x, 50), small_triangle, specs["R"], seed=9)
        p = write_nowcast_csv(res, tmp_path / "n.csv")
        lines = p.read_text().splitlines()
        assert lines[0] == "event_date,observed,q2.5,q25,q50,q75,q97.5,mean"
        assert len(lines) == small_triangle.n_dates + 1
        data = json.loads(write_nowcast_json(res, tmp_path / "n.json", include_draws=True).read_text())
        assert data["n_draws"] == 50
        assert len(data["dates"][-1]["draws"]) == 50
        assert "draws" not in json.loads(write_nowcast_json(res, tmp_path / "m.json").read_text())["dates"][0]
        again = write_nowcast_csv(predictive_draws(frozen_samples(post, x, 50), small_triangle, specs["R"], seed=9), tmp_path / "m.csv")
        assert again.read_bytes() == p.read_bytes()

    def test_delay_summary_and_cumulative(self, truth_setup, small_triangle, specs):
        post, x = truth_setup
        res = predictive_draws(frozen_samples(post, x, 10), small_triangle, specs["R"], seed=10)
        ds = res.delay_summary
        assert list(ds.columns) == [
            "event_date", "estimated_q5", "estimated_q50", "estimated_q95",
            "empirical_q5", "empirical_q50", "empirical_q95",
        ]
        assert np.all(ds["estimated_q5"] <= ds["estimated_q50"])
        assert np.all(ds["estimated_q50"] <= ds["estimated_q95"])
        cp = cumulative_probability_frame(res)
        assert list(cp.columns)[-1] == "d10"
        assert np.all(np.diff(cp.iloc[:, 1:].to_numpy(), axis=1) >= -1e-12)

    def test_beta_summary(self):
        d = np.random.default_rng(0).normal(size=(2, 100, 2))
        s = PosteriorSamples(d, ["beta[icu]", "log_sigma"])
        b = beta_summary(s)
        assert b["coefficient"].tolist() == ["icu"]
        assert list(b.columns) == ["coefficient", "mean", "q2.5", "q50", "q97.5"]
