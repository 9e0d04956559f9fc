"""Posterior predictive nowcasts of the final daily counts.

For each posterior draw every cell that is still to be reported is drawn
from its negative binomial, and the draws are added to the count already
observed. Draw ``s`` uses its own RNG stream, the ``s``-th child of
``SeedSequence(seed)``.
"""

from __future__ import annotations

import datetime as dt
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from .data import ReportingTriangle
from .delay import HazardDesign, cumulative_reporting_probability, delay_quantiles, empirical_delay_quantiles
from .epi import ModelSpec
from .errors import DataError, DomainError
from .inference import PosteriorSamples
from .posterior import NowcastPosterior, model_window

EXPORT_LEVELS = (0.025, 0.25, 0.5, 0.75, 0.975)
DELAY_LEVELS = (0.05, 0.5, 0.95)


def level_label(level: float) -> str:
    """Column label of a quantile level: 0.025 -> ``q2.5``, 0.5 -> ``q50``."""
    pct = round(100.0 * level, 6)
    return f"q{pct:g}"


def nearest_rank(sorted_draws: np.ndarray, level: float) -> np.ndarray:
    """Nearest-rank quantile along the first axis of pre-sorted draws: ``x_(ceil(q S))``."""
    S = sorted_draws.shape[0]
    k = max(int(math.ceil(level * S - 1e-9)), 1)
    return sorted_draws[k - 1]


@dataclass(frozen=True, eq=False)
class NowcastResult:
    """Predictive draws of the final count for every event date of the model window.

    ``draws`` has shape (n_draws, n_dates). ``cumulative_probability`` is
    the posterior mean probability of being reported within ``d`` days,
    shape (n_dates, D + 1).
    """

    now: dt.date
    dates: list
    observed: np.ndarray
    draws: np.ndarray
    cumulative_probability: np.ndarray
    lambda_draws: np.ndarray
    empirical_cells: np.ndarray

    @property
    def n_draws(self) -> int:
        return self.draws.shape[0]

    def quantiles(self, levels: Sequence[float] = EXPORT_LEVELS) -> dict:
        return quantiles(self, levels)

    @property
    def mean(self) -> np.ndarray:
        return self.draws.mean(axis=0)

    @property
    def delay_summary(self) -> pd.DataFrame:
        """Estimated and empirical 5%/50%/95% reporting delay in days per event date.

        Empirical values come from the cells observed so far and are only
        given for completely observed dates.
        """
        est = delay_quantiles(self.cumulative_probability, DELAY_LEVELS)
        emp = empirical_delay_quantiles(self.empirical_cells, DELAY_LEVELS)
        frame = pd.DataFrame({"event_date": [d.isoformat() for d in self.dates]})
        for j, q in enumerate(DELAY_LEVELS):
            frame[f"estimated_{level_label(q)}"] = est[:, j]
        for j, q in enumerate(DELAY_LEVELS):
            frame[f"empirical_{level_label(q)}"] = emp[:, j]
        return frame

    def to_frame(self, levels: Sequence[float] = EXPORT_LEVELS) -> pd.DataFrame:
        qs = self.quantiles(levels)
        frame = pd.DataFrame({"event_date": [d.isoformat() for d in self.dates], "observed": self.observed})
        for q in levels:
            frame[level_label(q)] = qs[q]
        frame["mean"] = self.mean
        return frame

    def lambda_summary(self, levels: Sequence[float] = (0.05, 0.5, 0.95)) -> pd.DataFrame:
        """Posterior summaries of the expected count ``lambda_t``."""
        lam = np.exp(self.lambda_draws)
        frame = pd.DataFrame({"event_date": [d.isoformat() for d in self.dates], "mean": lam.mean(axis=0)})
        s = np.sort(lam, axis=0)
        for q in levels:
            frame[level_label(q)] = nearest_rank(s, q)
        return frame


def quantiles(result: NowcastResult, levels: Sequence[float] = EXPORT_LEVELS) -> dict:
    """Nearest-rank quantiles of the predictive draws; maps level to one value per date."""
    if result.draws.shape[0] == 0:
        raise DomainError("no predictive draws")
    levels = [float(q) for q in levels]
    if any(not 0.0 < q < 1.0 for q in levels):
        raise DomainError(f"quantile levels must lie in (0, 1), got {levels}")
    s = np.sort(result.draws, axis=0)
    return {q: nearest_rank(s, q) for q in levels}


def predictive_draws(
    samples: PosteriorSamples,
    triangle: ReportingTriangle,
    spec: ModelSpec,
    design: HazardDesign | None = None,
    seed: int = 0,
) -> NowcastResult:
    """Posterior predictive distribution of the final count of each event date.

    ``triangle`` may extend before the model window; only the last
    ``spec.window_length`` dates are used and they must be the dates the
    samples were drawn for.
    """
    tri = model_window(triangle, spec)
    post = NowcastPosterior(spec, tri, design)
    if list(samples.parameter_names) != post.parameter_names:
        raise DataError("posterior samples do not match the model window of the triangle")
    s = post.slices
    x = samples.pooled()
    S = x.shape[0]
    observed = tri.partial_totals.astype(np.int64)
    todo = tri.unobserved_mask
    rows, cols = np.nonzero(todo)
    out = np.tile(observed, (S, 1))
    cum = np.zeros((tri.n_dates, post.D + 1))
    streams = np.random.SeedSequence(seed).spawn(S)
    for k in range(S):
        xk = x[k]
        p = np.exp(post.log_p(xk[s["gamma"]], xk[s["eta"]]))
        cum += cumulative_reporting_probability(p)
        if rows.size:
            phi = math.exp(xk[s["log_phi"]][0])
            mu = np.exp(xk[s["log_lambda"]][rows]) * p[rows, cols]
            rng = np.random.default_rng(streams[k])
            extra = rng.negative_binomial(phi, phi / (phi + mu))
            np.add.at(out[k], rows, extra)
    return NowcastResult(
        now=tri.now,
        dates=tri.dates,
        observed=observed,
        draws=out,
        cumulative_probability=cum / S,
        lambda_draws=x[:, s["log_lambda"]],
        empirical_cells=np.where(tri.observed, tri.cells, 0),
    )


# -- export ------------------------------------------------------------------------
def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return ""
    return str(int(v)) if v.is_integer() and abs(v) < 2**53 else repr(v)


def write_frame(frame: pd.DataFrame, path) -> Path:
    """CSV with a fixed number format so equal inputs give identical bytes."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(frame.columns)]
    for row in frame.itertuples(index=False):
        lines.append(",".join(v if isinstance(v, str) else _fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def write_nowcast_csv(result: NowcastResult, path) -> Path:
    """``event_date,observed,q2.5,q25,q50,q75,q97.5,mean``."""
    return write_frame(result.to_frame(), path)


def nowcast_json(result: NowcastResult, include_draws: bool = False) -> dict:
    qs = result.quantiles()
    out = {"now": result.now.isoformat(), "n_draws": result.n_draws, "dates": []}
    mean = result.mean
    for i, d in enumerate(result.dates):
        rec = {
            "event_date": d.isoformat(),
            "observed": int(result.observed[i]),
            "quantiles": {level_label(q): int(qs[q][i]) for q in qs},
            "mean": float(mean[i]),
        }
        if include_draws:
            rec["draws"] = [int(v) for v in result.draws[:, i]]
        out["dates"].append(rec)
    return out


def write_nowcast_json(result: NowcastResult, path, include_draws: bool = False) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(nowcast_json(result, include_draws), indent=1) + "\n", encoding="utf-8")
    return path


def cumulative_probability_frame(result: NowcastResult) -> pd.DataFrame:
    """Posterior mean cumulative reporting probability, one column per delay."""
    cum = result.cumulative_probability
    frame = pd.DataFrame({"event_date": [d.isoformat() for d in result.dates]})
    for d in range(cum.shape[1]):
        frame[f"d{d}"] = cum[:, d]
    return frame


def beta_summary(samples: PosteriorSamples, levels: Sequence[float] = (0.025, 0.5, 0.975)) -> pd.DataFrame:
    """Posterior mean and nearest-rank quantiles of every regression coefficient."""
    names = [n for n in samples.parameter_names if n.startswith("beta[")]
    rows = []
    for n in names:
        v = np.sort(samples.pooled(n))
        rows.append([n[5:-1], float(v.mean())] + [float(nearest_rank(v, q)) for q in levels])
    return pd.DataFrame(rows, columns=["coefficient", "mean"] + [level_label(q) for q in levels])
