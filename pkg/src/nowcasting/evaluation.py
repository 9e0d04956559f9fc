"""Rolling retrospective evaluation of nowcasts against a final snapshot.

For every reporting date ``T`` the triangle known on ``T`` is fitted and
nowcast; dates ``T - j`` are scored against the counts of the truth
snapshot. Offsets ``0..6`` make up the headline scores, offsets up to the
maximum delay give the horizon profile.
"""

from __future__ import annotations

import dataclasses
import datetime as dt
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import pandas as pd

from .data import (
    ReportingCalendar,
    Snapshot,
    build_triangle,
    final_counts,
    ingest_snapshot,
    load_snapshots,
    parse_date,
    read_calendar,
)
from .epi import ModelSpec
from .errors import ConfigError, DataError
from .inference import PosteriorSamples, SamplerConfig, run_mcmc
from .nowcast import NowcastResult, beta_summary, nearest_rank, predictive_draws, write_frame
from .scoring import crps, log_score

SCORED_OFFSETS = 7
INTERVALS = (0.75, 0.90, 0.95)
SCORE_COLUMNS = ["reporting_date", "offset", "crps", "logs", "se", "in75", "in90", "in95"]

log = logging.getLogger(__name__)

Fitter = Callable[[ModelSpec, "object", SamplerConfig], PosteriorSamples]


def date_seeds(seed: int, day: dt.date) -> tuple[int, int]:
    """Sampler and predictive seeds for one reporting date, derived from ``(seed, date)``."""
    state = np.random.SeedSequence([int(seed), day.toordinal()]).generate_state(4, dtype=np.uint32)
    return int(state[0]) << 32 | int(state[1]), int(state[2]) << 32 | int(state[3])


def score_draws(draws: np.ndarray, truth: float) -> dict:
    """All per-date scores of one predictive sample."""
    s = np.sort(draws)
    rec = {
        "crps": crps(s, truth),
        "logs": log_score(s, truth),
        "median": float(nearest_rank(s, 0.5)),
    }
    rec["se"] = (rec["median"] - truth) ** 2
    for level in INTERVALS:
        lo = nearest_rank(s, (1.0 - level) / 2.0)
        hi = nearest_rank(s, (1.0 + level) / 2.0)
        rec[f"in{round(100 * level)}"] = int(lo <= truth <= hi)
    return rec


@dataclass(frozen=True, eq=False)
class ScoreReport:
    """Per-date, per-offset scores with the aggregates derived from them.

    ``records`` holds one row per reporting date and offset (``0`` is the
    reporting date itself) up to the maximum delay; ``nowcasts`` holds the
    median and 95% interval of the nowcast of each reporting date.
    """

    records: pd.DataFrame
    nowcasts: pd.DataFrame
    model: str = ""
    coefficients: pd.DataFrame | None = None

    @property
    def scored(self) -> pd.DataFrame:
        """Records entering the headline scores (offsets 0..6)."""
        return self.records[self.records["offset"] < SCORED_OFFSETS]

    @property
    def per_date(self) -> pd.DataFrame:
        """Seven-day mean CRPS and logS and the seven-day RMSE of every reporting date."""
        g = self.scored.groupby("reporting_date", sort=True)
        out = pd.DataFrame({"crps": g["crps"].mean(), "logs": g["logs"].mean(), "rmse": np.sqrt(g["se"].mean())})
        return out.reset_index()

    @property
    def summary(self) -> dict:
        """Mean over reporting dates of the per-date scores; coverage pooled over all scored pairs."""
        pd_ = self.per_date
        sc = self.scored
        out = {
            "model": self.model,
            "n_reporting_dates": int(len(pd_)),
            "crps": float(pd_["crps"].mean()),
            "logs": float(pd_["logs"].mean()),
            "rmse": float(pd_["rmse"].mean()),
        }
        for level in INTERVALS:
            k = round(100 * level)
            out[f"coverage_{k}"] = float(sc[f"in{k}"].mean())
        return out

    @property
    def horizon(self) -> pd.DataFrame:
        """Mean CRPS, logS and RMSE by days since the reporting date."""
        g = self.records.groupby("offset", sort=True)
        out = pd.DataFrame(
            {"crps": g["crps"].mean(), "logs": g["logs"].mean(), "rmse": np.sqrt(g["se"].mean()), "n": g.size()}
        )
        return out.reset_index()

    def rolling(self, width: int = 7) -> pd.DataFrame:
        """Trailing mean over ``width`` consecutive reporting dates of the per-date CRPS and logS."""
        pd_ = self.per_date
        r = pd_[["crps", "logs"]].rolling(width, min_periods=width).mean()
        return pd.DataFrame({"reporting_date": pd_["reporting_date"], "crps": r["crps"], "logs": r["logs"]})

    def write(self, directory) -> dict:
        """Write scores.csv, summary.json, horizon.csv, nowcasts.csv, rolling7.csv and, with regression coefficients, beta_trajectory.csv."""
        root = Path(directory)
        root.mkdir(parents=True, exist_ok=True)
        paths = {
            "scores": write_frame(self.scored[SCORE_COLUMNS], root / "scores.csv"),
            "horizon": write_frame(self.horizon, root / "horizon.csv"),
            "nowcasts": write_frame(self.nowcasts, root / "nowcasts.csv"),
            "rolling7": write_frame(self.rolling(7), root / "rolling7.csv"),
        }
        if self.coefficients is not None and len(self.coefficients):
            paths["beta_trajectory"] = write_frame(self.coefficients, root / "beta_trajectory.csv")
        summary = root / "summary.json"
        summary.write_text(json.dumps(self.summary, indent=2) + "\n", encoding="utf-8")
        paths["summary"] = summary
        return paths


def _truth_snapshot(truth, calendar) -> Snapshot:
    if isinstance(truth, Snapshot):
        return truth
    return ingest_snapshot(Path(truth), calendar)


def evaluate_date(
    T: dt.date,
    spec: ModelSpec,
    snapshots: Sequence[Snapshot],
    truth: Snapshot,
    config: SamplerConfig,
    calendar: ReportingCalendar,
    fitter: Fitter | None = None,
) -> tuple[list[dict], dict, pd.DataFrame, NowcastResult]:
    """Fit, nowcast and score one reporting date.

    Returns the score records, the nowcast row of ``T`` itself, the
    regression coefficient summary and the nowcast.
    """
    fitter = fitter or run_mcmc
    known = [s for s in snapshots if s.report_date <= T]
    triangle = build_triangle(known, T, spec.max_delay, calendar)
    fit_seed, pred_seed = date_seeds(config.seed, T)
    samples = fitter(spec, triangle, dataclasses.replace(config, seed=fit_seed, workers=1))
    result = predictive_draws(samples, triangle, spec, seed=pred_seed)
    truths = final_counts(truth, result.dates).astype(float)
    records = []
    n = len(result.dates)
    for j in range(min(spec.max_delay + 1, n)):
        i = n - 1 - j
        rec = {"reporting_date": T.isoformat(), "offset": j, "event_date": result.dates[i].isoformat()}
        rec["truth"] = truths[i]
        rec["observed"] = int(result.observed[i])
        rec.update(score_draws(result.draws[:, i], truths[i]))
        records.append(rec)
    last = np.sort(result.draws[:, -1])
    row = {
        "reporting_date": T.isoformat(),
        "truth": truths[-1],
        "observed": int(result.observed[-1]),
        "q2.5": nearest_rank(last, 0.025),
        "q50": nearest_rank(last, 0.5),
        "q97.5": nearest_rank(last, 0.975),
    }
    coefs = beta_summary(samples)
    coefs.insert(0, "reporting_date", T.isoformat())
    return records, row, coefs, result


def _evaluate_job(args):
    records, row, coefs, _ = evaluate_date(*args)
    return records, row, coefs


def retrospective_evaluate(
    reporting_dates: Sequence,
    spec: ModelSpec,
    data_root,
    truth,
    config: SamplerConfig | None = None,
    *,
    calendar: ReportingCalendar | None = None,
    fitter: Fitter | None = None,
    workers: int = 1,
) -> ScoreReport:
    """Score nowcasts made on each of ``reporting_dates``.

    ``data_root`` holds ``snapshots/`` and optionally ``calendar.csv``;
    ``truth`` is a :class:`Snapshot` or the path of one, strictly later than
    every reporting date. ``fitter(spec, triangle, config)`` replaces MCMC
    (useful for oracle runs). Dates are independent and may run on
    ``workers`` processes without changing the result.
    """
    config = config or SamplerConfig()
    root = Path(data_root)
    if calendar is None:
        cal_path = root / "calendar.csv"
        calendar = read_calendar(cal_path) if cal_path.exists() else ReportingCalendar()
    dates = sorted({parse_date(d) for d in reporting_dates})
    if not dates:
        raise ConfigError("no reporting dates given")
    truth = _truth_snapshot(truth, calendar)
    if truth.report_date <= dates[-1]:
        raise DataError(f"truth snapshot {truth.report_date} is not later than reporting date {dates[-1]}")
    snapshots = load_snapshots(root / "snapshots", calendar, until=dates[-1])
    have = {s.report_date for s in snapshots}
    missing = [d for d in dates if d not in have]
    if missing:
        raise DataError("missing snapshot for reporting date(s): " + ", ".join(d.isoformat() for d in missing))

    jobs = [(T, spec, snapshots, truth, config, calendar, fitter) for T in dates]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_evaluate_job, jobs))
    else:
        results = []
        for job in jobs:
            results.append(_evaluate_job(job))
            log.info("scored reporting date %s", job[0])
    records = pd.DataFrame([r for rec, _, _ in results for r in rec])
    nowcasts = pd.DataFrame([row for _, row, _ in results])
    coefs = pd.concat([c for _, _, c in results], ignore_index=True)
    return ScoreReport(records, nowcasts, spec.variant, coefs)
