"""Synthetic surveillance data drawn from the model itself.

The simulator draws a ``log lambda`` path (random walk, or indicator driven),
reporting delays from the hazard model and negative binomial triangle cells,
then publishes one cumulative snapshot per reporting day. Every quantity the
fit is supposed to recover is returned alongside the data.
"""

from __future__ import annotations

import datetime as dt
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from .data import (
    WEEKDAY_NAMES,
    ReportingCalendar,
    Snapshot,
    cell_report_ordinals,
    parse_date,
    write_calendar,
    write_snapshot,
)
from .delay import CONTRAST_WEEKDAYS, DelayParams, HazardDesign, build_design, delay_probabilities, hazard_matrix
from .epi import LatentPath, ModelSpec, indicator_covariates
from .errors import ConfigError
from .indicators import IndicatorSeries, write_indicator
from .posterior import ParameterState

DEFAULT_WEEKDAY_EFFECTS = {"Wed": -0.3, "Thu": -0.4, "Fri": -0.5}


def default_gamma(max_delay: int) -> np.ndarray:
    """Baseline logit hazards: same-day reporting is rare, later days ~27% per report."""
    g = np.full(max_delay, -1.0)
    g[0] = -2.0
    return g


@dataclass(frozen=True)
class LeadingIndicator:
    """A Poisson stream that leads the expected count: ``a_t ~ Poisson(ratio * lambda_{t+lead})``."""

    name: str
    lead: int
    ratio: float = 1.0


@dataclass(frozen=True, eq=False)
class SimulationConfig:
    start: dt.date = dt.date(2020, 9, 1)
    n_days: int = 120
    max_delay: int = 21
    calendar: ReportingCalendar = field(default_factory=ReportingCalendar)
    variant: str = "R"
    sigma: float = 0.1
    log_lambda0: float = math.log(50.0)
    phi: float = 10.0
    gamma: Sequence[float] | None = None
    weekday_effects: dict = field(default_factory=lambda: dict(DEFAULT_WEEKDAY_EFFECTS))
    time_slope: float = 0.0
    breakpoint_spacing: int = 14
    beta: Sequence[float] = ()
    indicators: Sequence[IndicatorSeries] = ()
    leading_indicators: Sequence[LeadingIndicator] = ()
    indicator_history: int = 60
    extra_report_days: int | None = None
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "start", parse_date(self.start))
        if self.n_days < 2:
            raise ConfigError("n_days must be >= 2")
        if self.max_delay < 1:
            raise ConfigError("max_delay must be >= 1")
        if self.sigma < 0 or not self.phi > 0:
            raise ConfigError("need sigma >= 0 and phi > 0")
        g = default_gamma(self.max_delay) if self.gamma is None else np.asarray(self.gamma, dtype=float)
        if g.shape != (self.max_delay,):
            raise ConfigError(f"gamma must have length max_delay={self.max_delay}")
        object.__setattr__(self, "gamma", g)
        unknown = set(self.weekday_effects) - {WEEKDAY_NAMES[w] for w in CONTRAST_WEEKDAYS}
        if unknown:
            raise ConfigError(f"weekday effects for unknown or reference weekdays: {sorted(unknown)}")
        if self.variant not in ("R", "L", "RL"):
            raise ConfigError(f"unknown variant {self.variant!r}")
        if self.variant != "R":
            spec = ModelSpec(self.variant, self.indicators, max_delay=self.max_delay)
            if len(self.beta) != spec.n_beta:
                raise ConfigError(f"variant {self.variant} needs {spec.n_beta} beta values")
            if self.leading_indicators:
                raise ConfigError("leading indicators are generated only for variant R")
        elif self.indicators or len(self.beta):
            raise ConfigError("variant R takes no indicators or beta")

    @property
    def end(self) -> dt.date:
        return self.start + dt.timedelta(days=self.n_days - 1)

    @property
    def last_report(self) -> dt.date:
        extra = self.max_delay + 7 if self.extra_report_days is None else self.extra_report_days
        return self.end + dt.timedelta(days=extra)


@dataclass(frozen=True, eq=False)
class SimulationResult:
    config: SimulationConfig
    snapshots: list
    events: pd.DataFrame  # event_date, report_date, delay, count (delay folded at D)
    cells: np.ndarray  # (n_days, D + 1) generated counts
    params: ParameterState
    design: HazardDesign
    delay_probs: np.ndarray
    indicators: dict

    @property
    def dates(self) -> list[dt.date]:
        return [self.config.start + dt.timedelta(days=i) for i in range(self.config.n_days)]

    @property
    def truth(self) -> Snapshot:
        return self.snapshots[-1]

    def true_totals(self) -> np.ndarray:
        return self.cells.sum(axis=1)


def _weekday_eta(cfg: SimulationConfig, design: HazardDesign) -> np.ndarray:
    eta = np.zeros(design.n_covariates)
    eta[0] = cfg.time_slope
    for j, w in enumerate(CONTRAST_WEEKDAYS):
        eta[design.n_time + j] = cfg.weekday_effects.get(WEEKDAY_NAMES[w], 0.0)
    return eta


def _log_lambda_path(cfg: SimulationConfig, rng, n_total: int, offset: int, dates) -> tuple[np.ndarray, np.ndarray]:
    """Path over ``n_total`` days where index ``offset`` is ``cfg.start``; returns (path, beta)."""
    eps = rng.standard_normal(n_total)
    if cfg.variant == "R":
        x = cfg.log_lambda0 + cfg.sigma * np.concatenate([[0.0], np.cumsum(eps[1:])])
        return x, np.zeros(0)
    spec = ModelSpec(cfg.variant, cfg.indicators, max_delay=cfg.max_delay)
    cov = indicator_covariates(spec, dates)
    beta = np.asarray(cfg.beta, dtype=float)
    if cfg.variant == "L":
        return beta[0] + cov @ beta[1:] + cfg.sigma * eps, beta
    steps = cov[1:] @ beta + cfg.sigma * eps[1:]
    return cfg.log_lambda0 + np.concatenate([[0.0], np.cumsum(steps)]), beta


def simulate_surveillance(config: SimulationConfig) -> SimulationResult:
    """Draw one synthetic dataset; deterministic given ``config.seed``."""
    cfg = config
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    D, n = cfg.max_delay, cfg.n_days
    s0 = cfg.start.toordinal()
    dates = [cfg.start + dt.timedelta(days=i) for i in range(n)]

    max_lead = max((li.lead for li in cfg.leading_indicators), default=0)
    pre = cfg.indicator_history if cfg.leading_indicators else 0
    n_total = pre + n + max_lead
    if cfg.variant == "R":
        full, beta = _log_lambda_path(cfg, rng, n_total, pre, dates)
    else:
        full, beta = _log_lambda_path(cfg, rng, n, 0, dates)
    log_lambda = full[pre : pre + n]

    design = build_design((cfg.start, cfg.end), cfg.end, D, cfg.breakpoint_spacing, cfg.calendar)
    delay = DelayParams(np.array(cfg.gamma, dtype=float), _weekday_eta(cfg, design))
    p = delay_probabilities(hazard_matrix(delay, design))
    mu = np.exp(log_lambda)[:, None] * p
    cells = np.zeros_like(mu, dtype=np.int64)
    pos = mu > 0
    cells[pos] = rng.negative_binomial(cfg.phi, cfg.phi / (cfg.phi + mu[pos]))

    report_ord = cell_report_ordinals(s0, n, D, cfg.calendar)
    report_days = cfg.calendar.reporting_days(cfg.start, cfg.last_report)
    csum = np.cumsum(cells, axis=1)
    snapshots = []
    for r in report_days:
        ro = r.toordinal()
        k = (report_ord <= ro).sum(axis=1)
        cum = np.where(k > 0, csum[np.arange(n), np.maximum(k - 1, 0)], 0)
        upto = min(n, ro - s0 + 1)
        snapshots.append(Snapshot(r, {dates[i]: int(cum[i]) for i in range(upto)}))

    ti, di = np.nonzero(cells)
    events = pd.DataFrame(
        {
            "event_date": [dates[i] for i in ti],
            "report_date": [dt.date.fromordinal(int(report_ord[i, d])) for i, d in zip(ti, di)],
            "delay": di,
            "count": cells[ti, di],
        }
    )

    indicators = {}
    for li in cfg.leading_indicators:
        lam = np.exp(full[li.lead : li.lead + pre + n])
        vals = rng.poisson(li.ratio * lam)
        idx = pd.date_range(cfg.start - dt.timedelta(days=pre), periods=pre + n, freq="D")
        indicators[li.name] = IndicatorSeries(li.name, pd.Series(vals.astype(float), index=idx))
    for ind in cfg.indicators:
        indicators[ind.name] = ind

    params = ParameterState(LatentPath(log_lambda, max(cfg.sigma, 1e-12), beta), delay, cfg.phi)
    return SimulationResult(cfg, snapshots, events, cells, params, design, p, indicators)


def write_dataset(result: SimulationResult, directory) -> dict:
    """Write snapshots, truth, calendar, indicators and true parameters under ``directory``.

    Returns the written paths keyed by role.
    """
    root = Path(directory)
    snap_dir = root / "snapshots"
    snap_dir.mkdir(parents=True, exist_ok=True)
    for s in result.snapshots:
        write_snapshot(s, snap_dir)
    truth_path = write_snapshot(result.truth, root / "truth")
    cal_path = write_calendar(result.config.calendar, root / "calendar.csv")
    ind_paths = {}
    if result.indicators:
        (root / "indicators").mkdir(exist_ok=True)
        for name, ind in result.indicators.items():
            ind_paths[name] = write_indicator(ind, root / "indicators" / f"{name}.csv")
    ev = result.events.copy()
    ev["event_date"] = [d.isoformat() for d in ev["event_date"]]
    ev["report_date"] = [d.isoformat() for d in ev["report_date"]]
    ev.to_csv(root / "events.csv", index=False, lineterminator="\n")
    st = result.params
    truth_params = {
        "dates": [d.isoformat() for d in result.dates],
        "log_lambda": [float(v) for v in st.path.log_lambda],
        "sigma": float(result.config.sigma),
        "phi": float(st.phi),
        "beta": [float(b) for b in st.path.beta],
        "gamma": [float(g) for g in st.delay.gamma],
        "eta": [float(e) for e in st.delay.eta],
        "eta_names": list(result.design.column_names),
        "totals": [int(v) for v in result.true_totals()],
    }
    params_path = root / "params.json"
    params_path.write_text(json.dumps(truth_params, indent=2) + "\n", encoding="utf-8")
    return {
        "snapshots": snap_dir,
        "truth": truth_path,
        "calendar": cal_path,
        "indicators": ind_paths,
        "params": params_path,
        "events": root / "events.csv",
    }
