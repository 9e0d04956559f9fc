"""Discrete-time hazard model for the reporting delay.

The hazard of being reported at delay ``d`` given not yet reported is

    logit h[t, d] = gamma[d] + W[t, d] @ eta,    d = 0..D-1,

with ``h[t, D] = 1`` and ``h[t, d] = 0`` whenever ``t + d`` carries no
report. Delay probabilities follow from the product formula
``p[d] = h[d] * prod_{k<d} (1 - h[k])``.

The covariates ``W`` are piecewise-linear time effects with knots every
``spacing`` days counted back from ``now`` plus weekday-of-report contrasts
against Tuesday.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .data import WEEKDAY_NAMES, ReportingCalendar, parse_date, weekday_of
from .errors import ConfigError, DataError, DomainError

REFERENCE_WEEKDAY = 1  # Tuesday
CONTRAST_WEEKDAYS = tuple(w for w in range(7) if w != REFERENCE_WEEKDAY)


@dataclass(frozen=True, eq=False)
class HazardDesign:
    """Covariates ``W[t, d, k]`` for event dates ``start..now`` and ``d < D``."""

    start: dt.date
    now: dt.date
    max_delay: int
    spacing: int
    knots: tuple
    column_names: tuple
    W: np.ndarray
    reporting: np.ndarray  # (n_dates, D) True where t + d is a reporting day
    calendar: ReportingCalendar

    @property
    def n_dates(self) -> int:
        return self.W.shape[0]

    @property
    def n_time(self) -> int:
        return len(self.knots) + 1

    @property
    def n_covariates(self) -> int:
        return self.W.shape[2]

    def row(self, t) -> int:
        i = parse_date(t).toordinal() - self.start.toordinal()
        if not 0 <= i < self.n_dates:
            raise DataError(f"date {parse_date(t)} outside design window {self.start}..{self.now}")
        return i


@dataclass(frozen=True)
class DelayParams:
    """Baseline logit hazards ``gamma`` (length D) and covariate effects ``eta``."""

    gamma: np.ndarray
    eta: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.gamma, dtype=float)
        e = np.asarray(self.eta, dtype=float)
        if not (np.all(np.isfinite(g)) and np.all(np.isfinite(e))):
            raise DomainError("delay parameters must be finite")
        object.__setattr__(self, "gamma", g)
        object.__setattr__(self, "eta", e)


def time_columns(ordinals, now: int, n_dates: int, spacing: int) -> tuple[np.ndarray, list[int]]:
    """Standardised linear time term plus hinge terms; returns (columns, knots)."""
    n_seg = -(-n_dates // spacing)
    knots = [now - k * spacing for k in range(1, n_seg)]
    s = (np.asarray(ordinals, dtype=float) - now) / n_dates
    cols = [s] + [np.maximum(0.0, s - (k - now) / n_dates) for k in knots]
    return np.stack(cols, axis=-1), knots


def weekday_contrasts(report_ordinals) -> np.ndarray:
    """One-hot weekday of the report day; Tuesday is the all-zero reference."""
    wd = weekday_of(report_ordinals)
    return (wd[..., None] == np.array(CONTRAST_WEEKDAYS)).astype(float)


def build_design(
    window,
    now,
    max_delay: int,
    spacing: int = 14,
    calendar: ReportingCalendar | None = None,
) -> HazardDesign:
    """Hazard covariates for the event dates in ``window = (start, end)``.

    ``end`` must equal ``now``. The number of time columns is the number of
    ``spacing``-day segments needed to cover the window; six weekday
    contrasts follow.
    """
    calendar = calendar or ReportingCalendar()
    start, end = (parse_date(x) for x in window)
    now = parse_date(now)
    if end != now:
        raise ConfigError(f"design window must end at now ({now}), ends at {end}")
    if spacing < 1:
        raise ConfigError(f"breakpoint spacing must be >= 1, got {spacing}")
    if max_delay < 1:
        raise ConfigError(f"max_delay must be >= 1, got {max_delay}")
    n = now.toordinal() - start.toordinal() + 1
    if n < spacing:
        raise ConfigError(f"window of {n} days is shorter than one {spacing}-day segment")

    t = start.toordinal() + np.arange(n)
    tc, knots = time_columns(t, now.toordinal(), n, spacing)
    rep = t[:, None] + np.arange(max_delay)[None, :]
    W = np.concatenate(
        [np.broadcast_to(tc[:, None, :], (n, max_delay, tc.shape[1])), weekday_contrasts(rep)], axis=2
    )
    names = ("time",) + tuple(f"time_hinge_{dt.date.fromordinal(k).isoformat()}" for k in knots)
    names += tuple(f"report_{WEEKDAY_NAMES[w]}" for w in CONTRAST_WEEKDAYS)
    W = np.ascontiguousarray(W)
    W.setflags(write=False)
    return HazardDesign(start, now, max_delay, spacing, tuple(knots), names, W, calendar.mask(rep), calendar)


def hazard_logits(params: DelayParams, design: HazardDesign) -> np.ndarray:
    """``gamma[d] + W[t, d] @ eta`` for all rows; shape (n_dates, D)."""
    if params.gamma.shape != (design.max_delay,):
        raise DomainError(f"gamma has length {params.gamma.size}, expected {design.max_delay}")
    if params.eta.shape != (design.n_covariates,):
        raise DomainError(f"eta has length {params.eta.size}, expected {design.n_covariates}")
    return params.gamma[None, :] + design.W @ params.eta


def hazard_matrix(params: DelayParams, design: HazardDesign) -> np.ndarray:
    """Hazards for every event date; shape (n_dates, D + 1)."""
    h = np.where(design.reporting, expit(hazard_logits(params, design)), 0.0)
    return np.concatenate([h, np.ones((design.n_dates, 1))], axis=1)


def hazards(params: DelayParams, design: HazardDesign, t) -> np.ndarray:
    """Hazard vector of length ``D + 1`` for event date ``t``."""
    i = design.row(t)
    a = params.gamma + design.W[i] @ params.eta
    h = np.where(design.reporting[i], expit(a), 0.0)
    return np.append(h, 1.0)


def delay_probabilities(h) -> np.ndarray:
    """Map hazards (last entry 1) to delay probabilities; works row-wise on 2-D input."""
    h = np.asarray(h, dtype=float)
    if h.shape[-1] < 1:
        raise DomainError("empty hazard vector")
    if np.any(~np.isfinite(h)) or np.any(h < 0) or np.any(h > 1):
        raise DomainError("hazards must lie in [0, 1]")
    if np.any(h[..., -1] != 1.0):
        raise DomainError("the hazard at the maximum delay must be 1")
    surv = np.cumprod(1.0 - h, axis=-1)
    before = np.concatenate([np.ones(h.shape[:-1] + (1,)), surv[..., :-1]], axis=-1)
    return h * before


def log_delay_probabilities(logits: np.ndarray, reporting: np.ndarray) -> np.ndarray:
    """Numerically stable ``log p`` from hazard logits; ``-inf`` on non-reporting cells."""
    log_h = np.where(reporting, -np.logaddexp(0.0, -logits), -np.inf)
    log_1mh = np.where(reporting, -np.logaddexp(0.0, logits), 0.0)
    cum = np.cumsum(log_1mh, axis=-1)
    before = np.concatenate([np.zeros(cum.shape[:-1] + (1,)), cum[..., :-1]], axis=-1)
    return np.concatenate([log_h + before, cum[..., -1:]], axis=-1)


def cumulative_reporting_probability(p) -> np.ndarray:
    """Probability of being reported within ``d`` days (running sum of ``p``)."""
    return np.cumsum(np.asarray(p, dtype=float), axis=-1)


def delay_quantiles(cum, levels=(0.05, 0.5, 0.95)) -> np.ndarray:
    """First delay at which the cumulative reporting probability reaches each level.

    ``cum`` may be 1-D or 2-D (one row per event date); the result has a
    trailing axis over ``levels``.
    """
    cum = np.asarray(cum, dtype=float)
    levels = np.asarray(levels, dtype=float)
    reached = cum[..., None, :] >= levels[:, None] - 1e-12
    return np.argmax(reached, axis=-1)


def empirical_delay_quantiles(cells, levels=(0.05, 0.5, 0.95)) -> np.ndarray:
    """Delay quantiles of observed count rows (hindsight), NaN for empty rows."""
    cells = np.atleast_2d(np.asarray(cells, dtype=float))
    tot = cells.sum(axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        cum = np.cumsum(cells, axis=1) / tot
    q = delay_quantiles(np.nan_to_num(cum), levels).astype(float)
    q[tot[:, 0] == 0] = np.nan
    return q
