"""Leading-indicator series: smoothing, transforms, lagging and lag selection."""

from __future__ import annotations

import csv
import dataclasses
import datetime as dt
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from .data import parse_date
from .errors import ConfigError, DataError, DomainError, ParseError

TRANSFORMS = ("raw", "log", "relative_weekly_change")
ZERO_OFFSET = 0.5


def as_daily_series(values) -> pd.Series:
    """Normalise a mapping or Series keyed by dates to a float Series on a daily index."""
    if isinstance(values, pd.Series):
        s = values.astype(float).copy()
        s.index = pd.DatetimeIndex(pd.to_datetime(s.index)).normalize()
    else:
        items = sorted((pd.Timestamp(parse_date(k)), float(v)) for k, v in dict(values).items())
        s = pd.Series([v for _, v in items], index=pd.DatetimeIndex([k for k, _ in items]), dtype=float)
    if s.index.has_duplicates:
        raise DataError(f"duplicate dates in series: {s.index[s.index.duplicated()][0].date()}")
    s = s.sort_index()
    if len(s):
        s = s.asfreq("D")
    return s


@dataclass(frozen=True, eq=False)
class IndicatorSeries:
    """A dated covariate stream together with how it enters the model.

    ``values`` are raw daily values. ``smoothing_width`` is the width of the
    centred rolling mean, ``lag`` the number of days the stream leads the
    target and ``transform`` one of ``raw``, ``log`` or
    ``relative_weekly_change``.
    """

    name: str
    values: pd.Series
    smoothing_width: int = 7
    lag: int = 0
    transform: str = "raw"

    def __post_init__(self):
        object.__setattr__(self, "values", as_daily_series(self.values))
        if self.transform not in TRANSFORMS:
            raise ConfigError(f"indicator {self.name!r}: unknown transform {self.transform!r}")
        if int(self.lag) != self.lag or self.lag < 0:
            raise ConfigError(f"indicator {self.name!r}: lag must be a non-negative integer, got {self.lag}")
        if int(self.smoothing_width) != self.smoothing_width or self.smoothing_width < 1 or self.smoothing_width % 2 == 0:
            raise ConfigError(
                f"indicator {self.name!r}: smoothing width must be odd and >= 1, got {self.smoothing_width}"
            )

    def replace(self, **changes) -> "IndicatorSeries":
        return dataclasses.replace(self, **changes)

    def truncate(self, until) -> "IndicatorSeries":
        """Drop values after ``until`` (what was known on that day)."""
        return self.replace(values=self.values.loc[: pd.Timestamp(parse_date(until))])


def read_indicator(path, name: str | None = None, **kwargs) -> IndicatorSeries:
    """Read a ``date,value`` CSV into an :class:`IndicatorSeries`."""
    path = Path(path)
    values = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["date", "value"]:
            raise ParseError(path, 1, "expected header 'date,value'")
        for lineno, row in enumerate(reader, start=2):
            if not row or not "".join(row).strip():
                continue
            if len(row) != 2:
                raise ParseError(path, lineno, f"expected 2 fields, got {len(row)}")
            try:
                day = dt.date.fromisoformat(row[0].strip())
            except ValueError:
                raise ParseError(path, lineno, f"malformed date {row[0]!r}") from None
            try:
                val = float(row[1])
            except ValueError:
                raise ParseError(path, lineno, f"value {row[1]!r} is not a number") from None
            if not np.isfinite(val):
                raise ParseError(path, lineno, f"non-finite value {row[1]!r}")
            if day in values:
                raise ParseError(path, lineno, f"duplicate date {day}")
            values[day] = val
    return IndicatorSeries(name or path.stem, values, **kwargs)


def write_indicator(series: IndicatorSeries | pd.Series, path) -> Path:
    path = Path(path)
    values = series.values if isinstance(series, IndicatorSeries) else as_daily_series(series)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "value"])
        for ts, v in values.dropna().items():
            w.writerow([ts.date().isoformat(), repr(float(v))])
    return path


def smooth(series: IndicatorSeries) -> IndicatorSeries:
    """Centred rolling mean of width ``series.smoothing_width``.

    Dates without a complete window (series edges, gaps) are dropped. The
    returned series keeps its configuration, so do not smooth twice.
    """
    w = series.smoothing_width
    if int(w) != w or w < 1 or w % 2 == 0:
        raise ConfigError(f"smoothing width must be odd and >= 1, got {w}")
    out = series.values.rolling(int(w), center=True, min_periods=int(w)).mean().dropna()
    return series.replace(values=out)


def _offset_if_zero(values: pd.Series, name: str) -> pd.Series:
    v = values.dropna()
    if (v < 0).any():
        bad = v.index[v < 0][0].date()
        raise DomainError(f"{name}: negative value on {bad} cannot be log-transformed")
    if (v == 0).any():
        return values + ZERO_OFFSET
    return values


def apply_transform(series: IndicatorSeries) -> IndicatorSeries:
    """Apply ``series.transform`` to the (smoothed) values.

    ``log`` and ``relative_weekly_change`` first add 0.5 to every value if
    any value is zero. ``relative_weekly_change`` is ``log(v[t] / v[t-7])``;
    dates without the value seven days earlier are dropped.
    """
    if series.transform == "raw":
        return series.replace(values=series.values.copy())
    v = _offset_if_zero(series.values, series.name)
    if series.transform == "log":
        out = np.log(v)
    else:
        out = np.log(v) - np.log(v.shift(7, freq="D"))
    return series.replace(values=out.dropna())


def log_offset(values: pd.Series, name: str = "series") -> pd.Series:
    """Natural log with the series-wide zero offset."""
    return np.log(_offset_if_zero(values, name))


def covariate_values(series: IndicatorSeries, dates: Sequence, now=None) -> np.ndarray:
    """Model covariate for each of ``dates``.

    Pipeline: truncate to ``now`` (if given), smooth, transform, then read the
    value at ``date - lag``. Raises naming the first date without a value.
    """
    s = series.truncate(now) if now is not None else series
    s = apply_transform(smooth(s))
    idx = pd.DatetimeIndex([pd.Timestamp(parse_date(d)) for d in dates])
    shifted = idx - pd.Timedelta(days=int(series.lag))
    vals = s.values.reindex(shifted).to_numpy(dtype=float)
    missing = ~np.isfinite(vals)
    if missing.any():
        first = idx[np.argmax(missing)].date()
        raise DataError(
            f"indicator {series.name!r} has no value for {first} "
            f"(needs {shifted[np.argmax(missing)].date()} after smoothing/transform with lag {series.lag})"
        )
    return vals


def lag_rss(
    target: pd.Series,
    indicator: IndicatorSeries,
    lag_grid: Iterable[int],
    fit_window: tuple,
    model_form: str = "L",
    target_smoothing: int = 1,
) -> dict[int, float]:
    """Residual sum of squares of the OLS lag regression for every lag.

    ``L``: log target on an intercept and the transformed indicator.
    ``RL``: weekly log difference of the target, ``log y[t] - log y[t-7]``,
    on the indicator's relative weekly change (no intercept).
    The target is smoothed with a centred mean of width ``target_smoothing``
    before the log.
    """
    if model_form not in ("L", "RL"):
        raise ConfigError(f"model_form must be 'L' or 'RL', got {model_form!r}")
    grid = sorted({int(x) for x in lag_grid})
    if not grid:
        raise ConfigError("lag grid is empty")
    if grid[0] < 0:
        raise ConfigError("lags must be non-negative")
    lo, hi = (pd.Timestamp(parse_date(x)) for x in fit_window)
    if hi < lo:
        raise ConfigError("fit window ends before it starts")

    y_raw = as_daily_series(target)
    if target_smoothing != 1:
        y_raw = smooth(IndicatorSeries("target", y_raw, smoothing_width=target_smoothing)).values
    logy = log_offset(y_raw, "target")
    if model_form == "RL":
        logy = logy - logy.shift(7, freq="D")
        ind = indicator.replace(transform="relative_weekly_change")
    else:
        ind = indicator
    x_full = apply_transform(smooth(ind)).values
    days = pd.date_range(lo, hi, freq="D")
    y = logy.reindex(days).to_numpy()
    if not np.all(np.isfinite(y)):
        raise DataError(f"target does not cover fit window {lo.date()}..{hi.date()}")

    out = {}
    for lag in grid:
        x = x_full.reindex(days - pd.Timedelta(days=lag)).to_numpy()
        if not np.all(np.isfinite(x)):
            raise DataError(f"insufficient indicator overlap for lag {lag}")
        X = np.column_stack([np.ones_like(x), x]) if model_form == "L" else x[:, None]
        coef, *_ = np.linalg.lstsq(X, y, rcond=None)
        resid = y - X @ coef
        out[lag] = float(resid @ resid)
    return out


def select_lag(
    target: pd.Series,
    indicator: IndicatorSeries,
    lag_grid: Iterable[int] = range(29),
    fit_window: tuple = ("2020-04-01", "2020-10-19"),
    model_form: str = "L",
    target_smoothing: int = 1,
) -> int:
    """Lag with the smallest residual sum of squares; ties go to the smaller lag."""
    table = lag_rss(target, indicator, lag_grid, fit_window, model_form, target_smoothing)
    best = None
    for lag in sorted(table):
        if best is None or table[lag] < table[best]:
            best = lag
    return best
