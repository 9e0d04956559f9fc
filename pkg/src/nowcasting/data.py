"""Report snapshots, the reporting calendar and the reporting triangle.

A *snapshot* is one published report: for every event date the cumulative
number of events known on the report date. Differencing consecutive snapshots
recovers how many events of day ``t`` were reported with delay ``d``; the
resulting matrix ``n[t, d]`` is the reporting triangle.

Dates are handled as :class:`datetime.date` at the API boundary and as
proleptic Gregorian ordinals (``date.toordinal()``) inside array code.
"""

from __future__ import annotations

import csv
import datetime as dt
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, DataError, ParseError

logger = logging.getLogger(__name__)

WEEKDAY_NAMES = ("Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun")
SNAPSHOT_HEADER = ("event_date", "cumulative_count")
_SNAPSHOT_NAME = re.compile(r"^(\d{4}-\d{2}-\d{2})\.csv$")


def parse_date(value) -> dt.date:
    """Coerce an ISO string, ``date`` or ``datetime`` to a ``date``."""
    if isinstance(value, dt.datetime):
        return value.date()
    if isinstance(value, dt.date):
        return value
    if hasattr(value, "date") and callable(value.date):  # pandas Timestamp
        return value.date()
    return dt.date.fromisoformat(str(value).strip())


def weekday_of(ordinals) -> np.ndarray:
    """Weekday (Mon=0) of proleptic ordinals; ordinal 1 is a Monday."""
    return (np.asarray(ordinals, dtype=np.int64) - 1) % 7


@dataclass(frozen=True)
class ReportingCalendar:
    """Days on which reports are published.

    ``weekdays`` holds the publishing weekdays (Mon=0). The default is the
    Tuesday-to-Friday schedule. Dates in ``holidays`` never carry a report.
    """

    weekdays: frozenset = frozenset({1, 2, 3, 4})
    holidays: frozenset = frozenset()

    def __post_init__(self):
        wd = frozenset(int(w) for w in self.weekdays)
        if not wd or not wd <= set(range(7)):
            raise ConfigError(f"weekday mask must be a non-empty subset of 0..6, got {sorted(wd)}")
        object.__setattr__(self, "weekdays", wd)
        object.__setattr__(self, "holidays", frozenset(parse_date(h) for h in self.holidays))

    def is_reporting_day(self, day) -> bool:
        day = parse_date(day)
        return day.weekday() in self.weekdays and day not in self.holidays

    def mask(self, ordinals) -> np.ndarray:
        """Vectorised :meth:`is_reporting_day` over ordinals."""
        ordinals = np.asarray(ordinals, dtype=np.int64)
        out = np.isin(weekday_of(ordinals), sorted(self.weekdays))
        if self.holidays:
            out &= ~np.isin(ordinals, [h.toordinal() for h in self.holidays])
        return out

    def reporting_days(self, start, end) -> list[dt.date]:
        """All reporting days in the closed range ``[start, end]``."""
        s, e = parse_date(start).toordinal(), parse_date(end).toordinal()
        ords = np.arange(s, e + 1)
        return [dt.date.fromordinal(int(o)) for o in ords[self.mask(ords)]]

    def next_reporting_ordinals(self, ordinals) -> np.ndarray:
        """Smallest reporting-day ordinal ``>=`` each input ordinal."""
        ordinals = np.asarray(ordinals, dtype=np.int64)
        if ordinals.size == 0:
            return ordinals.copy()
        lo = int(ordinals.min())
        # a gap longer than a year would need an absurd holiday list
        span = np.arange(lo, int(ordinals.max()) + 400)
        rep = span[self.mask(span)]
        idx = np.searchsorted(rep, ordinals, side="left")
        if np.any(idx >= rep.size):
            raise ConfigError("reporting calendar has no reporting day within a year")
        return rep[idx]

    @property
    def reporting_weekdays(self) -> tuple[str, ...]:
        return tuple(WEEKDAY_NAMES[w] for w in sorted(self.weekdays))


def read_calendar(path) -> ReportingCalendar:
    """Read a calendar file.

    The file is a two-column CSV with header ``kind,value``. One
    ``weekday_mask`` row gives seven 0/1 flags for Monday..Sunday; each
    ``holiday`` row gives an ISO date::

        kind,value
        weekday_mask,0111100
        holiday,2020-12-25
    """
    path = Path(path)
    weekdays = None
    holidays = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["kind", "value"]:
            raise ParseError(path, 1, "expected header 'kind,value'")
        for lineno, row in enumerate(reader, start=2):
            if not row or not "".join(row).strip():
                continue
            if len(row) != 2:
                raise ParseError(path, lineno, f"expected 2 fields, got {len(row)}")
            kind, value = row[0].strip(), row[1].strip()
            if kind == "weekday_mask":
                if weekdays is not None:
                    raise ParseError(path, lineno, "duplicate weekday_mask row")
                if len(value) != 7 or set(value) - {"0", "1"}:
                    raise ParseError(path, lineno, f"weekday mask must be 7 chars of 0/1, got {value!r}")
                weekdays = frozenset(i for i, c in enumerate(value) if c == "1")
            elif kind == "holiday":
                try:
                    holidays.append(dt.date.fromisoformat(value))
                except ValueError:
                    raise ParseError(path, lineno, f"malformed date {value!r}") from None
            else:
                raise ParseError(path, lineno, f"unknown row kind {kind!r}")
    if weekdays is None:
        raise ParseError(path, None, "missing weekday_mask row")
    try:
        return ReportingCalendar(weekdays=weekdays, holidays=frozenset(holidays))
    except ConfigError as exc:
        raise ParseError(path, None, str(exc)) from None


def write_calendar(calendar: ReportingCalendar, path) -> Path:
    path = Path(path)
    mask = "".join("1" if i in calendar.weekdays else "0" for i in range(7))
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["kind", "value"])
        w.writerow(["weekday_mask", mask])
        for h in sorted(calendar.holidays):
            w.writerow(["holiday", h.isoformat()])
    return path


@dataclass(frozen=True)
class Snapshot:
    """Cumulative counts per event date as published on ``report_date``."""

    report_date: dt.date
    counts: Mapping[dt.date, int] = field(default_factory=dict)

    def __post_init__(self):
        rd = parse_date(self.report_date)
        object.__setattr__(self, "report_date", rd)
        clean = {}
        for k, v in self.counts.items():
            day = parse_date(k)
            if day > rd:
                raise DataError(f"snapshot {rd}: event {day} after report date")
            if int(v) != v or v < 0:
                raise DataError(f"snapshot {rd}: count for {day} must be a non-negative integer, got {v}")
            clean[day] = int(v)
        object.__setattr__(self, "counts", dict(sorted(clean.items())))

    def get(self, day, default=0) -> int:
        return self.counts.get(parse_date(day), default)


def snapshot_path(directory, report_date) -> Path:
    return Path(directory) / f"{parse_date(report_date).isoformat()}.csv"


def write_snapshot(snapshot: Snapshot, directory) -> Path:
    """Serialise ``snapshot`` as ``<directory>/YYYY-MM-DD.csv``."""
    path = snapshot_path(directory, snapshot.report_date)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SNAPSHOT_HEADER)
        for day, count in snapshot.counts.items():
            w.writerow([day.isoformat(), count])
    return path


def ingest_snapshot(path, calendar: ReportingCalendar | None = None) -> Snapshot:
    """Parse one snapshot file.

    The report date comes from the file name (``YYYY-MM-DD.csv``). Errors
    name the offending line: malformed dates, negative or non-integer
    counts, events after the report date and duplicate event dates are all
    rejected. When a calendar is given, the report date must be one of its
    reporting days.
    """
    path = Path(path)
    m = _SNAPSHOT_NAME.match(path.name)
    if not m:
        raise ParseError(path, None, "file name must be YYYY-MM-DD.csv")
    try:
        report_date = dt.date.fromisoformat(m.group(1))
    except ValueError:
        raise ParseError(path, None, f"malformed report date in file name {path.name!r}") from None
    if calendar is not None and not calendar.is_reporting_day(report_date):
        raise ParseError(path, None, f"report date {report_date} is not a reporting day")

    counts: dict[dt.date, int] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != SNAPSHOT_HEADER:
            raise ParseError(path, 1, "expected header 'event_date,cumulative_count'")
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
                count = int(row[1].strip())
            except ValueError:
                raise ParseError(path, lineno, f"count {row[1]!r} is not an integer") from None
            if count < 0:
                raise ParseError(path, lineno, f"negative count {count}")
            if day > report_date:
                raise ParseError(path, lineno, f"event after report date ({day} > {report_date})")
            if day in counts:
                raise ParseError(path, lineno, f"duplicate event_date {day}")
            counts[day] = count
    return Snapshot(report_date, counts)


def load_snapshots(directory, calendar: ReportingCalendar | None = None, until=None) -> list[Snapshot]:
    """Ingest every ``YYYY-MM-DD.csv`` in ``directory`` (optionally up to ``until``)."""
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"snapshot directory {directory} does not exist")
    until = parse_date(until) if until is not None else None
    out = []
    for p in sorted(directory.iterdir()):
        m = _SNAPSHOT_NAME.match(p.name)
        if not m:
            continue
        if until is not None and dt.date.fromisoformat(m.group(1)) > until:
            continue
        out.append(ingest_snapshot(p, calendar))
    return out


def cell_report_ordinals(start: int, n_dates: int, max_delay: int, calendar: ReportingCalendar) -> np.ndarray:
    """Ordinal of the report day on which each triangle cell becomes known.

    Cell ``(t, d)`` with ``d < D`` is reported on ``t + d``. The last cell
    collects every event reported at ``t + D`` or later, so it is first
    published on the next reporting day on or after ``t + D``.
    """
    t = start + np.arange(n_dates)[:, None]
    rep = t + np.arange(max_delay + 1)[None, :]
    rep[:, max_delay] = calendar.next_reporting_ordinals(rep[:, max_delay])
    return rep


def structural_zero_mask(start: int, n_dates: int, max_delay: int, calendar: ReportingCalendar) -> np.ndarray:
    """True for cells ``d < D`` whose report day ``t + d`` carries no report."""
    t = start + np.arange(n_dates)[:, None]
    rep = t + np.arange(max_delay + 1)[None, :]
    out = ~calendar.mask(rep)
    out[:, max_delay] = False
    return out


@dataclass(frozen=True, eq=False)
class ReportingTriangle:
    """Incremental counts ``cells[t, d]`` for event dates ``start..now``.

    ``observed`` marks cells whose report day is on or before ``now``;
    ``structural_zero`` marks cells that can never hold a count because the
    report day is not a reporting day. The last delay column folds every
    delay ``>= max_delay``.
    """

    start: dt.date
    now: dt.date
    max_delay: int
    cells: np.ndarray
    observed: np.ndarray
    structural_zero: np.ndarray
    calendar: ReportingCalendar

    def __post_init__(self):
        for name in ("cells", "observed", "structural_zero"):
            arr = getattr(self, name)
            arr.setflags(write=False)
        if self.cells.shape != (self.n_dates, self.max_delay + 1):
            raise DataError(f"cells shape {self.cells.shape} does not match window and max_delay")

    @property
    def n_dates(self) -> int:
        return self.now.toordinal() - self.start.toordinal() + 1

    @property
    def ordinals(self) -> np.ndarray:
        return self.start.toordinal() + np.arange(self.n_dates)

    @property
    def dates(self) -> list[dt.date]:
        return [dt.date.fromordinal(int(o)) for o in self.ordinals]

    @property
    def likelihood_mask(self) -> np.ndarray:
        """Cells that enter the likelihood: observed and not structurally zero."""
        return self.observed & ~self.structural_zero

    @property
    def unobserved_mask(self) -> np.ndarray:
        """Cells still to be reported (excluding structural zeros)."""
        return ~self.observed & ~self.structural_zero

    @property
    def partial_totals(self) -> np.ndarray:
        """Events per date reported up to ``now``."""
        return np.where(self.observed, self.cells, 0).sum(axis=1)

    @property
    def complete_rows(self) -> np.ndarray:
        return self.observed.all(axis=1)

    def window(self, start) -> "ReportingTriangle":
        """Restrict to event dates ``start..now``."""
        start = parse_date(start)
        i = start.toordinal() - self.start.toordinal()
        if i < 0 or i >= self.n_dates:
            raise DataError(f"window start {start} outside triangle {self.start}..{self.now}")
        return ReportingTriangle(
            start, self.now, self.max_delay, self.cells[i:].copy(), self.observed[i:].copy(),
            self.structural_zero[i:].copy(), self.calendar,
        )


def build_triangle(
    snapshots: Sequence[Snapshot],
    now,
    max_delay: int,
    calendar: ReportingCalendar,
    start=None,
) -> ReportingTriangle:
    """Difference consecutive snapshots into the reporting triangle as of ``now``.

    Parameters
    ----------
    snapshots : sequence of Snapshot
        Published reports sorted by report date. Reports after ``now`` are
        ignored.
    now : date
        The nowcast date ``T``; must be a reporting day.
    max_delay : int
        ``D``. Increments reported after ``t + D`` are folded into ``d = D``.
    calendar : ReportingCalendar
    start : date, optional
        First event date of the window. Defaults to the earliest event date
        present in any snapshot.

    Notes
    -----
    A downward revision between two snapshots would produce a negative cell.
    The cell is clamped at zero, a warning is logged, and the deficit is
    netted against later increments of the same event date (ending in the
    fold-in cell), so that complete rows still sum to the latest cumulative
    count whenever enough later reports exist.
    """
    now = parse_date(now)
    if max_delay < 1:
        raise ConfigError(f"max_delay must be >= 1, got {max_delay}")
    if not calendar.is_reporting_day(now):
        raise DataError(f"now={now} is not a reporting day")
    snaps = [s for s in snapshots if s.report_date <= now]
    if not snaps:
        raise DataError(f"no snapshots on or before {now}")
    report_dates = [s.report_date for s in snaps]
    if any(b <= a for a, b in zip(report_dates, report_dates[1:])):
        raise DataError("snapshots must be sorted by strictly increasing report date")
    bad = [d for d in report_dates if not calendar.is_reporting_day(d)]
    if bad:
        raise DataError(f"snapshot dated {bad[0]} falls on a non-reporting day")

    if start is None:
        start = min((min(s.counts) for s in snaps if s.counts), default=now)
    start = parse_date(start)
    if start > now:
        raise DataError(f"window start {start} after now {now}")
    s0, T = start.toordinal(), now.toordinal()
    n_dates = T - s0 + 1
    D = max_delay

    first = snaps[0].report_date
    if start < first:
        logger.warning(
            "events before the first snapshot have unresolved delays",
            extra={"first_snapshot": first.isoformat(), "window_start": start.isoformat()},
        )
    expected = calendar.reporting_days(max(first, start), now)
    missing = sorted(set(expected) - set(report_dates))
    if missing:
        logger.warning(
            "missing snapshots for reporting days; increments move to the next report",
            extra={"missing": [d.isoformat() for d in missing]},
        )

    cum = np.zeros((n_dates, len(snaps)), dtype=np.int64)
    for j, s in enumerate(snaps):
        for day, c in s.counts.items():
            i = day.toordinal() - s0
            if 0 <= i < n_dates:
                cum[i, j] = c

    cells = np.zeros((n_dates, D + 1), dtype=np.int64)
    deficit = np.zeros(n_dates, dtype=np.int64)
    prev = np.zeros(n_dates, dtype=np.int64)
    rows = np.arange(n_dates)
    t_ord = s0 + rows
    for j, s in enumerate(snaps):
        raw = cum[:, j] - prev
        prev = cum[:, j]
        inc = raw - deficit
        neg = inc < 0
        if np.any(raw < 0):
            idx = rows[raw < 0]
            logger.warning(
                "negative increment clamped to zero",
                extra={
                    "report_date": s.report_date.isoformat(),
                    "event_dates": [dt.date.fromordinal(int(t_ord[i])).isoformat() for i in idx[:20]],
                },
            )
        deficit = np.where(neg, -inc, 0)
        inc = np.where(neg, 0, inc)
        d = s.report_date.toordinal() - t_ord
        ok = (d >= 0) & (inc > 0)
        cells[rows[ok], np.minimum(d[ok], D)] += inc[ok]
    if np.any(deficit > 0):
        logger.warning(
            "unresolved downward revisions at now",
            extra={"event_dates": [dt.date.fromordinal(int(o)).isoformat() for o in t_ord[deficit > 0]]},
        )

    report_ord = cell_report_ordinals(s0, n_dates, D, calendar)
    observed = report_ord <= T
    structural = structural_zero_mask(s0, n_dates, D, calendar)
    return ReportingTriangle(start, now, D, cells, observed, structural, calendar)


def final_counts(snapshot: Snapshot, dates: Iterable) -> np.ndarray:
    """Cumulative count of ``snapshot`` for each of ``dates`` (0 if absent)."""
    return np.array([snapshot.get(d) for d in dates], dtype=np.int64)
