"""Choose the lag of a leading indicator by least squares.

The shipped ICU series is a Poisson count at a fifth of incidence, generated
14 days ahead of it. With about ten admissions a day the argmin lands near 14
rather than exactly on it. Run from the repository root::

    python3 demos/lag_selection.py
"""

from pathlib import Path

import pandas as pd

from nowcasting.data import ingest_snapshot, read_calendar
from nowcasting.indicators import as_daily_series, lag_rss, read_indicator

ROOT = Path(__file__).resolve().parents[1] / "data" / "synthetic"


def main():
    calendar = read_calendar(ROOT / "calendar.csv")
    truth = ingest_snapshot(sorted((ROOT / "truth").glob("*.csv"))[-1], calendar)
    target = as_daily_series(truth.counts)
    window = (target.index[28].date(), target.index[-4].date())
    for form, transform in (("L", "log"), ("RL", "relative_weekly_change")):
        icu = read_indicator(ROOT / "indicators" / "icu.csv", transform=transform)
        table = lag_rss(target, icu, range(29), window, form, target_smoothing=7)
        rss = pd.Series(table, name="rss")
        best = int(rss.idxmin())
        print(f"model form {form}: selected lag {best}")
        print(rss.iloc[max(best - 3, 0) : best + 4].round(3).to_string())
        print()


if __name__ == "__main__":
    main()
