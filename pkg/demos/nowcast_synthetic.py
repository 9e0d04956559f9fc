"""Nowcast the shipped synthetic dataset and compare with the known truth.

Run from the repository root::

    python3 demos/nowcast_synthetic.py [--quick]
"""

import argparse
import datetime as dt
from pathlib import Path

from nowcasting.data import build_triangle, final_counts, ingest_snapshot, load_snapshots, read_calendar
from nowcasting.epi import ModelSpec
from nowcasting.inference import SamplerConfig, run_mcmc
from nowcasting.nowcast import predictive_draws

ROOT = Path(__file__).resolve().parents[1] / "data" / "synthetic"


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--quick", action="store_true", help="short chains for a fast look")
    parser.add_argument("--now", default="2020-12-25")
    args = parser.parse_args()

    calendar = read_calendar(ROOT / "calendar.csv")
    now = dt.date.fromisoformat(args.now)
    snapshots = load_snapshots(ROOT / "snapshots", calendar, until=now)
    triangle = build_triangle(snapshots, now, 21, calendar)
    spec = ModelSpec("R", max_delay=21)
    iters = 200 if args.quick else 1000
    sampler = SamplerConfig(chains=4, warmup_iters=iters, sampling_iters=iters, seed=1)

    samples = run_mcmc(spec, triangle, sampler)
    result = predictive_draws(samples, triangle, spec, seed=1)
    diag = samples.diagnostics
    print(f"max split R-hat {diag['rhat'].max():.3f}, min ESS {diag['ess'].min():.0f}")

    truth = ingest_snapshot(sorted((ROOT / "truth").glob("*.csv"))[-1], calendar)
    final = final_counts(truth, result.dates)
    q = result.quantiles((0.025, 0.5, 0.975))
    print("event_date  observed  nowcast [95% PI]     final")
    for i in range(len(result.dates) - 21, len(result.dates)):
        print(
            f"{result.dates[i]}  {result.observed[i]:8d}  {q[0.5][i]:5d} [{q[0.025][i]:4d}, {q[0.975][i]:4d}]  {final[i]:6d}"
        )
    inside = (final >= q[0.025]) & (final <= q[0.975])
    print(f"95% PI covers the final count on {inside.mean():.0%} of the {len(final)} window days")


if __name__ == "__main__":
    main()
