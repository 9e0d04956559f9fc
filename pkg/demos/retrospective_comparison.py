"""Retrospective comparison of the R, L and RL models on the synthetic data.

Scores nowcasts made on the reporting dates in ``configs/synthetic_dates.txt``
against the final snapshot. Run from the repository root::

    python3 demos/retrospective_comparison.py [--quick]
"""

import argparse
import dataclasses
from pathlib import Path

import pandas as pd

from nowcasting.cli import read_dates_file
from nowcasting.config import load_config
from nowcasting.evaluation import retrospective_evaluate

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--quick", action="store_true", help="short chains and the last three dates only")
    args = parser.parse_args()

    dates = read_dates_file(CONFIGS / "synthetic_dates.txt")
    rows = []
    for variant in ("R", "L", "RL"):
        cfg = load_config(CONFIGS / f"synthetic_{variant}.json")
        sampler = cfg.sampler_config()
        if args.quick:
            sampler = dataclasses.replace(sampler, chains=2, warmup_iters=150, sampling_iters=150)
        report = retrospective_evaluate(
            dates[-3:] if args.quick else dates, cfg.model_spec(), cfg.data_root, cfg.data_root / "truth" / "2021-01-26.csv", sampler
        )
        rows.append(report.summary)
        print(f"{variant}: mean CRPS by days since the reporting date")
        print(report.horizon[["offset", "crps"]].head(8).round(2).to_string(index=False))
    print()
    print(pd.DataFrame(rows).set_index("model").round(3).to_string())


if __name__ == "__main__":
    main()
