"""Command-line interface: ``nowcast``, ``evaluate``, ``simulate`` and ``select-lag``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 inference
failure. Errors are also written to standard error as one JSON object per
line, e.g. ``{"error": "config", "exit_code": 2, "message": "..."}``.
"""

from __future__ import annotations

import argparse
import datetime as dt
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from .config import RunConfig, load_config, parse_config
from .data import Snapshot, build_triangle, ingest_snapshot, load_snapshots, parse_date
from .errors import ConfigError, DataError, DomainError, InferenceError
from .evaluation import retrospective_evaluate
from .indicators import as_daily_series, lag_rss, read_indicator
from .inference import run_mcmc
from .nowcast import (
    beta_summary,
    cumulative_probability_frame,
    predictive_draws,
    write_frame,
    write_nowcast_csv,
    write_nowcast_json,
)
from .simulate import LeadingIndicator, SimulationConfig, simulate_surveillance, write_dataset

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_INFERENCE = 0, 2, 3, 4

log = logging.getLogger("nowcasting")


# -- helpers -----------------------------------------------------------------------
def _config(args) -> RunConfig:
    if args.config is None:
        return parse_config({}, Path.cwd())
    return load_config(args.config)


def _seed(args, cfg: RunConfig) -> int:
    return cfg.seed if args.seed is None else args.seed


def _out_dir(args, cfg: RunConfig) -> Path:
    out = Path(args.out) if args.out else cfg.output_dir
    if out is None:
        raise ConfigError("no output directory: pass --out or set output_dir")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _data_root(cfg: RunConfig) -> Path:
    if cfg.data_root is None:
        raise ConfigError("data_root is not set")
    return cfg.data_root


def read_dates_file(path) -> list[dt.date]:
    """One ISO date per line; blank lines, ``#`` comments and a ``reporting_date`` header are skipped."""
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DataError(f"cannot read dates file {path}: {exc.strerror}") from None
    out = []
    for lineno, line in enumerate(lines, start=1):
        text = line.split("#", 1)[0].strip().split(",")[0].strip()
        if not text or text == "reporting_date":
            continue
        try:
            out.append(dt.date.fromisoformat(text))
        except ValueError:
            raise DataError(f"{path}:{lineno}: not an ISO date: {text!r}") from None
    return out


def _parse_grid(text: str) -> list[int]:
    """``"0:28"`` (inclusive range) or ``"0,7,14"``."""
    text = text.strip()
    if not text:
        return []
    try:
        if ":" in text:
            lo, hi = (int(v) for v in text.split(":"))
            return list(range(lo, hi + 1))
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse lag grid {text!r}") from None


# -- commands ------------------------------------------------------------------------
def cmd_nowcast(args) -> int:
    cfg = _config(args)
    spec = cfg.model_spec()
    calendar = cfg.calendar()
    now = parse_date(args.now) if args.now else cfg.nowcast.get("now")
    if now is None:
        raise ConfigError("no nowcast date: pass --now or set nowcast.now")
    seed = _seed(args, cfg)
    out = _out_dir(args, cfg)
    snapshots = load_snapshots(_data_root(cfg) / "snapshots", calendar, until=now)
    if not snapshots or snapshots[-1].report_date != now:
        raise DataError(f"no snapshot for {now}")
    triangle = build_triangle(snapshots, now, spec.max_delay, calendar)
    samples = run_mcmc(spec, triangle, cfg.sampler_config(seed, args.workers))
    result = predictive_draws(samples, triangle, spec, seed=seed)

    write_nowcast_csv(result, out / "nowcast.csv")
    write_nowcast_json(result, out / "nowcast.json", include_draws=bool(cfg.nowcast.get("include_draws", False)))
    write_frame(result.delay_summary, out / "delay_summary.csv")
    write_frame(cumulative_probability_frame(result), out / "cumulative_probability.csv")
    write_frame(result.lambda_summary(), out / "lambda.csv")
    diag = samples.diagnostics.reset_index()
    write_frame(diag, out / "diagnostics.csv")
    if spec.variant != "R":
        write_frame(beta_summary(samples), out / "beta.csv")
    worst = float(np.nanmax(diag["rhat"])) if diag["rhat"].notna().any() else math.nan
    print(json.dumps({"now": now.isoformat(), "output_dir": str(out), "max_rhat": worst}))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    spec = cfg.model_spec()
    calendar = cfg.calendar()
    root = _data_root(cfg)
    ev = cfg.evaluate
    if args.dates:
        dates = read_dates_file(args.dates)
    elif ev.get("dates_file"):
        dates = read_dates_file(cfg.resolve(ev["dates_file"]))
    else:
        dates = [parse_date(d) for d in ev.get("reporting_dates", [])]
    if not dates:
        raise ConfigError("no reporting dates: pass --dates or set evaluate.reporting_dates")
    truth = args.truth or ev.get("truth")
    if truth is None:
        truth_dir = root / "truth"
        files = sorted(truth_dir.glob("*.csv")) if truth_dir.is_dir() else []
        if not files:
            raise DataError(f"no truth snapshot: {truth_dir} is empty and none was given")
        truth = files[-1]
    truth = cfg.resolve(truth) if not isinstance(truth, Snapshot) else truth
    if not Path(truth).exists():
        raise DataError(f"truth snapshot {truth} does not exist")
    seed = _seed(args, cfg)
    out = _out_dir(args, cfg)
    report = retrospective_evaluate(
        dates, spec, root, truth, cfg.sampler_config(seed), calendar=calendar, workers=args.workers
    )
    report.write(out)
    print(json.dumps(report.summary))
    return EXIT_OK


def _simulation_config(cfg: RunConfig, seed: int) -> SimulationConfig:
    sim = dict(cfg.simulate)
    kw = {"seed": seed, "calendar": cfg.calendar()}
    for key in ("n_days", "max_delay", "breakpoint_spacing", "indicator_history", "extra_report_days"):
        if key in sim:
            kw[key] = int(sim[key])
    for key in ("sigma", "phi", "time_slope"):
        if key in sim:
            kw[key] = float(sim[key])
    if "start" in sim:
        kw["start"] = parse_date(sim["start"])
    if "lambda0" in sim:
        if not float(sim["lambda0"]) > 0:
            raise ConfigError("simulate.lambda0 must be positive")
        kw["log_lambda0"] = math.log(float(sim["lambda0"]))
    if "gamma" in sim:
        kw["gamma"] = [float(g) for g in sim["gamma"]]
    if "weekday_effects" in sim:
        kw["weekday_effects"] = {str(k): float(v) for k, v in sim["weekday_effects"].items()}
    variant = sim.get("variant", "R")
    kw["variant"] = variant
    if variant != "R":
        kw["indicators"] = cfg.model_spec().indicators
        kw["beta"] = [float(b) for b in sim.get("beta", [])]
    kw["leading_indicators"] = [
        LeadingIndicator(str(li["name"]), int(li["lead"]), float(li.get("ratio", 1.0)))
        for li in sim.get("leading_indicators", [])
    ]
    return SimulationConfig(**kw)


def cmd_simulate(args) -> int:
    cfg = _config(args)
    seed = _seed(args, cfg)
    out = _out_dir(args, cfg)
    result = simulate_surveillance(_simulation_config(cfg, seed))
    paths = write_dataset(result, out)
    print(json.dumps({"output_dir": str(out), "snapshots": len(result.snapshots), "truth": str(paths["truth"])}))
    return EXIT_OK


def _read_target(path) -> pd.Series:
    """Daily target counts from a ``date,value`` CSV or a snapshot file."""
    path = Path(path)
    try:
        header = path.read_text(encoding="utf-8").splitlines()[0].strip()
    except (OSError, IndexError):
        raise DataError(f"cannot read target file {path}") from None
    if header.startswith("event_date"):
        snap = ingest_snapshot(path)
        return as_daily_series({d: v for d, v in snap.counts.items()})
    return read_indicator(path, "target", smoothing_width=1).values


def cmd_select_lag(args) -> int:
    cfg = _config(args)
    sl = cfg.select_lag
    target = args.target or sl.get("target")
    indicator = args.indicator or sl.get("indicator")
    if target is None or indicator is None:
        raise ConfigError("select-lag needs --target and --indicator")
    grid = _parse_grid(args.grid) if args.grid is not None else list(sl.get("grid", range(29)))
    if not grid:
        raise ConfigError("lag grid is empty")
    window = tuple(args.window) if args.window else tuple(sl.get("window", ("2020-04-01", "2020-10-19")))
    form = args.model_form or sl.get("model_form", "L")
    default_transform = "log" if form == "L" else "relative_weekly_change"
    ind = read_indicator(
        cfg.resolve(indicator) if args.indicator is None else Path(indicator),
        smoothing_width=int(sl.get("smoothing_width", 7)),
        transform=sl.get("transform", default_transform),
    )
    y = _read_target(cfg.resolve(target) if args.target is None else Path(target))
    table = lag_rss(y, ind, grid, window, form, int(sl.get("target_smoothing", 1)))
    best = min(sorted(table), key=lambda k: table[k])
    frame = pd.DataFrame({"lag": list(table), "rss": list(table.values())})
    if args.out:
        write_frame(frame, Path(args.out) / "lag_rss.csv")
    print(f"selected lag: {best}")
    for lag, rss in table.items():
        print(f"{lag:4d}  {rss!r}")
    return EXIT_OK


# -- entry point -------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nowcasting", description="Bayesian nowcasting of delayed count reports.")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more log output on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required: bool):
        p.add_argument("--config", required=config_required, help="JSON run configuration")
        p.add_argument("--seed", type=int, default=None, help="master seed (overrides the config)")
        p.add_argument("--out", default=None, help="output directory (overrides the config)")
        p.add_argument("--workers", type=int, default=1, help="parallel processes for chains or dates")

    p = sub.add_parser("nowcast", help="fit the model on one reporting date and export the nowcast")
    common(p, True)
    p.add_argument("--now", default=None, help="reporting date (YYYY-MM-DD)")
    p.set_defaults(func=cmd_nowcast)

    p = sub.add_parser("evaluate", help="rolling retrospective evaluation against a truth snapshot")
    common(p, True)
    p.add_argument("--dates", default=None, help="file with one reporting date per line")
    p.add_argument("--truth", default=None, help="truth snapshot CSV")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("simulate", help="write a synthetic dataset with known parameters")
    common(p, False)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("select-lag", help="choose an indicator lag by least squares")
    common(p, False)
    p.add_argument("--target", default=None, help="target counts: date,value CSV or snapshot CSV")
    p.add_argument("--indicator", default=None, help="indicator date,value CSV")
    p.add_argument("--grid", default=None, help='lags to try, "0:28" or "0,7,14"')
    p.add_argument("--window", nargs=2, metavar=("START", "END"), default=None, help="fit window")
    p.add_argument("--model-form", choices=("L", "RL"), default=None)
    p.set_defaults(func=cmd_select_lag)
    return parser


def _fail(kind: str, code: int, exc: BaseException) -> int:
    sys.stderr.write(json.dumps({"error": kind, "exit_code": code, "message": str(exc)}) + "\n")
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s"
    )
    if args.workers < 1:
        return _fail("config", EXIT_CONFIG, ConfigError("--workers must be >= 1"))
    if args.seed is not None and not 0 <= args.seed < 2**64:
        return _fail("config", EXIT_CONFIG, ConfigError("--seed must be a 64-bit unsigned integer"))
    try:
        return args.func(args)
    except ConfigError as exc:
        return _fail("config", EXIT_CONFIG, exc)
    except (DataError, DomainError) as exc:
        return _fail("data", EXIT_DATA, exc)
    except InferenceError as exc:
        return _fail("inference", EXIT_INFERENCE, exc)


if __name__ == "__main__":
    sys.exit(main())
