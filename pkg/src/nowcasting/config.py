"""JSON run configuration shared by the command-line tools.

Every section is optional; unknown keys are rejected with the offending key
named. Relative paths are resolved against the directory of the config
file. Layout::

    {
      "data_root": "data/synthetic",
      "calendar": null,
      "model": {"variant": "RL",
                "indicators": [{"name": "icu", "path": "indicators/icu.csv",
                                "transform": "relative_weekly_change",
                                "lag": 14, "smoothing_width": 7}],
                "fixed_beta": null},
      "window_length": 84, "max_delay": 35, "breakpoint_spacing": 14,
      "priors": {"sigma_scale": 0.5, ...},
      "sampler": {"chains": 4, "warmup_iters": 1000, "sampling_iters": 1000,
                  "algorithm": "gradient_hmc", "target_acceptance": null},
      "seed": 0,
      "output_dir": "out",
      "nowcast": {"now": "2020-12-01", "include_draws": false},
      "evaluate": {"reporting_dates": [...], "dates_file": null, "truth": null},
      "simulate": {...},
      "select_lag": {...}
    }

Indicator paths in ``model`` are resolved against ``data_root`` when they
are relative.
"""

from __future__ import annotations

import dataclasses
import datetime as dt
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .data import ReportingCalendar, parse_date, read_calendar
from .epi import DEFAULT_TRANSFORM, ModelSpec, PriorConfig
from .errors import ConfigError, DataError
from .indicators import read_indicator
from .inference import SamplerConfig

TOP_LEVEL = {
    "data_root",
    "calendar",
    "model",
    "window_length",
    "max_delay",
    "breakpoint_spacing",
    "priors",
    "sampler",
    "seed",
    "output_dir",
    "nowcast",
    "evaluate",
    "simulate",
    "select_lag",
}
MODEL_KEYS = {"variant", "indicators", "fixed_beta", "init_sd"}
INDICATOR_KEYS = {"name", "path", "transform", "lag", "smoothing_width"}
SAMPLER_KEYS = {"chains", "warmup_iters", "sampling_iters", "algorithm", "target_acceptance", "max_leapfrog"}
NOWCAST_KEYS = {"now", "include_draws"}
EVALUATE_KEYS = {"reporting_dates", "dates_file", "truth"}
SIMULATE_KEYS = {
    "start",
    "n_days",
    "max_delay",
    "variant",
    "sigma",
    "lambda0",
    "phi",
    "gamma",
    "weekday_effects",
    "time_slope",
    "breakpoint_spacing",
    "beta",
    "leading_indicators",
    "indicator_history",
    "extra_report_days",
}
SELECT_LAG_KEYS = {"target", "indicator", "grid", "window", "model_form", "target_smoothing", "smoothing_width", "transform"}

DEFAULT_MAX_DELAY = 35
DEFAULT_WINDOW = 84
DEFAULT_SPACING = 14


def _check_keys(section: dict, allowed: set, where: str):
    if not isinstance(section, dict):
        raise ConfigError(f"{where} must be a JSON object")
    unknown = sorted(set(section) - allowed)
    if unknown:
        raise ConfigError(f"unknown key {unknown[0]!r} in {where}")


def _int(value, name: str, minimum: int | None = None) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
        raise ConfigError(f"{name} must be an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigError(f"{name} must be >= {minimum}, got {value}")
    return int(value)


def _date(value, name: str) -> dt.date:
    try:
        return parse_date(value)
    except (ValueError, TypeError, DataError):
        raise ConfigError(f"{name}: not an ISO date: {value!r}") from None


@dataclass(frozen=True)
class IndicatorConfig:
    name: str
    path: Path
    transform: str | None = None
    lag: int = 0
    smoothing_width: int = 7


@dataclass(frozen=True, eq=False)
class RunConfig:
    """Validated configuration; see the module docstring for the JSON layout."""

    base_dir: Path = Path(".")
    data_root: Path | None = None
    calendar_path: Path | None = None
    variant: str = "R"
    indicators: tuple = ()
    fixed_beta: tuple | None = None
    init_sd: float = 1.0
    window_length: int = DEFAULT_WINDOW
    max_delay: int = DEFAULT_MAX_DELAY
    breakpoint_spacing: int = DEFAULT_SPACING
    priors: PriorConfig = field(default_factory=PriorConfig)
    sampler: dict = field(default_factory=dict)
    seed: int = 0
    output_dir: Path | None = None
    nowcast: dict = field(default_factory=dict)
    evaluate: dict = field(default_factory=dict)
    simulate: dict = field(default_factory=dict)
    select_lag: dict = field(default_factory=dict)

    # -- derived objects -------------------------------------------------------
    def resolve(self, path, relative_to: Path | None = None) -> Path:
        p = Path(path)
        return p if p.is_absolute() else (relative_to or self.base_dir) / p

    def calendar(self) -> ReportingCalendar:
        if self.calendar_path is not None:
            return read_calendar(self.calendar_path)
        if self.data_root is not None and (self.data_root / "calendar.csv").exists():
            return read_calendar(self.data_root / "calendar.csv")
        return ReportingCalendar()

    def sampler_config(self, seed: int | None = None, workers: int = 1) -> SamplerConfig:
        kw = dict(self.sampler)
        kw.setdefault("algorithm", SamplerConfig.algorithm)
        return SamplerConfig(seed=self.seed if seed is None else seed, workers=workers, **kw)

    def model_spec(self) -> ModelSpec:
        inds = []
        root = self.data_root or self.base_dir
        for ic in self.indicators:
            transform = ic.transform or DEFAULT_TRANSFORM.get(self.variant, "raw")
            inds.append(
                read_indicator(
                    self.resolve(ic.path, root),
                    ic.name,
                    smoothing_width=ic.smoothing_width,
                    lag=ic.lag,
                    transform=transform,
                )
            )
        return ModelSpec(
            variant=self.variant,
            indicators=inds,
            priors=self.priors,
            max_delay=self.max_delay,
            breakpoint_spacing=self.breakpoint_spacing,
            window_length=self.window_length,
            fixed_beta=self.fixed_beta,
            init_sd=self.init_sd,
        )


def parse_config(raw: dict, base_dir: Path | str = ".") -> RunConfig:
    """Validate a decoded JSON object into a :class:`RunConfig`."""
    base = Path(base_dir)
    _check_keys(raw, TOP_LEVEL, "config")
    kw: dict[str, Any] = {"base_dir": base}
    if raw.get("data_root") is not None:
        kw["data_root"] = base / raw["data_root"] if not Path(raw["data_root"]).is_absolute() else Path(raw["data_root"])
    if raw.get("calendar") is not None:
        kw["calendar_path"] = base / raw["calendar"] if not Path(raw["calendar"]).is_absolute() else Path(raw["calendar"])
    if raw.get("output_dir") is not None:
        kw["output_dir"] = base / raw["output_dir"] if not Path(raw["output_dir"]).is_absolute() else Path(raw["output_dir"])

    model = raw.get("model", {})
    _check_keys(model, MODEL_KEYS, "model")
    if "variant" in model:
        kw["variant"] = str(model["variant"])
    inds = []
    for i, ind in enumerate(model.get("indicators", []) or []):
        where = f"model.indicators[{i}]"
        _check_keys(ind, INDICATOR_KEYS, where)
        if "name" not in ind or "path" not in ind:
            raise ConfigError(f"{where} needs 'name' and 'path'")
        inds.append(
            IndicatorConfig(
                name=str(ind["name"]),
                path=Path(ind["path"]),
                transform=ind.get("transform"),
                lag=_int(ind.get("lag", 0), f"{where}.lag", 0),
                smoothing_width=_int(ind.get("smoothing_width", 7), f"{where}.smoothing_width", 1),
            )
        )
    kw["indicators"] = tuple(inds)
    if model.get("fixed_beta") is not None:
        fb = model["fixed_beta"]
        if not isinstance(fb, list) or not all(isinstance(b, (int, float)) and not isinstance(b, bool) for b in fb):
            raise ConfigError("model.fixed_beta must be a list of numbers")
        kw["fixed_beta"] = tuple(float(b) for b in fb)
    if "init_sd" in model:
        kw["init_sd"] = float(model["init_sd"])

    for key, minimum in (("window_length", 2), ("max_delay", 1), ("breakpoint_spacing", 1)):
        if key in raw:
            kw[key] = _int(raw[key], key, minimum)
    if "seed" in raw:
        kw["seed"] = _int(raw["seed"], "seed", 0)
        if kw["seed"] >= 2**64:
            raise ConfigError("seed must fit in 64 bits")

    priors = raw.get("priors", {})
    _check_keys(priors, {f.name for f in dataclasses.fields(PriorConfig)}, "priors")
    kw["priors"] = PriorConfig(**priors)

    sampler = raw.get("sampler", {})
    _check_keys(sampler, SAMPLER_KEYS, "sampler")
    try:
        SamplerConfig(**sampler)  # validate early
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"sampler: {exc}") from None
    kw["sampler"] = dict(sampler)

    for key, allowed in (
        ("nowcast", NOWCAST_KEYS),
        ("evaluate", EVALUATE_KEYS),
        ("simulate", SIMULATE_KEYS),
        ("select_lag", SELECT_LAG_KEYS),
    ):
        section = raw.get(key, {})
        _check_keys(section, allowed, key)
        kw[key] = dict(section)
    if "now" in kw["nowcast"]:
        kw["nowcast"]["now"] = _date(kw["nowcast"]["now"], "nowcast.now")

    cfg = RunConfig(**kw)
    if cfg.variant == "R" and cfg.indicators:
        raise ConfigError("model R takes no indicators")
    if cfg.variant not in ("R", "L", "RL"):
        raise ConfigError(f"unknown model variant {cfg.variant!r}")
    if cfg.variant != "R" and not cfg.indicators:
        raise ConfigError(f"model {cfg.variant} needs at least one indicator")
    if not (math.isfinite(cfg.init_sd) and cfg.init_sd > 0):
        raise ConfigError("model.init_sd must be positive")
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from None
    return parse_config(raw, path.parent)
