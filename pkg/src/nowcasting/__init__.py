"""Bayesian nowcasting of delayed daily event counts.

Daily cumulative report snapshots are turned into a reporting triangle of
incremental counts, which is modelled as negative binomial with mean
``lambda_t * p_{t,d}``. The epidemic curve ``log lambda`` follows a random
walk (``R``), a regression on leading indicators (``L``) or a random walk
with indicator drift (``RL``); the delay probabilities come from a
discrete-time logit hazard model. Posterior predictive draws of the total
counts give the nowcast, and a rolling retrospective harness scores it.
"""

from .data import (
    ReportingCalendar,
    ReportingTriangle,
    Snapshot,
    build_triangle,
    ingest_snapshot,
    load_snapshots,
    read_calendar,
    write_snapshot,
)
from .delay import (
    DelayParams,
    HazardDesign,
    build_design,
    cumulative_reporting_probability,
    delay_probabilities,
    hazards,
)
from .epi import LatentPath, ModelSpec, PriorConfig, path_logdensity
from .errors import (
    ConfigError,
    DataError,
    DomainError,
    InferenceError,
    InitializationError,
    NowcastError,
    ParseError,
)
from .evaluation import ScoreReport, retrospective_evaluate
from .indicators import IndicatorSeries, apply_transform, read_indicator, select_lag, smooth
from .inference import PosteriorSamples, SamplerConfig, ess, rhat, run_mcmc
from .nowcast import NowcastResult, predictive_draws, quantiles
from .posterior import ParameterState, log_likelihood, log_posterior, nb_logpmf
from .scoring import coverage, crps, log_score, rmse
from .simulate import SimulationConfig, simulate_surveillance

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DataError",
    "DelayParams",
    "DomainError",
    "HazardDesign",
    "IndicatorSeries",
    "InferenceError",
    "InitializationError",
    "LatentPath",
    "ModelSpec",
    "NowcastError",
    "NowcastResult",
    "ParameterState",
    "ParseError",
    "PosteriorSamples",
    "PriorConfig",
    "ReportingCalendar",
    "ReportingTriangle",
    "SamplerConfig",
    "ScoreReport",
    "SimulationConfig",
    "Snapshot",
    "apply_transform",
    "build_design",
    "build_triangle",
    "coverage",
    "crps",
    "cumulative_reporting_probability",
    "delay_probabilities",
    "ess",
    "hazards",
    "ingest_snapshot",
    "load_snapshots",
    "log_likelihood",
    "log_posterior",
    "log_score",
    "nb_logpmf",
    "path_logdensity",
    "predictive_draws",
    "quantiles",
    "read_calendar",
    "read_indicator",
    "retrospective_evaluate",
    "rhat",
    "rmse",
    "run_mcmc",
    "select_lag",
    "simulate_surveillance",
    "smooth",
    "write_snapshot",
]
