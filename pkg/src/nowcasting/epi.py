"""Epidemic-curve models for the expected daily count ``lambda_t``.

Three variants share one Gaussian form ``log lambda_t ~ N(mu_t, sigma^2)``:

* ``R``  -- random walk: ``mu_t = log lambda_{t-1}``
* ``L``  -- indicator regression: ``mu_t = beta_0 + sum_i beta_i m_{i,t}``
* ``RL`` -- random walk plus indicator terms:
  ``mu_t = log lambda_{t-1} + sum_i beta_i m_{i,t}``

For ``R`` and ``RL`` the first day of the window has the initial prior
``N(init_mean, init_sd^2)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, DomainError
from .indicators import IndicatorSeries, covariate_values

VARIANTS = ("R", "L", "RL")
DEFAULT_TRANSFORM = {"L": "log", "RL": "relative_weekly_change"}
_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class PriorConfig:
    """Prior scales. All are artifact defaults chosen for standardised covariates.

    * ``sigma_scale``: sigma ~ HalfNormal(sigma_scale)
    * ``phi_scale``: 1/sqrt(phi) ~ HalfNormal(phi_scale)
    * ``beta_scale``: regression coefficients ~ N(0, beta_scale^2)
    * ``intercept_scale``: the L intercept ~ N(0, intercept_scale^2)
    * ``gamma_scale``: baseline logit hazards ~ N(0, gamma_scale^2)
    * ``eta_scale``: hazard covariate effects ~ N(0, eta_scale^2)
    """

    sigma_scale: float = 0.5
    phi_scale: float = 1.0
    beta_scale: float = 1.0
    intercept_scale: float = 10.0
    gamma_scale: float = 2.0
    eta_scale: float = 1.0

    def __post_init__(self):
        for k, v in self.__dict__.items():
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise ConfigError(f"prior scale {k} must be a positive number, got {v!r}")


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """Model variant, its indicators and the hazard/window configuration.

    ``fixed_beta`` holds the regression coefficients at given values and
    removes them from the sampled parameters (and from the prior).
    """

    variant: str = "R"
    indicators: Sequence[IndicatorSeries] = ()
    priors: PriorConfig = field(default_factory=PriorConfig)
    max_delay: int = 35
    breakpoint_spacing: int = 14
    window_length: int = 84
    fixed_beta: Sequence[float] | None = None
    init_sd: float = 1.0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown model variant {self.variant!r}; expected one of {VARIANTS}")
        object.__setattr__(self, "indicators", tuple(self.indicators))
        if self.variant == "R" and self.indicators:
            raise ConfigError("model R takes no indicators")
        if self.variant != "R" and not self.indicators:
            raise ConfigError(f"model {self.variant} needs at least one indicator")
        names = [ind.name for ind in self.indicators]
        if len(set(names)) != len(names):
            raise ConfigError(f"indicator names must be unique, got {names}")
        if self.max_delay < 1:
            raise ConfigError("max_delay must be >= 1")
        if self.breakpoint_spacing < 1:
            raise ConfigError("breakpoint_spacing must be >= 1")
        if self.window_length < max(2, self.breakpoint_spacing):
            raise ConfigError("window_length must cover at least one breakpoint segment")
        if not self.init_sd > 0:
            raise ConfigError("init_sd must be positive")
        if self.fixed_beta is not None:
            fb = tuple(float(b) for b in self.fixed_beta)
            if len(fb) != self.n_beta:
                raise ConfigError(f"fixed_beta has {len(fb)} entries, model {self.variant} has {self.n_beta}")
            object.__setattr__(self, "fixed_beta", fb)

    @property
    def has_intercept(self) -> bool:
        return self.variant == "L"

    @property
    def n_beta(self) -> int:
        return len(self.indicators) + (1 if self.has_intercept else 0)

    @property
    def beta_names(self) -> tuple[str, ...]:
        names = tuple(f"beta[{ind.name}]" for ind in self.indicators)
        return (("beta[intercept]",) + names) if self.has_intercept else names

    @property
    def random_walk(self) -> bool:
        return self.variant in ("R", "RL")


@dataclass(frozen=True)
class LatentPath:
    """``log lambda`` over the window, the innovation scale and coefficients."""

    log_lambda: np.ndarray
    sigma: float
    beta: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        ll = np.asarray(self.log_lambda, dtype=float)
        object.__setattr__(self, "log_lambda", ll)
        object.__setattr__(self, "beta", np.asarray(self.beta, dtype=float).reshape(-1))
        if not self.sigma > 0:
            raise DomainError(f"sigma must be positive, got {self.sigma}")
        if not np.all(np.isfinite(ll)):
            raise DomainError("log_lambda must be finite")


def indicator_covariates(spec: ModelSpec, dates: Sequence, now=None) -> np.ndarray:
    """Covariate matrix ``m[t, i]`` (one column per indicator) for ``dates``.

    Only indicator values known on ``now`` are used.
    """
    if not spec.indicators:
        return np.zeros((len(dates), 0))
    return np.column_stack([covariate_values(ind, dates, now) for ind in spec.indicators])


def path_means(spec: ModelSpec, log_lambda: np.ndarray, beta: np.ndarray, covariates: np.ndarray) -> np.ndarray:
    """Conditional means ``mu_t``; for random-walk variants ``mu_0`` is undefined (NaN)."""
    x = np.asarray(log_lambda, dtype=float)
    beta = np.asarray(beta, dtype=float)
    mu = np.empty_like(x)
    if spec.variant == "L":
        mu[:] = beta[0] + covariates @ beta[1:]
        return mu
    mu[0] = np.nan
    mu[1:] = x[:-1]
    if spec.variant == "RL":
        mu[1:] = mu[1:] + covariates[1:] @ beta
    return mu


def normal_logpdf(x, mean, sd):
    z = (np.asarray(x) - mean) / sd
    return -0.5 * z * z - np.log(sd) - 0.5 * _LOG_2PI


def path_logdensity(
    spec: ModelSpec,
    path: LatentPath,
    covariates: np.ndarray | None = None,
    init_mean: float = 0.0,
) -> float:
    """Log density of the ``log lambda`` path under ``spec.variant``.

    Parameters
    ----------
    spec : ModelSpec
    path : LatentPath
    covariates : ndarray, shape (n_dates, n_indicators)
        Aligned, transformed and lagged indicator values (see
        :func:`indicator_covariates`). Ignored for model R.
    init_mean : float
        Mean of the initial prior on ``log lambda_0`` (R and RL).
    """
    x = path.log_lambda
    n = x.size
    k = len(spec.indicators)
    if covariates is None:
        covariates = np.zeros((n, k))
    covariates = np.asarray(covariates, dtype=float)
    if covariates.shape != (n, k):
        raise DomainError(f"covariates shape {covariates.shape}, expected {(n, k)}")
    if path.beta.size != spec.n_beta:
        raise DomainError(f"beta has {path.beta.size} entries, model {spec.variant} needs {spec.n_beta}")
    mu = path_means(spec, x, path.beta, covariates)
    if spec.variant == "L":
        return float(np.sum(normal_logpdf(x, mu, path.sigma)))
    init = normal_logpdf(x[0], init_mean, spec.init_sd)
    return float(init + np.sum(normal_logpdf(x[1:], mu[1:], path.sigma)))
