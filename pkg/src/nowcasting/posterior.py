"""Joint log-posterior of the nowcasting model.

Observed triangle cells are negative binomial,
``n[t, d] ~ NB(lambda_t * p[t, d], phi)`` with variance ``mu + mu^2 / phi``.
Together with the path density of :mod:`nowcasting.epi` and the priors this
gives the target that the samplers explore on an unconstrained scale
(``log sigma``, ``log phi``; the Jacobians are part of the prior term).

Two routes compute the same number: the scalar functions
(:func:`log_likelihood`, :func:`log_prior`, :func:`log_posterior`) are
written for clarity, :class:`NowcastPosterior` for speed and gradients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import betaln, digamma

from .data import ReportingTriangle
from .delay import (
    DelayParams,
    HazardDesign,
    build_design,
    delay_probabilities,
    hazard_matrix,
    log_delay_probabilities,
)
from .epi import LatentPath, ModelSpec, indicator_covariates, normal_logpdf, path_logdensity
from ._kernels import row_loglik
from .errors import DataError, DomainError, InferenceError

_LOG_2 = math.log(2.0)
_LOG_2PI = math.log(2.0 * math.pi)
_MAX_LOG = 300.0  # keeps sigma**-2 and phi finite


@dataclass(frozen=True)
class ParameterState:
    """One point in parameter space on the natural scale."""

    path: LatentPath
    delay: DelayParams
    phi: float

    def __post_init__(self):
        if not (math.isfinite(self.phi) and self.phi > 0):
            raise DomainError(f"phi must be positive and finite, got {self.phi}")


def nb_logpmf(y, mu, phi):
    """Negative binomial log pmf with mean ``mu`` and variance ``mu + mu^2/phi``.

    Vectorised over all arguments. Large ``phi`` approaches the Poisson pmf.
    """
    y = np.asarray(y, dtype=float)
    mu = np.asarray(mu, dtype=float)
    phi = np.asarray(phi, dtype=float)
    if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(phi)) and np.all(np.isfinite(y))):
        raise DomainError("nb_logpmf inputs must be finite")
    if np.any(mu <= 0) or np.any(phi <= 0):
        raise DomainError("nb_logpmf needs mu > 0 and phi > 0")
    if np.any(y < 0) or np.any(y != np.floor(y)):
        raise DomainError("nb_logpmf needs non-negative integer y")
    out = _nb_logpmf(y, mu, phi)
    return float(out) if out.ndim == 0 else out


def _nb_logpmf(y, mu, phi):
    # log C(y+phi-1, y) = -betaln(y+1, phi) - log(y+phi); accurate for huge phi
    return (
        -betaln(y + 1.0, phi)
        - np.log(y + phi)
        - phi * np.log1p(mu / phi)
        + y * (np.log(mu) - np.log(phi + mu))
    )


def model_window(triangle: ReportingTriangle, spec: ModelSpec) -> ReportingTriangle:
    """The last ``spec.window_length`` event dates of ``triangle``."""
    if triangle.max_delay != spec.max_delay:
        raise DataError(f"triangle max_delay {triangle.max_delay} != model max_delay {spec.max_delay}")
    if triangle.n_dates < spec.window_length:
        raise DataError(f"triangle covers {triangle.n_dates} days, model window needs {spec.window_length}")
    if triangle.n_dates == spec.window_length:
        return triangle
    start = triangle.dates[-spec.window_length]
    return triangle.window(start)


def design_for(triangle: ReportingTriangle, spec: ModelSpec) -> HazardDesign:
    return build_design(
        (triangle.start, triangle.now), triangle.now, spec.max_delay, spec.breakpoint_spacing, triangle.calendar
    )


def initial_mean(triangle: ReportingTriangle) -> float:
    """Centre of the initial prior: log of the mean observed total of the first 7 days, floored at 1."""
    first = triangle.partial_totals[:7]
    return math.log(max(float(np.mean(first)), 1.0))


def log_likelihood(
    triangle: ReportingTriangle,
    state: ParameterState,
    spec: ModelSpec,
    design: HazardDesign | None = None,
) -> float:
    """Sum of NB log pmfs over observed, non-structural cells.

    A cell with ``p = 0`` contributes 0 when its count is 0 and ``-inf``
    otherwise.
    """
    design = design or design_for(triangle, spec)
    lam = np.exp(state.path.log_lambda)
    if lam.size != triangle.n_dates:
        raise DomainError(f"path has {lam.size} dates, triangle {triangle.n_dates}")
    p = delay_probabilities(hazard_matrix(state.delay, design))
    total = 0.0
    for t, d in zip(*np.nonzero(triangle.likelihood_mask)):
        n = triangle.cells[t, d]
        mu = lam[t] * p[t, d]
        if mu <= 0:
            if n > 0:
                return -math.inf
            continue
        total += float(_nb_logpmf(float(n), mu, state.phi))
    return total


def softplus(a):
    """``log(1 + exp(a))`` without overflow."""
    return np.maximum(a, 0.0) + np.log1p(np.exp(-np.abs(a)))


def halfnormal_logpdf(x, scale):
    return _LOG_2 - 0.5 * _LOG_2PI - math.log(scale) - 0.5 * (x / scale) ** 2


def log_prior(state: ParameterState, spec: ModelSpec) -> float:
    """Prior log density on the unconstrained scale (``log sigma``, ``log phi``).

    Includes the Jacobians of both log transforms. Regression coefficients
    held by ``spec.fixed_beta`` carry no prior term.
    """
    pr = spec.priors
    sigma, phi = state.path.sigma, state.phi
    lp = halfnormal_logpdf(sigma, pr.sigma_scale) + math.log(sigma)
    u = phi ** -0.5
    lp += halfnormal_logpdf(u, pr.phi_scale) + math.log(u) - _LOG_2
    lp += float(np.sum(normal_logpdf(state.delay.gamma, 0.0, pr.gamma_scale)))
    lp += float(np.sum(normal_logpdf(state.delay.eta, 0.0, pr.eta_scale)))
    if spec.fixed_beta is None and spec.n_beta:
        beta = state.path.beta
        if spec.has_intercept:
            lp += float(normal_logpdf(beta[0], 0.0, pr.intercept_scale))
            beta = beta[1:]
        lp += float(np.sum(normal_logpdf(beta, 0.0, pr.beta_scale)))
    return lp


def log_posterior(
    state: ParameterState,
    triangle: ReportingTriangle,
    spec: ModelSpec,
    design: HazardDesign | None = None,
) -> float:
    """``log_likelihood + path_logdensity + log_prior``."""
    design = design or design_for(triangle, spec)
    cov = indicator_covariates(spec, triangle.dates, triangle.now)
    total = (
        log_likelihood(triangle, state, spec, design)
        + path_logdensity(spec, state.path, cov, initial_mean(triangle))
        + log_prior(state, spec)
    )
    if math.isnan(total) or total == math.inf:
        raise InferenceError(f"log posterior evaluated to {total}")
    return total


class NowcastPosterior:
    """Vectorised log posterior over a flat unconstrained parameter vector.

    The vector is laid out as ``log_lambda`` (one per event date), ``gamma``
    (D), ``eta`` (hazard covariates), free ``beta`` entries, ``log_sigma``
    and ``log_phi``.
    """

    def __init__(self, spec: ModelSpec, triangle: ReportingTriangle, design: HazardDesign | None = None):
        self.spec = spec
        self.triangle = triangle
        self.design = design or design_for(triangle, spec)
        if self.design.n_dates != triangle.n_dates or self.design.now != triangle.now:
            raise DataError("hazard design does not match the triangle window")
        self.covariates = indicator_covariates(spec, triangle.dates, triangle.now)
        self.init_mean = initial_mean(triangle)
        self.n_dates = triangle.n_dates
        self.D = spec.max_delay
        self.K = self.design.n_covariates
        self.n_free_beta = spec.n_beta if spec.fixed_beta is None else 0
        self.fixed_beta = None if spec.fixed_beta is None else np.array(spec.fixed_beta, dtype=float)

        mask = triangle.likelihood_mask
        self.obs_t, self.obs_d = np.nonzero(mask)
        self.y = triangle.cells[mask].astype(float)
        self._W = np.ascontiguousarray(self.design.W)
        self._Wflat = self._W.reshape(-1, self.K)
        self._reporting = np.ascontiguousarray(self.design.reporting)
        # phi-only special functions are evaluated once per distinct count
        self._y_unique, self._y_inverse, y_counts = np.unique(self.y, return_inverse=True, return_counts=True)
        self._y_weight = y_counts.astype(float)
        self._row_ptr = np.searchsorted(self.obs_t, np.arange(self.n_dates + 1)).astype(np.int64)
        self._obs_d = self.obs_d.astype(np.int64)
        self._phi_cache = (None, None)

        sizes = [
            ("log_lambda", self.n_dates),
            ("gamma", self.D),
            ("eta", self.K),
            ("beta", self.n_free_beta),
            ("log_sigma", 1),
            ("log_phi", 1),
        ]
        self.slices = {}
        pos = 0
        for name, size in sizes:
            self.slices[name] = slice(pos, pos + size)
            pos += size
        self.dim = pos

    # -- layout -----------------------------------------------------------
    @property
    def parameter_names(self) -> list[str]:
        dates = [d.isoformat() for d in self.triangle.dates]
        names = [f"log_lambda[{d}]" for d in dates]
        names += [f"gamma[{d}]" for d in range(self.D)]
        names += [f"eta[{c}]" for c in self.design.column_names]
        if self.n_free_beta:
            names += list(self.spec.beta_names)
        return names + ["log_sigma", "log_phi"]

    def beta_of(self, x) -> np.ndarray:
        if self.fixed_beta is not None:
            return self.fixed_beta
        return x[..., self.slices["beta"]]

    def unpack(self, x) -> ParameterState:
        x = np.asarray(x, dtype=float)
        s = self.slices
        path = LatentPath(x[s["log_lambda"]].copy(), math.exp(x[s["log_sigma"]][0]), np.array(self.beta_of(x)))
        delay = DelayParams(x[s["gamma"]].copy(), x[s["eta"]].copy())
        return ParameterState(path, delay, math.exp(x[s["log_phi"]][0]))

    def pack(self, state: ParameterState) -> np.ndarray:
        x = np.empty(self.dim)
        s = self.slices
        x[s["log_lambda"]] = state.path.log_lambda
        x[s["gamma"]] = state.delay.gamma
        x[s["eta"]] = state.delay.eta
        if self.n_free_beta:
            x[s["beta"]] = state.path.beta
        x[s["log_sigma"]] = math.log(state.path.sigma)
        x[s["log_phi"]] = math.log(state.phi)
        return x

    # -- pieces -------------------------------------------------------------
    def _cell_constants(self, phi):
        """Per-cell ``log C(y + phi - 1, y) - y log phi``; cached for the last ``phi``."""
        key, val = self._phi_cache
        if key != phi:
            yu = self._y_unique
            val = (-betaln(yu + 1.0, phi) - np.log(yu + phi) - yu * math.log(phi))[self._y_inverse]
            self._phi_cache = (phi, val)
        return val

    def log_p(self, gamma, eta) -> np.ndarray:
        """Log delay probabilities, shape (n_dates, D + 1)."""
        return log_delay_probabilities(self._logits(gamma, eta), self._reporting)

    def _logits(self, gamma, eta):
        return (self._Wflat @ eta).reshape(self.n_dates, self.D) + gamma

    def _likelihood(self, x, want_grad):
        s = self.slices
        phi = math.exp(x[s["log_phi"]][0])
        logits = self._logits(x[s["gamma"]], x[s["eta"]])
        rows = np.empty(self.n_dates)
        g_ll = np.empty(self.n_dates if want_grad else 0)
        d_logits = np.empty((self.n_dates, self.D) if want_grad else (0, 0))
        dphi = np.zeros(1)
        row_loglik(
            np.ascontiguousarray(x[s["log_lambda"]]), logits, self._reporting, self._row_ptr, self._obs_d,
            self.y, self._cell_constants(phi), phi, rows, want_grad, g_ll, d_logits, dphi,
        )
        return rows, g_ll, d_logits, float(dphi[0])

    def loglik_rows(self, x) -> np.ndarray:
        """Likelihood contribution of each event date."""
        return self._likelihood(np.asarray(x, dtype=float), False)[0]

    def _residuals(self, x_ll, beta):
        """Standardisation-free residuals ``log lambda_t - mu_t`` of the path model."""
        cov = self.covariates
        if self.spec.variant == "L":
            return x_ll - (beta[0] + cov @ beta[1:])
        r = x_ll[1:] - x_ll[:-1]
        if self.spec.variant == "RL":
            r = r - cov[1:] @ beta
        return r

    def path_terms(self, x) -> np.ndarray:
        """Per-date path log densities; for R/RL entry 0 is the initial prior."""
        s = self.slices
        x_ll = x[s["log_lambda"]]
        sigma = math.exp(x[s["log_sigma"]][0])
        r = self._residuals(x_ll, self.beta_of(x))
        trans = -0.5 * (r / sigma) ** 2 - math.log(sigma) - 0.5 * _LOG_2PI
        if self.spec.variant == "L":
            return trans
        init = normal_logpdf(x_ll[0], self.init_mean, self.spec.init_sd)
        return np.concatenate([[init], trans])

    def prior(self, x) -> float:
        s = self.slices
        pr = self.spec.priors
        ls, lphi = x[s["log_sigma"]][0], x[s["log_phi"]][0]
        sigma = math.exp(ls)
        u = math.exp(-0.5 * lphi)
        lp = halfnormal_logpdf(sigma, pr.sigma_scale) + ls
        lp += halfnormal_logpdf(u, pr.phi_scale) + math.log(u) - _LOG_2
        lp += float(np.sum(normal_logpdf(x[s["gamma"]], 0.0, pr.gamma_scale)))
        lp += float(np.sum(normal_logpdf(x[s["eta"]], 0.0, pr.eta_scale)))
        if self.n_free_beta:
            beta = x[s["beta"]]
            if self.spec.has_intercept:
                lp += float(normal_logpdf(beta[0], 0.0, pr.intercept_scale))
                beta = beta[1:]
            lp += float(np.sum(normal_logpdf(beta, 0.0, pr.beta_scale)))
        return lp

    def components(self, x) -> dict[str, float]:
        x = np.asarray(x, dtype=float)
        return {
            "log_likelihood": float(self.loglik_rows(x).sum()),
            "path": float(self.path_terms(x).sum()),
            "prior": self.prior(x),
        }

    def _out_of_range(self, x) -> bool:
        # scale parameters beyond exp's range have zero posterior mass numerically
        s = self.slices
        return not (abs(x[s["log_sigma"]][0]) < _MAX_LOG and abs(x[s["log_phi"]][0]) < _MAX_LOG)

    def logp(self, x) -> float:
        x = np.asarray(x, dtype=float)
        if self._out_of_range(x):
            return -math.inf
        val = float(self.loglik_rows(x).sum()) + float(self.path_terms(x).sum()) + self.prior(x)
        return val if not math.isnan(val) else -math.inf

    def local_log_lambda(self, x) -> np.ndarray:
        """For each date, the sum of all terms that involve ``log_lambda[t]``.

        Dates of equal parity share no term under any variant, which allows
        simultaneous single-site updates of all even (or all odd) dates.
        """
        rows = self.loglik_rows(x)
        pt = self.path_terms(x)
        if self.spec.variant == "L":
            return rows + pt
        local = rows + pt
        local[:-1] += pt[1:]
        return local

    # -- gradient -----------------------------------------------------------
    def logp_and_grad(self, x):
        x = np.asarray(x, dtype=float)
        if self._out_of_range(x):
            return -math.inf, np.zeros(self.dim)
        # far-out states (diverged trajectories) may overflow; treat them as outside the support
        with np.errstate(over="ignore", invalid="ignore"):
            val, grad = self._logp_and_grad(x)
        if not (math.isfinite(val) and np.all(np.isfinite(grad))):
            return -math.inf, np.zeros(self.dim)
        return val, grad

    def _logp_and_grad(self, x):
        s = self.slices
        pr = self.spec.priors
        x_ll, gamma, eta = x[s["log_lambda"]], x[s["gamma"]], x[s["eta"]]
        ls, lphi = x[s["log_sigma"]][0], x[s["log_phi"]][0]
        sigma, phi = math.exp(ls), math.exp(lphi)
        beta = self.beta_of(x)
        grad = np.zeros(self.dim)

        # likelihood
        rows, g_ll, d_logits, dphi_mu = self._likelihood(x, True)
        ll = float(rows.sum())
        grad[s["log_lambda"]] = g_ll
        grad[s["gamma"]] = d_logits.sum(axis=0)
        grad[s["eta"]] = d_logits.ravel() @ self._Wflat
        dig = digamma(self._y_unique + phi) - digamma(phi)
        grad[s["log_phi"]] += phi * (float(self._y_weight @ dig) + dphi_mu)

        # path
        r = self._residuals(x_ll, beta)
        inv2 = 1.0 / (sigma * sigma)
        path = float(-0.5 * inv2 * (r @ r) - r.size * (ls + 0.5 * _LOG_2PI))
        grad[s["log_sigma"]] += float(inv2 * (r @ r)) - r.size
        cov = self.covariates
        gl = grad[s["log_lambda"]]
        if self.spec.variant == "L":
            gl -= r * inv2
            if self.n_free_beta:
                gb = grad[s["beta"]]
                gb[0] += float(r.sum()) * inv2
                gb[1:] += (cov.T @ r) * inv2
        else:
            gl[1:] -= r * inv2
            gl[:-1] += r * inv2
            z = x_ll[0] - self.init_mean
            path += float(-0.5 * (z / self.spec.init_sd) ** 2 - math.log(self.spec.init_sd) - 0.5 * _LOG_2PI)
            gl[0] -= z / self.spec.init_sd**2
            if self.spec.variant == "RL" and self.n_free_beta:
                grad[s["beta"]] += (cov[1:].T @ r) * inv2

        # prior
        u2 = math.exp(-lphi)
        prior = self.prior(x)
        grad[s["log_sigma"]] += 1.0 - sigma * sigma / pr.sigma_scale**2
        grad[s["log_phi"]] += u2 / (2.0 * pr.phi_scale**2) - 0.5
        grad[s["gamma"]] -= gamma / pr.gamma_scale**2
        grad[s["eta"]] -= eta / pr.eta_scale**2
        if self.n_free_beta:
            b = x[s["beta"]]
            gb = grad[s["beta"]]
            if self.spec.has_intercept:
                gb[0] -= b[0] / pr.intercept_scale**2
                gb[1:] -= b[1:] / pr.beta_scale**2
            else:
                gb -= b / pr.beta_scale**2

        return ll + path + prior, grad


def gradient_check(target, x, eps: float = 1e-6, rtol: float = 1e-4, atol: float = 1e-6) -> float:
    """Compare ``target.logp_and_grad`` with central differences of ``target.logp`` at ``x``.

    Returns the largest scaled discrepancy
    ``|fd - grad| / (atol + rtol * max(|fd|, 1))``; values at or below 1 pass.
    """
    x = np.asarray(x, dtype=float)
    _, grad = target.logp_and_grad(x)
    worst = 0.0
    for i in range(x.size):
        step = eps * max(1.0, abs(x[i]))
        xp, xm = x.copy(), x.copy()
        xp[i] += step
        xm[i] -= step
        fd = (target.logp(xp) - target.logp(xm)) / (2.0 * step)
        err = abs(fd - grad[i]) / (atol + rtol * max(abs(fd), 1.0))
        worst = max(worst, err if math.isfinite(err) else math.inf)
    return worst
