"""MCMC for the nowcasting posterior and convergence diagnostics.

Two samplers share one interface. Any object with ``dim``,
``parameter_names``, ``logp(x)`` and ``initial_point(rng)`` can be sampled;
``gradient_hmc`` additionally needs ``logp_and_grad(x)`` and the blockwise
Metropolis sampler uses ``blocks()`` when the target provides it.

* ``adaptive_blockwise_metropolis``: random-walk Metropolis within Gibbs.
  Joint blocks use an adaptive Gaussian proposal whose covariance is learned
  during warmup; ``sites`` blocks update many conditionally independent
  coordinates at once from their local log densities; ``tail`` blocks shift
  the end of a path by a common amount.
* ``gradient_hmc``: static-length Hamiltonian Monte Carlo with a jittered
  number of leapfrog steps, diagonal mass matrix adaptation and dual
  averaging of the step size.

All adaptation stops at the end of warmup.
"""

from __future__ import annotations

import logging
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import pandas as pd

from .data import ReportingTriangle
from .epi import ModelSpec
from .errors import ConfigError, DomainError, InferenceError, InitializationError
from .posterior import NowcastPosterior, gradient_check, model_window

log = logging.getLogger(__name__)

ALGORITHMS = ("adaptive_blockwise_metropolis", "gradient_hmc")
DEFAULT_ACCEPTANCE = {"adaptive_blockwise_metropolis": 0.234, "gradient_hmc": 0.8}
MAX_INIT_TRIES = 100
_E_LOG_ABS_NORMAL = -0.5 * (np.euler_gamma + math.log(2.0))


class DegenerateDiagnosticWarning(RuntimeWarning):
    """Raised as a warning when a diagnostic is undefined because the draws have no variance."""


@dataclass(frozen=True)
class SamplerConfig:
    chains: int = 4
    warmup_iters: int = 1000
    sampling_iters: int = 1000
    seed: int = 0
    algorithm: str = "gradient_hmc"
    target_acceptance: float | None = None
    workers: int = 1
    max_leapfrog: int = 256

    def __post_init__(self):
        for name in ("chains", "warmup_iters", "sampling_iters", "workers", "max_leapfrog"):
            v = getattr(self, name)
            if isinstance(v, bool) or int(v) != v or v < 1:
                raise ConfigError(f"{name} must be an integer >= 1, got {v!r}")
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}; expected one of {ALGORITHMS}")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if self.target_acceptance is not None and not 0.0 < self.target_acceptance < 1.0:
            raise ConfigError(f"target_acceptance must lie in (0, 1), got {self.target_acceptance}")

    @property
    def acceptance_target(self) -> float:
        if self.target_acceptance is not None:
            return float(self.target_acceptance)
        return DEFAULT_ACCEPTANCE[self.algorithm]


@dataclass(frozen=True)
class Block:
    """A group of coordinates updated together by the Metropolis sampler.

    ``kind`` is ``joint`` (one multivariate proposal), ``sites`` (one
    proposal per coordinate, accepted independently within each of
    ``groups`` using ``local``) or ``tail`` (add a common shift to
    ``indices[j:]`` for a random ``j``). ``local(x)`` must return, for every
    coordinate of the block, the sum of all log-density terms involving it;
    coordinates in one group must share no term.
    """

    name: str
    indices: np.ndarray
    kind: str = "joint"
    repeats: int = 1
    groups: tuple = ()
    local: Callable | None = None
    init_scale: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "indices", np.asarray(self.indices, dtype=np.int64))
        if self.kind not in ("joint", "sites", "tail"):
            raise ConfigError(f"unknown block kind {self.kind!r}")
        if self.kind == "sites" and (self.local is None or not self.groups):
            raise ConfigError("sites blocks need groups and a local density")


@dataclass(frozen=True, eq=False)
class PosteriorSamples:
    """Post-warmup draws, shape (chains, iterations, parameters), on the sampling scale."""

    draws: np.ndarray
    parameter_names: list
    algorithm: str = ""
    acceptance: dict = field(default_factory=dict)
    tuning: list = field(default_factory=list)

    def __post_init__(self):
        d = np.asarray(self.draws, dtype=float)
        if d.ndim != 3:
            raise DomainError(f"draws must have shape (chains, iterations, parameters), got {d.shape}")
        names = list(self.parameter_names)
        if len(names) != d.shape[2]:
            raise DomainError(f"{len(names)} names for {d.shape[2]} parameters")
        if len(set(names)) != len(names):
            raise DomainError("parameter names must be unique")
        if not np.all(np.isfinite(d)):
            raise DomainError("draws must be finite")
        d.setflags(write=False)
        object.__setattr__(self, "draws", d)
        object.__setattr__(self, "parameter_names", names)
        object.__setattr__(self, "_index", {n: i for i, n in enumerate(names)})

    @property
    def n_chains(self) -> int:
        return self.draws.shape[0]

    @property
    def n_iterations(self) -> int:
        return self.draws.shape[1]

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise KeyError(f"unknown parameter {name!r}") from None

    def chains_of(self, name: str) -> np.ndarray:
        """Draws of one parameter, shape (chains, iterations)."""
        return self.draws[:, :, self.index(name)]

    def pooled(self, names: Sequence[str] | str | None = None) -> np.ndarray:
        """Draws pooled over chains (chain-major), shape (chains * iterations, k)."""
        if names is None:
            idx = slice(None)
        elif isinstance(names, str):
            return self.draws[:, :, self.index(names)].reshape(-1)
        else:
            idx = [self.index(n) for n in names]
        return self.draws[:, :, idx].reshape(self.n_chains * self.n_iterations, -1)

    def rhat(self, name: str) -> float:
        return rhat(self, name)

    def ess(self, name: str) -> float:
        return ess(self, name)

    @property
    def diagnostics(self) -> pd.DataFrame:
        """Split R-hat, ESS and a degeneracy flag for every parameter."""
        rows = []
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegenerateDiagnosticWarning)
            for j, name in enumerate(self.parameter_names):
                x = self.draws[:, :, j]
                if self.n_chains >= 2 and self.n_iterations >= 4:
                    r, e = split_rhat(x), effective_sample_size(x)
                else:
                    r, e = math.nan, math.nan
                rows.append((name, r, e, bool(np.ptp(x) == 0)))
        return pd.DataFrame(rows, columns=["parameter", "rhat", "ess", "degenerate"]).set_index("parameter")


# -- diagnostics ---------------------------------------------------------------
def _check_shape(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 2:
        raise DomainError(f"expected draws of shape (chains, iterations), got {x.shape}")
    if x.shape[0] < 2:
        raise DomainError(f"diagnostics need at least 2 chains, got {x.shape[0]}")
    if x.shape[1] < 4:
        raise DomainError(f"diagnostics need at least 4 iterations, got {x.shape[1]}")
    return x


def _split(x: np.ndarray) -> np.ndarray:
    half = x.shape[1] // 2
    return np.concatenate([x[:, :half], x[:, x.shape[1] - half :]], axis=0)


def _degenerate(what: str) -> float:
    warnings.warn(f"{what} undefined: draws have zero within-chain variance", DegenerateDiagnosticWarning, stacklevel=3)
    return math.nan


def split_rhat(x) -> float:
    """Split-chain potential scale reduction for draws of shape (chains, iterations).

    Returns NaN with a :class:`DegenerateDiagnosticWarning` when every split
    chain is constant.
    """
    s = _split(_check_shape(x))
    m, n = s.shape
    means = s.mean(axis=1)
    W = s.var(axis=1, ddof=1).mean()
    B = n * means.var(ddof=1)
    if W == 0:
        return _degenerate("R-hat")
    var_plus = (n - 1) / n * W + B / n
    return float(math.sqrt(var_plus / W))


def _autocovariance(x: np.ndarray) -> np.ndarray:
    """Biased autocovariance of each row via FFT."""
    n = x.shape[-1]
    size = 1 << (2 * n - 1).bit_length()
    xc = x - x.mean(axis=-1, keepdims=True)
    f = np.fft.rfft(xc, size, axis=-1)
    return np.fft.irfft(f * np.conj(f), size, axis=-1)[..., :n] / n


def effective_sample_size(x) -> float:
    """Effective sample size from split chains with Geyer's initial monotone sequence.

    Capped at the total number of draws; NaN (with a warning) for constant draws.
    """
    s = _split(_check_shape(x))
    m, n = s.shape
    acov = _autocovariance(s)
    W = acov[:, 0].mean() * n / (n - 1)
    if W == 0:
        return _degenerate("ESS")
    var_plus = W * (n - 1) / n + (s.mean(axis=1).var(ddof=1) if m > 1 else 0.0)
    rho = 1.0 - (W - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    # sums of adjacent pairs, truncated at the first non-positive pair, made monotone
    n_pairs = n // 2
    pairs = rho[: 2 * n_pairs].reshape(n_pairs, 2).sum(axis=1)
    neg = np.nonzero(pairs <= 0)[0]
    pairs = pairs[: neg[0]] if neg.size else pairs
    pairs = np.minimum.accumulate(pairs)
    tau = -1.0 + 2.0 * pairs.sum()
    total = m * n
    return float(min(total / max(tau, 1e-12), total))


def rhat(samples: PosteriorSamples, parameter: str) -> float:
    """Split R-hat of one named parameter."""
    return split_rhat(samples.chains_of(parameter))


def ess(samples: PosteriorSamples, parameter: str) -> float:
    """Effective sample size of one named parameter."""
    return effective_sample_size(samples.chains_of(parameter))


# -- nowcasting target -----------------------------------------------------------
class NowcastTarget:
    """Sampler view of :class:`NowcastPosterior`: blocks, initialisation and parameterisation.

    With ``noncentered=True`` the sampler moves in standardised path
    innovations instead of ``log lambda``: for R and RL the first
    coordinate is ``log lambda_0`` and the others are
    ``z_t = (log lambda_t - mu_t) / sigma``; for L every coordinate is such a
    ``z_t``. :meth:`to_output` maps sampler coordinates back, so stored draws
    are always on the ``log lambda`` scale.
    """

    def __init__(self, posterior: NowcastPosterior, noncentered: bool = False):
        self.posterior = posterior
        self.noncentered = noncentered
        self.dim = posterior.dim
        self.parameter_names = posterior.parameter_names
        self._init_log_lambda = empirical_log_lambda(posterior.triangle)
        self._init_gamma = empirical_logit_hazard(posterior.triangle)[: posterior.D]
        s = posterior.slices
        self._ll = s["log_lambda"]
        self._ls = s["log_sigma"].start
        self._rw = posterior.spec.random_walk

    def __getstate__(self):
        return {"posterior": self.posterior, "noncentered": self.noncentered}

    def __setstate__(self, state):
        self.__init__(state["posterior"], state["noncentered"])

    # -- parameterisation ------------------------------------------------------
    def _path_mean(self, u):
        """Regression part of the path, ``cov @ beta`` (plus the L intercept)."""
        post = self.posterior
        beta = post.beta_of(u)
        if post.spec.variant == "L":
            return beta[0] + post.covariates @ beta[1:]
        if post.spec.variant == "RL":
            return post.covariates @ beta
        return np.zeros(post.n_dates)

    def to_output(self, u) -> np.ndarray:
        """Sampler coordinates to the posterior's ``log lambda`` layout."""
        if not self.noncentered:
            return np.asarray(u, dtype=float)
        x = np.array(u, dtype=float)
        z = x[self._ll]
        sigma = math.exp(min(x[self._ls], 300.0))
        m = self._path_mean(x)
        if self._rw:
            steps = sigma * z[1:] + m[1:]
            x[self._ll] = z[0] + np.concatenate([[0.0], np.cumsum(steps)])
        else:
            x[self._ll] = m + sigma * z
        return x

    def from_output(self, x) -> np.ndarray:
        if not self.noncentered:
            return np.asarray(x, dtype=float)
        u = np.array(x, dtype=float)
        ll = u[self._ll].copy()
        sigma = math.exp(u[self._ls])
        m = self._path_mean(u)
        if self._rw:
            u[self._ll] = np.concatenate([[ll[0]], (np.diff(ll) - m[1:]) / sigma])
        else:
            u[self._ll] = (ll - m) / sigma
        return u

    def _log_jacobian(self, u) -> float:
        n = self.posterior.n_dates - (1 if self._rw else 0)
        return n * float(u[self._ls])

    def logp(self, u) -> float:
        if not self.noncentered:
            return self.posterior.logp(u)
        u = np.asarray(u, dtype=float)
        if not abs(u[self._ls]) < 300.0:
            return -math.inf
        return self.posterior.logp(self.to_output(u)) + self._log_jacobian(u)

    def logp_and_grad(self, u):
        if not self.noncentered:
            return self.posterior.logp_and_grad(u)
        u = np.asarray(u, dtype=float)
        if not abs(u[self._ls]) < 300.0:
            return -math.inf, np.zeros(self.dim)
        post = self.posterior
        x = self.to_output(u)
        lp, gx = post.logp_and_grad(x)
        if not math.isfinite(lp):
            return lp, gx
        sigma = math.exp(u[self._ls])
        z = u[self._ll]
        g_ll = gx[self._ll]
        gu = gx.copy()
        free_beta = post.n_free_beta > 0
        sb = post.slices["beta"]
        if self._rw:
            tail = np.cumsum(g_ll[::-1])[::-1]  # tail[s] = sum_{t >= s} g_t
            gu[self._ll] = np.concatenate([[tail[0]], sigma * tail[1:]])
            gu[self._ls] += sigma * float(tail[1:] @ z[1:]) + (post.n_dates - 1)
            if free_beta:
                gu[sb] += post.covariates[1:].T @ tail[1:]
        else:
            gu[self._ll] = sigma * g_ll
            gu[self._ls] += sigma * float(g_ll @ z) + post.n_dates
            if free_beta:
                gu[sb.start] += float(g_ll.sum())
                gu[sb.start + 1 : sb.stop] += post.covariates.T @ g_ll
        return lp + self._log_jacobian(u), gu

    # -- sampler hooks -----------------------------------------------------------
    def blocks(self) -> list[Block]:
        if self.noncentered:
            raise InferenceError("blockwise updates are defined on the centred parameterisation")
        post = self.posterior
        s = post.slices
        ll = np.arange(s["log_lambda"].start, s["log_lambda"].stop)
        n = ll.size
        # local terms of dates with equal parity never overlap
        groups = (np.arange(0, n, 2), np.arange(1, n, 2))
        blocks = [
            Block("log_lambda", ll, "sites", groups=groups, local=post.local_log_lambda),
            Block("log_lambda_tail", ll, "tail", repeats=4, init_scale=0.05),
        ]
        for name in ("gamma", "eta", "beta"):
            idx = np.arange(s[name].start, s[name].stop)
            if idx.size:
                blocks.append(Block(name, idx, "joint", repeats=2))
        blocks.append(Block("log_sigma", [s["log_sigma"].start], "joint"))
        blocks.append(Block("log_phi", [s["log_phi"].start], "joint"))
        return blocks

    def initial_point(self, rng: np.random.Generator) -> np.ndarray:
        """Data-driven ``log lambda`` and ``gamma``, prior means for the rest, all jittered."""
        post = self.posterior
        spec = post.spec
        pr = spec.priors
        s = post.slices
        x = np.zeros(post.dim)
        x[s["log_lambda"]] = self._init_log_lambda + 0.1 * rng.standard_normal(post.n_dates)
        x[s["gamma"]] = self._init_gamma + 0.1 * rng.standard_normal(post.D)
        x[s["eta"]] = 0.1 * rng.standard_normal(post.K)
        if post.n_free_beta:
            b = 0.1 * rng.standard_normal(post.n_free_beta)
            if spec.has_intercept:
                b[0] += float(np.mean(self._init_log_lambda))
            x[s["beta"]] = b
        # prior means on the sampled scale: E log|Z| = -(euler_gamma + log 2) / 2 for Z ~ N(0, 1)
        x[s["log_sigma"]] = math.log(pr.sigma_scale) + _E_LOG_ABS_NORMAL + 0.1 * rng.standard_normal()
        x[s["log_phi"]] = -2.0 * (math.log(pr.phi_scale) + _E_LOG_ABS_NORMAL) + 0.1 * rng.standard_normal()
        return self.from_output(x)


def empirical_log_lambda(triangle: ReportingTriangle, width: int = 7) -> np.ndarray:
    """Rough ``log lambda_t`` from the running mean of partial totals over the empirical reporting fraction.

    The fraction reported within ``d`` days is estimated from the completely
    observed rows; rows whose partial total is still zero get a floor of 0.5.
    """
    cells = triangle.cells.astype(float)
    partial = triangle.partial_totals.astype(float)
    complete = triangle.complete_rows
    frac = np.ones(triangle.n_dates)
    if complete.any() and cells[complete].sum() > 0:
        cum = np.cumsum(cells[complete].sum(axis=0))
        cum = cum / cum[-1]
        for t in range(triangle.n_dates):
            obs = np.nonzero(triangle.observed[t])[0]
            if obs.size and obs[-1] < triangle.max_delay:
                frac[t] = max(cum[obs[-1]], 0.05)
            elif not obs.size:
                frac[t] = 0.05
    smooth = pd.Series(partial / frac).rolling(width, center=True, min_periods=1).mean().to_numpy()
    return np.log(np.maximum(smooth, 0.5))


def empirical_logit_hazard(triangle: ReportingTriangle, floor: float = 0.02) -> np.ndarray:
    """Pooled logit reporting hazard by delay from the completely observed rows.

    Cells falling on non-reporting days leave the risk set untouched. With
    no complete rows every hazard is 1/2.
    """
    D = triangle.max_delay
    complete = triangle.complete_rows
    out = np.zeros(D + 1)
    if not complete.any():
        return out
    cells = triangle.cells[complete].astype(float)
    at_risk = cells.sum(axis=1, keepdims=True) - np.cumsum(cells, axis=1) + cells
    at_risk[triangle.structural_zero[complete]] = 0.0
    events = cells.sum(axis=0)
    risk = at_risk.sum(axis=0)
    h = np.where(risk > 0, events / np.maximum(risk, 1.0), 0.5)
    h = np.clip(h, floor, 1.0 - floor)
    return np.log(h) - np.log1p(-h)


# -- chain state ---------------------------------------------------------------------
def _initialize(target, rng, need_grad: bool) -> tuple[np.ndarray, float]:
    for _ in range(MAX_INIT_TRIES):
        x = np.asarray(target.initial_point(rng), dtype=float)
        if need_grad:
            lp, g = target.logp_and_grad(x)
            ok = math.isfinite(lp) and np.all(np.isfinite(g))
        else:
            lp = target.logp(x)
            ok = math.isfinite(lp)
        if ok:
            return x, float(lp)
    raise InitializationError(f"no finite starting point after {MAX_INIT_TRIES} attempts")


class _JointState:
    """Adaptive Gaussian random-walk proposal for one block."""

    def __init__(self, block: Block, warmup: int):
        d = block.indices.size
        self.d = d
        self.log_scale = math.log(block.init_scale)
        self.chol = np.eye(d)
        self.n = 0
        self.mean = np.zeros(d)
        self.m2 = np.zeros((d, d))
        self.k = 0
        self.learn_from = warmup // 5
        self.switch_at = max(warmup // 2, 1)
        self.accepted = 0
        self.proposed = 0

    def observe(self, v: np.ndarray, it: int):
        if it < self.learn_from:
            return
        self.n += 1
        delta = v - self.mean
        self.mean += delta / self.n
        self.m2 += np.outer(delta, v - self.mean)
        if it == self.switch_at and self.n > self.d + 1:
            cov = self.m2 / (self.n - 1)
            scale = math.sqrt(np.mean(np.diag(cov)))
            try:
                self.chol = np.linalg.cholesky(cov / scale**2 + 1e-6 * np.eye(self.d))
            except np.linalg.LinAlgError:
                self.chol = np.diag(np.sqrt(np.diag(cov))) / scale
            # keep the proposal size continuous across the switch
            self.log_scale = math.log(min(max(scale * 2.38 / math.sqrt(self.d), 1e-4), 10.0))
            self.k = 0


def _adapt(log_scale, acc, target, k):
    return log_scale + (acc - target) * 3.0 / (k + 10) ** 0.6


def _metropolis_chain(target, config: SamplerConfig, seed_seq, warmup: int, n_keep: int):
    rng = np.random.default_rng(seed_seq)
    x, lp = _initialize(target, rng, need_grad=False)
    blocks = target.blocks() if hasattr(target, "blocks") else [Block("all", np.arange(target.dim))]
    goal = config.acceptance_target
    states = []
    for b in blocks:
        if b.kind == "sites":
            states.append({"log_scale": np.full(b.indices.size, math.log(b.init_scale)), "k": 0, "acc": 0, "prop": 0})
        elif b.kind == "tail":
            states.append({"log_scale": math.log(b.init_scale), "k": 0, "acc": 0, "prop": 0})
        else:
            states.append(_JointState(b, warmup))
    draws = np.empty((n_keep, target.dim))

    for it in range(warmup + n_keep):
        adapting = it < warmup
        for b, st in zip(blocks, states):
            if b.kind == "sites":
                idx = b.indices
                for grp in b.groups:
                    sub = idx[grp]
                    cur = b.local(x)[grp]
                    step = np.exp(st["log_scale"][grp]) * rng.standard_normal(grp.size)
                    y = x.copy()
                    y[sub] += step
                    new = b.local(y)[grp]
                    with np.errstate(invalid="ignore"):
                        acc = np.log(rng.random(grp.size)) < new - cur
                    acc &= np.isfinite(new)
                    x[sub[acc]] = y[sub[acc]]
                    st["acc"] += int(acc.sum())
                    st["prop"] += grp.size
                    if adapting:
                        st["log_scale"][grp] = _adapt(st["log_scale"][grp], acc.astype(float), goal, st["k"])
                st["k"] += 1
                lp = target.logp(x)
                continue
            for _ in range(b.repeats):
                y = x.copy()
                if b.kind == "tail":
                    j = rng.integers(b.indices.size)
                    y[b.indices[j:]] += math.exp(st["log_scale"]) * rng.standard_normal()
                else:
                    y[b.indices] += math.exp(st.log_scale) * (st.chol @ rng.standard_normal(st.d))
                lp_new = target.logp(y)
                accept = math.log(rng.random()) < lp_new - lp
                if accept:
                    x, lp = y, lp_new
                if b.kind == "tail":
                    st["acc"] += accept
                    st["prop"] += 1
                    if adapting:
                        st["log_scale"] = _adapt(st["log_scale"], float(accept), goal, st["k"])
                    st["k"] += 1
                else:
                    st.accepted += accept
                    st.proposed += 1
                    if adapting:
                        st.log_scale = _adapt(st.log_scale, float(accept), goal, st.k)
                    st.k += 1
            if b.kind == "joint" and adapting:
                st.observe(x[b.indices], it)
        if it == warmup - 1:
            for st in states:
                if isinstance(st, dict):
                    st["acc"] = st["prop"] = 0
                else:
                    st.accepted = st.proposed = 0
        if not adapting:
            draws[it - warmup] = x
    acceptance = {}
    tuning = {}
    for b, st in zip(blocks, states):
        if isinstance(st, dict):
            acceptance[b.name] = st["acc"] / max(st["prop"], 1)
            tuning[b.name] = np.exp(st["log_scale"]).tolist() if b.kind == "sites" else math.exp(st["log_scale"])
        else:
            acceptance[b.name] = st.accepted / max(st.proposed, 1)
            tuning[b.name] = math.exp(st.log_scale)
    return draws, acceptance, tuning


# -- HMC -----------------------------------------------------------------------------
def _leapfrog(target, x, p, g, eps, inv_mass, n_steps):
    p = p + 0.5 * eps * g
    for i in range(n_steps):
        x = x + eps * inv_mass * p
        lp, g = target.logp_and_grad(x)
        if not math.isfinite(lp):
            return x, p, g, -math.inf
        if i < n_steps - 1:
            p = p + eps * g
    p = p + 0.5 * eps * g
    return x, p, g, lp


class _DualAveraging:
    def __init__(self, eps0: float, target: float):
        self.mu = math.log(10.0 * eps0)
        self.target = target
        self.h_bar = 0.0
        self.log_eps_bar = 0.0
        self.k = 0

    def update(self, accept_prob: float) -> float:
        self.k += 1
        k = self.k
        self.h_bar = (1 - 1 / (k + 10)) * self.h_bar + (self.target - accept_prob) / (k + 10)
        log_eps = self.mu - math.sqrt(k) / 0.05 * self.h_bar
        w = k**-0.75
        self.log_eps_bar = w * log_eps + (1 - w) * self.log_eps_bar
        return math.exp(log_eps)

    @property
    def final(self) -> float:
        return math.exp(self.log_eps_bar)


def _adaptation_windows(warmup: int) -> list[int]:
    """Iterations at which the mass matrix is refreshed (75 / 25, 50, 100, ... / 50 schedule)."""
    if warmup < 20:
        return []
    init, term = (75, 50) if warmup >= 150 else (int(0.15 * warmup), int(0.1 * warmup))
    ends = []
    start, size = init, 25
    while True:
        end = start + size
        if end + 2 * size > warmup - term:
            ends.append(warmup - term)
            break
        ends.append(end)
        start, size = end, 2 * size
    return ends


def _hmc_chain(target, config: SamplerConfig, seed_seq, warmup: int, n_keep: int, trajectory: float = 1.5):
    rng = np.random.default_rng(seed_seq)
    x, _ = _initialize(target, rng, need_grad=True)
    lp, g = target.logp_and_grad(x)
    d = target.dim
    inv_mass = np.ones(d)
    eps = _initial_step(target, x, lp, g, inv_mass, rng)
    da = _DualAveraging(eps, config.acceptance_target)
    windows = _adaptation_windows(warmup)
    w_start = 75 if warmup >= 150 else int(0.15 * warmup)
    w_sum = np.zeros(d)
    w_sq = np.zeros(d)
    w_n = 0
    draws = np.empty((n_keep, d))
    accept_total = 0.0
    divergent = 0
    for it in range(warmup + n_keep):
        n_steps = int(min(config.max_leapfrog, max(1, math.ceil(trajectory / eps * rng.uniform(0.8, 1.2)))))
        p0 = rng.standard_normal(d) / np.sqrt(inv_mass)
        h0 = lp - 0.5 * float(p0 @ (inv_mass * p0))
        x1, p1, g1, lp1 = _leapfrog(target, x, p0, g, eps, inv_mass, n_steps)
        log_a = -math.inf
        if math.isfinite(lp1):
            with np.errstate(over="ignore", invalid="ignore"):
                h1 = lp1 - 0.5 * float(p1 @ (inv_mass * p1))
            # a diverged trajectory can overflow the kinetic energy
            if math.isfinite(h1):
                log_a = min(0.0, h1 - h0)
        if h0 - (lp1 if math.isfinite(lp1) else -math.inf) > 1000:
            divergent += it >= warmup
        a = math.exp(log_a)
        if math.log(rng.random()) < log_a:
            x, lp, g = x1, lp1, g1
        if it < warmup:
            eps = da.update(a)
            if it >= w_start:
                w_sum += x
                w_sq += x * x
                w_n += 1
            if windows and it + 1 == windows[0]:
                windows.pop(0)
                var = w_sq / w_n - (w_sum / w_n) ** 2
                # regularise towards unit scale as in common practice
                inv_mass = (w_n / (w_n + 5.0)) * var + 1e-3 * (5.0 / (w_n + 5.0))
                w_sum[:] = 0
                w_sq[:] = 0
                w_n = 0
                eps = _initial_step(target, x, lp, g, inv_mass, rng, eps)
                da = _DualAveraging(eps, config.acceptance_target)
            if it == warmup - 1:
                eps = da.final
        else:
            accept_total += a
            draws[it - warmup] = x
    tuning = {"step_size": eps, "inv_mass": inv_mass.tolist(), "divergent": divergent}
    return draws, {"hmc": accept_total / n_keep}, tuning


def _initial_step(target, x, lp, g, inv_mass, rng, eps: float = 0.1) -> float:
    """Heuristic step size: double or halve until the one-step acceptance crosses 1/2."""
    p = rng.standard_normal(x.size) / np.sqrt(inv_mass)
    h0 = lp - 0.5 * float(p @ (inv_mass * p))

    def log_ratio(e):
        _, p1, _, lp1 = _leapfrog(target, x, p, g, e, inv_mass, 1)
        if not math.isfinite(lp1):
            return -math.inf
        return lp1 - 0.5 * float(p1 @ (inv_mass * p1)) - h0

    direction = 1.0 if log_ratio(eps) > math.log(0.5) else -1.0
    for _ in range(50):
        e = eps * 2.0**direction
        if (log_ratio(e) > math.log(0.5)) != (direction > 0):
            break
        eps = e
    return eps


# -- driver ------------------------------------------------------------------------
def _run_chain(args):
    target, config, seed_seq = args
    if config.algorithm == "gradient_hmc":
        return _hmc_chain(target, config, seed_seq, config.warmup_iters, config.sampling_iters)
    return _metropolis_chain(target, config, seed_seq, config.warmup_iters, config.sampling_iters)


def sample(target, config: SamplerConfig) -> PosteriorSamples:
    """Run ``config.chains`` independent chains on ``target``.

    Chain ``c`` draws from the ``c``-th child of ``SeedSequence(config.seed)``,
    so results do not depend on ``config.workers``.
    """
    if config.algorithm == "gradient_hmc":
        if not hasattr(target, "logp_and_grad"):
            raise ConfigError("gradient_hmc needs a target with logp_and_grad")
        x0, _ = _initialize(target, np.random.default_rng(np.random.SeedSequence(config.seed)), need_grad=True)
        worst = gradient_check(target, x0)
        if worst > 1.0:
            raise InferenceError(f"gradient fails the finite-difference check (scaled error {worst:.3g})")
    seeds = np.random.SeedSequence(config.seed).spawn(config.chains)
    jobs = [(target, config, s) for s in seeds]
    if config.workers > 1 and config.chains > 1:
        with ProcessPoolExecutor(max_workers=min(config.workers, config.chains)) as pool:
            results = list(pool.map(_run_chain, jobs))
    else:
        results = [_run_chain(j) for j in jobs]
    draws = np.stack([r[0] for r in results])
    if hasattr(target, "to_output"):
        draws = np.stack([[target.to_output(u) for u in chain] for chain in draws])
    acceptance = {k: [r[1][k] for r in results] for k in results[0][1]}
    for name, rates in acceptance.items():
        log.debug("acceptance %s: %s", name, ", ".join(f"{a:.3f}" for a in rates))
    return PosteriorSamples(draws, list(target.parameter_names), config.algorithm, acceptance, [r[2] for r in results])


def build_target(spec: ModelSpec, triangle: ReportingTriangle, algorithm: str = ALGORITHMS[0]) -> NowcastTarget:
    """Posterior target over the model window of ``triangle``; HMC runs on the non-centred path."""
    post = NowcastPosterior(spec, model_window(triangle, spec))
    return NowcastTarget(post, noncentered=algorithm == "gradient_hmc")


def run_mcmc(spec: ModelSpec, triangle: ReportingTriangle, config: SamplerConfig | None = None) -> PosteriorSamples:
    """Sample the nowcasting posterior for ``spec`` on the last ``spec.window_length`` dates of ``triangle``."""
    config = config or SamplerConfig()
    return sample(build_target(spec, triangle, config.algorithm), config)
