"""Proper scoring rules for sample-based count forecasts.

All scores are oriented so that lower is better.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import DomainError

LOGS_EPSILON = 0.5


def _draws(draws) -> np.ndarray:
    x = np.asarray(draws, dtype=float).reshape(-1)
    if x.size == 0:
        raise DomainError("empty draw vector")
    if not np.all(np.isfinite(x)):
        raise DomainError("draws must be finite")
    return x


def crps(draws, truth) -> float:
    """Continuous ranked probability score of the empirical distribution of ``draws``.

    Equals ``mean|X - y| - 0.5 * mean|X - X'|`` over all ordered pairs
    including self-pairs, evaluated in O(S log S) from the sorted draws:
    ``mean|X - X'| = 2 / S^2 * sum_i (2i - S - 1) x_(i)``.
    """
    x = np.sort(_draws(draws))
    y = float(truth)
    S = x.size
    i = np.arange(1, S + 1)
    spread = 2.0 * float(((2 * i - S - 1) * x).sum()) / (S * S)
    return max(float(np.abs(x - y).mean()) - 0.5 * spread, 0.0)


def crps_pairwise(draws, truth) -> float:
    """Direct O(S^2) evaluation of the same estimator; intended for checking."""
    x = _draws(draws)
    y = float(truth)
    return float(np.abs(x - y).mean() - 0.5 * np.abs(x[:, None] - x[None, :]).mean())


def log_score(draws, truth, epsilon: float = LOGS_EPSILON) -> float:
    """Negative log of the smoothed empirical mass at ``truth``.

    The mass is ``(#{draws == truth} + eps) / (S + eps * K)``, where ``K``
    counts the integers in ``[min(draws), max(draws)]`` together with
    ``truth``. The result is finite for every input.
    """
    x = _draws(draws)
    if not epsilon > 0:
        raise DomainError("epsilon must be positive")
    y = float(truth)
    lo, hi = float(x.min()), float(x.max())
    K = math.floor(hi) - math.ceil(lo) + 1
    if not lo <= y <= hi:
        K += 1
    hits = int(np.count_nonzero(x == y))
    return -math.log((hits + epsilon) / (x.size + epsilon * K))


def _paired(a, b, what: str) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=float).reshape(-1)
    b = np.asarray(b, dtype=float).reshape(-1)
    if a.size != b.size:
        raise DomainError(f"{what}: length mismatch ({a.size} vs {b.size})")
    if a.size == 0:
        raise DomainError(f"{what}: empty input")
    return a, b


def rmse(medians, truths) -> float:
    """Root mean squared error of point forecasts."""
    m, y = _paired(medians, truths, "rmse")
    return float(np.sqrt(np.mean((m - y) ** 2)))


def coverage(intervals, truths) -> float:
    """Fraction of ``truths`` inside their closed interval ``(lo, hi)``."""
    iv = np.asarray(intervals, dtype=float).reshape(-1, 2)
    lo, y = _paired(iv[:, 0], truths, "coverage")
    hi = iv[:, 1]
    if np.any(lo > hi):
        raise DomainError("interval with lo > hi")
    return float(np.mean((lo <= y) & (y <= hi)))
