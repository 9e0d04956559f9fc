"""Compiled inner loops of the triangle likelihood.

Observed cells are stored row-major: the cells of event date ``t`` are
``row_ptr[t]:row_ptr[t + 1]`` with delay index ``obs_d``.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit


@njit(cache=True)
def row_loglik(x_ll, logits, rep, row_ptr, obs_d, y, cterm, phi, rows, want_grad, g_ll, d_logits, dphi):
    """Negative binomial log likelihood of every event date under the hazard model.

    Writes per-date sums into ``rows``. With ``want_grad`` it also writes the
    derivative with respect to ``log lambda`` into ``g_ll`` and with respect
    to each hazard logit into ``d_logits``; ``dphi[0]`` receives the part of
    ``d/dphi`` that depends on ``mu`` (``sum -log1p(mu/phi) + (mu - y)/(phi + mu)``).
    ``cterm`` is the per-cell constant ``log C(y + phi - 1, y) - y log phi``.
    """
    n, D = logits.shape
    lp = np.empty(D + 1)
    h = np.zeros(D)
    G = np.zeros(D + 1)
    acc_phi = 0.0
    for t in range(n):
        lo, hi = row_ptr[t], row_ptr[t + 1]
        if want_grad:
            g_ll[t] = 0.0
            for k in range(D):
                d_logits[t, k] = 0.0
        if lo == hi:
            rows[t] = 0.0
            continue
        before = 0.0
        for k in range(D):
            if rep[t, k]:
                a = logits[t, k]
                sp = max(a, 0.0) + math.log1p(math.exp(-abs(a)))
                lp[k] = a - sp + before
                h[k] = math.exp(a - sp)
                before -= sp
            else:
                lp[k] = -np.inf
                h[k] = 0.0
        lp[D] = before
        total = 0.0
        gsum = 0.0
        if want_grad:
            for k in range(D + 1):
                G[k] = 0.0
        for i in range(lo, hi):
            d = obs_d[i]
            yi = y[i]
            lm = x_ll[t] + lp[d]
            mu = math.exp(lm)
            l1 = math.log1p(mu / phi)
            c = cterm[i] - (phi + yi) * l1
            if yi > 0.0:
                c += yi * lm
            total += c
            if want_grad:
                g = phi * (yi - mu) / (phi + mu)
                G[d] += g
                gsum += g
                acc_phi += (mu - yi) / (phi + mu) - l1
        rows[t] = total
        if want_grad:
            g_ll[t] = gsum
            after = G[D]
            for k in range(D - 1, -1, -1):
                if rep[t, k]:
                    d_logits[t, k] = G[k] * (1.0 - h[k]) - h[k] * after
                after += G[k]
    if want_grad:
        dphi[0] = acc_phi
