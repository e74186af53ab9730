"""Compiled inner loop for the advanced certificate policies."""

from __future__ import annotations

import numpy as np
from numba import njit

N_MOMENTS = 60


@njit(cache=True)
def _project_l1_inplace(v, radius, out, buf):
    n = v.shape[0]
    total = 0.0
    for i in range(n):
        buf[i] = abs(v[i])
        total += buf[i]
    if total <= radius:
        for i in range(n):
            out[i] = v[i]
        return
    # insertion sort, descending
    for i in range(1, n):
        key = buf[i]
        j = i - 1
        while j >= 0 and buf[j] < key:
            buf[j + 1] = buf[j]
            j -= 1
        buf[j + 1] = key
    css = 0.0
    tau = 0.0
    for i in range(n):
        css += buf[i]
        cand = (css - radius) / (i + 1.0)
        if buf[i] - cand > 0.0:
            tau = cand
    for i in range(n):
        a = abs(v[i]) - tau
        if a > 0.0:
            out[i] = a if v[i] > 0.0 else -a
        else:
            out[i] = 0.0


@njit(cache=True)
def advanced_policy_loop(F3, Z, Y, rad, chi):
    """Run all advanced policies in place.

    ``F3`` (P, n, nf) holds the matrix form of each ``f_t`` and is updated to
    ``f_{N+1}``. Returns the intercept sums ``sum_t E_t . z_t`` and, per
    policy, ``sum_t chi_t u_t^m`` for ``m = 1..N_MOMENTS + 1`` where
    ``u_t = ||E_t||_1 / theta``.
    """
    P, n, nf = F3.shape
    N = Z.shape[0]
    acc = np.zeros(P)
    mom = np.zeros((P, N_MOMENTS + 1))
    v = np.empty(n)
    g = np.empty(n)
    buf = np.empty(n)
    invN = 1.0 / N
    for t in range(N):
        z = Z[t]
        q = 0.0
        for f in range(nf):
            q += z[f] * z[f]
        scale = N / q
        c = chi[t]
        for p in range(P):
            th = rad[p]
            if th <= 0.0:
                continue
            for k in range(n):
                s = 0.0
                for f in range(nf):
                    s += F3[p, k, f] * z[f]
                v[k] = s * scale
            _project_l1_inplace(v, th, g, buf)
            norm1 = 0.0
            for k in range(n):
                gk = g[k]
                if gk != 0.0:
                    norm1 += abs(gk)
                    acc[p] += gk * Y[t, k]
                    w = gk * invN
                    for f in range(nf):
                        F3[p, k, f] -= w * z[f]
            u = norm1 / th
            if u > 0.0:
                um = c
                for m in range(N_MOMENTS + 1):
                    um *= u
                    mom[p, m] += um
    return acc, mom
