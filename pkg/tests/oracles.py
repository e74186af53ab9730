"""Independent slow reference implementations used as test oracles.

Nothing here imports the numerical internals of ``gglm``; each oracle is
written from the model definition with dense matrices, loops or brute force.
"""

from __future__ import annotations

import itertools

import numpy as np


def flat_index(n: int, s: int, k: int, l: int) -> int:
    """Position of lag-``s`` entry ``(k, l)`` (``s >= 1``) in the flat vector."""
    return n + (s - 1) * n * n + k * n + l


def dense_H(lags: np.ndarray) -> np.ndarray:
    """Dense ``kappa x n`` regressor matrix; ``lags[s-1]`` is the state ``s`` steps back."""
    d, n = lags.shape
    kappa = n + d * n * n
    H = np.zeros((kappa, n))
    for k in range(n):
        H[k, k] = 1.0
        for s in range(1, d + 1):
            for l in range(n):
                H[flat_index(n, s, k, l), k] = lags[s - 1, l]
    return H


def windows(states: np.ndarray, d: int):
    """Yield ``(lags, response)`` for ``t = 1..N``; ``states[i]`` is ``z_{i-d+1}``."""
    for i in range(d, states.shape[0]):
        lags = np.array([states[i - s] for s in range(1, d + 1)])
        yield lags, states[i]


LINKS = {
    "identity": (lambda z: z, lambda z: 0.5 * z * z),
    "sigmoid": (lambda z: 1.0 / (1.0 + np.exp(-z)), lambda z: np.logaddexp(0.0, z)),
    "exp": (np.exp, np.exp),
}


def dense_field(states, d, x, link="identity", weights=None):
    value, _ = LINKS[link]
    acc = 0.0
    N = states.shape[0] - d
    for t, (lags, y) in enumerate(windows(states, d)):
        H = dense_H(lags)
        w = 1.0 if weights is None else weights[t]
        acc = acc + H @ (value(H.T @ x) - y) / w
    return acc / N


def dense_objective(states, d, x, link="identity", weights=None):
    _, pot = LINKS[link]
    acc = 0.0
    N = states.shape[0] - d
    for t, (lags, y) in enumerate(windows(states, d)):
        H = dense_H(lags)
        u = H.T @ x
        w = 1.0 if weights is None else weights[t]
        acc += (np.sum(pot(u)) - u @ y) / w
    return acc / N


def dense_gram(states, d, gamma=None, weights=None):
    N = states.shape[0] - d
    G = 0.0
    for t, (lags, _) in enumerate(windows(states, d)):
        H = dense_H(lags)
        g = 1.0 if gamma is None else gamma[t]
        w = 1.0 if weights is None else weights[t]
        G = G + g / w * H @ H.T
    return G / N


def capped_simplex_active_set(v, cap):
    """Projection onto ``{y >= 0, sum(y) <= cap}`` by enumerating KKT active sets."""
    v = np.asarray(v, float)
    m = v.size
    best, best_dist = None, np.inf
    for zeros in itertools.product([False, True], repeat=m):
        free = ~np.array(zeros)
        for sum_active in (False, True):
            y = np.zeros(m)
            if sum_active:
                if not free.any():
                    continue
                tau = (v[free].sum() - cap) / free.sum()
                y[free] = v[free] - tau
                if tau < -1e-12:
                    continue
            else:
                y[free] = v[free]
            if np.any(y < -1e-12) or y.sum() > cap + 1e-12:
                continue
            dist = np.sum((y - v) ** 2)
            if dist < best_dist:
                best, best_dist = y, dist
    return best


def l1_ball_grid(v, radius, step=1e-3):
    """Closest point of the 2-d l1 ball by grid search."""
    g = np.arange(-radius, radius + step / 2, step)
    X, Y = np.meshgrid(g, g, indexing="ij")
    ok = np.abs(X) + np.abs(Y) <= radius + 1e-12
    d2 = (X - v[0]) ** 2 + (Y - v[1]) ** 2
    d2[~ok] = np.inf
    i = np.unravel_index(np.argmin(d2), d2.shape)
    return np.array([X[i], Y[i]])


def lp_vertex_enumeration(c, A, b, maximize=True):
    """Optimum of ``c.x`` over ``{A x <= b}`` (bounded, dim <= 3) by vertex enumeration."""
    A = np.asarray(A, float)
    b = np.asarray(b, float)
    m, dim = A.shape
    best = -np.inf if maximize else np.inf
    found = False
    for rows in itertools.combinations(range(m), dim):
        M = A[list(rows)]
        if abs(np.linalg.det(M)) < 1e-12:
            continue
        x = np.linalg.solve(M, b[list(rows)])
        if np.all(A @ x <= b + 1e-9):
            found = True
            val = c @ x
            best = max(best, val) if maximize else min(best, val)
    if not found:
        raise ValueError("infeasible")
    return best


def categorical_rate_grid(s, alpha_cap, step=1e-6):
    a = np.arange(0.0, alpha_cap + step / 2, step)
    b1 = np.log1p(a * np.expm1(s)) - a * s
    b2 = np.log1p(a * np.expm1(-s)) + a * s
    return float(max(b1.max(), b2.max()))


def poisson_fenchel(s):
    return (1.0 + s) * np.log1p(s) - s


def poisson_interval_scan(lam, level):
    """Central Poisson interval by summing the pmf term by term."""
    if lam == 0:
        return 0, 0
    from math import exp, lgamma, log

    lo_target, hi_target = (1 - level) / 2, (1 + level) / 2
    cdf, q, lo = 0.0, 0, None
    while True:
        cdf += exp(q * log(lam) - lam - lgamma(q + 1))
        if lo is None and cdf >= lo_target:
            lo = q
        if cdf >= hi_target:
            return lo, q
        q += 1


def poisson_mass(lam, lo, hi):
    from scipy.stats import poisson

    return poisson.cdf(hi, lam) - (poisson.cdf(lo - 1, lam) if lo > 0 else 0.0)


def metrics_by_hand(states, n_train, beta0, betaS, period, draws):
    """Average-rate metrics with explicit loops.

    ``betaS[s-1][k][l]`` is the lag-``s`` weight; ``draws[i]`` is the
    replica-``i`` sample array of shape ``(T - n_train, n)``.
    """
    T, n = len(states), len(states[0])
    d = len(betaS)
    test = range(n_train, T)
    r, r_hat, r_sea = [], [], []
    for k in range(n):
        r.append(sum(states[t][k] for t in test) / len(test))
        tot = 0.0
        for t in test:
            lam = beta0[k]
            for s in range(1, d + 1):
                for l in range(n):
                    lam += betaS[s - 1][k][l] * states[t - s][l]
            tot += max(lam, 0.0)
        r_hat.append(tot / len(test))
        tot = 0.0
        for t in test:
            vals = [states[u][k] for u in range(n_train) if (t - u) % period == 0]
            tot += sum(vals) / len(vals)
        r_sea.append(tot / len(test))
    r_sim = []
    for k in range(n):
        tot = 0.0
        for rep in draws:
            tot += sum(rep[i][k] for i in range(len(rep))) / len(rep)
        r_sim.append(tot / len(draws))
    mae = {
        "r_hat": sum(abs(a - b) for a, b in zip(r, r_hat)) / n,
        "r_simul": sum(abs(a - b) for a, b in zip(r, r_sim)) / n,
        "r_seasonal": sum(abs(a - b) for a, b in zip(r, r_sea)) / n,
    }
    return r, r_hat, r_sim, r_sea, mae


def l1_lsq_enumeration(H, f, theta):
    """``argmin ||f - H g||`` over ``||g||_1 <= theta`` by enumerating faces.

    Tries the unconstrained minimizer, then every support and sign pattern
    with ``sign . g = theta`` active; exact for small ``H`` of full column rank.
    """
    H = np.asarray(H, float)
    f = np.asarray(f, float)
    n = H.shape[1]
    g0 = np.linalg.lstsq(H, f, rcond=None)[0]
    if np.abs(g0).sum() <= theta:
        return g0
    best, best_val = None, np.inf
    for size in range(1, n + 1):
        for S in itertools.combinations(range(n), size):
            HS = H[:, list(S)]
            for signs in itertools.product([-1.0, 1.0], repeat=size):
                sg = np.array(signs)
                K = np.zeros((size + 1, size + 1))
                K[:size, :size] = HS.T @ HS
                K[:size, size] = sg
                K[size, :size] = sg
                rhs = np.concatenate([HS.T @ f, [theta]])
                try:
                    sol = np.linalg.solve(K, rhs)
                except np.linalg.LinAlgError:
                    continue
                gS = sol[:size]
                if np.any(sg * gS < -1e-12):
                    continue
                g = np.zeros(n)
                g[list(S)] = gS
                val = np.sum((f - H @ g) ** 2)
                if val < best_val:
                    best, best_val = g, val
    return best
