"""Multi-step conditional means, Poisson prediction intervals and evaluation metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import poisson

from ._validation import check_positive_int, check_scalar
from .model import IDENTITY, ParamVector, get_link
from .simulate import make_rng

__all__ = [
    "PredictionInterval",
    "NoncoverageTable",
    "MetricsResult",
    "conditional_mean",
    "conditional_means",
    "poisson_interval",
    "prediction_intervals",
    "noncoverage_table",
    "seasonal_baseline",
    "persistent_baseline",
    "evaluate_metrics",
]


@dataclass(frozen=True)
class PredictionInterval:
    t: int
    k: int
    p: int
    mean: float
    lo: int
    hi: int
    observed: float
    covered: bool


def _lag_matrix(beta: ParamVector) -> np.ndarray:
    return beta.betaS.transpose(1, 0, 2).reshape(beta.n, beta.d * beta.n)


def conditional_means(beta_hat: ParamVector, states, origins, p_max: int,
                      link=IDENTITY) -> np.ndarray:
    """Conditional means ``p = 1..p_max`` steps after each origin row.

    Row ``i`` of ``states`` is the observed state at time ``i``; an origin
    ``o`` uses rows ``o - d + 1 .. o`` as observed history. Predicted values
    replace unobserved lags. Negative intensities are clamped at 0.

    Returns
    -------
    ndarray of shape (p_max, len(origins), n)
    """
    p_max = check_positive_int(p_max, "p_max")
    link = get_link(link)
    states = np.asarray(states, dtype=np.float64)
    origins = np.asarray(origins, dtype=int)
    d, n = beta_hat.d, beta_hat.n
    if states.ndim != 2 or states.shape[1] != n:
        raise ValueError(f"states must have {n} columns")
    if origins.size and (origins.min() < d - 1 or origins.max() >= states.shape[0]):
        raise ValueError("insufficient history: each origin needs d observed rows")
    W = _lag_matrix(beta_hat)
    # buf[:, s] holds the state s + 1 steps before the one being predicted
    buf = np.stack([states[origins - s] for s in range(d)], axis=1) if d else \
        np.zeros((origins.size, 0, n))
    out = np.empty((p_max, origins.size, n))
    for q in range(p_max):
        eta = beta_hat.beta0 + buf.reshape(origins.size, d * n) @ W.T
        omega = np.maximum(link.value(eta), 0.0)
        out[q] = omega
        if d:
            buf = np.concatenate([omega[:, None, :], buf[:, :-1]], axis=1)
    return out


def conditional_mean(beta_hat: ParamVector, history, p: int, link=IDENTITY) -> np.ndarray:
    """Mean of the state ``p`` steps after the last row of ``history``."""
    history = np.asarray(history, dtype=np.float64)
    if history.ndim != 2 or history.shape[0] < beta_hat.d:
        raise ValueError("insufficient history: need at least d rows")
    origin = history.shape[0] - 1
    return conditional_means(beta_hat, history, [origin], p, link)[-1, 0]


def poisson_interval(lam, level: float = 0.95):
    """Equal-tail interval of Poisson(``lam``).

    ``lo`` is the smallest q with CDF(q) >= (1-level)/2, ``hi`` the smallest q
    with CDF(q) >= (1+level)/2; ``lam = 0`` gives ``[0, 0]``.
    """
    check_scalar(level, "level", low=0, high=1, low_inclusive=False, high_inclusive=False)
    lam = np.asarray(lam, dtype=np.float64)
    if np.any(lam < 0) or not np.all(np.isfinite(lam)):
        raise ValueError("Poisson mean must be finite and nonnegative")
    safe = np.where(lam > 0, lam, 1.0)
    lo = poisson.ppf((1.0 - level) / 2.0, safe)
    hi = poisson.ppf((1.0 + level) / 2.0, safe)
    lo = np.where(lam > 0, lo, 0.0).astype(np.int64)
    hi = np.where(lam > 0, hi, 0.0).astype(np.int64)
    if lo.ndim == 0:
        return int(lo), int(hi)
    return lo, hi


def _targets(n_rows: int, d: int, p_max: int, p: int, mode: str) -> np.ndarray:
    # common: skip the first p_max test rows; per_p: origins may be context rows
    first = d + p_max if mode == "common" else d - 1 + p
    return np.arange(first, n_rows)


def prediction_intervals(beta_hat: ParamVector, states, p_values, level: float = 0.95,
                         mode: str = "per_p", link=IDENTITY, t_offset: int = 0):
    """Intervals for every target row, step ``p`` and location.

    ``states`` holds ``d`` context rows followed by the test rows. Times in
    the output are ``row index - d + 1 + t_offset``.
    """
    states = np.asarray(states, dtype=np.float64)
    d = beta_hat.d
    p_values = [int(p) for p in p_values]
    p_max = max(p_values)
    out = []
    for p in p_values:
        tg = _targets(states.shape[0], d, p_max, p, mode)
        if tg.size == 0:
            continue
        mean = conditional_means(beta_hat, states, tg - p, p, link)[-1]
        lo, hi = poisson_interval(mean, level)
        obs = states[tg]
        cov = (obs >= lo) & (obs <= hi)
        for i, row in enumerate(tg):
            for k in range(states.shape[1]):
                out.append(PredictionInterval(int(row - d + 1 + t_offset), k, p,
                                              float(mean[i, k]), int(lo[i, k]), int(hi[i, k]),
                                              float(obs[i, k]), bool(cov[i, k])))
    return out


@dataclass
class NoncoverageTable:
    p_values: np.ndarray
    freq: np.ndarray          # (len(p_values), n)
    trivial: np.ndarray       # (n,)
    n_targets: np.ndarray     # per p

    def mean_by_p(self) -> np.ndarray:
        return self.freq.mean(axis=1)

    def rows(self) -> list[list]:
        rows = [[f"p={p}"] + list(map(float, f)) for p, f in zip(self.p_values, self.freq)]
        rows.append(["trivial"] + list(map(float, self.trivial)))
        return rows


def noncoverage_table(beta_hat: ParamVector, states, p_max: int, level: float = 0.95,
                      mode: str = "common", link=IDENTITY) -> NoncoverageTable:
    """Per-location frequency of realized counts outside the p-step intervals.

    ``states`` holds ``d`` lag-context rows followed by the test rows.
    ``mode="common"`` scores every p on the same targets (the first ``p_max``
    test steps are excluded); ``mode="per_p"`` scores p on all targets whose
    origin is an observed row. The trivial row predicts the previous count
    and is scored on the p=1 targets.
    """
    if mode not in ("common", "per_p"):
        raise ValueError(f"unknown mode {mode!r}")
    p_max = check_positive_int(p_max, "p_max")
    states = np.asarray(states, dtype=np.float64)
    d = beta_hat.d
    n_test = states.shape[0] - d
    if n_test < 1:
        raise ValueError("empty test set")
    if mode == "common" and n_test <= p_max:
        raise ValueError("test horizon shorter than max p")
    freq = []
    counts = []
    for p in range(1, p_max + 1):
        tg = _targets(states.shape[0], d, p_max, p, mode)
        if tg.size == 0:
            raise ValueError("test horizon shorter than max p")
        mean = conditional_means(beta_hat, states, tg - p, p, link)[-1]
        lo, hi = poisson_interval(mean, level)
        obs = states[tg]
        freq.append(((obs < lo) | (obs > hi)).mean(axis=0))
        counts.append(tg.size)
    tg1 = _targets(states.shape[0], d, p_max, 1, mode)
    tg1 = tg1[tg1 >= 1]
    lo, hi = poisson_interval(states[tg1 - 1], level)
    obs = states[tg1]
    trivial = ((obs < lo) | (obs > hi)).mean(axis=0)
    return NoncoverageTable(np.arange(1, p_max + 1), np.array(freq), trivial,
                            np.array(counts))


def seasonal_baseline(history, period: int, t: int, k: int | None = None):
    """Mean of observed values at rows ``t' < len(history)`` with
    ``t - t'`` a multiple of ``period``."""
    history = np.asarray(history, dtype=np.float64)
    period = check_positive_int(period, "period")
    if period > history.shape[0]:
        raise ValueError("insufficient seasonal history")
    rows = np.arange(t % period, history.shape[0], period)
    rows = rows[rows < t] if t < history.shape[0] else rows
    if rows.size == 0:
        raise ValueError("insufficient seasonal history")
    vals = history[rows].mean(axis=0)
    return vals if k is None else float(vals[k])


def persistent_baseline(history, t: int, k: int | None = None):
    """The last observed value before row ``t``."""
    history = np.asarray(history, dtype=np.float64)
    if t < 1 or t - 1 >= history.shape[0]:
        raise ValueError("no observation before t")
    vals = history[t - 1]
    return vals if k is None else float(vals[k])


@dataclass
class MetricsResult:
    r: np.ndarray
    r_hat: np.ndarray
    r_simul: np.ndarray
    r_seasonal: np.ndarray
    seasonal_missing: bool
    mae: dict

    def rows(self) -> list[list]:
        out = []
        for name, v in (("r", self.r), ("r_hat", self.r_hat), ("r_simul", self.r_simul),
                        ("r_seasonal", self.r_seasonal)):
            out.append([name] + list(map(float, v)) + [self.mae.get(name, float("nan"))])
        return out


def evaluate_metrics(states, n_train: int, beta_hat: ParamVector, simul_reps: int = 100,
                     period: int = 12, seed=0, link=IDENTITY) -> MetricsResult:
    """Average-rate metrics over the test rows ``n_train .. T-1``.

    ``r`` is the realized mean; ``r_hat`` the mean clamped one-step
    intensity using observed lags; ``r_simul`` averages ``simul_reps``
    Poisson draws at those intensities (one ``(T - n_train, n)`` draw per
    replica); ``r_seasonal`` averages seasonal means over training rows.
    """
    states = np.asarray(states, dtype=np.float64)
    T = states.shape[0]
    d = beta_hat.d
    if not d <= n_train < T:
        raise ValueError("need d <= n_train < T")
    test = np.arange(n_train, T)
    lam = conditional_means(beta_hat, states, test - 1, 1, link)[0]
    r = states[test].mean(axis=0)
    r_hat = lam.mean(axis=0)
    rng = make_rng(seed)
    reps = check_positive_int(simul_reps, "simul_reps")
    sims = np.empty((reps, states.shape[1]))
    for i in range(reps):
        sims[i] = rng.poisson(lam).mean(axis=0)
    r_simul = sims.mean(axis=0)
    train = states[:n_train]
    missing = False
    try:
        seas = np.stack([seasonal_baseline(train, period, t) for t in test])
        r_seasonal = seas.mean(axis=0)
    except ValueError:
        missing = True
        r_seasonal = np.full(states.shape[1], np.nan)
    mae = {name: float(np.mean(np.abs(r - v)))
           for name, v in (("r_hat", r_hat), ("r_simul", r_simul), ("r_seasonal", r_seasonal))}
    mae["r"] = 0.0
    return MetricsResult(r, r_hat, r_simul, r_seasonal, missing, mae)
