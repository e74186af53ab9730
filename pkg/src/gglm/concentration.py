"""Rate functions and martingale concentration bounds for the empirical field."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from ._parallel import map_reduce
from ._validation import check_grid, check_scalar, check_weights
from .model import IDENTITY, FeasibleSet, RegressorWindow, Trajectory, get_link

__all__ = [
    "SATURATION_EXPONENT",
    "SaturationWarning",
    "RateFunction",
    "BoundConfig",
    "paper_alpha_grid",
    "rate_poisson",
    "rate_categorical",
    "chi_t",
    "chi_all",
    "online_bound",
    "fenchel_transform",
    "worst_case_quantile",
    "tail_probability",
    "field_theta_columns",
    "field_bounds",
    "policy_bounds",
]

SATURATION_EXPONENT = 700.0
_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


class SaturationWarning(RuntimeWarning):
    """A rate evaluation hit the exponent clamp."""


def paper_alpha_grid() -> np.ndarray:
    """``{10^(0.25 i - 4) : i = 0..36}``."""
    return 10.0 ** (0.25 * np.arange(37) - 4.0)


def rate_poisson(r, chi=1.0):
    """``chi * (exp(r) - r - 1)``, exponent clamped at 700 (with a warning)."""
    r = np.asarray(r, dtype=np.float64)
    chi = np.asarray(chi, dtype=np.float64)
    if np.any(r < 0) or np.any(chi < 0):
        raise ValueError("rate_poisson requires r >= 0 and chi >= 0")
    if np.any(r > SATURATION_EXPONENT):
        warnings.warn("Poisson rate saturated at exponent 700", SaturationWarning,
                      stacklevel=2)
        r = np.minimum(r, SATURATION_EXPONENT)
    out = chi * (np.expm1(r) - r)
    return out if out.ndim else float(out)


def _golden_max(fn, lo, hi, iters: int = 80):
    """Vectorized golden-section maximization of concave ``fn`` on ``[lo, hi]``."""
    lo = np.array(lo, dtype=np.float64)
    hi = np.array(hi, dtype=np.float64)
    c = hi - _INV_PHI * (hi - lo)
    d = lo + _INV_PHI * (hi - lo)
    fc, fd = fn(c), fn(d)
    for _ in range(iters):
        left = fc > fd
        hi = np.where(left, d, hi)
        lo = np.where(left, lo, c)
        c_new = hi - _INV_PHI * (hi - lo)
        d_new = lo + _INV_PHI * (hi - lo)
        c, d = c_new, d_new
        fc, fd = fn(c), fn(d)
    x = 0.5 * (lo + hi)
    return x, fn(x)


def rate_categorical(s, alpha_cap):
    """Categorical rate ``max_{a in [0, cap]} max(g1(a), g2(a))`` with

    ``g1 = ln(1 + a(e^s - 1)) - a s`` and ``g2 = ln(1 + a(e^-s - 1)) + a s``.
    Both branches are concave in ``a``; each is maximized by golden-section
    search to an ``a``-tolerance well below 1e-10. The endpoint ``a = 0``
    (value 0) is always included.
    """
    s = np.asarray(s, dtype=np.float64)
    cap = np.asarray(alpha_cap, dtype=np.float64)
    if np.any(s < 0):
        raise ValueError("rate_categorical requires s >= 0")
    if np.any(cap < 0) or np.any(cap > 1):
        raise ValueError("alpha_cap must lie in [0, 1]")
    s, cap = np.broadcast_arrays(s, cap)
    sc = np.minimum(s, SATURATION_EXPONENT)
    em1 = np.expm1(sc)
    emm1 = np.expm1(-sc)

    def g1(a):
        return np.log1p(a * em1) - a * sc

    def g2(a):
        return np.log1p(a * emm1) + a * sc

    zero = np.zeros_like(cap)
    _, v1 = _golden_max(g1, zero, cap)
    _, v2 = _golden_max(g2, zero, cap)
    out = np.maximum(np.maximum(v1, v2), 0.0)
    out = np.where(cap == 0, 0.0, out)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class RateFunction:
    """Rate function ``Psi``.

    ``kind="poisson"`` uses ``scale`` as ``chi``; ``kind="categorical"`` uses
    it as the excitation cap ``alpha_cap``. ``scale`` may be an array of
    per-step values, in which case evaluation broadcasts.
    """

    kind: str
    scale: object = 1.0

    def __post_init__(self):
        if self.kind not in ("poisson", "categorical"):
            raise ValueError(f"unknown rate kind {self.kind!r}")
        sc = np.asarray(self.scale, dtype=np.float64)
        if np.any(sc < 0) or not np.all(np.isfinite(sc)):
            raise ValueError("rate scale must be finite and nonnegative")
        if self.kind == "categorical" and np.any(sc > 1):
            raise ValueError("alpha_cap must lie in [0, 1]")

    @classmethod
    def poisson(cls, chi=1.0) -> "RateFunction":
        return cls("poisson", chi)

    @classmethod
    def categorical(cls, alpha_cap) -> "RateFunction":
        return cls("categorical", alpha_cap)

    def __call__(self, r):
        if self.kind == "poisson":
            return rate_poisson(r, self.scale)
        return rate_categorical(r, self.scale)

    eval = __call__


@dataclass(frozen=True)
class BoundConfig:
    alpha_grid: tuple
    epsilon: float
    union_count: int | None = None

    def __post_init__(self):
        grid = check_grid(self.alpha_grid, "alpha_grid")
        object.__setattr__(self, "alpha_grid", tuple(float(a) for a in grid))
        check_scalar(self.epsilon, "epsilon", low=0, high=1,
                     low_inclusive=False, high_inclusive=False)
        if self.union_count is None:
            object.__setattr__(self, "union_count", len(grid))
        elif self.union_count < 1:
            raise ValueError("union_count must be >= 1")

    @property
    def alphas(self) -> np.ndarray:
        return np.asarray(self.alpha_grid)

    @property
    def log_term(self) -> float:
        return math.log(2.0 * self.union_count / self.epsilon)


# --------------------------------------------------------------------------
# chi_t


def _chi_from_lagmax(lagmax, B: FeasibleSet, link) -> np.ndarray:
    link = get_link(link)
    if B.kind != "box_row_sum":
        raise ValueError("chi undefined: feasible set is unbounded")
    z = B.a_cap + B.b_cap * np.asarray(lagmax, dtype=np.float64)
    if link.kind == "identity":
        return z
    return link.value(z)


def chi_t(window: RegressorWindow, B: FeasibleSet, link=IDENTITY) -> float:
    """``max_{x in B} ||Phi(H_t^T x)||_inf`` for nonnegative states."""
    lags = np.asarray(window.lags)
    lagmax = float(lags.max()) if lags.size else 0.0
    return float(_chi_from_lagmax(lagmax, B, link))


def chi_all(traj: Trajectory, B: FeasibleSet, link=IDENTITY) -> np.ndarray:
    """Vector of :func:`chi_t` over ``t = 1..N``."""
    lag = traj.design[:, 1:]
    lagmax = lag.max(axis=1) if lag.shape[1] else np.zeros(traj.N)
    return _chi_from_lagmax(lagmax, B, link)


# --------------------------------------------------------------------------
# online bound


def _rate_scale(rate_terms, N: int) -> tuple[str, np.ndarray]:
    if isinstance(rate_terms, RateFunction):
        kind = rate_terms.kind
        scale = np.broadcast_to(np.asarray(rate_terms.scale, dtype=np.float64), (N,))
        return kind, scale
    terms = list(rate_terms)
    if len(terms) != N:
        raise ValueError(f"expected {N} rate terms, got {len(terms)}")
    kinds = {r.kind for r in terms}
    if len(kinds) != 1:
        raise ValueError("rate terms must share a kind")
    return kinds.pop(), np.array([float(r.scale) for r in terms])


def online_bound(rate_terms, theta_tj, N: int, cfg: BoundConfig,
                 return_alpha: bool = False):
    """``delta_j = min_i [a_i ln(2U/eps) + a_i sum_t Psi_t(Theta_tj / (a_i N))]``.

    Parameters
    ----------
    rate_terms : RateFunction or sequence of RateFunction
        One rate per step; a single ``RateFunction`` with an array ``scale`` of
        length ``N`` is the vectorized form.
    theta_tj : array of shape (N,) or (N, m)
        Nonnegative ``||.||_1`` norms.
    N : int
    cfg : BoundConfig
        ``U = cfg.union_count``.
    return_alpha : bool
        Also return the minimizing grid value per column.

    Returns
    -------
    delta : float or ndarray of shape (m,)
    """
    alphas = cfg.alphas
    theta = np.asarray(theta_tj, dtype=np.float64)
    squeeze = theta.ndim == 1
    theta = theta.reshape(theta.shape[0], -1)
    if theta.shape[0] != N:
        raise ValueError(f"theta must have {N} rows, got {theta.shape[0]}")
    if np.any(theta < 0):
        raise ValueError("theta entries must be nonnegative")
    kind, scale = _rate_scale(rate_terms, N)

    def part(lo, hi):
        th = theta[lo:hi]
        sc = scale[lo:hi, None]
        out = np.empty((alphas.size, th.shape[1]))
        for i, a in enumerate(alphas):
            r = th / (a * N)
            if kind == "poisson":
                vals = rate_poisson(r, sc)
            else:
                vals = rate_categorical(r, np.minimum(sc, 1.0))
            out[i] = vals.sum(axis=0)
        return out

    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", SaturationWarning)
        sums = map_reduce(part, N)
    if caught:
        warnings.warn("Poisson rate saturated at exponent 700 inside online_bound",
                      SaturationWarning, stacklevel=2)
    vals = alphas[:, None] * (cfg.log_term + sums)
    idx = np.argmin(vals, axis=0)
    delta = vals[idx, np.arange(vals.shape[1])]
    best = alphas[idx]
    if squeeze:
        delta, best = float(delta[0]), float(best[0])
    return (delta, best) if return_alpha else delta


# --------------------------------------------------------------------------
# Fenchel-Legendre transform and worst-case bounds


def _scalar_psi(psi) -> Callable[[float], float]:
    def f(g):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", SaturationWarning)
            return float(psi(g))
    return f


def fenchel_transform(psi, s: float, tol: float = 1e-10) -> float:
    """``sup_{g >= 0} [g s - psi(g)]`` by golden section on an expanding bracket."""
    s = check_scalar(s, "s", low=0)
    if s == 0:
        return 0.0
    f = _scalar_psi(psi)

    def h(g):
        return g * s - f(g)

    hi = 1.0
    h_hi = h(hi)
    while True:
        h_next = h(2.0 * hi)
        if h_next <= h_hi:
            break
        hi *= 2.0
        h_hi = h_next
        if hi > 2.0 ** 60:
            raise ArithmeticError("Fenchel transform appears unbounded")
    lo, hi = 0.0, 2.0 * hi
    c = hi - _INV_PHI * (hi - lo)
    d = lo + _INV_PHI * (hi - lo)
    hc, hd = h(c), h(d)
    while hi - lo > tol * max(1.0, hi):
        if hc > hd:
            hi, d, hd = d, c, hc
            c = hi - _INV_PHI * (hi - lo)
            hc = h(c)
        else:
            lo, c, hc = c, d, hd
            d = lo + _INV_PHI * (hi - lo)
            hd = h(d)
    return max(0.0, h(0.5 * (lo + hi)), hc, hd)


def _quantile_objective(psi, Theta: float, N: int, m: int, epsilon: float):
    f = _scalar_psi(psi)
    log_term = math.log(2.0 * m / epsilon)

    def q(alpha):
        return alpha * log_term + alpha * N * f(Theta / (N * alpha))

    return q


def worst_case_quantile(psi, Theta: float, N: int, m: int, epsilon: float) -> float:
    """``inf_{a > 0} [a ln(2m/eps) + a N psi(Theta / (N a))]``.

    Evaluated on 400 log-spaced points in ``[1e-6, 1e3]`` and refined by
    golden section between the neighbours of the best grid point (the
    objective is a perspective of a convex function, hence convex).
    """
    Theta = check_scalar(Theta, "Theta", low=0, low_inclusive=False)
    if N < 1 or m < 1:
        raise ValueError("N and m must be >= 1")
    check_scalar(epsilon, "epsilon", low=0, high=1, low_inclusive=False,
                 high_inclusive=False)
    q = _quantile_objective(psi, Theta, N, m, epsilon)
    grid = np.logspace(-6, 3, 400)
    vals = np.array([q(a) for a in grid])
    i = int(np.argmin(vals))
    lo = math.log(grid[max(i - 1, 0)])
    hi = math.log(grid[min(i + 1, grid.size - 1)])
    c = hi - _INV_PHI * (hi - lo)
    d = lo + _INV_PHI * (hi - lo)
    qc, qd = q(math.exp(c)), q(math.exp(d))
    for _ in range(100):
        if qc < qd:
            hi, d, qd = d, c, qc
            c = hi - _INV_PHI * (hi - lo)
            qc = q(math.exp(c))
        else:
            lo, c, qc = c, d, qd
            d = lo + _INV_PHI * (hi - lo)
            qd = q(math.exp(d))
    return float(min(vals[i], qc, qd))


def tail_probability(psi, delta: float, Theta: float, N: int, m: int) -> float:
    """``min(1, 2m exp(-N psi*(delta / Theta)))``."""
    star = fenchel_transform(psi, delta / Theta)
    return float(min(1.0, 2.0 * m * math.exp(-N * star)))


# --------------------------------------------------------------------------
# coordinate bounds for F(beta)


def field_theta_columns(traj: Trajectory, weights=None):
    """Unique ``Theta`` columns of the field coordinates.

    Coordinate ``(k, f)`` of ``F`` (row ``k`` of the parameter matrix, design
    feature ``f``) has ``Theta_t = w_t^{-1} |Z_t[f]|``: the baseline column of
    ``H_t`` holds a single one and the lag columns hold a single lag value.

    Returns
    -------
    columns : ndarray of shape (N, 1 + d n)
    feature_of : ndarray of shape (kappa,)
        Design-feature index of each flat coordinate.
    """
    shape = traj.shape
    winv = 1.0 / check_weights(weights, traj.N)
    cols = np.abs(traj.design) * winv[:, None]
    n = shape.n
    # flat order is beta0 (n) then betaS lag-major, row-major within lag:
    # entry (s, k, l) -> feature 1 + (s-1) n + l
    s_idx, _, l_idx = np.meshgrid(np.arange(shape.d), np.arange(n), np.arange(n),
                                  indexing="ij")
    feature_of = np.concatenate([np.zeros(n, dtype=int), (1 + s_idx * n + l_idx).ravel()])
    return cols, feature_of


def field_bounds(traj: Trajectory, B: FeasibleSet, cfg: BoundConfig, link=IDENTITY,
                 weights=None, family: str = "poisson", return_alpha: bool = False):
    """Online bounds ``delta_j`` on ``|F(beta)_j|`` for all ``kappa`` coordinates."""
    chi = chi_all(traj, B, link)
    if family == "poisson":
        rate = RateFunction.poisson(chi)
    elif family == "categorical":
        rate = RateFunction.categorical(np.minimum(chi, 1.0))
    else:
        raise ValueError(f"unknown family {family!r}")
    cols, feature_of = field_theta_columns(traj, weights)
    delta, alpha = online_bound(rate, cols, traj.N, cfg, return_alpha=True)
    if return_alpha:
        return delta[feature_of], alpha[feature_of]
    return delta[feature_of]


SERIES_LIMIT = 4.0


def policy_bounds(moments, thetas, N: int, cfg: BoundConfig, family: str = "poisson"):
    """Online bounds for policies whose per-step norms are summarized by moments.

    ``moments[p, m-1] = sum_t chi_t u_t^m`` with ``u_t = ||E_t||_1 / theta_p``
    in ``[0, 1]``. For the Poisson rate with ``c = theta / (alpha N) <= 4`` the
    rate sum ``sum_t chi_t Psi(c u_t)`` is recovered from the exponential
    series (truncation below 1e-40 relative). Otherwise, and for the
    categorical rate, the convexity bound ``Psi(c u) <= u Psi(c)`` is used,
    which can only enlarge ``delta``.

    Returns
    -------
    delta, alpha : ndarrays of shape (P,)
    """
    mom = np.asarray(moments, dtype=np.float64)
    th = np.asarray(thetas, dtype=np.float64)
    alphas = cfg.alphas
    P, M = mom.shape
    sums = np.empty((alphas.size, P))
    for i, a in enumerate(alphas):
        c = th / (a * N)
        if family == "poisson":
            conv = rate_poisson(np.minimum(c, SATURATION_EXPONENT)) * mom[:, 0]
            series = np.zeros(P)
            term = np.ones(P)
            for m in range(1, M + 1):
                term = term * c / m
                if m >= 2:
                    series += term * mom[:, m - 1]
            sums[i] = np.where(c <= SERIES_LIMIT, series, conv)
        elif family == "categorical":
            sums[i] = rate_categorical(c, np.ones_like(c)) * mom[:, 0]
        else:
            raise ValueError(f"unknown family {family!r}")
    vals = alphas[:, None] * (cfg.log_term + sums)
    idx = np.argmin(vals, axis=0)
    return vals[idx, np.arange(P)], alphas[idx]
