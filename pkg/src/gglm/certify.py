"""Bound-generating policies, the confidence polytope and LP coordinate intervals."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._kernels import advanced_policy_loop
from ._parallel import parallel_map
from ._projections import project_l1_ball
from ._simplex import DenseSimplex, LPInfeasible, LPUnbounded
from ._validation import check_scalar, check_weights
from .concentration import (
    BoundConfig,
    chi_all,
    field_bounds,
    paper_alpha_grid,
    policy_bounds,
)
from .estimator import _ls_statistics
from .model import (
    IDENTITY,
    FeasibleSet,
    ModelShape,
    ParamVector,
    RegressorWindow,
    Trajectory,
    apply,
    expand_gram,
    flat_to_matrix,
    get_link,
    matrix_to_flat,
    transpose_apply,
)

__all__ = [
    "DEFAULT_THETA_GRID",
    "EmptyConfidenceSetError",
    "LPError",
    "AffineCertificate",
    "ConfidenceSet",
    "LPResult",
    "IntervalResult",
    "CertificationReport",
    "basic_policies",
    "l1_constrained_lsq",
    "advanced_policy",
    "advanced_policies",
    "build_confidence_set",
    "lp_solve",
    "coordinate_intervals",
    "base_intervals",
    "certify",
    "ConfidenceCertifier",
]

DEFAULT_THETA_GRID = (0.5, 0.75, 1.0, 1.25, 2.0)
DUAL_TOL = 1e-7


class EmptyConfidenceSetError(ValueError):
    """The certificate constraints have no common point in the base set."""


class LPError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class AffineCertificate:
    """``|slope . x + intercept| <= delta`` holds at the true parameter
    with the probability budget recorded in ``union_count``/``n_alpha``."""

    slope: np.ndarray
    intercept: float
    delta: float
    policy: tuple
    alpha: float | None = None
    union_count: int = 1
    n_alpha: int = 1

    def __post_init__(self):
        slope = np.asarray(self.slope, dtype=np.float64)
        if slope.ndim != 1 or not np.all(np.isfinite(slope)):
            raise ValueError("certificate slope must be a finite vector")
        if not (self.delta >= 0):
            raise ValueError("certificate delta must be nonnegative")
        object.__setattr__(self, "slope", slope)

    def evaluate(self, x) -> float:
        x = x.flat if isinstance(x, ParamVector) else np.asarray(x, dtype=np.float64)
        return float(self.slope @ x + self.intercept)

    def holds(self, x, tol: float = 0.0) -> bool:
        return abs(self.evaluate(x)) <= self.delta + tol

    def to_dict(self) -> dict:
        return {"policy": list(self.policy), "slope": self.slope.tolist(),
                "intercept": float(self.intercept), "delta": float(self.delta),
                "alpha": self.alpha, "union_count": int(self.union_count),
                "n_alpha": int(self.n_alpha)}

    @classmethod
    def from_dict(cls, d: dict) -> "AffineCertificate":
        return cls(np.asarray(d["slope"]), float(d["intercept"]), float(d["delta"]),
                   tuple(d["policy"]), d.get("alpha"), int(d.get("union_count", 1)),
                   int(d.get("n_alpha", 1)))


# --------------------------------------------------------------------------
# policies


def _require_affine(link):
    if not get_link(link).is_affine:
        raise ValueError("confidence sets require an affine (identity) link")


def basic_policies(traj: Trajectory, B: FeasibleSet, cfg: BoundConfig, link=IDENTITY,
                   weights=None, family: str = "poisson") -> list[AffineCertificate]:
    """One certificate per field coordinate (rows of ``H_t`` as policies).

    Stacked, the certificates evaluate to :func:`empirical_field`.
    """
    _require_affine(link)
    shape = traj.shape
    winv = 1.0 / check_weights(weights, traj.N)
    Q, C = _ls_statistics(traj, winv)
    slopes = expand_gram(Q, shape)
    intercepts = -matrix_to_flat(C, shape)
    deltas, alphas = field_bounds(traj, B, cfg, link, weights, family, return_alpha=True)
    K = len(cfg.alpha_grid)
    return [AffineCertificate(slopes[j], float(intercepts[j]), float(deltas[j]),
                              ("basic", j), float(alphas[j]), cfg.union_count, K)
            for j in range(shape.kappa())]


def l1_constrained_lsq(target, window: RegressorWindow, theta: float, scale: float = 1.0,
                       tol: float = 1e-8, max_iter: int = 10_000) -> np.ndarray:
    """``argmin_g ||target - scale * H g||_2`` subject to ``||g||_1 <= theta``.

    Projected gradient with the exact Lipschitz step. ``H^T H = q I`` for
    these windows, so the first step already lands on the minimizer; the loop
    only certifies stationarity.
    """
    theta = check_scalar(theta, "theta", low=0)
    f = np.asarray(target, dtype=np.float64)
    Ht_f = transpose_apply(window, f)
    g = np.zeros_like(Ht_f)
    if theta == 0 or not np.any(f):
        return g
    q = window.gram_scale()
    step = 1.0 / (scale * scale * q)
    for _ in range(max_iter):
        grad = -scale * (Ht_f - scale * transpose_apply(window, apply(window, g)))
        g_new = project_l1_ball(g - step * grad, theta)
        if np.max(np.abs(g_new - g)) <= tol * max(1.0, np.max(np.abs(g_new))):
            return g_new
        g = g_new
    raise RuntimeError("l1-constrained least squares did not converge")


def advanced_policies(traj: Trajectory, B: FeasibleSet, cfg: BoundConfig,
                      thetas=DEFAULT_THETA_GRID, targets=None,
                      family: str = "poisson") -> list[AffineCertificate]:
    """Advanced policies for every ``(theta, target)`` pair, run jointly.

    For each policy ``f_1 = e_k`` and, step by step,
    ``E_t = argmin{||f_t - H_t g / N||_2 : ||g||_1 <= theta}``,
    ``f_{t+1} = f_t - H_t E_t^T / N``. The certificate has slope
    ``e_k - f_{N+1} = (1/N) sum_t H_t E_t^T`` and intercept
    ``-(1/N) sum_t E_t . z_t``. ``E_t`` depends only on the window at ``t``.

    The bound uses the realized norms ``||E_t||_1 <= theta`` rather than
    ``theta`` itself; they are predictable, so the bound stays valid.
    """
    shape = traj.shape
    kappa, N = shape.kappa(), traj.N
    targets = np.arange(kappa) if targets is None else np.asarray(targets, dtype=int)
    thetas = np.asarray(thetas, dtype=np.float64).ravel()
    if np.any(thetas < 0):
        raise ValueError("theta must be nonnegative")
    P = thetas.size * targets.size

    F = np.zeros((P, kappa))
    F[np.arange(P), np.tile(targets, thetas.size)] = 1.0
    rad = np.repeat(thetas, targets.size)
    # the categorical rate is bounded through Psi(c u) <= u Psi(c; 1), so
    # its moments carry unit weights
    chi = chi_all(traj, B) if family == "poisson" else np.ones(N)
    # F3[p] is the n x nf matrix form of f for policy p
    F3 = np.ascontiguousarray(flat_to_matrix(F, shape))
    acc, mom = advanced_policy_loop(F3, np.ascontiguousarray(traj.design),
                                    np.ascontiguousarray(traj.responses), rad, chi)
    slopes = F - matrix_to_flat(F3, shape)
    intercepts = -acc / N

    K = len(cfg.alpha_grid)
    deltas, alphas = policy_bounds(mom, rad, N, cfg, family)
    certs = []
    for p in range(P):
        k = int(targets[p % targets.size])
        certs.append(AffineCertificate(slopes[p], float(intercepts[p]), float(deltas[p]),
                                       ("advanced", k, float(rad[p])), float(alphas[p]),
                                       cfg.union_count, K))
    return certs


def advanced_policy(traj: Trajectory, target_k: int, theta: float, B: FeasibleSet,
                    cfg: BoundConfig, family: str = "poisson") -> AffineCertificate:
    """Single advanced policy (see :func:`advanced_policies`)."""
    if not 0 <= target_k < traj.shape.kappa():
        raise IndexError("target coordinate out of range")
    return advanced_policies(traj, B, cfg, [theta], [target_k], family)[0]


# --------------------------------------------------------------------------
# confidence polytope


@dataclass(eq=False)
class ConfidenceSet:
    certificates: list
    base: FeasibleSet
    shape: ModelShape
    nominal_coverage: float = 1.0

    def variable_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        n, kappa = self.shape.n, self.shape.kappa()
        lb = np.full(kappa, -np.inf)
        ub = np.full(kappa, np.inf)
        if self.base.kind in ("box_row_sum", "nonnegative"):
            lb[:] = 0.0
        if self.base.kind == "box_row_sum":
            ub[:n] = self.base.a_cap
            ub[n:] = self.base.b_cap
        return lb, ub

    def constraints(self) -> tuple[np.ndarray, np.ndarray]:
        """``A x <= b`` (base row sums plus two rows per certificate).

        Certificate rows are scaled to unit max-norm slope; this leaves the
        polytope unchanged and keeps the LP well scaled.
        """
        kappa, n, d = self.shape.kappa(), self.shape.n, self.shape.d
        rows, rhs = [], []
        if self.base.kind == "box_row_sum" and d:
            R = np.zeros((n, kappa))
            for k in range(n):
                for s in range(d):
                    R[k, n + s * n * n + k * n: n + s * n * n + (k + 1) * n] = 1.0
            rows.append(R)
            rhs.append(np.full(n, self.base.b_cap))
        if self.certificates:
            S = np.stack([c.slope for c in self.certificates])
            c0 = np.array([c.intercept for c in self.certificates])
            dl = np.array([c.delta for c in self.certificates])
            scale = np.abs(S).max(axis=1)
            scale[scale == 0] = 1.0
            S, c0, dl = S / scale[:, None], c0 / scale, dl / scale
            rows += [S, -S]
            rhs += [dl - c0, dl + c0]
        if not rows:
            return np.zeros((0, kappa)), np.zeros(0)
        return np.vstack(rows), np.concatenate(rhs)

    def contains(self, x, tol: float = 1e-9) -> bool:
        x = x.flat if isinstance(x, ParamVector) else np.asarray(x, dtype=np.float64)
        if not self.base.contains(x, self.shape, tol):
            return False
        return all(c.holds(x, tol) for c in self.certificates)

    def to_dict(self) -> dict:
        return {"shape": self.shape.to_dict(), "base": self.base.to_dict(),
                "nominal_coverage": self.nominal_coverage,
                "certificates": [c.to_dict() for c in self.certificates]}


def build_confidence_set(certs, base: FeasibleSet, shape: ModelShape,
                         epsilon: float | None = None) -> ConfidenceSet:
    """Intersect ``base`` with all certificate slabs.

    Each certificate's bound must have been computed with a union count of
    at least ``(grid size) x (number of certificates)``, so the failure
    probabilities add up to at most ``epsilon``.
    """
    certs = list(certs)
    for c in certs:
        if c.slope.shape != (shape.kappa(),):
            raise ValueError("certificate slope does not match the model shape")
    coverage = 1.0
    if certs:
        need = max(c.n_alpha for c in certs) * len(certs)
        have = min(c.union_count for c in certs)
        if have < need:
            raise ValueError(
                f"union count {have} is below grid size x policy count = {need}")
        if epsilon is not None:
            coverage = 1.0 - check_scalar(epsilon, "epsilon", low=0, high=1)
    return ConfidenceSet(certs, base, shape, coverage)


# --------------------------------------------------------------------------
# linear programming


@dataclass
class LPResult:
    value: float
    x: np.ndarray
    dual_residual: float

    @property
    def verified(self) -> bool:
        return self.dual_residual <= DUAL_TOL


def _highs(cost, A, b, lb, ub) -> LPResult:
    bounds = list(zip(np.where(np.isfinite(lb), lb, None), np.where(np.isfinite(ub), ub, None)))
    res = linprog(cost, A_ub=A if A.size else None, b_ub=b if A.size else None,
                  bounds=bounds, method="highs")
    if res.status == 2:
        raise EmptyConfidenceSetError("empty confidence set (LP infeasible)")
    if res.status == 3:
        raise LPError("linear program is unbounded")
    if res.status != 0:
        raise LPError(f"LP solver failed: {res.message}")
    y = res.ineqlin.marginals if A.size else np.zeros(0)
    zl, zu = res.lower.marginals, res.upper.marginals
    stat = cost - (A.T @ y if A.size else 0.0) - zl - zu
    sign = max(float(np.max(y, initial=0.0)), float(-np.min(zl, initial=0.0)),
               float(np.max(zu, initial=0.0)))
    resid = max(float(np.max(np.abs(stat), initial=0.0)), sign)
    return LPResult(float(res.fun), np.asarray(res.x), resid)


def lp_solve(cost, Delta: ConfidenceSet, maximize: bool = False,
             method: str = "highs") -> LPResult:
    """Optimize ``cost . x`` over ``Delta``.

    ``method="highs"`` uses scipy's HiGHS; ``"simplex"`` the dense Bland's-rule
    tableau. Both report a dual-feasibility residual.
    """
    cost = np.asarray(cost, dtype=np.float64)
    sgn = -1.0 if maximize else 1.0
    A, b = Delta.constraints()
    lb, ub = Delta.variable_bounds()
    if method == "highs":
        res = _highs(sgn * cost, A, b, lb, ub)
    elif method == "simplex":
        try:
            val, x, resid = DenseSimplex(A, b, lb, ub).solve(sgn * cost)
        except LPInfeasible as exc:
            raise EmptyConfidenceSetError(str(exc)) from exc
        except LPUnbounded as exc:
            raise LPError(str(exc)) from exc
        res = LPResult(val, x, resid)
    else:
        raise ValueError(f"unknown LP method {method!r}")
    return LPResult(sgn * res.value, res.x, res.dual_residual)


@dataclass
class IntervalResult:
    lo: np.ndarray
    hi: np.ndarray
    errors: np.ndarray | None = None
    max_dual_residual: float = 0.0
    certified: bool = True

    @property
    def verified(self) -> bool:
        return self.max_dual_residual <= DUAL_TOL


def base_intervals(base: FeasibleSet, shape: ModelShape) -> tuple[np.ndarray, np.ndarray]:
    lb, ub = ConfidenceSet([], base, shape).variable_bounds()
    return lb, ub


def coordinate_intervals(Delta: ConfidenceSet, beta_hat=None, method: str = "highs",
                         coords=None) -> IntervalResult:
    """Min and max of each coordinate over ``Delta`` (``2 kappa`` LPs).

    Raises :class:`EmptyConfidenceSetError` when ``Delta`` is empty.
    """
    kappa = Delta.shape.kappa()
    coords = np.arange(kappa) if coords is None else np.asarray(coords, dtype=int)
    lo = np.full(kappa, np.nan)
    hi = np.full(kappa, np.nan)
    A, b = Delta.constraints()
    lb, ub = Delta.variable_bounds()
    resid = 0.0
    if method == "simplex":
        try:
            solver = DenseSimplex(A, b, lb, ub)
        except LPInfeasible as exc:
            raise EmptyConfidenceSetError(str(exc)) from exc
        for j in coords:
            e = np.zeros(kappa)
            e[j] = 1.0
            try:
                vlo, _, r1 = solver.solve(e)
                vhi, _, r2 = solver.solve(-e)
            except LPUnbounded as exc:
                raise LPError(str(exc)) from exc
            lo[j], hi[j] = vlo, -vhi
            resid = max(resid, r1, r2)
    elif method == "highs":
        def solve_pair(j):
            e = np.zeros(kappa)
            e[j] = 1.0
            r_lo = _highs(e, A, b, lb, ub)
            r_hi = _highs(-e, A, b, lb, ub)
            return r_lo.value, -r_hi.value, max(r_lo.dual_residual, r_hi.dual_residual)

        for j, (vlo, vhi, r) in zip(coords, parallel_map(solve_pair, list(coords))):
            lo[j], hi[j] = vlo, vhi
            resid = max(resid, r)
    else:
        raise ValueError(f"unknown LP method {method!r}")
    if resid > DUAL_TOL:
        warnings.warn(f"LP dual residual {resid:.2e} exceeds {DUAL_TOL:g}", RuntimeWarning,
                      stacklevel=2)
    errors = None
    if beta_hat is not None:
        bh = beta_hat.flat if isinstance(beta_hat, ParamVector) else np.asarray(beta_hat)
        errors = np.maximum(np.abs(hi - bh), np.abs(lo - bh))
    return IntervalResult(lo, hi, errors, resid)


# --------------------------------------------------------------------------
# end-to-end certification


@dataclass
class CertificationReport:
    shape: ModelShape
    beta_hat: np.ndarray
    basic: IntervalResult
    advanced: IntervalResult | None
    epsilon: float
    union_count: int
    truth: np.ndarray | None = None
    n_policies: int = 0
    field_deltas: np.ndarray | None = None
    notes: list = field(default_factory=list)

    @property
    def final(self) -> IntervalResult:
        return self.advanced if self.advanced is not None else self.basic

    def actual_errors(self) -> np.ndarray | None:
        if self.truth is None:
            return None
        return np.abs(self.beta_hat - self.truth)

    def to_dict(self) -> dict:
        rows = []
        act = self.actual_errors()
        for j in range(self.shape.kappa()):
            row = {"coord": j, "beta_hat": float(self.beta_hat[j]),
                   "lo": float(self.final.lo[j]), "hi": float(self.final.hi[j]),
                   "basic_bound": float(self.basic.errors[j])}
            if self.advanced is not None:
                row["advanced_bound"] = float(self.advanced.errors[j])
            if act is not None:
                row["actual_error"] = float(act[j])
            rows.append(row)
        return {"shape": self.shape.to_dict(), "epsilon": self.epsilon,
                "union_count": int(self.union_count), "n_policies": int(self.n_policies),
                "coverage_certified": bool(self.final.certified),
                "max_dual_residual": float(max(self.basic.max_dual_residual,
                                               self.advanced.max_dual_residual
                                               if self.advanced else 0.0)),
                "notes": list(self.notes), "coordinates": rows}


def _intervals_or_fallback(Delta: ConfidenceSet, beta_hat, method, notes, label):
    try:
        return coordinate_intervals(Delta, beta_hat, method)
    except EmptyConfidenceSetError:
        notes.append(f"{label}: empty confidence set; using base-set intervals "
                     "(coverage not certified)")
        lb, ub = base_intervals(Delta.base, Delta.shape)
        errors = np.maximum(np.abs(ub - beta_hat), np.abs(lb - beta_hat))
        return IntervalResult(lb, ub, errors, 0.0, certified=False)


def certify(traj: Trajectory, beta_hat, B: FeasibleSet, epsilon: float = 0.01,
            alpha_grid=None, theta_grid=DEFAULT_THETA_GRID, advanced: bool = True,
            family: str = "poisson", lp_method: str = "highs", truth=None) -> CertificationReport:
    """Basic and (optionally) advanced confidence intervals for every coordinate.

    The union count is ``K * M`` with ``K`` the alpha-grid size and
    ``M = kappa * (len(theta_grid) + 1)`` (``kappa`` when ``advanced`` is off),
    shared by both interval sets.
    """
    if not B.is_bounded:
        raise ValueError("certification needs a bounded feasible set (box_row_sum)")
    shape = traj.shape
    kappa = shape.kappa()
    alphas = paper_alpha_grid() if alpha_grid is None else np.asarray(alpha_grid, float)
    thetas = tuple(float(t) for t in theta_grid) if advanced else ()
    M = kappa * (len(thetas) + 1)
    cfg = BoundConfig(tuple(alphas), epsilon, len(alphas) * M)
    bh = beta_hat.flat if isinstance(beta_hat, ParamVector) else np.asarray(beta_hat, float)
    notes: list = []

    basic = basic_policies(traj, B, cfg, family=family)
    Delta_b = build_confidence_set(basic, B, shape, epsilon)
    iv_basic = _intervals_or_fallback(Delta_b, bh, lp_method, notes, "basic")
    iv_adv = None
    certs = list(basic)
    if advanced:
        adv = advanced_policies(traj, B, cfg, thetas, family=family)
        certs += adv
        Delta = build_confidence_set(certs, B, shape, epsilon)
        iv_adv = _intervals_or_fallback(Delta, bh, lp_method, notes, "advanced")
    return CertificationReport(
        shape, bh, iv_basic, iv_adv, epsilon, cfg.union_count,
        None if truth is None else (truth.flat if isinstance(truth, ParamVector)
                                    else np.asarray(truth, float)),
        len(certs), np.array([c.delta for c in basic]), notes)


class ConfidenceCertifier(BaseEstimator):
    """Confidence intervals for GGLM parameters (identity link, Poisson or
    categorical observations).

    Parameters
    ----------
    d : int
    a_cap, b_cap : float
        Caps of the box/row-sum feasible set.
    epsilon : float, default=0.01
    alpha_grid : array-like, optional
        Defaults to ``10^(0.25 i - 4)``, ``i = 0..36``.
    theta_grid : tuple, default=(0.5, 0.75, 1, 1.25, 2)
    advanced : bool, default=True
    lp_method : {"highs", "simplex"}, default="highs"

    Attributes
    ----------
    report_ : CertificationReport
    intervals_ : ndarray of shape (kappa, 2)
    basic_bounds_, bounds_ : ndarray of shape (kappa,)
    """

    def __init__(self, d=1, mu=1, a_cap=1.0, b_cap=1.0, epsilon=0.01, alpha_grid=None,
                 theta_grid=DEFAULT_THETA_GRID, advanced=True, family="poisson",
                 lp_method="highs"):
        self.d = d
        self.mu = mu
        self.a_cap = a_cap
        self.b_cap = b_cap
        self.epsilon = epsilon
        self.alpha_grid = alpha_grid
        self.theta_grid = theta_grid
        self.advanced = advanced
        self.family = family
        self.lp_method = lp_method

    def fit(self, X, y=None, beta_hat=None, truth=None):
        """Certify ``beta_hat`` (fitted by least squares when omitted)."""
        from .estimator import GGLMEstimator

        B = FeasibleSet.box_row_sum(self.a_cap, self.b_cap)
        est = GGLMEstimator(d=self.d, mu=self.mu, a_cap=self.a_cap, b_cap=self.b_cap)
        traj = est._trajectory(X)
        if beta_hat is None:
            beta_hat = est.fit(traj).beta_
        self.report_ = certify(traj, beta_hat, B, self.epsilon, self.alpha_grid,
                               self.theta_grid, self.advanced, self.family,
                               self.lp_method, truth)
        fin = self.report_.final
        self.intervals_ = np.column_stack([fin.lo, fin.hi])
        self.basic_bounds_ = self.report_.basic.errors
        self.bounds_ = fin.errors
        self.beta_hat_ = self.report_.beta_hat
        return self

    def contains(self, x) -> np.ndarray:
        check_is_fitted(self, "intervals_")
        x = x.flat if isinstance(x, ParamVector) else np.asarray(x)
        return (self.intervals_[:, 0] - 1e-9 <= x) & (x <= self.intervals_[:, 1] + 1e-9)

