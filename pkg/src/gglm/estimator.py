"""Empirical vector field, convex/VI parameter fitting and recovery bounds."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import ConvergenceWarning
from sklearn.utils.validation import check_is_fitted

from ._parallel import map_reduce
from ._validation import check_positive_int, check_scalar, check_weights
from .model import (
    IDENTITY,
    FeasibleSet,
    LinkFunction,
    ModelShape,
    ParamVector,
    Trajectory,
    expand_gram,
    flat_to_matrix,
    get_link,
    matrix_to_flat,
    project_feasible,
    unpack_params,
)

__all__ = [
    "FitConfig",
    "FitResult",
    "empirical_field",
    "objective_value",
    "ls_constant",
    "fit_least_squares",
    "fit_vi_extragradient",
    "link_moduli",
    "monotonicity_modulus",
    "recovery_error_bound",
    "GGLMEstimator",
]

MAX_DENSE_KAPPA = 2000


@dataclass(frozen=True)
class FitConfig:
    """Solver settings.

    ``tol_residual`` bounds ``||x - P(x - gamma F(x))||_inf`` with
    ``gamma = 1/L_hat``; for plain projected gradient this is exactly the
    step length ``||x_{k+1} - x_k||_inf``. Every ``polish_every``
    iterations the least-squares solver tries an exact active-set solve and
    keeps it only if the residual test certifies it (0 disables).
    """

    max_iters: int = 100_000
    step_rule: str = "backtracking"
    shrink: float = 0.5
    tol_residual: float = 1e-10
    seed: int = 0
    accelerate: bool = True
    init: str = "projection"
    polish_every: int = 50

    def __post_init__(self):
        check_positive_int(self.max_iters, "max_iters")
        check_scalar(self.tol_residual, "tol_residual", low=0, low_inclusive=False)
        check_scalar(self.shrink, "shrink", low=0, high=1,
                     low_inclusive=False, high_inclusive=False)
        if self.step_rule not in ("fixed", "backtracking"):
            raise ValueError(f"unknown step rule {self.step_rule!r}")
        if self.init not in ("projection", "random"):
            raise ValueError(f"unknown init {self.init!r}")
        if self.polish_every < 0:
            raise ValueError("polish_every must be >= 0")


@dataclass
class FitResult:
    beta_hat: ParamVector
    shape: ModelShape
    iterations: int
    final_residual: float
    objective_value: float | None
    converged: bool
    solver: str
    history: list = field(default_factory=list, repr=False)

    @property
    def flat(self) -> np.ndarray:
        return self.beta_hat.flat

    def to_dict(self) -> dict:
        return {
            "shape": self.shape.to_dict(),
            "beta_hat": self.beta_hat.flat.tolist(),
            "iterations": int(self.iterations),
            "final_residual": float(self.final_residual),
            "objective_value": (None if self.objective_value is None
                                else float(self.objective_value)),
            "converged": bool(self.converged),
            "solver": self.solver,
        }


# --------------------------------------------------------------------------
# field and objective


def _as_matrix(x, shape: ModelShape) -> np.ndarray:
    if isinstance(x, ParamVector):
        if x.n != shape.n or x.d != shape.d:
            raise ValueError("parameter shape does not match trajectory shape")
        return x.matrix()
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (shape.kappa(),):
        raise ValueError(f"expected flat parameter of length {shape.kappa()}, got {x.shape}")
    return flat_to_matrix(x, shape)


def _field_matrix(traj: Trajectory, X: np.ndarray, link: LinkFunction,
                  winv: np.ndarray) -> np.ndarray:
    Z, Y = traj.design, traj.responses

    def part(lo, hi):
        Zc = Z[lo:hi]
        mean = link.value(Zc @ X.T)
        if not np.all(np.isfinite(mean)):
            raise FloatingPointError("link produced non-finite values")
        R = (mean - Y[lo:hi]) * winv[lo:hi, None]
        return R.T @ Zc

    return map_reduce(part, traj.N) / traj.N


def empirical_field(traj: Trajectory, x, link=IDENTITY, weights=None) -> np.ndarray:
    """Observable field ``(1/N) sum_t w_t^{-1} H_t [Phi(H_t^T x) - z_t]``.

    Parameters
    ----------
    traj : Trajectory
    x : ParamVector or ndarray of shape (kappa,)
    link : LinkFunction or str
    weights : ndarray of shape (N,), optional
        Positive per-step weights ``Lambda_t`` (default all ones).

    Returns
    -------
    ndarray of shape (kappa,)
    """
    if traj.N < 1:
        raise ValueError("trajectory has no observations (N = 0)")
    link = get_link(link)
    X = _as_matrix(x, traj.shape)
    winv = 1.0 / check_weights(weights, traj.N)
    return matrix_to_flat(_field_matrix(traj, X, link, winv), traj.shape)


def objective_value(traj: Trajectory, x, link=IDENTITY, weights=None) -> float:
    """Convex potential ``(1/N) sum_t w_t^{-1} [pot(H_t^T x) - x^T H_t z_t]``
    whose gradient is :func:`empirical_field`.

    For the identity link this differs from the least-squares objective
    ``(1/2N) sum ||H_t^T x - z_t||^2`` by the constant :func:`ls_constant`.
    """
    if traj.N < 1:
        raise ValueError("trajectory has no observations (N = 0)")
    link = get_link(link)
    X = _as_matrix(x, traj.shape)
    winv = 1.0 / check_weights(weights, traj.N)
    Z, Y = traj.design, traj.responses

    def part(lo, hi):
        eta = Z[lo:hi] @ X.T
        vals = link.potential_rows(eta) - np.einsum("ij,ij->i", eta, Y[lo:hi])
        return np.array([np.dot(vals, winv[lo:hi])])

    return float(map_reduce(part, traj.N)[0] / traj.N)


def ls_constant(traj: Trajectory, weights=None) -> float:
    """``(1/2N) sum_t w_t^{-1} ||z_t||^2``."""
    winv = 1.0 / check_weights(weights, traj.N)
    Y = traj.responses
    return float(0.5 * np.dot(np.einsum("ij,ij->i", Y, Y), winv) / traj.N)


def _ls_statistics(traj: Trajectory, winv: np.ndarray):
    """Weighted Gram ``Q = Z^T W Z / N`` and cross term ``C = Y^T W Z / N``."""
    Z, Y = traj.design, traj.responses
    nf = Z.shape[1]

    def part(lo, hi):
        Zw = Z[lo:hi] * winv[lo:hi, None]
        return np.hstack([Zw.T @ Z[lo:hi], (Y[lo:hi].T @ Zw).T])

    S = map_reduce(part, traj.N) / traj.N
    return S[:, :nf], S[:, nf:].T


def _power_lambda_max(Q: np.ndarray, iters: int = 200) -> float:
    v = np.ones(Q.shape[0]) / np.sqrt(Q.shape[0])
    lam = 0.0
    for _ in range(iters):
        w = Q @ v
        nrm = np.linalg.norm(w)
        if nrm == 0.0:
            return 0.0
        lam_new = float(v @ w)
        v = w / nrm
        if abs(lam_new - lam) <= 1e-12 * max(1.0, abs(lam_new)):
            lam = lam_new
            break
        lam = lam_new
    # power iteration underestimates; backtracking absorbs the rest
    return lam * 1.01


def _initial_point(shape: ModelShape, B: FeasibleSet, cfg: FitConfig) -> np.ndarray:
    if cfg.init == "random":
        rng = np.random.default_rng(cfg.seed)
        x0 = rng.uniform(0.0, 1.0, size=shape.kappa())
    else:
        x0 = np.zeros(shape.kappa())
    return project_feasible(x0, B, shape)


# --------------------------------------------------------------------------
# least squares (identity link)


def _polish_rows(X, Q, C, B: FeasibleSet, tol_active: float) -> np.ndarray | None:
    """Exact minimizer on the active set guessed from ``X``.

    The LS problem splits into one QP per location row sharing the Hessian
    ``Q``. Coordinates within ``tol_active`` of a bound are fixed there and
    the remaining equality-constrained QP is solved through its KKT system.
    The caller must still certify the result with the projected residual.
    """
    if B.kind == "unconstrained":
        return None
    n, p = X.shape
    out = np.empty_like(X)
    for k in range(n):
        x = X[k]
        fixed = x <= tol_active
        val = np.zeros(p)
        sum_active = False
        if B.kind == "box_row_sum":
            if x[0] >= B.a_cap - tol_active:
                fixed[0], val[0] = True, B.a_cap
            sum_active = x[1:].sum() >= B.b_cap - tol_active
        free = np.flatnonzero(~fixed)
        rhs = C[k, free] - Q[np.ix_(free, np.flatnonzero(fixed))] @ val[fixed]
        K = Q[np.ix_(free, free)]
        lag_free = (free >= 1).astype(float) if sum_active else None
        if sum_active and lag_free.any():
            m = free.size
            kkt = np.zeros((m + 1, m + 1))
            kkt[:m, :m] = K
            kkt[:m, m] = lag_free
            kkt[m, :m] = lag_free
            sol = np.linalg.lstsq(kkt, np.append(rhs, B.b_cap), rcond=None)[0][:m]
        elif free.size:
            sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
        else:
            sol = np.zeros(0)
        val[free] = sol
        out[k] = val
    return out


def fit_least_squares(traj: Trajectory, B: FeasibleSet = None, cfg: FitConfig = None,
                      weights=None, record_history: bool = False) -> FitResult:
    """Projected-gradient least squares over ``B``.

    Works on the sufficient statistics ``Q``, ``C`` so each iteration costs
    ``O(n * (1 + d n)^2)`` regardless of ``N``. With ``cfg.accelerate`` the
    monotone FISTA variant is used (objective still nonincreasing).
    Unconstrained problems start from the minimum-norm normal-equations
    solution.
    """
    B = FeasibleSet.unconstrained() if B is None else B
    cfg = FitConfig() if cfg is None else cfg
    if traj.N < 1:
        raise ValueError("trajectory has no observations (N = 0)")
    shape = traj.shape
    winv = 1.0 / check_weights(weights, traj.N)
    Q, C = _ls_statistics(traj, winv)
    const = ls_constant(traj, weights)

    def f(X):
        return 0.5 * np.sum((X @ Q) * X) - np.sum(X * C)

    def grad(X):
        return X @ Q - C

    def proj(X):
        return flat_to_matrix(project_feasible(matrix_to_flat(X, shape), B, shape), shape)

    lip = _power_lambda_max(Q)
    gamma0 = 1.0 / lip if lip > 0 else 1.0

    if B.kind == "unconstrained" and cfg.init == "projection":
        X = np.linalg.lstsq(Q, C.T, rcond=None)[0].T
    else:
        X = flat_to_matrix(_initial_point(shape, B, cfg), shape)

    def residual(X):
        return float(np.max(np.abs(proj(X - gamma0 * grad(X)) - X)))

    def try_polish(X):
        # returns a certified optimum or None
        for tol_active in (1e-12, 1e-9, 1e-6):
            Xp = _polish_rows(X, Q, C, B, tol_active)
            if Xp is None:
                return None
            Xp = proj(Xp)
            if residual(Xp) <= cfg.tol_residual:
                return Xp
        return None

    fx = f(X)
    history = [fx + const] if record_history else []
    gamma = gamma0
    Y_acc, t_acc = X.copy(), 1.0
    converged = False
    it = 0
    res = residual(X)
    if res <= cfg.tol_residual:
        converged = True
    while not converged and it < cfg.max_iters:
        it += 1
        base = Y_acc if cfg.accelerate else X
        gb = grad(base)
        while True:
            cand = proj(base - gamma * gb)
            diff = cand - base
            fc = f(cand)
            if cfg.step_rule == "fixed":
                break
            # exact for a quadratic: f(c) - f(b) - <g, c - b> = (c - b)Q(c - b)/2
            if np.sum((diff @ Q) * diff) <= np.sum(diff * diff) / gamma:
                break
            gamma *= cfg.shrink
            if gamma < 1e-30:
                raise FloatingPointError("step size collapsed during backtracking")
        if cfg.accelerate:
            t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t_acc * t_acc))
            # a backtracked step from X itself is a descent step; accepting it
            # unconditionally avoids stalling once f differences hit rounding
            dX = cand - X
            decrease = np.sum(grad(X) * dX) + 0.5 * np.sum((dX @ Q) * dX)
            if decrease <= 0.0 or t_acc == 1.0:
                X_new, f_new = cand, fc
                Y_acc = X_new + (t_acc / t_new) * (cand - X_new) + ((t_acc - 1.0) / t_new) * (X_new - X)
                t_acc = t_new
            else:
                # adaptive restart keeps the objective monotone
                X_new, f_new = X, fx
                Y_acc, t_acc = X.copy(), 1.0
        else:
            X_new, f_new = cand, fc
        step = float(np.max(np.abs(X_new - X)))
        X, fx = X_new, f_new
        if record_history:
            history.append(fx + const)
        if not cfg.accelerate:
            res = step
        elif it % 10 == 0 or step <= cfg.tol_residual:
            res = residual(X)
        if res <= cfg.tol_residual:
            converged = True
        elif cfg.polish_every and it % cfg.polish_every == 0:
            Xp = try_polish(X)
            if Xp is not None:
                X, fx, res, converged = Xp, f(Xp), residual(Xp), True
                if record_history:
                    history.append(fx + const)
    res = residual(X)
    if not converged:
        warnings.warn(
            f"least squares did not converge in {cfg.max_iters} iterations "
            f"(residual {res:.3e})", ConvergenceWarning, stacklevel=2)
    flat = matrix_to_flat(X, shape)
    return FitResult(unpack_params(flat, shape), shape, it, res, fx + const,
                     converged, "projected_gradient", history)


# --------------------------------------------------------------------------
# extragradient VI solver


def fit_vi_extragradient(traj: Trajectory, link=IDENTITY, B: FeasibleSet = None,
                         cfg: FitConfig = None, weights=None, callback=None) -> FitResult:
    """Solve ``VI(F, B)`` for the empirical field by extragradient steps.

    ``y = P(x - g F(x))``, ``x+ = P(x - g F(y))``; ``g`` is shrunk until
    ``g ||F(y) - F(x)|| <= 0.9 ||y - x||``. ``callback(k, x)`` is called with
    every iterate.
    """
    B = FeasibleSet.unconstrained() if B is None else B
    cfg = FitConfig() if cfg is None else cfg
    link = get_link(link)
    shape = traj.shape
    w = check_weights(weights, traj.N)
    winv = 1.0 / w

    def F(x):
        return matrix_to_flat(_field_matrix(traj, flat_to_matrix(x, shape), link, winv), shape)

    Q, _ = _ls_statistics(traj, winv)
    lip = _power_lambda_max(Q)
    if link.kind == "sigmoid":
        lip *= 0.25
    gamma = 1.0 / lip if lip > 0 else 1.0

    x = _initial_point(shape, B, cfg)
    Fx = F(x)
    it = 0
    converged = False
    res = np.inf
    while it < cfg.max_iters:
        while True:
            y = project_feasible(x - gamma * Fx, B, shape)
            Fy = F(y)
            dy = np.linalg.norm(y - x)
            if cfg.step_rule == "fixed" or gamma * np.linalg.norm(Fy - Fx) <= 0.9 * dy + 1e-300:
                break
            gamma *= cfg.shrink
        res = float(np.max(np.abs(y - x)))
        if res <= cfg.tol_residual:
            converged = True
            break
        x = project_feasible(x - gamma * Fy, B, shape)
        Fx = F(x)
        it += 1
        if callback is not None:
            callback(it, x)
    if not converged:
        warnings.warn(
            f"extragradient did not converge in {cfg.max_iters} iterations "
            f"(residual {res:.3e})", ConvergenceWarning, stacklevel=2)
    obj = objective_value(traj, x, link, weights)
    return FitResult(unpack_params(x, shape), shape, it, res, obj, converged, "extragradient")


# --------------------------------------------------------------------------
# strong monotonicity and recovery bounds


def link_moduli(traj: Trajectory, link=IDENTITY, B: FeasibleSet = None) -> np.ndarray:
    """Per-step lower bound ``gamma_t`` on the link derivative over the
    reachable arguments ``{H_t^T x : x in B}``."""
    link = get_link(link)
    B = FeasibleSet.unconstrained() if B is None else B
    if link.kind == "identity":
        return np.ones(traj.N)
    if not B.is_bounded:
        if link.kind == "exp" and B.kind == "nonnegative":
            return np.ones(traj.N)
        return np.zeros(traj.N)
    lagmax = traj.design[:, 1:].max(axis=1) if traj.shape.d * traj.shape.n else np.zeros(traj.N)
    zmax = B.a_cap + B.b_cap * lagmax
    # states and parameters are nonnegative, so arguments lie in [0, zmax]
    if link.kind == "sigmoid":
        return link.derivative(zmax)
    return np.ones(traj.N)


def monotonicity_modulus(traj: Trajectory, gamma_t=None, weights=None,
                         return_matrix: bool = False):
    """``lambda_min`` of ``Gamma = (1/N) sum_t gamma_t w_t^{-1} H_t H_t^T``,
    a lower bound on the 2-modulus of strong monotonicity of the field."""
    shape = traj.shape
    if shape.kappa() > MAX_DENSE_KAPPA:
        raise ValueError(
            f"kappa={shape.kappa()} exceeds the dense limit {MAX_DENSE_KAPPA}")
    g = np.ones(traj.N) if gamma_t is None else np.asarray(gamma_t, dtype=np.float64)
    if g.shape != (traj.N,) or np.any(g < 0) or not np.all(np.isfinite(g)):
        raise ValueError("gamma_t must be a finite nonnegative vector of length N")
    c = g / check_weights(weights, traj.N)
    Q, _ = _ls_statistics(traj, c)
    Gamma = expand_gram(Q, shape)
    if not np.all(np.isfinite(Gamma)):
        raise FloatingPointError("non-finite Gamma")
    lam = float(np.linalg.eigvalsh(Gamma)[0])
    if return_matrix:
        return lam, Gamma
    return lam


def recovery_error_bound(field_norm_inf_at_beta: float, theta_p: float,
                         theta_1: float) -> float:
    """``||beta_hat - beta||_p <= ||F(beta)||_inf / sqrt(theta_p * theta_1)``."""
    if theta_p <= 0 or theta_1 <= 0:
        raise ValueError("modulus not certified (nonpositive strong-monotonicity modulus)")
    if field_norm_inf_at_beta < 0:
        raise ValueError("field bound must be nonnegative")
    return float(field_norm_inf_at_beta / np.sqrt(theta_p * theta_1))


# --------------------------------------------------------------------------
# scikit-learn style wrapper


def _infer_kind(X: np.ndarray, mu: int) -> str:
    if mu > 1:
        return "categorical"
    if np.all(X == np.round(X)):
        return "poisson"
    return "continuous"


class GGLMEstimator(BaseEstimator):
    """Spatio-temporal GGLM fitted by solving the empirical-field VI.

    Parameters
    ----------
    d : int
        Memory depth.
    mu : int, default=1
        Nontrivial states per location.
    link : {"identity", "sigmoid", "exp"}, default="identity"
    a_cap, b_cap : float, optional
        Caps of the box/row-sum feasible set; both ``None`` means unconstrained.
    solver : {"auto", "least_squares", "extragradient"}, default="auto"
        ``auto`` uses least squares for the identity link.
    max_iter : int, default=100000
    tol : float, default=1e-10

    Attributes
    ----------
    beta_ : ParamVector
    coef_ : ndarray of shape (kappa,)
    shape_ : ModelShape
    n_iter_ : int
    fit_result_ : FitResult
    """

    def __init__(self, d=1, mu=1, link="identity", a_cap=None, b_cap=None,
                 solver="auto", max_iter=100_000, tol=1e-10, accelerate=True):
        self.d = d
        self.mu = mu
        self.link = link
        self.a_cap = a_cap
        self.b_cap = b_cap
        self.solver = solver
        self.max_iter = max_iter
        self.tol = tol
        self.accelerate = accelerate

    def _feasible_set(self) -> FeasibleSet:
        if self.a_cap is None and self.b_cap is None:
            return FeasibleSet.unconstrained()
        if self.a_cap is None or self.b_cap is None:
            raise ValueError("a_cap and b_cap must be given together")
        return FeasibleSet.box_row_sum(self.a_cap, self.b_cap)

    def _trajectory(self, X) -> Trajectory:
        if isinstance(X, Trajectory):
            return X
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2:
            raise ValueError("X must be a 2-D array of states (time x mu*L)")
        if X.shape[1] % self.mu:
            raise ValueError("number of columns is not a multiple of mu")
        shape = ModelShape(X.shape[1] // self.mu, self.d, self.mu)
        return Trajectory(shape, X, _infer_kind(X, self.mu))

    def fit(self, X, y=None, weights=None):
        """Fit on a state array whose first ``d`` rows are the lag prefix."""
        traj = self._trajectory(X)
        link = get_link(self.link)
        B = self._feasible_set()
        cfg = FitConfig(max_iters=self.max_iter, tol_residual=self.tol,
                        accelerate=self.accelerate)
        solver = self.solver
        if solver == "auto":
            solver = "least_squares" if link.is_affine else "extragradient"
        if solver == "least_squares":
            if not link.is_affine:
                raise ValueError("least squares requires the identity link")
            res = fit_least_squares(traj, B, cfg, weights)
        elif solver == "extragradient":
            res = fit_vi_extragradient(traj, link, B, cfg, weights)
        else:
            raise ValueError(f"unknown solver {self.solver!r}")
        self.shape_ = traj.shape
        self.fit_result_ = res
        self.beta_ = res.beta_hat
        self.coef_ = res.beta_hat.flat
        self.n_iter_ = res.iterations
        return self

    def field(self, X, weights=None) -> np.ndarray:
        """Empirical field of ``X`` evaluated at the fitted parameters."""
        check_is_fitted(self, "beta_")
        return empirical_field(self._trajectory(X), self.beta_, self.link, weights)

    def predict(self, X, horizon: int = 1) -> np.ndarray:
        """Conditional means ``horizon`` steps after each complete window.

        Row ``i`` of the output predicts the state at row ``i + d - 1 + horizon``
        of ``X`` from rows ``i .. i + d - 1``.
        """
        from .predict import conditional_means

        check_is_fitted(self, "beta_")
        X = np.asarray(X, dtype=np.float64)
        origins = np.arange(self.d - 1, X.shape[0])
        return conditional_means(self.beta_, X, origins, horizon, link=self.link)[-1]

    def predict_interval(self, X, horizon: int = 1, level: float = 0.95):
        """Equal-tail Poisson intervals around :meth:`predict`."""
        from .predict import poisson_interval

        mean = self.predict(X, horizon)
        return poisson_interval(mean, level)

    def score(self, X, y=None) -> float:
        """Negative convex objective (higher is better)."""
        check_is_fitted(self, "beta_")
        traj = self._trajectory(X)
        val = objective_value(traj, self.beta_, self.link)
        if get_link(self.link).is_affine:
            val += ls_constant(traj)
        return -val
