"""Data model for spatio-temporal GGLMs.

A process on ``L`` locations with ``mu`` nontrivial states per location and
memory depth ``d`` has conditional mean ``Phi(beta0 + sum_s betaS[s-1] @ z_{t-s})``
where ``z_t`` is the stacked state vector of length ``n = mu * L``.

Flat parameter layout (length ``kappa = n + d * n**2``)::

    [beta0 (n) | betaS[0] row-major (n*n) | betaS[1] row-major | ... ]

i.e. baseline first, then lag-major, row-major within each lag.

The regressor matrix ``H_t`` (``kappa x n``) is never formed.  Internally the
estimator works with the lag design row ``Z_t = [1, z_{t-1}, ..., z_{t-d}]``
and the matrix form ``X`` of a parameter (``n x (1 + d*n)``), for which
``H_t^T x = X @ Z_t``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from ._projections import project_capped_simplex
from ._validation import check_finite_array, check_positive_int, check_scalar

__all__ = [
    "ModelShape",
    "ParamVector",
    "LinkFunction",
    "IDENTITY",
    "SIGMOID",
    "EXP",
    "get_link",
    "FeasibleSet",
    "Trajectory",
    "RegressorWindow",
    "pack_params",
    "unpack_params",
    "apply",
    "transpose_apply",
    "project_feasible",
    "lag_design",
    "flat_to_matrix",
    "matrix_to_flat",
    "expand_gram",
]


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ModelShape:
    """Dimensions of a spatio-temporal GGLM."""

    L: int
    d: int
    mu: int = 1

    def __post_init__(self):
        for name in ("L", "d", "mu"):
            check_positive_int(getattr(self, name), name)

    @property
    def n(self) -> int:
        """Length of a state vector, ``mu * L``."""
        return self.mu * self.L

    @property
    def n_features(self) -> int:
        return 1 + self.d * self.n

    def kappa(self) -> int:
        return self.n + self.d * self.n * self.n

    def to_dict(self) -> dict:
        return {"L": self.L, "d": self.d, "mu": self.mu}


class ParamVector:
    """Parameter collection ``{beta0, betaS}``; immutable after construction."""

    __slots__ = ("beta0", "betaS")

    def __init__(self, beta0, betaS):
        beta0 = check_finite_array(beta0, "beta0", ndim=1)
        betaS = check_finite_array(betaS, "betaS", ndim=3)
        n = beta0.shape[0]
        if betaS.shape[1:] != (n, n):
            raise ValueError(
                f"betaS must have shape (d, {n}, {n}), got {betaS.shape}")
        object.__setattr__(self, "beta0", _readonly(beta0))
        object.__setattr__(self, "betaS", _readonly(betaS))

    def __setattr__(self, name, value):
        raise AttributeError("ParamVector is immutable")

    @classmethod
    def zeros(cls, shape: ModelShape) -> "ParamVector":
        return cls(np.zeros(shape.n), np.zeros((shape.d, shape.n, shape.n)))

    @property
    def n(self) -> int:
        return self.beta0.shape[0]

    @property
    def d(self) -> int:
        return self.betaS.shape[0]

    @property
    def flat(self) -> np.ndarray:
        return np.concatenate([self.beta0, self.betaS.ravel()])

    def matrix(self) -> np.ndarray:
        """Matrix form ``X`` with ``H_t^T x = X @ Z_t``."""
        n, d = self.n, self.d
        return np.hstack([self.beta0[:, None],
                          self.betaS.transpose(1, 0, 2).reshape(n, d * n)])

    def __eq__(self, other):
        if not isinstance(other, ParamVector):
            return NotImplemented
        return (np.array_equal(self.beta0, other.beta0)
                and np.array_equal(self.betaS, other.betaS))

    __hash__ = None

    def __repr__(self):
        return f"ParamVector(n={self.n}, d={self.d})"


def pack_params(p: ParamVector) -> np.ndarray:
    """Flatten ``p`` into the documented order."""
    return p.flat


def unpack_params(v, shape: ModelShape) -> ParamVector:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.shape[0] != shape.kappa():
        raise ValueError(
            f"flat parameter length {v.shape} does not match kappa={shape.kappa()}")
    n, d = shape.n, shape.d
    return ParamVector(v[:n], v[n:].reshape(d, n, n))


def flat_to_matrix(v, shape: ModelShape) -> np.ndarray:
    """Flat vector(s) to matrix form; leading axes are preserved."""
    v = np.asarray(v, dtype=np.float64)
    n, d = shape.n, shape.d
    lead = v.shape[:-1]
    base = v[..., :n, None]
    lags = v[..., n:].reshape(*lead, d, n, n)
    lags = np.moveaxis(lags, -3, -2).reshape(*lead, n, d * n)
    return np.concatenate([base, lags], axis=-1)


def matrix_to_flat(X, shape: ModelShape) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    n, d = shape.n, shape.d
    lead = X.shape[:-2]
    lags = X[..., 1:].reshape(*lead, n, d, n)
    lags = np.moveaxis(lags, -2, -3).reshape(*lead, d * n * n)
    return np.concatenate([X[..., 0], lags], axis=-1)


def expand_gram(Q, shape: ModelShape) -> np.ndarray:
    """Lift a lag-feature Gram matrix to the ``kappa x kappa`` matrix
    ``sum_t c_t H_t H_t^T`` it represents (block ``I_n (x) Q`` permuted)."""
    n = shape.n
    kappa = shape.kappa()
    idx = np.arange(kappa)
    rows = np.where(idx < n, idx, ((idx - n) % (n * n)) // n)
    feats = np.where(idx < n, 0, 1 + ((idx - n) // (n * n)) * n + (idx - n) % n)
    same = rows[:, None] == rows[None, :]
    return np.where(same, np.asarray(Q)[feats[:, None], feats[None, :]], 0.0)


# --------------------------------------------------------------------------
# link functions


@dataclass(frozen=True)
class LinkFunction:
    """Componentwise monotone link with a convex potential."""

    kind: str

    def __post_init__(self):
        if self.kind not in ("identity", "sigmoid", "exp"):
            raise ValueError(f"unknown link kind {self.kind!r}")

    @property
    def is_affine(self) -> bool:
        return self.kind == "identity"

    def value(self, z):
        z = np.asarray(z, dtype=np.float64)
        if self.kind == "identity":
            return z.copy()
        if self.kind == "sigmoid":
            return expit(z)
        return np.exp(z)

    __call__ = value

    def derivative(self, z):
        z = np.asarray(z, dtype=np.float64)
        if self.kind == "identity":
            return np.ones_like(z)
        if self.kind == "sigmoid":
            s = expit(z)
            return s * (1.0 - s)
        return np.exp(z)

    def potential(self, z):
        """Scalar convex function whose gradient is :meth:`value`."""
        z = np.asarray(z, dtype=np.float64)
        if self.kind == "identity":
            return 0.5 * np.sum(z * z)
        if self.kind == "sigmoid":
            return np.sum(np.logaddexp(0.0, z))
        return np.sum(np.exp(z))

    def potential_rows(self, Z):
        """Row-wise potential of a 2-D array."""
        Z = np.asarray(Z, dtype=np.float64)
        if self.kind == "identity":
            return 0.5 * np.einsum("ij,ij->i", Z, Z)
        if self.kind == "sigmoid":
            return np.logaddexp(0.0, Z).sum(axis=1)
        return np.exp(Z).sum(axis=1)


IDENTITY = LinkFunction("identity")
SIGMOID = LinkFunction("sigmoid")
EXP = LinkFunction("exp")


def get_link(link) -> LinkFunction:
    if isinstance(link, LinkFunction):
        return link
    return LinkFunction(str(link).lower())


# --------------------------------------------------------------------------
# feasible sets


@dataclass(frozen=True)
class FeasibleSet:
    """A priori parameter set.

    ``box_row_sum``: ``x >= 0``, ``beta0_k <= a_cap`` and, for every row ``k``,
    ``sum_{s, l} betaS[s][k, l] <= b_cap``.
    """

    kind: str = "unconstrained"
    a_cap: float | None = None
    b_cap: float | None = None

    def __post_init__(self):
        if self.kind not in ("box_row_sum", "unconstrained", "nonnegative"):
            raise ValueError(f"unknown feasible set kind {self.kind!r}")
        if self.kind == "box_row_sum":
            check_scalar(self.a_cap, "a_cap", low=0)
            check_scalar(self.b_cap, "b_cap", low=0)

    @classmethod
    def box_row_sum(cls, a_cap: float, b_cap: float) -> "FeasibleSet":
        return cls("box_row_sum", float(a_cap), float(b_cap))

    @classmethod
    def unconstrained(cls) -> "FeasibleSet":
        return cls("unconstrained")

    @classmethod
    def nonnegative(cls) -> "FeasibleSet":
        return cls("nonnegative")

    @property
    def is_bounded(self) -> bool:
        return self.kind == "box_row_sum"

    def contains(self, v, shape: ModelShape, tol: float = 1e-12) -> bool:
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (shape.kappa(),) or not np.all(np.isfinite(v)):
            return False
        if self.kind == "unconstrained":
            return True
        if np.any(v < -tol):
            return False
        if self.kind == "nonnegative":
            return True
        n = shape.n
        if np.any(v[:n] > self.a_cap + tol):
            return False
        return bool(np.all(_row_blocks(v, shape).sum(axis=1) <= self.b_cap + tol))

    def project(self, v, shape: ModelShape) -> np.ndarray:
        return project_feasible(v, self, shape)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "a_cap": self.a_cap, "b_cap": self.b_cap}


def _row_blocks(v, shape: ModelShape) -> np.ndarray:
    """Per-row lag entries, shape ``(n, d*n)``."""
    n, d = shape.n, shape.d
    return v[n:].reshape(d, n, n).transpose(1, 0, 2).reshape(n, d * n)


def project_feasible(v, B: FeasibleSet, shape: ModelShape) -> np.ndarray:
    """Euclidean projection of a flat parameter onto ``B``.

    ``box_row_sum`` decomposes per row: the baseline entry is clamped to
    ``[0, a_cap]`` and the ``d*n`` lag entries of the row are projected onto
    the capped simplex ``{y >= 0, sum(y) <= b_cap}``.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (shape.kappa(),):
        raise ValueError(f"expected flat vector of length {shape.kappa()}, got {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("cannot project a non-finite vector")
    if B.kind == "unconstrained":
        return v.copy()
    if B.kind == "nonnegative":
        return np.maximum(v, 0.0)
    n, d = shape.n, shape.d
    out = np.empty_like(v)
    out[:n] = np.clip(v[:n], 0.0, B.a_cap)
    rows = project_capped_simplex(_row_blocks(v, shape), B.b_cap)
    out[n:] = rows.reshape(n, d, n).transpose(1, 0, 2).ravel()
    return out


# --------------------------------------------------------------------------
# trajectories and regressor windows


def lag_design(states, d: int, N: int | None = None) -> np.ndarray:
    """Rows ``Z_t = [1, z_{t-1}, ..., z_{t-d}]`` for ``t = 1..N``.

    ``states[i]`` holds ``z_{i-d+1}``.
    """
    states = np.asarray(states, dtype=np.float64)
    if N is None:
        N = states.shape[0] - d
    cols = [np.ones((N, 1))]
    for s in range(1, d + 1):
        cols.append(states[d - s: d - s + N])
    return np.hstack(cols)


@dataclass(frozen=True, eq=False)
class RegressorWindow:
    """The ``d`` lagged states feeding ``H_t``: ``lags[s-1] = z_{t-s}``."""

    lags: np.ndarray

    def __post_init__(self):
        lags = check_finite_array(self.lags, "lags", ndim=2)
        object.__setattr__(self, "lags", _readonly(lags))

    @property
    def d(self) -> int:
        return self.lags.shape[0]

    @property
    def n(self) -> int:
        return self.lags.shape[1]

    @property
    def features(self) -> np.ndarray:
        return np.concatenate([[1.0], self.lags.ravel()])

    def transpose_apply(self, x) -> np.ndarray:
        return transpose_apply(self, x)

    def apply(self, u) -> np.ndarray:
        return apply(self, u)

    def gram_scale(self) -> float:
        """``H_t^T H_t = q I``; returns ``q = 1 + sum ||z_{t-s}||^2``."""
        return 1.0 + float(np.sum(self.lags * self.lags))


def _check_window_params(w: RegressorWindow, x) -> np.ndarray:
    if isinstance(x, ParamVector):
        if x.n != w.n or x.d != w.d:
            raise ValueError("parameter shape does not match the window")
        return x.matrix()
    x = np.asarray(x, dtype=np.float64)
    n, d = w.n, w.d
    if x.shape != (n + d * n * n,):
        raise ValueError(f"expected flat parameter of length {n + d * n * n}, got {x.shape}")
    return np.hstack([x[:n, None],
                      x[n:].reshape(d, n, n).transpose(1, 0, 2).reshape(n, d * n)])


def transpose_apply(w: RegressorWindow, x) -> np.ndarray:
    """``H_t^T x = x0 + sum_s x^s z_{t-s}``."""
    return _check_window_params(w, x) @ w.features


def apply(w: RegressorWindow, u) -> np.ndarray:
    """``H_t u``: baseline block ``u``; lag block ``s`` entry ``(k, l)`` is
    ``u_k * z_{t-s}[l]``."""
    u = np.asarray(u, dtype=np.float64)
    if u.shape != (w.n,):
        raise ValueError(f"expected vector of length {w.n}, got {u.shape}")
    lag = u[None, :, None] * w.lags[:, None, :]
    return np.concatenate([u, lag.ravel()])


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Observed states ``z_{-d+1}, ..., z_N``; row ``i`` holds ``z_{i-d+1}``.

    ``kind`` is ``"poisson"`` (nonnegative integers), ``"categorical"``
    (Boolean, at most one active entry per ``mu``-block) or ``"continuous"``
    (nonnegative reals, e.g. noiseless means).
    """

    shape: ModelShape
    states: np.ndarray
    kind: str = "poisson"
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        states = check_finite_array(self.states, "states", ndim=2)
        if states.shape[1] != self.shape.n:
            raise ValueError(
                f"states have {states.shape[1]} columns, expected mu*L={self.shape.n}")
        if states.shape[0] < self.shape.d:
            raise ValueError("trajectory shorter than the memory depth")
        if np.any(states < 0):
            raise ValueError("states must be nonnegative")
        if self.kind == "poisson":
            if np.any(states != np.round(states)):
                raise ValueError("Poisson states must be integers")
        elif self.kind == "categorical":
            if np.any((states != 0) & (states != 1)):
                raise ValueError("categorical states must be Boolean")
            blocks = states.reshape(states.shape[0], self.shape.L, self.shape.mu)
            if np.any(blocks.sum(axis=2) > 1):
                raise ValueError("categorical block has more than one active state")
        elif self.kind != "continuous":
            raise ValueError(f"unknown trajectory kind {self.kind!r}")
        object.__setattr__(self, "states", _readonly(states))

    @property
    def N(self) -> int:
        return self.states.shape[0] - self.shape.d

    def state(self, t: int) -> np.ndarray:
        """``z_t`` for ``-d+1 <= t <= N``."""
        i = t + self.shape.d - 1
        if not 0 <= i < self.states.shape[0]:
            raise IndexError(f"time {t} outside [{1 - self.shape.d}, {self.N}]")
        return self.states[i]

    def window(self, t: int) -> RegressorWindow:
        if not 1 <= t <= self.N + 1:
            raise IndexError(f"window time {t} outside [1, {self.N + 1}]")
        d = self.shape.d
        i = t + d - 1
        return RegressorWindow(self.states[i - d:i][::-1])

    @property
    def design(self) -> np.ndarray:
        """Lag design matrix, shape ``(N, 1 + d*n)``."""
        if "design" not in self._cache:
            Z = lag_design(self.states, self.shape.d)
            Z.setflags(write=False)
            self._cache["design"] = Z
        return self._cache["design"]

    @property
    def responses(self) -> np.ndarray:
        """``z_1..z_N``, shape ``(N, n)``."""
        return self.states[self.shape.d:]

    def with_states(self, states) -> "Trajectory":
        return Trajectory(self.shape, states, self.kind)
