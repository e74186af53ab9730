"""Ground-truth parameter generation and trajectory simulation.

Randomness comes from numpy's counter-based ``Philox`` bit generator. All
streams derive from one integer seed through :func:`spawn_streams`, so a run
is reproducible from that seed alone.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._validation import check_positive_int, check_scalar
from .model import IDENTITY, ModelShape, ParamVector, Trajectory, get_link

__all__ = [
    "COUNT_CAP",
    "SimulationOverflowError",
    "ModelInvalidError",
    "GenSpec",
    "make_rng",
    "spawn_streams",
    "generate_params",
    "simulate_poisson",
    "simulate_categorical",
]

COUNT_CAP = 1e9


class SimulationOverflowError(OverflowError):
    """Intensities exceeded the count cap; ``trajectory`` holds the prefix."""

    def __init__(self, message: str, t: int, trajectory: Trajectory | None = None):
        super().__init__(message)
        self.t = t
        self.trajectory = trajectory


class ModelInvalidError(ValueError):
    """Link output is not a valid probability vector."""


def make_rng(seed) -> np.random.Generator:
    """Philox generator from an int, a ``SeedSequence`` or an existing Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    return np.random.Generator(np.random.Philox(seed))


def spawn_streams(seed: int, names=("params", "train", "test", "replicas")) -> dict:
    """Independent child seed sequences, one per named purpose.

    The mapping is positional: stream ``i`` is ``SeedSequence(seed).spawn(...)[i]``.
    """
    children = np.random.SeedSequence(seed).spawn(len(names))
    return dict(zip(names, children))


@dataclass(frozen=True)
class GenSpec:
    shape: ModelShape
    a: float
    b: float
    seed: int = 0

    def __post_init__(self):
        check_scalar(self.a, "a", low=0, low_inclusive=False)
        check_scalar(self.b, "b", low=0, high=1)


def generate_params(spec: GenSpec) -> ParamVector:
    """``beta0_k = a``; each row's ``d n`` excitation weights are uniform
    draws rescaled to sum to ``b``."""
    shape = spec.shape
    n, d = shape.n, shape.d
    rng = make_rng(spec.seed)
    beta0 = np.full(n, float(spec.a))
    if d == 0 or spec.b == 0:
        return ParamVector(beta0, np.zeros((d, n, n)))
    W = rng.uniform(size=(n, d * n))
    W *= spec.b / W.sum(axis=1, keepdims=True)
    betaS = W.reshape(n, d, n).transpose(1, 0, 2)
    return ParamVector(beta0, betaS)


def _init_states(init, d: int, n: int) -> np.ndarray:
    if init is None:
        return np.zeros((d, n))
    init = np.asarray(init, dtype=np.float64)
    if init.shape != (d, n):
        raise ValueError(f"init must have shape ({d}, {n}), got {init.shape}")
    return init


def _lag_matrix(beta: ParamVector) -> np.ndarray:
    """``(n, d n)`` matrix acting on ``[z_{t-1}, ..., z_{t-d}]``."""
    n, d = beta.n, beta.d
    return beta.betaS.transpose(1, 0, 2).reshape(n, d * n)


def simulate_poisson(beta: ParamVector, N: int, seed, init=None,
                     count_cap: float = COUNT_CAP) -> Trajectory:
    """Sample ``z_t[k] ~ Poisson(beta0_k + sum_s sum_l beta^s_kl z_{t-s}[l])``.

    Row ``i`` of the returned states is ``z_{i-d+1}``; the first ``d`` rows
    are ``init`` (zeros by default).
    """
    N = check_positive_int(N, "N")
    if np.any(beta.beta0 < 0) or np.any(beta.betaS < 0):
        raise ValueError("Poisson simulation requires beta >= 0")
    n, d = beta.n, beta.d
    rng = make_rng(seed)
    states = np.empty((N + d, n))
    states[:d] = _init_states(init, d, n)
    if np.any(states[:d] < 0):
        raise ValueError("initial counts must be nonnegative")
    W = _lag_matrix(beta)
    b0 = beta.beta0
    shape = ModelShape(n, d)
    for t in range(d, N + d):
        lam = b0 + W @ states[t - d:t][::-1].ravel() if d else b0.copy()
        if lam.max() > count_cap:
            prefix = Trajectory(shape, states[:t].copy(), "poisson")
            raise SimulationOverflowError(
                f"intensity {lam.max():.3g} exceeds cap {count_cap:.3g} at t={t - d + 1}",
                t - d + 1, prefix)
        states[t] = rng.poisson(lam)
    return Trajectory(shape, states, "poisson")


def simulate_categorical(beta: ParamVector, shape: ModelShape, N: int, seed, link=IDENTITY,
                         init=None) -> Trajectory:
    """Sample per location one of ``mu + 1`` states from ``Phi(H_t^T beta)``.

    State ``i >= 1`` is encoded as the one-hot vector ``e_i`` in the location's
    block; the ground state is all zeros.
    """
    N = check_positive_int(N, "N")
    link = get_link(link)
    L, mu, d = shape.L, shape.mu, shape.d
    n = shape.n
    if beta.n != n or beta.d != d:
        raise ValueError("parameter shape does not match")
    rng = make_rng(seed)
    states = np.empty((N + d, n))
    states[:d] = _init_states(init, d, n)
    W = _lag_matrix(beta)
    eye = np.vstack([np.zeros(mu), np.eye(mu)])
    for t in range(d, N + d):
        eta = beta.beta0 + W @ states[t - d:t][::-1].ravel() if d else beta.beta0
        p = link.value(eta).reshape(L, mu)
        if np.any(p < -1e-12) or np.any(p.sum(axis=1) > 1 + 1e-12) or not np.all(np.isfinite(p)):
            raise ModelInvalidError(f"link output is not a probability vector at t={t - d + 1}")
        cs = np.cumsum(np.clip(p, 0.0, None), axis=1)
        u = rng.random(L)
        choice = (u[:, None] >= cs).sum(axis=1) + 1  # 1..mu active, mu+1 ground
        choice = np.where(choice > mu, 0, choice)
        states[t] = eye[choice].ravel()
    return Trajectory(shape, states, "categorical")
