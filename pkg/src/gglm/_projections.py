"""Euclidean projections onto simplices and l1 balls (row-wise on 2-D input)."""

from __future__ import annotations

import numpy as np


def project_simplex(v, total=1.0):
    """Project rows of ``v`` onto ``{y >= 0, sum(y) = total}``.

    Sort-based algorithm (Duchi et al., 2008); ``O(n log n)`` per row.
    """
    v = np.asarray(v, dtype=np.float64)
    squeeze = v.ndim == 1
    V = np.atleast_2d(v)
    total = np.broadcast_to(np.asarray(total, dtype=np.float64), (V.shape[0],))
    n = V.shape[1]
    u = -np.sort(-V, axis=1)
    css = np.cumsum(u, axis=1) - total[:, None]
    ind = np.arange(1, n + 1)
    cond = u - css / ind > 0
    # the largest entry always qualifies; needed when total == 0
    cond[:, 0] = True
    rho = n - 1 - np.argmax(cond[:, ::-1], axis=1)
    tau = css[np.arange(V.shape[0]), rho] / (rho + 1.0)
    out = np.maximum(V - tau[:, None], 0.0)
    return out[0] if squeeze else out


def project_capped_simplex(v, cap):
    """Project rows of ``v`` onto ``{y >= 0, sum(y) <= cap}``.

    Clip to the nonnegative orthant; rows whose clipped sum exceeds ``cap``
    are projected onto the face ``sum(y) = cap`` instead.
    """
    v = np.asarray(v, dtype=np.float64)
    squeeze = v.ndim == 1
    V = np.atleast_2d(v)
    cap = np.broadcast_to(np.asarray(cap, dtype=np.float64), (V.shape[0],))
    out = np.maximum(V, 0.0)
    over = out.sum(axis=1) > cap
    if np.any(over):
        out[over] = project_simplex(V[over], cap[over])
    return out[0] if squeeze else out


def project_l1_ball(v, radius):
    """Project rows of ``v`` onto ``{g : ||g||_1 <= radius}``."""
    v = np.asarray(v, dtype=np.float64)
    squeeze = v.ndim == 1
    V = np.atleast_2d(v)
    radius = np.broadcast_to(np.asarray(radius, dtype=np.float64), (V.shape[0],))
    if np.any(radius < 0):
        raise ValueError("radius must be nonnegative")
    out = V.copy()
    norms = np.abs(V).sum(axis=1)
    over = norms > radius
    if np.any(over):
        zero = over & (radius == 0)
        out[zero] = 0.0
        proj = over & (radius > 0)
        if np.any(proj):
            mag = project_simplex(np.abs(V[proj]), radius[proj])
            out[proj] = np.sign(V[proj]) * mag
    return out[0] if squeeze else out
