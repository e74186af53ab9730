"""Dense two-phase tableau simplex with Bland's rule.

Small and exact enough for oracle checks; the confidence-set pipeline uses
HiGHS by default. A solved tableau can be reused for further cost vectors
over the same polytope (warm start from the last optimal basis).
"""

from __future__ import annotations

import numpy as np

PIVOT_TOL = 1e-9
COST_TOL = 1e-9


class LPInfeasible(ValueError):
    pass


class LPUnbounded(ValueError):
    pass


class DenseSimplex:
    """``min c^T x  s.t.  A_ub x <= b_ub,  lb <= x <= ub``.

    Bounds may be infinite. Free variables are split, finite upper bounds
    become rows.
    """

    def __init__(self, A_ub, b_ub, lb, ub, max_pivots: int = 50_000):
        A = np.atleast_2d(np.asarray(A_ub, dtype=np.float64))
        b = np.asarray(b_ub, dtype=np.float64).ravel()
        n = A.shape[1] if A.size else np.asarray(lb).size
        A = A.reshape(-1, n)
        lb = np.broadcast_to(np.asarray(lb, dtype=np.float64), (n,)).copy()
        ub = np.broadcast_to(np.asarray(ub, dtype=np.float64), (n,)).copy()
        if np.any(lb > ub):
            raise LPInfeasible("empty variable bounds")
        self.n = n
        self.max_pivots = max_pivots

        # x = shift + M y with y >= 0
        cols = []
        shift = np.zeros(n)
        extra_rows = []
        for j in range(n):
            if np.isfinite(lb[j]):
                shift[j] = lb[j]
                cols.append((j, 1.0))
                if np.isfinite(ub[j]):
                    extra_rows.append((len(cols) - 1, ub[j] - lb[j]))
            elif np.isfinite(ub[j]):
                shift[j] = ub[j]
                cols.append((j, -1.0))
            else:
                cols.append((j, 1.0))
                cols.append((j, -1.0))
        ny = len(cols)
        M = np.zeros((n, ny))
        for c, (j, sgn) in enumerate(cols):
            M[j, c] = sgn
        self._M, self._shift = M, shift

        Ay = A @ M
        by = b - A @ shift
        for c, cap in extra_rows:
            row = np.zeros(ny)
            row[c] = 1.0
            Ay = np.vstack([Ay, row])
            by = np.append(by, cap)
        m = Ay.shape[0]

        # rows: Ay y + s = by, flip rows with negative rhs and add artificials
        neg = by < 0
        sign = np.where(neg, -1.0, 1.0)
        n_art = int(neg.sum())
        ncols = ny + m + n_art
        T = np.zeros((m, ncols + 1))
        T[:, :ny] = Ay * sign[:, None]
        T[:, ny:ny + m] = np.diag(sign)
        T[:, -1] = by * sign
        basis = np.empty(m, dtype=int)
        art_cols = []
        k = 0
        for i in range(m):
            if neg[i]:
                col = ny + m + k
                T[i, col] = 1.0
                basis[i] = col
                art_cols.append(col)
                k += 1
            else:
                basis[i] = ny + i
        self._ny = ny

        if n_art:
            cost = np.zeros(ncols)
            cost[art_cols] = 1.0
            T, basis = self._optimize(T, basis, cost)
            phase1 = float(np.dot(cost[basis], T[:, -1]))
            if phase1 > 1e-8 * max(1.0, np.abs(by).max()):
                raise LPInfeasible("confidence set is empty (phase 1 infeasible)")
            art = set(art_cols)
            keep = np.ones(T.shape[0], dtype=bool)
            for i in range(T.shape[0]):
                if basis[i] in art:
                    row = T[i, :ny + m]
                    cand = np.flatnonzero(np.abs(row) > PIVOT_TOL)
                    if cand.size:
                        T = self._pivot(T, i, cand[0])
                        basis[i] = cand[0]
                    else:
                        keep[i] = False
            T = np.delete(T[keep], art_cols, axis=1)
            basis = basis[keep]
        self._T, self._basis = T, basis

    @staticmethod
    def _pivot(T, r, c):
        T = T.copy()
        T[r] /= T[r, c]
        col = T[:, c].copy()
        col[r] = 0.0
        T -= np.outer(col, T[r])
        return T

    def _optimize(self, T, basis, cost):
        T = T.copy()
        basis = basis.copy()
        for _ in range(self.max_pivots):
            red = cost - cost[basis] @ T[:, :-1]
            enter = np.flatnonzero(red < -COST_TOL)
            if enter.size == 0:
                return T, basis
            c = int(enter[0])  # Bland: lowest index
            col = T[:, c]
            pos = col > PIVOT_TOL
            if not np.any(pos):
                raise LPUnbounded("linear program is unbounded")
            ratios = np.full(col.shape, np.inf)
            ratios[pos] = T[pos, -1] / col[pos]
            best = ratios.min()
            ties = np.flatnonzero(ratios <= best + 1e-12 * max(1.0, abs(best)))
            r = int(ties[np.argmin(basis[ties])])  # Bland: lowest basic index
            T = self._pivot(T, r, c)
            basis[r] = c
        raise RuntimeError("simplex pivot limit reached")

    def solve(self, c):
        """Minimize ``c^T x``; returns ``(value, x, dual_residual)``.

        ``dual_residual`` is the largest negative reduced cost at the
        returned basis (0 at a verified optimum).
        """
        c = np.asarray(c, dtype=np.float64)
        if c.shape != (self.n,):
            raise ValueError("cost has wrong length")
        cy = c @ self._M
        cost = np.concatenate([cy, np.zeros(self._T.shape[1] - 1 - self._ny)])
        T, basis = self._optimize(self._T, self._basis, cost)
        self._T, self._basis = T, basis
        y = np.zeros(T.shape[1] - 1)
        y[basis] = T[:, -1]
        x = self._shift + self._M @ y[:self._ny]
        red = cost - cost[basis] @ T[:, :-1]
        dual_res = float(max(0.0, -red.min())) if red.size else 0.0
        return float(c @ x), x, dual_res
