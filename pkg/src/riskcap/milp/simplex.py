"""Two-phase bounded-variable primal simplex on a dense tableau.

Every variable is shifted or reflected so that it lives in ``[0, ub]``
(``ub`` possibly infinite); free variables are split. Nonbasic variables
sit at either bound and the ratio test includes bound flips. Pricing is
Dantzig's rule, falling back to Bland's rule after a run of degenerate
pivots, which rules out cycling.
"""
from __future__ import annotations

import math

import numpy as np
import scipy.linalg as la

from .dual import DualSimplex, attach_duals
from .model import EQ, GE, LE, Milp, SolveResult, Status, ToleranceConfig

_SHIFT, _NEG, _SPLIT = 0, 1, 2


class _Standard:
    """``min cost.x  s.t.  A x = b, 0 <= x <= ub`` built from a :class:`Milp`."""

    def __init__(self, A, c, lo, hi, rhs, senses):
        m, n = A.shape
        self.m, self.n = m, n
        kind = np.full(n, _SHIFT)
        kind[np.isinf(lo) & np.isfinite(hi)] = _NEG
        kind[np.isinf(lo) & np.isinf(hi)] = _SPLIT
        shift = np.where(kind == _SHIFT, lo, np.where(kind == _NEG, hi, 0.0))
        shift = np.where(np.isfinite(shift), shift, 0.0)
        self.kind, self.shift = kind, shift

        cols, cost, ub, owner, sign = [], [], [], [], []
        for j in range(n):
            if kind[j] == _SHIFT:
                cols.append(A[:, j]); cost.append(c[j]); ub.append(hi[j] - lo[j]); owner.append(j); sign.append(1.0)
            elif kind[j] == _NEG:
                cols.append(-A[:, j]); cost.append(-c[j]); ub.append(math.inf); owner.append(j); sign.append(-1.0)
            else:
                cols.append(A[:, j]); cost.append(c[j]); ub.append(math.inf); owner.append(j); sign.append(1.0)
                cols.append(-A[:, j]); cost.append(-c[j]); ub.append(math.inf); owner.append(j); sign.append(-1.0)
        n_struct = len(cols)
        slack_row = []
        for i in range(m):
            if senses[i] == LE or senses[i] == GE:
                e = np.zeros(m)
                e[i] = 1.0 if senses[i] == LE else -1.0
                cols.append(e); cost.append(0.0); ub.append(math.inf); owner.append(-1); sign.append(0.0)
                slack_row.append(i)
        self.n_struct = n_struct
        self.owner = np.array(owner, dtype=int)
        self.colsign = np.array(sign)
        M = np.column_stack(cols) if cols else np.zeros((m, 0))
        b = rhs - A @ shift
        rowsign = np.where(b < 0, -1.0, 1.0)
        M = M * rowsign[:, None]
        b = b * rowsign
        self.rowsign = rowsign
        self.const = float(c @ shift)

        # basis: a +1 slack where available, otherwise an artificial column
        basis = np.full(m, -1)
        for k, i in enumerate(slack_row):
            col = n_struct + k
            if M[i, col] > 0:
                basis[i] = col
        need = np.flatnonzero(basis < 0)
        n_art = len(need)
        art = np.zeros((m, n_art))
        for k, i in enumerate(need):
            art[i, k] = 1.0
            basis[i] = M.shape[1] + k
        self.n_real = M.shape[1]
        self.A = np.hstack([M, art])
        self.b = b
        self.cost = np.concatenate([np.array(cost, dtype=float), np.zeros(n_art)])
        self.ub = np.concatenate([np.array(ub, dtype=float), np.zeros(n_art)])
        self.ub_phase1 = np.concatenate([np.array(ub, dtype=float), np.full(n_art, math.inf)])
        self.basis = basis
        self.n_art = n_art

    def recover(self, xs):
        """Map a standard-form point back to the original variables."""
        x = self.shift.copy()
        k = self.n_struct
        np.add.at(x, self.owner[:k], xs[:k] * self.colsign[:k])
        return x


class _Tableau:
    def __init__(self, A, b, basis, ub, tol: ToleranceConfig):
        self.A0 = A
        self.b0 = b
        self.m, self.ncol = A.shape
        self.basis = basis.copy()
        self.ub = ub.copy()
        self.at_upper = np.zeros(self.ncol, dtype=bool)
        self.is_basic = np.zeros(self.ncol, dtype=bool)
        self.is_basic[self.basis] = True
        self.tol = tol
        self.T = A.copy()
        self.beta = b.copy()
        self.pivots = 0

    def refactor(self, cost):
        B = self.A0[:, self.basis]
        rhs = self.b0 - self.A0[:, self.at_upper] @ self.ub[self.at_upper]
        lu = la.lu_factor(B, check_finite=False)
        self.T = la.lu_solve(lu, self.A0, check_finite=False)
        self.beta = la.lu_solve(lu, rhs, check_finite=False)
        return lu

    def reduced_costs(self, cost):
        return cost - cost[self.basis] @ self.T

    def run(self, cost, budget):
        """Optimize ``cost`` from the current basis; returns a status string."""
        tol = self.tol
        scale = max(1.0, float(np.abs(cost).max(initial=0.0)))
        dtol = tol.dual_feas * scale
        ptol = tol.pivot
        d = self.reduced_costs(cost)
        stall = 0
        since_refactor = 0
        cols = np.arange(self.ncol)
        while True:
            if self.pivots >= budget:
                return "limit"
            movable = (~self.is_basic) & (self.ub > 0)
            cand = movable & (((~self.at_upper) & (d < -dtol)) | (self.at_upper & (d > dtol)))
            if not cand.any():
                return "optimal"
            bland = stall >= tol.degenerate_stall
            if bland:
                q = int(cols[cand][0])
            else:
                q = int(np.argmax(np.where(cand, np.abs(d), -1.0)))
            direction = -1.0 if self.at_upper[q] else 1.0
            alpha = self.T[:, q] * direction
            ub_b = self.ub[self.basis]
            theta = self.ub[q]
            leave = -1
            to_upper = False
            dec = alpha > ptol
            inc = (alpha < -ptol) & np.isfinite(ub_b)
            best_row_theta = math.inf
            if dec.any() or inc.any():
                lim = np.full(self.m, math.inf)
                lim[dec] = np.maximum(self.beta[dec], 0.0) / alpha[dec]
                lim[inc] = np.maximum(ub_b[inc] - self.beta[inc], 0.0) / (-alpha[inc])
                best_row_theta = float(lim.min())
                if best_row_theta < theta:
                    ties = np.flatnonzero(lim <= best_row_theta + 1e-12 * max(1.0, best_row_theta))
                    if bland:
                        r = int(ties[np.argmin(self.basis[ties])])
                    else:
                        r = int(ties[np.argmax(np.abs(alpha[ties]))])
                    leave = r
                    theta = float(lim[r])
                    to_upper = bool(inc[r])
            if math.isinf(theta):
                return "unbounded"
            self.pivots += 1
            if theta <= 1e-12:
                stall += 1
            else:
                stall = 0
            self.beta -= alpha * theta
            if leave < 0:
                self.at_upper[q] = not self.at_upper[q]
                continue
            r = leave
            old = self.basis[r]
            entering_value = theta if direction > 0 else self.ub[q] - theta
            piv = self.T[r, q]
            self.T[r] /= piv
            col = self.T[:, q].copy()
            col[r] = 0.0
            self.T -= np.outer(col, self.T[r])
            self.T[:, q] = 0.0
            self.T[r, q] = 1.0
            d -= d[q] * self.T[r]
            d[q] = 0.0
            self.beta[r] = entering_value
            self.basis[r] = q
            self.is_basic[q] = True
            self.is_basic[old] = False
            self.at_upper[q] = False
            self.at_upper[old] = to_upper
            since_refactor += 1
            if since_refactor >= tol.refactor_every:
                self.refactor(cost)
                d = self.reduced_costs(cost)
                since_refactor = 0


def solve_lp(m: Milp, tol: ToleranceConfig | None = None, lo=None, hi=None,
             method: str = "dual") -> SolveResult:
    """Solve the LP relaxation of ``m`` (integrality flags are ignored).

    ``lo``/``hi`` override the model's variable bounds without copying it.
    ``method`` picks the revised dual simplex (``"dual"``) or the two-phase
    primal tableau simplex (``"primal"``).
    """
    tol = tol or ToleranceConfig()
    if method == "dual":
        if m.n_rows == 0:
            return _solve_boxed(m.c, m.lower if lo is None else np.asarray(lo, float),
                                m.upper if hi is None else np.asarray(hi, float))
        return DualSimplex(m, tol).solve(lo, hi)[0]
    if method != "primal":
        raise ValueError(f"unknown LP method {method!r}")
    lo = m.lower if lo is None else np.asarray(lo, dtype=float)
    hi = m.upper if hi is None else np.asarray(hi, dtype=float)
    c = m.c
    if np.any(lo > hi + tol.primal_feas):
        return SolveResult(Status.INFEASIBLE)
    hi = np.maximum(hi, lo)
    A = m.A.toarray()
    senses, rhs = m.senses, m.rhs
    if m.n_rows == 0:
        return _solve_boxed(c, lo, hi)

    std = _Standard(A, c, lo, hi, rhs, senses)
    tab = _Tableau(std.A, std.b, std.basis, std.ub_phase1, tol)
    if std.n_art:
        cost1 = np.zeros(std.A.shape[1])
        cost1[std.n_real:] = 1.0
        state = tab.run(cost1, tol.max_pivots)
        if state == "limit":
            return SolveResult(Status.ITER_LIMIT, iterations=tab.pivots)
        tab.refactor(cost1)
        infeas = float(tab.beta[tab.basis >= std.n_real].sum())
        scale = max(1.0, float(np.abs(std.b).max(initial=0.0)))
        if infeas > tol.primal_feas * scale:
            return SolveResult(Status.INFEASIBLE, iterations=tab.pivots)
        # artificials are pinned at zero for phase 2
        tab.ub = std.ub.copy()
        art_basic = tab.basis >= std.n_real
        tab.beta[art_basic] = 0.0
        tab.at_upper[std.n_real:] = False
    state = tab.run(std.cost, tol.max_pivots)
    if state == "limit":
        return SolveResult(Status.ITER_LIMIT, iterations=tab.pivots)
    if state == "unbounded":
        return SolveResult(Status.UNBOUNDED, iterations=tab.pivots)
    lu = tab.refactor(std.cost)

    xs = np.where(tab.at_upper, tab.ub, 0.0)
    xs[tab.basis] = np.clip(tab.beta, 0.0, tab.ub[tab.basis])
    x = std.recover(xs)
    x = np.clip(x, lo, hi)
    obj = float(c @ x)

    y_norm = la.lu_solve(lu, std.cost[tab.basis], trans=1, check_finite=False)
    y = y_norm * std.rowsign
    res = SolveResult(Status.OPTIMAL, objective=obj, values=x, bound=obj, gap=0.0,
                      iterations=tab.pivots)
    attach_duals(res, A, c, lo, hi, rhs, senses, y)
    return res


def _solve_boxed(c, lo, hi):
    x = np.where(c > 0, lo, np.where(c < 0, hi, np.where(np.isfinite(lo), lo, np.where(np.isfinite(hi), hi, 0.0))))
    if np.any(np.isinf(x)):
        return SolveResult(Status.UNBOUNDED)
    obj = float(c @ x)
    res = SolveResult(Status.OPTIMAL, objective=obj, values=x, bound=obj, gap=0.0)
    res.duals = np.zeros(0)
    res.reduced_costs = c.copy()
    res.dual_objective = obj
    res.dual_residual = 0.0
    return res
