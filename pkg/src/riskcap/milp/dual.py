"""Revised bounded dual simplex with an explicit basis inverse.

Rows are written as ``A x - s = 0`` with one bounded logical ``s_i`` per row,
so the all-logical basis is always available and any basis of a parent
branch-and-bound node can be reused after its bounds are tightened.
Nonbasic variables rest at a bound (or at zero when free). Variables whose
cost pushes them toward an infinite bound get a temporary box that is
widened until it is inactive; a box that keeps growing past ``BOX_LIMIT``
signals an unbounded LP.
"""
from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp

from .model import EQ, GE, LE, Milp, SolveResult, Status, ToleranceConfig

AT_LO, AT_UP, FREE, BASIC = 0, 1, 2, 3
BOX_START = 1e4
BOX_LIMIT = 1e14
FACTOR_CACHE = 8


@dataclass
class Basis:
    """Restart point: basic column per row and the state of every column."""

    head: np.ndarray
    state: np.ndarray


class DualSimplex:
    """Solver bound to one constraint matrix; bounds may change per call."""

    def __init__(self, m: Milp, tol: ToleranceConfig | None = None):
        self.tol = tol or ToleranceConfig()
        A = sp.csr_matrix(m.A, dtype=float)
        self.m, self.n = A.shape
        self.A = A
        self.At = A.T.tocsr()
        self.Ac = A.tocsc()
        self.c = np.concatenate([m.c, np.zeros(self.m)])
        rhs, senses = m.rhs, m.senses
        self.row_lo = np.where(senses == LE, -np.inf, rhs)
        self.row_hi = np.where(senses == GE, np.inf, rhs)
        self.rhs, self.senses = rhs, senses
        self.cscale = max(1.0, float(np.abs(m.c).max(initial=0.0)))
        self.model = m
        self.Binv = None
        self.head = None
        self.updates = 0
        # recent basis inverses by basis head; sibling solves in branch and bound share a parent
        self._factors = OrderedDict()

    # -- linear algebra on [A, -I] ----------------------------------------------

    def _column(self, j):
        if j < self.n:
            lo, hi = self.Ac.indptr[j], self.Ac.indptr[j + 1]
            return self.Binv[:, self.Ac.indices[lo:hi]] @ self.Ac.data[lo:hi]
        return -self.Binv[:, j - self.n]

    def _row_alpha(self, rho):
        return np.concatenate([self.At @ rho, -rho])

    def _times_full(self, z):
        return self.A @ z[: self.n] - z[self.n:]

    def _refactor(self):
        B = np.zeros((self.m, self.m))
        head = self.head
        structural = head < self.n
        if structural.any():
            B[:, structural] = self.Ac[:, head[structural]].toarray()
        logical = np.flatnonzero(~structural)
        B[head[logical] - self.n, logical] = -1.0
        try:
            self.Binv = la.inv(B, check_finite=False)
        except la.LinAlgError:
            return False
        self.updates = 0
        self._recompute()
        return True

    def _remember(self):
        key = self.head.tobytes()
        if key not in self._factors and self.Binv is not None:
            self._factors[key] = (self.Binv.copy(), self.updates)
            if len(self._factors) > FACTOR_CACHE:
                self._factors.popitem(last=False)

    def _recompute(self):
        z = self.z
        z[self.head] = 0.0
        self.z[self.head] = -(self.Binv @ self._times_full(z))
        y = self.c[self.head] @ self.Binv
        self.d = self.c - self._row_alpha(y)
        self.d[self.head] = 0.0
        self.y = y

    # -- state set-up ---------------------------------------------------------------

    def _place_all_nonbasic(self):
        """Put every nonbasic column at the bound its state names, else at a finite bound, else 0."""
        st, lo, hi = self.state, self.lo, self.hi
        nb = st != BASIC
        fl, fh = np.isfinite(lo), np.isfinite(hi)
        up = nb & (st == AT_UP) & fh
        at_lo = nb & ~up & fl
        at_hi = nb & ~up & ~fl & fh
        free = nb & ~up & ~fl & ~fh
        st[at_lo] = AT_LO
        st[at_hi] = AT_UP
        st[free] = FREE
        self.z[up | at_hi] = hi[up | at_hi]
        self.z[at_lo] = lo[at_lo]
        self.z[free] = 0.0

    def _fix_dual_signs(self):
        """Move nonbasic columns to the bound their reduced cost prefers.

        Columns whose preferred bound is infinite get a temporary box.
        """
        dtol = self.tol.dual_feas * self.cscale
        d = self.d
        nb = self.state != BASIC
        want_lo = nb & (d > dtol)
        want_up = nb & (d < -dtol)
        for j in np.flatnonzero(want_lo & (self.state != AT_LO)):
            if math.isinf(self.lo[j]):
                self.boxed[j] = True
                self.lo[j] = (min(self.hi[j], 0.0) if math.isfinite(self.hi[j]) else 0.0) - self.box
            self.state[j] = AT_LO
            self.z[j] = self.lo[j]
        for j in np.flatnonzero(want_up & (self.state != AT_UP)):
            if math.isinf(self.hi[j]):
                self.boxed[j] = True
                self.hi[j] = (max(self.lo[j], 0.0) if math.isfinite(self.lo[j]) else 0.0) + self.box
            self.state[j] = AT_UP
            self.z[j] = self.hi[j]

    def _unbox(self, j):
        if self.boxed[j]:
            self.boxed[j] = False
            self.lo[j] = self.lo_true[j]
            self.hi[j] = self.hi_true[j]

    # -- main entry -------------------------------------------------------------------

    def solve(self, lo=None, hi=None, start: Basis | None = None):
        """Solve with column bounds ``lo``/``hi``; returns ``(SolveResult, Basis)``."""
        tol = self.tol
        m, n = self.m, self.n
        lo = self.model.lower if lo is None else np.asarray(lo, dtype=float)
        hi = self.model.upper if hi is None else np.asarray(hi, dtype=float)
        if np.any(lo > hi + tol.primal_feas):
            return SolveResult(Status.INFEASIBLE), start
        hi = np.maximum(hi, lo)
        self.lo_true = np.concatenate([lo, self.row_lo])
        self.hi_true = np.concatenate([hi, self.row_hi])
        self.lo = self.lo_true.copy()
        self.hi = self.hi_true.copy()
        self.boxed = np.zeros(n + m, dtype=bool)
        self.box = BOX_START * max(1.0, float(np.abs(self.rhs).max(initial=0.0)),
                                   float(np.abs(lo[np.isfinite(lo)]).max(initial=0.0)),
                                   float(np.abs(hi[np.isfinite(hi)]).max(initial=0.0)))
        self.z = np.zeros(n + m)
        reuse = (start is not None and getattr(self, "Binv", None) is not None
                 and np.array_equal(start.head, self.head) and self.updates < self.tol.refactor_every)
        cached = None
        if start is not None and not reuse:
            key = start.head.tobytes()
            cached = self._factors.get(key)
            if cached is not None:
                self._factors.move_to_end(key)
        if start is None:
            self.head = np.arange(n, n + m)
            self.state = np.full(n + m, AT_LO, dtype=np.int8)
            self.state[self.head] = BASIC
        else:
            self.head = start.head.copy()
            self.state = start.state.copy()
        self._place_all_nonbasic()
        if reuse:
            self._recompute()
        elif cached is not None:
            self.Binv = cached[0].copy()
            self.updates = cached[1]
            self._recompute()
        elif self._refactor():
            if start is not None:
                self._remember()
        else:
            self.head = np.arange(n, n + m)
            self.state = np.full(n + m, AT_LO, dtype=np.int8)
            self.state[self.head] = BASIC
            self._place_all_nonbasic()
            self._refactor()
        self._fix_dual_signs()
        self._recompute()

        self.pivots = 0
        status = self._loop()
        basis = Basis(self.head.copy(), self.state.copy())
        self._remember()
        if status is not Status.OPTIMAL:
            return SolveResult(status, iterations=self.pivots), basis
        x = np.clip(self.z[:n], lo, hi)
        obj = float(self.c[:n] @ x)
        res = SolveResult(Status.OPTIMAL, objective=obj, values=x, bound=obj, gap=0.0,
                          iterations=self.pivots)
        attach_duals(res, self.model.A, self.c[:n], lo, hi, self.rhs, self.senses, self.y)
        return res, basis

    def _loop(self):
        tol = self.tol
        budget = tol.max_pivots
        while True:
            st = self._iterate(budget)
            if st == "widen":
                if self.box * 1e3 > BOX_LIMIT:
                    return Status.INFEASIBLE
                self._widen(self.blocked)
                continue
            if st != "optimal":
                return {"infeasible": Status.INFEASIBLE, "limit": Status.ITER_LIMIT}[st]
            # clean up: recompute from the (possibly fresh) inverse, re-check both feasibilities
            if self.updates > tol.refactor_every // 2 and not self._refactor():
                return Status.ITER_LIMIT
            self._fix_dual_signs()
            self._recompute()
            if self._worst_row()[0] >= 0:
                continue
            stuck = [j for j in np.flatnonzero(self.boxed)
                     if self.state[j] != BASIC and abs(self.d[j]) > tol.dual_feas * self.cscale]
            if not stuck:
                return Status.OPTIMAL
            if self.box * 1e3 > BOX_LIMIT:
                return Status.UNBOUNDED
            # the temporary box is binding: widen it and continue
            self._widen(stuck)

    def _widen(self, cols):
        self.box *= 1e3
        for j in cols:
            if self.state[j] == AT_LO:
                self.lo[j] = self.z[j] - self.box
                self.z[j] = self.lo[j]
            else:
                self.hi[j] = self.z[j] + self.box
                self.z[j] = self.hi[j]
        self._recompute()

    def _worst_row(self):
        xb = self.z[self.head]
        lo = self.lo[self.head]
        hi = self.hi[self.head]
        ptol = self.tol.primal_feas * 1e-1
        below = (lo - xb) - (ptol + 1e-13 * np.abs(lo))
        above = (xb - hi) - (ptol + 1e-13 * np.abs(hi))
        below = np.where(np.isfinite(lo), below, -np.inf)
        above = np.where(np.isfinite(hi), above, -np.inf)
        viol = np.maximum(below, above)
        if self.bland:
            bad = np.flatnonzero(viol > 0)
            if bad.size == 0:
                return -1, 0.0
            r = int(bad[np.argmin(self.head[bad])])
        else:
            r = int(np.argmax(viol))
            if viol[r] <= 0:
                return -1, 0.0
        return r, (1.0 if below[r] > 0 else -1.0)

    bland = False

    def _iterate(self, budget):
        tol = self.tol
        stall = 0
        since = 0
        n_all = self.n + self.m
        idx = np.arange(n_all)
        while True:
            self.bland = stall >= tol.degenerate_stall
            r, sgn = self._worst_row()
            if r < 0:
                return "optimal"
            if self.pivots >= budget:
                return "limit"
            rho = self.Binv[r]
            alpha = self._row_alpha(rho)
            st = self.state
            movable = (st != BASIC) & (self.hi > self.lo)
            sa = sgn * alpha
            ptol = tol.pivot
            cand = movable & (((st == AT_LO) & (sa < -ptol)) | ((st == AT_UP) & (sa > ptol))
                              | ((st == FREE) & (np.abs(alpha) > ptol)))
            if not cand.any():
                # a temporary box may be what blocks the row; widen it first
                blocked = self.boxed & (((st == AT_LO) & (sa > ptol)) | ((st == AT_UP) & (sa < -ptol)))
                if blocked.any():
                    self.blocked = np.flatnonzero(blocked)
                    return "widen"
                return "infeasible"
            ratio = np.full(n_all, np.inf)
            ratio[cand] = np.abs(self.d[cand]) / np.abs(alpha[cand])
            best = float(ratio.min())
            ties = np.flatnonzero(ratio <= best + 1e-12 * max(1.0, best))
            if self.bland:
                q = int(ties[0])
            else:
                q = int(ties[np.argmax(np.abs(alpha[ties]))])
            col = self._column(q)
            piv = col[r]
            if abs(piv) < 1e-11:
                # row and column disagree: the inverse has drifted
                if not self._refactor():
                    return "limit"
                since = 0
                continue
            p = int(self.head[r])
            target = self.lo[p] if sgn > 0 else self.hi[p]
            theta = (self.z[p] - target) / piv
            self.z[self.head] -= col * theta
            self.z[q] += theta
            self.z[p] = target
            theta_d = self.d[q] / alpha[q]
            self.d -= theta_d * alpha
            self.d[q] = 0.0
            stall = stall + 1 if abs(theta_d) <= 1e-12 else 0
            # basis change
            self.head[r] = q
            self.state[q] = BASIC
            self._unbox(q)
            self.state[p] = AT_LO if sgn > 0 else AT_UP
            rowp = self.Binv[r] / piv
            col[r] = 0.0
            self.Binv -= np.outer(col, rowp)
            self.Binv[r] = rowp
            self.pivots += 1
            self.updates += 1
            since += 1
            if self.updates >= tol.refactor_every:
                if not self._refactor():
                    return "limit"
                self._fix_dual_signs()
                self._recompute()
                since = 0


def attach_duals(res, A, c, lo, hi, rhs, senses, y):
    """Dual objective and a relative residual covering sign conditions and the duality gap."""
    d = c - A.T @ y
    scale = max(1.0, float(np.abs(c).max(initial=0.0)))
    infeas = 0.0
    le = senses == LE
    ge = senses == GE
    if le.any():
        infeas = max(infeas, float(np.maximum(y[le], 0.0).max()))
    if ge.any():
        infeas = max(infeas, float(np.maximum(-y[ge], 0.0).max()))
    bound_term = np.where(d > 0, lo, hi)
    missing = np.isinf(bound_term) & (d != 0)
    if missing.any():
        infeas = max(infeas, float(np.abs(d[missing]).max()))
    contrib = np.where(missing | (d == 0), 0.0, d * np.where(np.isinf(bound_term), 0.0, bound_term))
    dual_obj = float(rhs @ y + contrib.sum())
    gap = abs(res.objective - dual_obj) / max(1.0, abs(res.objective))
    res.duals = np.asarray(y, dtype=float)
    res.reduced_costs = d
    res.dual_objective = dual_obj
    res.dual_residual = max(infeas / scale, gap)
