"""Best-bound branch and bound over the simplex relaxation.

Each node keeps the optimal basis of its parent's relaxation, so a child
only needs a few dual simplex pivots after its branching bound is tightened.
"""
from __future__ import annotations

import heapq
import itertools
import math

import numpy as np

from .model import GE, LE, Milp, SolveResult, Status, ToleranceConfig
from .cuts import gomory_cuts
from .dual import BASIC, Basis, DualSimplex


SB_CANDIDATES = 8
SB_ROUNDS = 5
MAX_RESTARTS = 3
RINS_MIN_FIXED = 0.3
RINS_NODES = 200
RINS_CUT_ROUNDS = 5
RINS_EVERY = 50
RESTART_SHARE = 0.05
DIVE_DEPTH = 200
ROW_ROUND_TOL = 1e-9


def _fix_and_solve(lp, tol, lo, hi, xint, ints, start=None):
    """LP over the continuous variables with the integer ones fixed to ``xint``."""
    flo, fhi = lo.copy(), hi.copy()
    flo[ints] = xint
    fhi[ints] = xint
    if np.any(flo > hi + tol.primal_feas) or np.any(fhi < lo - tol.primal_feas):
        return None
    res, _ = lp.solve(flo, fhi, start)
    return res if res.ok else None


def _rc_tighten(res, lo, hi, ints, best_val, tol):
    """Reduced-cost bound tightening for integer columns.

    Moving a nonbasic column ``delta`` away from its bound raises the LP
    value by at least ``|d_j| delta``, so columns that cannot move far
    without exceeding the incumbent get a tighter bound. Returns new arrays,
    or the inputs when nothing changes.
    """
    d = getattr(res, "reduced_costs", None)
    if d is None or math.isinf(best_val):
        return lo, hi
    room = best_val - res.objective + tol.rel_gap * 1e-3 * max(1.0, abs(best_val))
    if room < 0:
        return lo, hi
    dj = d[ints]
    x = res.values[ints]
    at_lo = (dj > 1e-9) & (x <= lo[ints] + tol.integrality)
    at_hi = (dj < -1e-9) & (x >= hi[ints] - tol.integrality)
    with np.errstate(divide="ignore", invalid="ignore"):
        new_hi = np.where(at_lo, lo[ints] + np.floor(room / np.abs(dj) + tol.integrality), hi[ints])
        new_lo = np.where(at_hi, hi[ints] - np.floor(room / np.abs(dj) + tol.integrality), lo[ints])
    new_hi = np.minimum(new_hi, hi[ints])
    new_lo = np.maximum(new_lo, lo[ints])
    if np.array_equal(new_hi, hi[ints]) and np.array_equal(new_lo, lo[ints]):
        return lo, hi
    lo, hi = lo.copy(), hi.copy()
    lo[ints], hi[ints] = new_lo, new_hi
    return lo, hi


def _round_integer_rows(m):
    """Round right-hand sides of rows over integer columns with integer coefficients.

    Such a row's activity is an integer at every feasible point, so a
    ``>=`` row may take the ceiling of its rhs and a ``<=`` row the floor.
    Returns ``m`` itself when nothing changes.
    """
    if not m.n_rows:
        return m
    A = m.A.tocsr()
    ints = m.is_integer
    integral = np.abs(A.data - np.round(A.data)) <= 1e-12
    ok = integral & ints[A.indices]
    bad_rows = np.bincount(np.repeat(np.arange(m.n_rows), np.diff(A.indptr))[~ok], minlength=m.n_rows)
    rhs = m.rhs
    senses = m.senses
    new = rhs.copy()
    cand = (bad_rows == 0) & (np.diff(A.indptr) > 0)
    ge = cand & (senses == GE)
    le = cand & (senses == LE)
    new[ge] = np.ceil(rhs[ge] - ROW_ROUND_TOL)
    new[le] = np.floor(rhs[le] + ROW_ROUND_TOL)
    if np.array_equal(new, rhs):
        return m
    out = m.copy()
    out.rhs_list = new.tolist()
    return out


def _with_rows(m, rows):
    work = m.copy()
    for pairs, sense, rhs in rows:
        work.add_row(pairs, sense, rhs, "cut")
    return work


def _root_cuts(m, lp, root, basis, lo, hi, tol, separators=()):
    """Rounds of cuts at the root while they still move the bound.

    Each round asks the problem-specific ``separators`` and the Gomory
    routine for cuts violated by the current relaxation. Cuts whose row has
    gone slack are dropped before the next round, so the LP stays small.
    """
    n, base_rows = m.n_vars, m.n_rows
    pool = []
    for _ in range(tol.cut_rounds):
        x = root.values
        xi = x[m.is_integer]
        if np.abs(xi - np.round(xi)).max(initial=0.0) <= tol.integrality:
            break
        fresh = []
        for sep in separators:
            fresh.extend(sep(x))
        for coef, rhs in gomory_cuts(lp, m.is_integer):
            nz = np.flatnonzero(coef)
            fresh.append((list(zip(nz.tolist(), coef[nz].tolist())), ">=", rhs))
        if not fresh:
            break
        # keep pool rows whose logical is nonbasic (tight); drop the rest
        logical_state = basis.state[n + base_rows: n + base_rows + len(pool)]
        keep = [k for k in range(len(pool)) if logical_state[k] != BASIC]
        old_pos = {n + base_rows + k: n + base_rows + new_k for new_k, k in enumerate(keep)}
        head, state = [], []
        for col in basis.head:
            if col < n + base_rows:
                head.append(col)
            elif col in old_pos:
                head.append(old_pos[col])
        pool = [pool[k] for k in keep] + fresh
        first_new = n + base_rows + len(keep)
        head.extend(range(first_new, first_new + len(fresh)))
        state = np.concatenate([basis.state[: n + base_rows],
                                basis.state[[n + base_rows + k for k in keep]].astype(np.int8),
                                np.full(len(fresh), BASIC, dtype=np.int8)])
        work = _with_rows(m, pool)
        new_lp = DualSimplex(work, tol)
        res, new_basis = new_lp.solve(lo, hi, Basis(np.array(head, dtype=int), state))
        if not res.ok:
            break
        gain = res.objective - root.objective
        lp, root, basis = new_lp, res, new_basis
        if gain <= tol.rel_gap * 1e-2 * max(1.0, abs(root.objective)):
            break
    return lp, root, basis, (_with_rows(m, pool) if pool else m)


def solve_milp(m: Milp, tol: ToleranceConfig | None = None, separators=(), start_values=None,
               *, _depth: int = 0) -> SolveResult:
    """Minimize ``m`` to ``tol.rel_gap``.

    The incumbent is polished by fixing its integer part and re-solving the
    LP over the continuous variables, so reported objectives carry no
    integrality slop. ``bound_trace`` holds the global lower bound after
    every processed node and never decreases.

    ``separators`` are callables mapping a relaxation point to a list of
    globally valid cuts ``(pairs, sense, rhs)``; they run at the root only.
    ``start_values`` is an optional point whose rounded integer part seeds
    the incumbent.
    """
    tol = tol or ToleranceConfig()
    m = _round_integer_rows(m)
    ints = np.flatnonzero(m.is_integer)
    lo0 = m.lower.copy()
    hi0 = m.upper.copy()
    lo0[ints] = np.ceil(lo0[ints] - tol.integrality)
    hi0[ints] = np.floor(hi0[ints] + tol.integrality)
    if np.any(lo0 > hi0):
        return SolveResult(Status.INFEASIBLE)

    lp = DualSimplex(m, tol)
    root, root_basis = lp.solve(lo0, hi0)
    if root.status is not Status.OPTIMAL:
        return SolveResult(root.status, iterations=root.iterations)
    if ints.size == 0:
        root.nodes = 1
        root.bound_trace = [root.objective]
        return root
    work, restarts = m, 0
    lp, root, root_basis, work = _root_cuts(work, lp, root, root_basis, lo0, hi0, tol, separators)

    best_val, best_x = math.inf, None
    iters = root.iterations

    def converged(bound):
        if math.isinf(best_val):
            return False
        return best_val - bound <= tol.rel_gap * max(1.0, abs(best_val))

    def consider(x, start):
        nonlocal best_val, best_x, iters
        xr = np.round(x[ints])
        res = _fix_and_solve(lp, tol, lo0, hi0, xr, ints, start)
        if res is None:
            return
        iters += res.iterations
        if res.objective < best_val:
            best_val, best_x = res.objective, res.values

    def frac_of(x):
        f = np.abs(x[ints] - np.round(x[ints]))
        return f

    def dive(x, basis):
        """Fix the least fractional integer column and re-solve, until integral."""
        lo, hi = lo0.copy(), hi0.copy()
        for _ in range(DIVE_DEPTH):
            f = frac_of(x)
            open_ = hi[ints] > lo[ints]
            if f.max(initial=0.0) <= tol.integrality:
                consider(x, basis)
                return
            cand = np.flatnonzero((f > tol.integrality) & open_)
            if cand.size == 0:
                return
            k = cand[np.argmin(f[cand])]
            j = ints[k]
            lo[j] = hi[j] = np.clip(np.round(x[j]), lo0[j], hi0[j])
            res, basis = lp.solve(lo, hi, basis)
            if not res.ok or res.objective >= best_val:
                return
            x = res.values

    # cheap rounding heuristics at the root: nearest and upward
    consider(root.values, root_basis)
    up = root.values.copy()
    up[ints] = np.minimum(np.ceil(up[ints] - tol.integrality), hi0[ints])
    consider(up, root_basis)
    if start_values is not None:
        consider(np.asarray(start_values, dtype=float), root_basis)
    dive(root.values, root_basis)
    def rins(x):
        """Sub-MIP over the integer columns where ``x`` and the incumbent disagree."""
        if _depth or best_x is None:
            return
        agree = np.abs(x[ints] - best_x[ints]) <= tol.integrality
        if agree.all() or agree.mean() < RINS_MIN_FIXED:
            return
        sub = work.copy()
        for j in range(sub.n_vars):
            sub.set_bounds(j, lo0[j], hi0[j])
        for j in ints[agree]:
            v = float(np.round(best_x[j]))
            sub.set_bounds(j, v, v)
        r = solve_milp(sub, tol.replace(node_limit=RINS_NODES, cut_rounds=RINS_CUT_ROUNDS),
                       start_values=best_x, _depth=_depth + 1)
        if r.values is not None:
            consider(r.values, None)

    # restart: once the incumbent pins enough integer bounds, cuts read off the
    # tightened root are much stronger; they stay valid for improving points
    while True:
        lo1, hi1 = _rc_tighten(root, lo0, hi0, ints, best_val, tol)
        moved = np.count_nonzero((lo1[ints] != lo0[ints]) | (hi1[ints] != hi0[ints]))
        lo0, hi0 = lo1, hi1
        if restarts >= MAX_RESTARTS or moved < RESTART_SHARE * ints.size:
            break
        restarts += 1
        res, basis = lp.solve(lo0, hi0, root_basis)
        if not res.ok:
            break   # the incumbent is optimal when no improving point remains
        iters += res.iterations
        lp, root, root_basis, work = _root_cuts(work, lp, res, basis, lo0, hi0, tol, separators)
        consider(root.values, root_basis)
        dive(root.values, root_basis)
    if not converged(root.objective):
        rins(root.values)

    def strong_branch(lo, hi, x, basis, obj):
        """Children of the best branching candidate, scored by the product of LP gains.

        Returns None when the node is done (integral or both sides of some
        candidate pruned), a single child when one side of a candidate was
        pruned, else the two children of the best candidate.
        """
        nonlocal iters
        f = frac_of(x)
        cand = np.flatnonzero(f > tol.integrality)
        if cand.size == 0:
            consider(x, basis)
            return None
        cand = cand[np.argsort(-f[cand], kind="stable")[:SB_CANDIDATES]]
        best_score, best_kids = -1.0, None
        for k in cand:
            j = ints[k]
            kids = []
            for side in (0, 1):
                clo, chi = lo.copy(), hi.copy()
                if side == 0:
                    chi[j] = math.floor(x[j])
                else:
                    clo[j] = math.ceil(x[j])
                if clo[j] > chi[j]:
                    continue
                res, cbasis = lp.solve(clo, chi, basis)
                iters += res.iterations
                if res.status is not Status.OPTIMAL or converged(res.objective):
                    continue
                if frac_of(res.values).max(initial=0.0) <= tol.integrality:
                    consider(res.values, cbasis)
                    if converged(res.objective):
                        continue
                kids.append((res, clo, chi, cbasis))
            if len(kids) < 2:
                return kids or None
            g = [max(kid[0].objective - obj, 1e-9) for kid in kids]
            score = g[0] * g[1]
            if score > best_score:
                best_score, best_kids = score, kids
        return best_kids

    counter = itertools.count()
    # bounds equal up to the gap tolerance tie; ties go deepest first so the search dives
    quantum = 0.5 * tol.rel_gap * max(1.0, abs(root.objective))

    def entry(bound, depth, lo, hi, x, basis):
        return (math.floor(bound / quantum), -depth, next(counter), bound, lo, hi, x, basis)

    heap = [entry(root.objective, 0, lo0, hi0, root.values, root_basis)]
    trace = []
    last_bound = -math.inf
    nodes = 0

    status = Status.OPTIMAL
    while heap:
        glob = min(e[3] for e in heap)
        if converged(glob):
            break
        if nodes >= tol.node_limit:
            status = Status.ITER_LIMIT
            break
        _, neg_depth, _, bound, lo, hi, x, basis = heapq.heappop(heap)
        nodes += 1
        last_bound = max(last_bound, glob)
        trace.append(min(last_bound, best_val))
        for _ in range(SB_ROUNDS):
            kids = strong_branch(lo, hi, x, basis, bound)
            if kids is None or len(kids) != 1:
                break
            # one side was pruned: the node moves to the other side and tries again
            res, lo, hi, basis = kids[0]
            bound, x = max(bound, res.objective), res.values
        if kids is None:
            continue
        for res, clo, chi, cbasis in kids:
            clo, chi = _rc_tighten(res, clo, chi, ints, best_val, tol)
            heapq.heappush(heap, entry(max(res.objective, bound), 1 - neg_depth, clo, chi, res.values, cbasis))
        if nodes % 25 == 0:
            consider(x, basis)
        if nodes % RINS_EVERY == 0:
            rins(x)

    if best_x is None:
        if status is Status.ITER_LIMIT:
            return SolveResult(Status.ITER_LIMIT, iterations=iters, nodes=nodes, bound_trace=trace)
        return SolveResult(Status.INFEASIBLE, iterations=iters, nodes=nodes, bound_trace=trace)
    final_bound = min(min(e[3] for e in heap), best_val) if heap else best_val
    final_bound = max(final_bound, last_bound if trace else final_bound)
    final_bound = min(final_bound, best_val)
    trace.append(final_bound)
    gap = (best_val - final_bound) / max(1.0, abs(best_val))
    return SolveResult(status, objective=best_val, values=best_x, bound=final_bound, gap=gap,
                       iterations=iters, nodes=nodes, bound_trace=trace)
