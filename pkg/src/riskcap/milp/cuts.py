"""Gomory mixed-integer cuts read off an optimal dual simplex basis."""
from __future__ import annotations

import math

import numpy as np

from .dual import AT_LO, AT_UP, BASIC, DualSimplex

MIN_FRAC = 0.01
MAX_DYNAMISM = 1e7


def gomory_cuts(lp: DualSimplex, is_integer, max_cuts: int = 100):
    """Cuts ``(coeffs, rhs)`` meaning ``coeffs @ x >= rhs`` over the structural columns.

    Must be called right after ``lp.solve`` returned an optimal basis.
    Rows touching free or temporarily boxed nonbasic columns are skipped, as
    are cuts whose coefficient range is numerically unsafe.
    """
    n, m = lp.n, lp.m
    z = lp.z
    int_col = np.zeros(n + m, dtype=bool)
    int_col[:n] = is_integer
    # integer columns need integral bounds to keep the substitution integral
    lo, hi = lp.lo, lp.hi
    out = []
    rows = []
    for r, j in enumerate(lp.head):
        if j < n and is_integer[j]:
            f0 = z[j] - math.floor(z[j])
            if MIN_FRAC < f0 < 1 - MIN_FRAC:
                rows.append((abs(f0 - 0.5), r))
    rows.sort()
    A = lp.A
    for _, r in rows[:max_cuts]:
        alpha = lp._row_alpha(lp.Binv[r])
        alpha[lp.head] = 0.0
        nz = np.flatnonzero(np.abs(alpha) > 1e-12)
        st = lp.state[nz]
        if np.any((st != AT_LO) & (st != AT_UP)) or np.any(lp.boxed[nz]):
            continue
        j0 = lp.head[r]
        f0 = z[j0] - math.floor(z[j0])
        # x_r + sum a_j t_j = xbar_r with t_j >= 0 the distance from the active bound
        a = np.where(st == AT_LO, alpha[nz], -alpha[nz])
        ints = int_col[nz] & np.isclose(lo[nz], np.round(lo[nz])) & np.isclose(hi[nz], np.round(hi[nz]))
        ints &= np.where(st == AT_LO, np.isfinite(lo[nz]), np.isfinite(hi[nz]))
        g = np.empty_like(a)
        fj = a - np.floor(a)
        gi = np.where(fj <= f0, fj / f0, (1.0 - fj) / (1.0 - f0))
        gc = np.where(a >= 0, a / f0, -a / (1.0 - f0))
        g = np.where(ints, gi, gc)
        # sum g_j t_j >= 1, t_j = x_j - lo_j  or  hi_j - x_j
        sign = np.where(st == AT_LO, 1.0, -1.0)
        bound = np.where(st == AT_LO, lo[nz], hi[nz])
        coef = np.zeros(n + m)
        coef[nz] = g * sign
        rhs = 1.0 + float(np.sum(g * sign * bound))
        # logical columns are row activities: s_i = a_i . x
        cx = coef[:n] + A.T @ coef[n:]
        big = float(np.abs(cx).max(initial=0.0))
        if big == 0.0:
            continue
        keep = np.abs(cx) > big * 1e-12
        tiny = np.flatnonzero(~keep & (cx != 0))
        # dropping a tiny coefficient is safe after moving its worst case to the rhs
        for j in tiny:
            worst = max(cx[j] * lp.lo_true[j], cx[j] * lp.hi_true[j])
            if not math.isfinite(worst):
                break
            rhs -= worst
            cx[j] = 0.0
        else:
            small = float(np.abs(cx[keep]).min())
            if big / small > MAX_DYNAMISM:
                continue
            viol = rhs - float(cx @ z[:n])
            if viol <= 1e-6 * max(1.0, abs(rhs)):
                continue
            # relax slightly so rounding noise never cuts off an integer point
            rhs -= 1e-9 * max(1.0, abs(rhs)) + 1e-9 * big
            out.append((cx / big, rhs / big))
    return out
