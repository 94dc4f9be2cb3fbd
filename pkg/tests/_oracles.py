"""Brute-force reference solvers for the tiny MILPs of the soundness checks."""
import itertools

import numpy as np

from riskcap.milp import EQ, GE, LE, Milp


def random_tiny_milp(rng, n_int=None, mixed=None):
    """Up to 8 integers in [0, ub] with ub <= 5, at most one continuous column in [0, 10]."""
    k = int(rng.integers(1, 9)) if n_int is None else n_int
    top = 5 if k <= 5 else 3
    mixed = bool(rng.integers(0, 2)) if mixed is None else mixed
    m = Milp()
    ub = rng.integers(1, top + 1, size=k)
    for j in range(k):
        m.add_var(f"z{j}", 0, float(ub[j]), float(rng.integers(-6, 7)), integer=True)
    if mixed:
        m.add_var("y", 0, 10.0, float(rng.integers(-3, 4)) + 0.5)
    rows = int(rng.integers(1, 5))
    for _ in range(rows):
        a = rng.integers(-4, 5, size=m.n_vars).astype(float)
        if mixed:
            a[-1] += 0.25 * rng.integers(-2, 3)
        sense = (LE, GE, EQ)[int(rng.choice(3, p=[0.5, 0.35, 0.15]))]
        rhs = float(rng.integers(-4, 12))
        m.add_row([(j, a[j]) for j in range(m.n_vars) if a[j] != 0], sense, rhs)
    return m


def enumerate_milp(m: Milp, tol=1e-9):
    """Optimum by listing every integer point; the one continuous column is solved as an interval.

    Returns ``(objective, point)`` or ``(None, None)`` when infeasible.
    """
    ints = np.flatnonzero(m.is_integer)
    cont = np.flatnonzero(~m.is_integer)
    assert cont.size <= 1
    grids = [np.arange(int(m.lower[j]), int(m.upper[j]) + 1) for j in ints]
    P = np.array(list(itertools.product(*grids)), dtype=float)
    A = m.A.toarray()
    s = P @ A[:, ints].T                                  # (K, rows)
    lo = np.zeros(len(P))
    hi = np.zeros(len(P))
    ok = np.ones(len(P), dtype=bool)
    if cont.size:
        j = cont[0]
        lo[:] = m.lower[j]
        hi[:] = m.upper[j]
        a = A[:, j]
    else:
        a = np.zeros(m.n_rows)
    for i in range(m.n_rows):
        r = m.rhs[i] - s[:, i]
        sense = m.senses[i]
        if a[i] == 0:
            if sense == LE:
                ok &= r >= -tol
            elif sense == GE:
                ok &= r <= tol
            else:
                ok &= np.abs(r) <= tol
            continue
        bound = r / a[i]
        if sense == EQ:
            lo = np.maximum(lo, bound)
            hi = np.minimum(hi, bound)
        elif (sense == LE) == (a[i] > 0):
            hi = np.minimum(hi, bound)
        else:
            lo = np.maximum(lo, bound)
    ok &= lo <= hi + tol
    if not ok.any():
        return None, None
    obj = P @ m.c[ints]
    if cont.size:
        cy = m.c[cont[0]]
        y = np.where(cy >= 0, lo, hi)
        obj = obj + cy * y
    obj = np.where(ok, obj, np.inf)
    k = int(np.argmin(obj))
    point = np.zeros(m.n_vars)
    point[ints] = P[k]
    if cont.size:
        point[cont[0]] = y[k]
    return float(obj[k]), point


def random_lp(rng, n=6, rows=5):
    """Feasible bounded LP: rows are built around a known interior point."""
    m = Milp()
    x0 = rng.uniform(0.5, 3.0, size=n)
    for j in range(n):
        hi = float(rng.uniform(4, 8)) if rng.random() < 0.7 else np.inf
        m.add_var(f"x{j}", 0.0, hi, float(rng.normal()))
    for _ in range(rows):
        a = np.round(rng.normal(size=n), 3)
        act = float(a @ x0)
        sense = (LE, GE, EQ)[int(rng.integers(0, 3))]
        slack = float(rng.uniform(0, 2))
        rhs = act + slack if sense == LE else act - slack if sense == GE else act
        m.add_row(list(enumerate(a)), sense, rhs)
    # box the free directions so the LP stays bounded
    m.add_row([(j, 1.0) for j in range(n)], LE, float(x0.sum() + 10))
    return m
