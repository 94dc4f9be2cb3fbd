import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from _oracles import enumerate_milp, random_lp, random_tiny_milp
from conftest import highs_solve
from riskcap.instance import example1_instance
from riskcap.milp import EQ, GE, LE, Milp, Status, ToleranceConfig, solve_lp, solve_milp
from riskcap.models import build_multistage, build_twostage, capacity_cut_separator


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31))
def test_lp_matches_highs(seed):
    rng = np.random.default_rng(seed)
    m = random_lp(rng, n=int(rng.integers(2, 9)), rows=int(rng.integers(1, 7)))
    res = solve_lp(m)
    ref = highs_solve(m, integer=False)
    assert res.ok and ref.status == 0
    assert abs(res.objective - ref.fun) <= 1e-7 * max(1.0, abs(ref.fun))
    assert m.max_violation(res.values) <= 1e-7
    # duality certificate
    assert res.dual_residual <= 1e-6
    assert res.dual_objective <= res.objective + 1e-7 * max(1.0, abs(res.objective))


def test_lp_statuses():
    m = Milp()
    x = m.add_var("x", 0, math.inf, -1.0)
    m.add_row([(x, 1.0)], GE, 1.0)
    assert solve_lp(m).status is Status.UNBOUNDED
    m = Milp()
    x = m.add_var("x", 0, 1.0, 1.0)
    m.add_row([(x, 1.0)], GE, 2.0)
    assert solve_lp(m).status is Status.INFEASIBLE
    assert solve_milp(m).status is Status.INFEASIBLE


def test_pivot_cap():
    rng = np.random.default_rng(1)
    m = random_lp(rng, n=8, rows=6)
    res = solve_lp(m, ToleranceConfig(max_pivots=1))
    assert res.status in (Status.ITER_LIMIT, Status.OPTIMAL)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31))
def test_milp_matches_enumeration(seed):
    m = random_tiny_milp(np.random.default_rng(seed))
    ref, _ = enumerate_milp(m)
    res = solve_milp(m)
    if ref is None:
        assert res.status is Status.INFEASIBLE
        return
    assert res.ok
    assert abs(res.objective - ref) <= 1e-6 * max(1.0, abs(ref))
    assert m.integrality_residual(res.values) <= 1e-6
    assert m.max_violation(res.values) <= 1e-6


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31))
def test_bound_trace_monotone(seed):
    m = random_tiny_milp(np.random.default_rng(seed), n_int=6, mixed=True)
    res = solve_milp(m)
    if res.ok:
        tr = np.array(res.bound_trace)
        assert np.all(np.diff(tr) >= -1e-9 * max(1.0, abs(res.objective)))
        assert tr[-1] <= res.objective + 1e-9


def test_fixed_integers_reduce_to_lp():
    rng = np.random.default_rng(4)
    for _ in range(10):
        m = random_tiny_milp(rng, mixed=True)
        ref, point = enumerate_milp(m)
        if ref is None:
            continue
        fixed = m.copy()
        for j in np.flatnonzero(m.is_integer):
            fixed.set_bounds(j, point[j], point[j])
        assert abs(solve_milp(fixed).objective - solve_lp(fixed.relaxed()).objective) <= 1e-9 * max(1, abs(ref))


def test_node_limit_returns_incumbent():
    m = random_tiny_milp(np.random.default_rng(12), n_int=8, mixed=True)
    res = solve_milp(m, ToleranceConfig(node_limit=1))
    assert res.status in (Status.ITER_LIMIT, Status.OPTIMAL, Status.INFEASIBLE)
    if res.status is Status.ITER_LIMIT and res.values is not None:
        assert res.bound <= res.objective + 1e-9


def test_example1_models():
    inst, risk = example1_instance(1000, 10, 0.5)
    m, _ = build_multistage(inst, risk)
    assert abs(solve_milp(m).objective - 3750) <= 1e-9
    # the relaxation of this tiny model is already integral
    assert abs(solve_lp(m).objective - 3750) <= 1e-7
    m, _ = build_twostage(inst, risk)
    assert abs(solve_milp(m).objective - 4250) <= 1e-9


def test_milp_vs_highs_on_generated_models(small):
    inst, risk = small
    for build in (build_multistage, build_twostage):
        m, idx = build(inst, risk, strengthen=True)
        res = solve_milp(m, separators=[capacity_cut_separator(inst, idx)])
        ref = highs_solve(m)
        assert abs(res.objective - ref.fun) <= 1e-6 * abs(ref.fun)


def test_lp_text_export():
    m = Milp()
    x = m.add_var("x", 0, 3, 1.0, integer=True)
    y = m.add_var("y", 0, math.inf, 2.0)
    m.add_row([(x, 1.0), (y, 1.0)], GE, 2.5)
    text = m.to_lp_text()
    assert "Minimize" in text and "General" in text
