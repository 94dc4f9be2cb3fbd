import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import small_instances
from riskcap.errors import DomainError
from riskcap.instance import GenConfig, example1_instance, generate_synthetic
from riskcap.milp import solve_milp
from riskcap.models import cumulative, solve_model
from riskcap.substructure import (Mode, build_substructure_model, node_loads, safe_ceil, sp_rms,
                                  sp_rts, stage_max_loads)


def _ex1_star(f=1000.0, c=10.0, lam=0.5):
    inst, risk = example1_instance(f, c, lam)
    y = np.array([0.0, 50.0, 150.0]).reshape(3, 1, 1)
    u = np.array([0.0, 0.0, 100 * c])
    return inst, risk, y, u


def test_example1_closed_forms():
    f, c = 1000.0, 10.0
    inst, risk, y, u = _ex1_star(f, c)
    ms = sp_rms(inst, risk, y, u)
    ts = sp_rts(inst, risk, y, u)
    assert ms.x[:, 0].tolist() == [0.0, 1.0, 3.0]
    assert ts.x[:, 0].tolist() == [0.0, 3.0, 3.0]
    assert ms.eta[0] == pytest.approx(3 * f + 50 * c)
    assert ts.eta[0] == pytest.approx(3 * f + 50 * c)
    assert ts.q >= ms.q


def test_zero_allocation_gives_zeros(small):
    inst, risk = small
    n = inst.tree.n_nodes
    y = np.zeros((n, inst.M, inst.N))
    for fn in (sp_rms, sp_rts):
        for mode in Mode:
            sol = fn(inst, risk, y, np.zeros(n), mode)
            assert not sol.x.any() and not sol.eta.any() and sol.q == 0


def test_shape_and_sign_errors(small):
    inst, risk = small
    n = inst.tree.n_nodes
    y = np.zeros((n, inst.M, inst.N))
    with pytest.raises(DomainError):
        sp_rms(inst, risk, y[:-1], np.zeros(n))
    with pytest.raises(DomainError):
        sp_rts(inst, risk, y, np.zeros(n + 1))
    bad = np.zeros(n)
    bad[1] = -1.0
    with pytest.raises(DomainError):
        sp_rms(inst, risk, y, bad)


def test_safe_ceil_ignores_tiny_excess():
    assert safe_ceil(2.0 + 5e-10) == 2.0
    assert safe_ceil(2.0 + 1e-6) == 3.0
    assert safe_ceil(-0.0) == 0.0


def _random_allocation(inst, rng):
    """Feasible-looking allocations: demand split randomly over facilities."""
    tree = inst.tree
    w = rng.dirichlet(np.ones(inst.M), size=(tree.n_nodes, inst.N)).transpose(0, 2, 1)
    y = w * tree.demand[:, None, :]
    u = rng.uniform(0, 2000, tree.n_nodes)
    u[0] = 0.0
    return y, u


def _tiny(seed):
    rng = np.random.default_rng(seed)
    cfg = GenConfig(branches=2, stages=3, facilities=int(rng.integers(1, 4)), sites=3,
                    tree_kind=("sd", "si")[seed % 2], seed=seed,
                    lam=float(rng.choice([0.0, 0.5, 1.0])))
    inst, risk = generate_synthetic(cfg)
    y, u = _random_allocation(inst, rng)
    return inst, risk, y, u


@pytest.mark.parametrize("two_stage", [False, True])
@pytest.mark.parametrize("seed", range(6))
def test_closed_form_matches_milp(seed, two_stage):
    inst, risk, y, u = _tiny(seed)
    fn = sp_rts if two_stage else sp_rms
    m, _, _ = build_substructure_model(inst, risk, y, u, two_stage=two_stage)
    res = solve_milp(m)
    assert res.ok
    q = fn(inst, risk, y, u).q
    assert q == pytest.approx(res.objective, rel=1e-7, abs=1e-7)
    # relaxed mode is the LP of the same model
    m_lp, _, _ = build_substructure_model(inst, risk, y, u, two_stage=two_stage, integer=False)
    res_lp = solve_milp(m_lp)
    assert fn(inst, risk, y, u, Mode.RELAXED).q == pytest.approx(res_lp.objective, rel=1e-7, abs=1e-7)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_structural_properties(seed):
    inst, risk, y, u = _tiny(seed)
    tree = inst.tree
    load = node_loads(inst, y)
    for mode in Mode:
        ms = sp_rms(inst, risk, y, u, mode)
        ts = sp_rts(inst, risk, y, u, mode)
        assert ts.q >= ms.q - 1e-9 * max(1.0, abs(ms.q))
        for sol in (ms, ts):
            assert np.allclose(cumulative(tree, sol.x), sol.cum)
            assert (sol.x >= -1e-12).all()
            # capacity covers the load at every node
            assert (sol.cum >= load - 1e-9).all()
            # thresholds dominate every child's cost net of its excess
            for n in tree.non_leaves:
                for k in tree.children[n]:
                    t = tree.stage[k] - 1
                    cost = inst.maint[t] @ sol.cum[k] + np.sum(inst.op[t] * y[k]) - u[k]
                    assert sol.eta[n] >= cost - 1e-9 * max(1.0, abs(cost))
        # two-stage capacity is the same across each stage
        for t in range(1, inst.T + 1):
            rows = ts.x[tree.stage == t]
            assert (rows == rows[0]).all()
    # telescoping: installed capacity is the running max of rounded loads
    ms = sp_rms(inst, risk, y, u)
    np.testing.assert_array_equal(ms.cum, tree.running_max(safe_ceil(load)))
    top = stage_max_loads(inst, load)
    np.testing.assert_array_equal(sp_rts(inst, risk, y, u).cum, tree.running_max(safe_ceil(top)))


def test_rounded_dominates_relaxed():
    for inst, risk in small_instances(4):
        sol = solve_model(inst, risk, "ts", relax=True)
        for fn in (sp_rms, sp_rts):
            assert fn(inst, risk, sol.y, sol.u).q >= fn(inst, risk, sol.y, sol.u, Mode.RELAXED).q - 1e-9
