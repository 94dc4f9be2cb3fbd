import numpy as np
import pytest
import scipy.optimize as so

from riskcap.instance import GenConfig, example1_instance, generate_synthetic
from riskcap.milp import EQ, GE, LE


def highs_solve(m, integer=True):
    """Reference optimum from scipy's HiGHS, used only as a test oracle."""
    A = m.A.toarray() if m.n_rows else np.zeros((0, m.n_vars))
    lb = np.where(m.senses == LE, -np.inf, m.rhs)
    ub = np.where(m.senses == GE, np.inf, m.rhs)
    cons = [so.LinearConstraint(A, lb, ub)] if m.n_rows else []
    r = so.milp(m.c, constraints=cons, integrality=(m.is_integer.astype(int) if integer else None),
                bounds=so.Bounds(m.lower, m.upper), options={"mip_rel_gap": 1e-10})
    return r


@pytest.fixture
def ex1():
    return example1_instance(1000.0, 10.0, 0.5)


@pytest.fixture
def small():
    return generate_synthetic(GenConfig(branches=2, stages=3, facilities=3, sites=4, seed=7))


def small_instances(count, lam=0.5, **kw):
    """Seeded small instances cycling through tree kinds and shapes."""
    out = []
    for s in range(count):
        cfg = GenConfig(branches=2 + s % 2, stages=3, facilities=3, sites=5,
                        tree_kind=("sd", "si")[(s // 2) % 2], seed=100 + s, lam=lam)
        cfg_kw = dict(cfg.__dict__)
        cfg_kw.update(kw)
        out.append(generate_synthetic(GenConfig(**cfg_kw)))
    return out
