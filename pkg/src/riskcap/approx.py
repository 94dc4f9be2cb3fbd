"""Alternating approximation scheme for the risk-averse capacity models.

Start from the LP relaxation. Then repeat two exact partial minimizations:
with allocations ``y`` and excesses ``u`` fixed, capacity and thresholds have
a closed form (see :mod:`riskcap.substructure`); with capacity and thresholds
fixed, the remaining LP separates into one small LP per node. Every pass
after the first yields a feasible integer solution no worse than the
previous one.
"""
from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, SolverError
from .instance import Instance, RiskProfile
from .milp import EQ, GE, LE, Milp, ToleranceConfig, solve_lp
from .models import NodeCoefficients, build_multistage, build_twostage, cumulative
from .substructure import Mode, safe_ceil, sp_rms, sp_rts

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ApproxConfig:
    eps: float = 1e-6
    max_iters: int = 100
    workers: int = 1

    def __post_init__(self):
        if not self.eps > 0:
            raise DomainError("eps must be positive")
        if self.max_iters < 1:
            raise DomainError("max_iters must be >= 1")
        if self.workers < 1:
            raise DomainError("workers must be >= 1")


@dataclass
class ApproxResult:
    """Final iterate, objective trace and certificates.

    ``trace[0]`` is the LP relaxation value, ``trace[k]`` the objective after
    pass ``k``. ``ratio_certificate`` is objective / LP value, an a
    posteriori bound on the true ratio; ``ratio_bound`` the a priori one.
    """

    x: np.ndarray
    eta: np.ndarray
    y: np.ndarray
    u: np.ndarray
    objective: float
    lp_value: float
    trace: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    lp_integral: bool = False
    max_violation: float = 0.0
    ratio_bound: float = math.inf

    @property
    def ratio_certificate(self) -> float:
        if self.lp_value > 0:
            return self.objective / self.lp_value
        return 1.0 if self.objective <= 0 else math.inf

    def to_dict(self) -> dict:
        return {
            "objective": self.objective,
            "lp_value": self.lp_value,
            "trace": list(self.trace),
            "iterations": self.iterations,
            "converged": self.converged,
            "lp_integral": self.lp_integral,
            "max_violation": self.max_violation,
            "ratio_certificate": self.ratio_certificate,
            "ratio_bound": self.ratio_bound if math.isfinite(self.ratio_bound) else None,
            "x": self.x.tolist(),
            "eta": self.eta.tolist(),
            "y": self.y.tolist(),
            "u": self.u.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)


def ratio_bound(inst: Instance) -> float:
    """A priori approximation ratio of the multistage scheme.

    Returns ``inf`` when the root has no demand, where the guarantee does not
    apply.
    """
    tree = inst.tree
    h_max = float(inst.cap[0].max())
    m_min = float(safe_ceil(tree.demand[0].sum() / h_max))
    if m_min < 1:
        return math.inf
    f_max = inst.maint.max(axis=1).sum()
    f_min = inst.maint.min(axis=1).sum()
    c_min = inst.op.min(axis=(1, 2))
    d_min = np.array([tree.demand[tree.stage == t].sum(axis=1).min() for t in range(1, inst.T + 1)])
    den = m_min * f_min + float(c_min @ d_min)
    if den <= 0:
        return math.inf
    return 1.0 + inst.M * f_max / den


def _node_lp(inst: Instance, n: int, cap_n, rhs_u, weight_y, weight_u, tol):
    """Cheapest allocation at node ``n`` under fixed capacity and threshold.

    ``rhs_u`` is ``f . X_n - eta_parent``, or None at the root where there is
    no excess variable.
    """
    t = int(inst.tree.stage[n])
    M, N = inst.M, inst.N
    m = Milp()
    ids = np.array([[m.add_var("", 0, np.inf, weight_y[i, j]) for j in range(N)] for i in range(M)])
    for j in range(N):
        m.add_row([(ids[i, j], 1.0) for i in range(M)], EQ, inst.tree.demand[n, j])
    for i in range(M):
        m.add_row([(ids[i, j], 1.0 / inst.cap[t - 1, i]) for j in range(N)], LE, cap_n[i])
    u_id = -1
    if rhs_u is not None:
        u_id = m.add_var("u", 0, np.inf, weight_u)
        row = [(u_id, 1.0)] + [(ids[i, j], -inst.op[t - 1, i, j]) for i in range(M) for j in range(N)]
        m.add_row(row, GE, rhs_u)
    res = solve_lp(m, tol)
    if not res.ok:
        raise SolverError(f"allocation LP at node {n} ended with status {res.status.value}", res.status)
    y = res.values[ids]
    u = float(res.values[u_id]) if u_id >= 0 else 0.0
    return np.maximum(y, 0.0), max(u, 0.0), res.objective


def allocate(inst: Instance, risk: RiskProfile, cum, eta, tol=None, workers: int = 1):
    """Solve the per-node allocation LPs for fixed cumulative capacity and thresholds.

    Returns ``(y, u, value)`` with ``value`` the probability-weighted total.
    """
    tree = inst.tree
    coef = NodeCoefficients.build(inst, risk)
    s = tree.stage - 1

    def one(n):
        rhs_u = None
        if n:
            rhs_u = float(inst.maint[s[n]] @ cum[n]) - float(eta[tree.parent[n]])
        return _node_lp(inst, n, cum[n], rhs_u, coef.op[n], coef.tail[n], tol)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(one, range(tree.n_nodes)))
    else:
        parts = [one(n) for n in range(tree.n_nodes)]
    y = np.stack([p[0] for p in parts])
    u = np.array([p[1] for p in parts])
    value = float(tree.prob @ np.array([p[2] for p in parts]))
    return y, u, value


def _run(inst: Instance, risk: RiskProfile, cfg: ApproxConfig, two_stage: bool,
         tol: ToleranceConfig | None) -> ApproxResult:
    tree = inst.tree
    build = build_twostage if two_stage else build_multistage
    closed_form = sp_rts if two_stage else sp_rms
    m, idx = build(inst, risk)
    lp = solve_lp(m, tol)
    if not lp.ok:
        raise SolverError(f"LP relaxation ended with status {lp.status.value}", lp.status)
    x, y, eta, u = idx.extract(lp.values)
    rb = ratio_bound(inst)
    res = ApproxResult(x=x, eta=eta, y=y, u=u, objective=lp.objective, lp_value=lp.objective,
                       trace=[lp.objective], ratio_bound=rb)
    if np.abs(x - np.round(x)).max(initial=0.0) <= 1e-6:
        res.lp_integral = True
        res.converged = True
        res.max_violation = m.max_violation(lp.values)
        return res

    for k in range(cfg.max_iters):
        sub = closed_form(inst, risk, y, u, Mode.ROUNDED)
        y_new, u_new, _ = allocate(inst, risk, sub.cum, sub.eta, tol, cfg.workers)
        values = idx.pack(m.n_vars, sub.x, y_new, sub.eta, u_new)
        obj = m.objective_value(values)
        delta = max(np.abs(sub.x - x).max(initial=0.0), np.abs(sub.eta - eta).max(initial=0.0),
                    np.abs(y_new - y).max(initial=0.0), np.abs(u_new - u).max(initial=0.0))
        x, eta, y, u = sub.x, sub.eta, y_new, u_new
        res.trace.append(obj)
        res.iterations = k + 1
        log.debug("pass %d objective %.10g delta %.3g", k + 1, obj, delta)
        if delta < cfg.eps:
            res.converged = True
            break
    res.x, res.eta, res.y, res.u = x, eta, y, u
    res.objective = res.trace[-1]
    res.max_violation = m.max_violation(idx.pack(m.n_vars, x, y, eta, u))
    return res


def approx_multistage(inst: Instance, risk: RiskProfile, cfg: ApproxConfig | None = None,
                      tol: ToleranceConfig | None = None) -> ApproxResult:
    """Approximate the multistage model, alternating closed-form capacity and node LPs."""
    return _run(inst, risk, cfg or ApproxConfig(), two_stage=False, tol=tol)


def approx_twostage(inst: Instance, risk: RiskProfile, cfg: ApproxConfig | None = None,
                    tol: ToleranceConfig | None = None) -> ApproxResult:
    """Same scheme with stage-wise capacity; ``x`` is node-indexed but constant per stage."""
    return _run(inst, risk, cfg or ApproxConfig(), two_stage=True, tol=tol)


def iterate_objective(inst: Instance, risk: RiskProfile, x, y, eta, u) -> float:
    """Multistage objective of node-indexed values, without checking feasibility."""
    coef = NodeCoefficients.build(inst, risk)
    tree = inst.tree
    cum = cumulative(tree, x)
    per_node = (np.einsum("nm,nm->n", coef.maint, cum) + np.einsum("nmj,nmj->n", coef.op, y)
                + coef.lam_child * eta + coef.tail * u)
    return float(tree.prob @ per_node)
