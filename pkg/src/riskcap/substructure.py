"""Closed-form capacity and VaR-threshold solutions once allocations are fixed.

With ``y`` and the CVaR excesses ``u`` held fixed, the remaining problem in
``(x, eta)`` separates: capacity only has to cover the load ``B_t y_n`` at every
node, and every threshold only has to dominate the stage costs of its
children. Cumulative capacity is therefore the running maximum of the
(rounded) loads, and ``eta`` the largest child cost minus excess.

The two-stage variant replaces the node load by the largest load over the
whole stage, since one decision per stage serves every node of that stage.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .instance import Instance, RiskProfile
from .milp import GE, Milp
from .models import CEIL_TOL, NodeCoefficients


class Mode(str, enum.Enum):
    ROUNDED = "rounded"
    RELAXED = "relaxed"


@dataclass
class SubstructureSolution:
    """``x`` (n, M) increments, ``cum`` (n, M) installed capacity, ``eta`` (n,) and the value ``q``.

    ``eta`` is 0 on leaves, where it does not exist.
    """

    x: np.ndarray
    eta: np.ndarray
    q: float
    cum: np.ndarray


def safe_ceil(v):
    """Ceiling that ignores floating noise of up to ``CEIL_TOL`` above an integer."""
    return np.ceil(np.asarray(v, dtype=float) - CEIL_TOL) + 0.0


def node_loads(inst: Instance, y) -> np.ndarray:
    """Units of capacity needed per facility, ``B_t y_n`` = ``sum_j y_nij / h_ti``."""
    tree = inst.tree
    y = np.asarray(y, dtype=float)
    if y.shape != (tree.n_nodes, inst.M, inst.N):
        raise DomainError(f"y has shape {y.shape}, expected {(tree.n_nodes, inst.M, inst.N)}")
    return y.sum(axis=2) / inst.cap[tree.stage - 1]


def stage_max_loads(inst: Instance, load) -> np.ndarray:
    """Per node, the componentwise largest load among all nodes of its stage."""
    tree = inst.tree
    top = np.zeros((inst.T, inst.M))
    np.maximum.at(top, tree.stage - 1, load)
    return top[tree.stage - 1]


def _check_u(inst: Instance, u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.shape != (inst.tree.n_nodes,):
        raise DomainError(f"u has shape {u.shape}, expected ({inst.tree.n_nodes},)")
    if np.any(u[1:] < 0):
        raise DomainError("u must be non-negative")
    return u


def _assemble(inst, risk, y, u, level) -> SubstructureSolution:
    tree = inst.tree
    cum = tree.running_max(level)
    x = cum.copy()
    x[1:] -= cum[tree.parent[1:]]
    s = tree.stage - 1
    # child cost minus excess, then the largest one per parent
    slack = np.einsum("nm,nm->n", inst.maint[s], cum) + np.einsum("nmj,nmj->n", inst.op[s], y) - u
    eta = np.zeros(tree.n_nodes)
    for n in tree.non_leaves:
        eta[n] = slack[list(tree.children[n])].max()
    coef = NodeCoefficients.build(inst, risk)
    q = float(tree.prob @ (np.einsum("nm,nm->n", coef.maint, cum) + coef.lam_child * eta))
    return SubstructureSolution(x=x, eta=eta, q=q, cum=cum)


def sp_rms(inst: Instance, risk: RiskProfile, y, u, mode: Mode = Mode.ROUNDED) -> SubstructureSolution:
    """Optimal node-dependent capacity and thresholds for fixed ``(y, u)``."""
    load = node_loads(inst, y)
    u = _check_u(inst, u)
    level = safe_ceil(load) if Mode(mode) is Mode.ROUNDED else load
    return _assemble(inst, risk, np.asarray(y, dtype=float), u, level)


def sp_rts(inst: Instance, risk: RiskProfile, y, u, mode: Mode = Mode.ROUNDED) -> SubstructureSolution:
    """Optimal stage-wise capacity and thresholds for fixed ``(y, u)``.

    The returned ``x`` is node-indexed but identical across each stage.
    """
    load = stage_max_loads(inst, node_loads(inst, y))
    u = _check_u(inst, u)
    level = safe_ceil(load) if Mode(mode) is Mode.ROUNDED else load
    return _assemble(inst, risk, np.asarray(y, dtype=float), u, level)


def build_substructure_model(inst: Instance, risk: RiskProfile, y, u, two_stage: bool = False,
                             integer: bool = True):
    """The fixed-``(y, u)`` problem as an explicit MILP, for cross-checking the closed forms.

    Returns the model and the ``(x_ids, eta_ids)`` arrays; ``x_ids`` is
    ``(T, M)`` when ``two_stage`` and ``(n, M)`` otherwise.
    """
    tree = inst.tree
    load = node_loads(inst, y)
    u = _check_u(inst, u)
    y = np.asarray(y, dtype=float)
    coef = NodeCoefficients.build(inst, risk)
    p = tree.prob
    m = Milp()
    weighted = p[:, None] * coef.maint
    if two_stage:
        per_stage = np.zeros((inst.T, inst.M))
        np.add.at(per_stage, tree.stage - 1, weighted)
        obj = np.cumsum(per_stage[::-1], axis=0)[::-1]
        x_ids = np.array([[m.add_var(f"x[t{t + 1}][{i}]", 0, np.inf, obj[t, i], integer)
                           for i in range(inst.M)] for t in range(inst.T)], dtype=int)
    else:
        obj = tree.subtree_sum(weighted)
        x_ids = np.array([[m.add_var(f"x[{n}][{i}]", 0, np.inf, obj[n, i], integer)
                           for i in range(inst.M)] for n in range(tree.n_nodes)], dtype=int)
    eta_ids = np.full(tree.n_nodes, -1)
    for n in tree.non_leaves:
        eta_ids[n] = m.add_var(f"eta[{n}]", -np.inf, np.inf, p[n] * coef.lam_child[n])

    def path_ids(n, i):
        if two_stage:
            return x_ids[: tree.stage[n], i]
        return x_ids[tree.path_to_root(n), i]

    for n in range(tree.n_nodes):
        t = int(tree.stage[n])
        for i in range(inst.M):
            m.add_row({int(k): 1.0 for k in path_ids(n, i)}, GE, load[n, i], f"cover[{n}][{i}]")
        if n == 0:
            continue
        row = {int(eta_ids[tree.parent[n]]): 1.0}
        for i in range(inst.M):
            for k in path_ids(n, i):
                row[int(k)] = row.get(int(k), 0.0) - inst.maint[t - 1, i]
        rhs = float(np.sum(inst.op[t - 1] * y[n])) - u[n]
        m.add_row(row, GE, rhs, f"eta[{n}]")
    return m, x_ids, eta_ids
