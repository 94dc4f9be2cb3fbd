"""Extensive-form MILPs for risk-averse capacity planning and an ECRM evaluator.

Stage costs at node ``n`` are ``g_n = f_t . X_n + c_t . y_n`` where ``X_n`` is
the cumulative capacity installed on the path to ``n``. The objective is the
root cost plus, for every later stage, a convex combination of the
conditional expectation and the conditional CVaR of the stage cost. CVaR is
linearized with a free threshold ``eta`` per non-leaf node and an excess
``u >= 0`` per non-root node.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, InfeasiblePolicyError, SolverError
from .instance import Instance, RiskProfile
from .milp import EQ, GE, LE, Milp, SolveResult, Status, ToleranceConfig, solve_lp, solve_milp

CEIL_TOL = 1e-9
FEAS_TOL = 1e-6


@dataclass(frozen=True)
class NodeCoefficients:
    """Per-node objective weights of the extensive form.

    ``maint[n]`` (M,) and ``op[n]`` (M, N) are the stage costs scaled by the
    weight on the expectation, ``lam_child[n]`` is the risk weight of the
    child stage (0 on leaves) and ``tail[n]`` the CVaR excess multiplier
    ``lam_t / (1 - alpha_t)`` (0 at the root).
    """

    maint: np.ndarray
    op: np.ndarray
    lam_child: np.ndarray
    tail: np.ndarray

    @classmethod
    def build(cls, inst: Instance, risk: RiskProfile) -> "NodeCoefficients":
        tree = inst.tree
        if risk.T != inst.T:
            raise DomainError(f"risk profile covers {risk.T} stages, instance has {inst.T}")
        n = tree.n_nodes
        maint = np.zeros((n, inst.M))
        op = np.zeros((n, inst.M, inst.N))
        lam_child = np.zeros(n)
        tail = np.zeros(n)
        for v in range(n):
            t = int(tree.stage[v])
            w = 1.0 if v == 0 else 1.0 - risk.lam_at(t)
            maint[v] = w * inst.maint[t - 1]
            op[v] = w * inst.op[t - 1]
            if tree.children[v]:
                lam_child[v] = risk.lam_at(t + 1)
            if v != 0:
                tail[v] = risk.lam_at(t) / (1.0 - risk.alpha_at(t))
        return cls(maint, op, lam_child, tail)


@dataclass
class VariableIndex:
    """Flat variable ids of an extensive form.

    ``x`` is ``(n_nodes, M)`` for the multistage model and ``(T, M)`` for the
    stage-indexed two-stage model; ``eta`` is -1 on leaves and ``u`` is -1 at
    the root.
    """

    x: np.ndarray
    y: np.ndarray
    eta: np.ndarray
    u: np.ndarray
    stage_indexed: bool
    stage: np.ndarray
    parent: np.ndarray

    def x_of_node(self, values) -> np.ndarray:
        """Per-node capacity increments, expanded from stage-indexed ones if needed."""
        x = np.asarray(values)[self.x]
        if self.stage_indexed:
            return x[self.stage - 1]
        return x

    def extract(self, values):
        values = np.asarray(values, dtype=float)
        x = self.x_of_node(values)
        y = values[self.y]
        eta = np.where(self.eta >= 0, values[np.maximum(self.eta, 0)], 0.0)
        u = np.where(self.u >= 0, values[np.maximum(self.u, 0)], 0.0)
        return x, y, eta, u

    def pack(self, n_vars, x=None, y=None, eta=None, u=None) -> np.ndarray:
        """Inverse of :meth:`extract`; ``x`` must be node-indexed."""
        out = np.zeros(n_vars)
        if x is not None:
            x = np.asarray(x, dtype=float)
            if self.stage_indexed:
                first = np.array([np.flatnonzero(self.stage == t)[0] for t in range(1, self.x.shape[0] + 1)])
                out[self.x] = x[first]
            else:
                out[self.x] = x
        if y is not None:
            out[self.y] = y
        if eta is not None:
            keep = self.eta >= 0
            out[self.eta[keep]] = np.asarray(eta)[keep]
        if u is not None:
            keep = self.u >= 0
            out[self.u[keep]] = np.asarray(u)[keep]
        return out


@dataclass
class Policy:
    """Node-indexed capacity increments ``x`` (n, M) and allocations ``y`` (n, M, N)."""

    x: np.ndarray
    y: np.ndarray


@dataclass
class Solution:
    policy: Policy
    eta: np.ndarray
    u: np.ndarray
    objective: float
    result: SolveResult | None = None

    @property
    def x(self):
        return self.policy.x

    @property
    def y(self):
        return self.policy.y


def cumulative(tree, x) -> np.ndarray:
    """Installed capacity at every node: the sum of ``x`` along the root path."""
    cum = np.array(x, dtype=float, copy=True)
    for n in range(1, tree.n_nodes):
        cum[n] += cum[tree.parent[n]]
    return cum


def stage_costs(inst: Instance, x, y) -> np.ndarray:
    """``g_n`` for every node given node-indexed ``x`` and ``y``."""
    tree = inst.tree
    cum = cumulative(tree, x)
    s = tree.stage - 1
    return np.einsum("nm,nm->n", inst.maint[s], cum) + np.einsum("nmj,nmj->n", inst.op[s], y)


def _build(inst: Instance, risk: RiskProfile, stage_indexed: bool, strengthen: bool = False):
    tree = inst.tree
    coef = NodeCoefficients.build(inst, risk)
    n_nodes, M, N, T = tree.n_nodes, inst.M, inst.N, inst.T
    p = tree.prob
    xcap = inst.x_upper_bound()
    m = Milp()

    weighted = p[:, None] * coef.maint
    if stage_indexed:
        per_stage = np.zeros((T, M))
        np.add.at(per_stage, tree.stage - 1, weighted)
        # x of stage t pays at every node of stage >= t
        x_obj = np.cumsum(per_stage[::-1], axis=0)[::-1]
        x_ids = np.array([[m.add_var(f"x[t{t + 1}][{i}]", 0, xcap, x_obj[t, i], True)
                           for i in range(M)] for t in range(T)], dtype=int).reshape(T, M)
    else:
        x_obj = tree.subtree_sum(weighted)
        x_ids = np.array([[m.add_var(f"x[{n}][{i}]", 0, xcap, x_obj[n, i], True)
                           for i in range(M)] for n in range(n_nodes)], dtype=int).reshape(n_nodes, M)
    y_ids = np.zeros((n_nodes, M, N), dtype=int)
    for n in range(n_nodes):
        for i in range(M):
            for j in range(N):
                y_ids[n, i, j] = m.add_var(f"y[{n}][{i}][{j}]", 0, np.inf, p[n] * coef.op[n, i, j])
    eta_ids = np.full(n_nodes, -1, dtype=int)
    for n in tree.non_leaves:
        eta_ids[n] = m.add_var(f"eta[{n}]", -np.inf, np.inf, p[n] * coef.lam_child[n])
    u_ids = np.full(n_nodes, -1, dtype=int)
    for n in range(1, n_nodes):
        u_ids[n] = m.add_var(f"u[{n}]", 0, np.inf, p[n] * coef.tail[n])

    def cum_ids(n, i):
        if stage_indexed:
            return [x_ids[t, i] for t in range(tree.stage[n])]
        return [x_ids[k, i] for k in tree.path_to_root(n)]

    for n in range(n_nodes):
        t = int(tree.stage[n])
        for j in range(N):
            m.add_row([(y_ids[n, i, j], 1.0) for i in range(M)], EQ, tree.demand[n, j], f"demand[{n}][{j}]")
        for i in range(M):
            row = {int(y_ids[n, i, j]): 1.0 / inst.cap[t - 1, i] for j in range(N)}
            for k in cum_ids(n, i):
                row[int(k)] = row.get(int(k), 0.0) - 1.0
            m.add_row(row, LE, 0.0, f"cap[{n}][{i}]")
        if n == 0:
            continue
        row = {int(u_ids[n]): 1.0, int(eta_ids[tree.parent[n]]): 1.0}
        for i in range(M):
            for k in cum_ids(n, i):
                row[int(k)] = row.get(int(k), 0.0) - inst.maint[t - 1, i]
            for j in range(N):
                row[int(y_ids[n, i, j])] = -inst.op[t - 1, i, j]
        m.add_row(row, GE, 0.0, f"cvar[{n}]")
    if strengthen:
        _add_cover_rows(m, inst, x_ids, stage_indexed)
    idx = VariableIndex(x_ids, y_ids, eta_ids, u_ids, stage_indexed, tree.stage.copy(), tree.parent.copy())
    return m, idx


def _add_cover_rows(m: Milp, inst: Instance, x_ids, stage_indexed: bool):
    """Integer cover rows: total capacity at a node must reach ``ceil(D_n / h_max)``.

    Summing the capacity rows gives ``sum_i h_i X_i >= D_n``; dividing by the
    largest ``h`` and rounding is valid for every integer point and removes
    most of the fractional slack of the relaxation. Rows implied by a row at
    an ancestor (or, stage-indexed, at the same stage) are skipped.
    """
    tree = inst.tree
    need = np.zeros(tree.n_nodes)
    for n in range(tree.n_nodes):
        t = int(tree.stage[n])
        total = float(tree.demand[n].sum())
        need[n] = np.ceil(total / float(inst.cap[t - 1].max()) - CEIL_TOL) if total > 0 else 0.0
    if stage_indexed:
        done = 0.0
        for t in range(1, inst.T + 1):
            k = float(need[tree.stage == t].max())
            if k > done:
                m.add_row({int(v): 1.0 for v in x_ids[:t].ravel()}, GE, k, f"cover[t{t}]")
                done = k
        return
    best = np.zeros(tree.n_nodes)
    for n in range(tree.n_nodes):
        above = best[tree.parent[n]] if n else 0.0
        if need[n] > above:
            ids = x_ids[tree.path_to_root(n)].ravel()
            m.add_row({int(v): 1.0 for v in ids}, GE, need[n], f"cover[{n}]")
        best[n] = max(above, need[n])


def _site_subsets(N: int) -> np.ndarray:
    """0/1 matrix of candidate site sets: all of them when few, else singletons, pairs and everything."""
    if N <= 12:
        codes = np.arange(1, 2 ** N)
        return ((codes[:, None] >> np.arange(N)) & 1).astype(float)
    eye = np.eye(N)
    pairs = [eye[a] + eye[b] for a in range(N) for b in range(a + 1, N)]
    return np.vstack([eye, np.array(pairs).reshape(-1, N), np.ones((1, N))])


def capacity_cut_separator(inst: Instance, idx: VariableIndex, per_node: int = 3):
    """Separator for mixed-integer rounding cuts on the capacity rows.

    For a node, a site set ``J`` with demand ``D_J`` and ``h`` the largest
    unit capacity of the stage, every facility set ``S`` gives

        sum_{i in S} X_i + sum_{i not in S, j in J} y_ij / (h f_J) >= ceil(D_J / h)

    with ``X`` the cumulative capacity and ``f_J`` the fractional part of
    ``D_J / h``. For fixed ``J`` the most violated ``S`` is found facility by
    facility. Returns a callable usable by ``solve_milp``.
    """
    tree = inst.tree
    sub = _site_subsets(inst.N)
    cum_ids = []
    for n in range(tree.n_nodes):
        t = int(tree.stage[n])
        if idx.stage_indexed:
            cum_ids.append(idx.x[:t])
        else:
            cum_ids.append(idx.x[tree.path_to_root(n)])
    hmax = inst.cap.max(axis=1)
    node_data = []
    for n in range(tree.n_nodes):
        v = sub @ tree.demand[n] / hmax[tree.stage[n] - 1]
        frac = v - np.floor(v)
        ok = frac >= 1e-3
        node_data.append((v, frac, ok))

    def separate(values):
        x, y, _, _ = idx.extract(values)
        X = cumulative(tree, x)
        cuts = []
        for n in range(tree.n_nodes):
            v, frac, ok = node_data[n]
            if not ok.any():
                continue
            h = hmax[tree.stage[n] - 1]
            load = y[n] @ sub.T                       # (M, K) flow into each site set
            with np.errstate(divide="ignore", invalid="ignore"):
                scaled = np.where(ok, load / (h * frac), np.inf)
            lhs = np.minimum(X[n][:, None], scaled).sum(axis=0)
            rhs = np.ceil(v - CEIL_TOL)
            viol = np.where(ok, rhs - lhs, -np.inf)
            for k in np.argsort(-viol)[:per_node]:
                if viol[k] <= 1e-6 * max(1.0, rhs[k]):
                    break
                in_s = X[n] <= scaled[:, k]
                row = {}
                for i in np.flatnonzero(in_s):
                    for vid in cum_ids[n][:, i]:
                        row[int(vid)] = row.get(int(vid), 0.0) + 1.0
                coef = 1.0 / (h * frac[k])
                for i in np.flatnonzero(~in_s):
                    for j in np.flatnonzero(sub[k]):
                        row[int(idx.y[n, i, j])] = coef
                cuts.append((list(row.items()), GE, float(rhs[k])))
        return cuts

    return separate


def build_multistage(inst: Instance, risk: RiskProfile, strengthen: bool = False):
    """Extensive form with node-dependent capacity decisions.

    ``strengthen`` appends integer cover rows that leave the integer optimum
    unchanged but tighten the relaxation; use it for exact solves only.
    """
    return _build(inst, risk, stage_indexed=False, strengthen=strengthen)


def build_twostage(inst: Instance, risk: RiskProfile, strengthen: bool = False):
    """Extensive form with one capacity decision per stage shared by all its nodes."""
    return _build(inst, risk, stage_indexed=True, strengthen=strengthen)


def build_deterministic(inst: Instance, strengthen: bool = False):
    """Risk-neutral model on a single-path tree."""
    tree = inst.tree
    if any(len(k) > 1 for k in tree.children):
        raise DomainError("deterministic model needs a single-path tree")
    return _build(inst, RiskProfile.constant(inst.T, 0.0, 0.5), stage_indexed=False, strengthen=strengthen)


# -- CVaR helpers ---------------------------------------------------------------

def value_at_risk(values, probs, alpha: float) -> float:
    """Left-continuous ``alpha``-quantile of a discrete distribution."""
    values = np.asarray(values, dtype=float)
    probs = np.asarray(probs, dtype=float)
    uniq, inv = np.unique(values, return_inverse=True)
    mass = np.bincount(inv, weights=probs, minlength=len(uniq))
    cdf = np.cumsum(mass) / mass.sum()
    k = int(np.searchsorted(cdf, alpha - 1e-12, side="left"))
    return float(uniq[min(k, len(uniq) - 1)])


def cvar(values, probs, alpha: float) -> float:
    values = np.asarray(values, dtype=float)
    probs = np.asarray(probs, dtype=float)
    probs = probs / probs.sum()
    eta = value_at_risk(values, probs, alpha)
    return eta + float(probs @ np.maximum(values - eta, 0.0)) / (1.0 - alpha)


def canonical_tail(inst: Instance, risk: RiskProfile, x, y):
    """VaR thresholds per non-leaf node and the matching minimal excesses."""
    tree = inst.tree
    g = stage_costs(inst, x, y)
    eta = np.zeros(tree.n_nodes)
    u = np.zeros(tree.n_nodes)
    for n in tree.non_leaves:
        kids = list(tree.children[n])
        a = risk.alpha_at(int(tree.stage[n]) + 1)
        eta[n] = value_at_risk(g[kids], tree.prob[kids], a)
        u[kids] = np.maximum(g[kids] - eta[n], 0.0)
    return eta, u


# -- solving --------------------------------------------------------------------

def repair_allocation(inst: Instance, x, y) -> np.ndarray:
    """Remove LP round-off from ``y`` so capacity rows hold exactly.

    A facility whose load exceeds its installed capacity by a sliver hands
    the excess, site by site, to facilities with spare room at that site.
    Excesses beyond ``FEAS_TOL`` relative are left alone (and will show up
    as violations).
    """
    tree = inst.tree
    y = np.maximum(np.array(y, dtype=float), 0.0)
    cum = cumulative(tree, x)
    for n in range(tree.n_nodes):
        h = inst.cap[tree.stage[n] - 1]
        room = h * cum[n] - y[n].sum(axis=1)
        scale = max(1.0, float(tree.demand[n].max(initial=0.0)))
        for i in np.flatnonzero(room < 0):
            excess = -room[i]
            if excess > FEAS_TOL * scale:
                continue
            for j in np.argsort(-y[n, i]):
                if excess <= 0:
                    break
                take = min(excess, y[n, i, j])
                k = int(np.argmax(np.where(np.arange(inst.M) == i, -np.inf, room)))
                if k == i or room[k] < take:
                    break
                y[n, i, j] -= take
                y[n, k, j] += take
                room[k] -= take
                excess -= take
            room[i] = -excess
    return y


def _solution_from(inst, risk, idx, res: SolveResult) -> Solution:
    x, y, _, _ = idx.extract(res.values)
    x = np.where(np.abs(x - np.round(x)) <= 1e-6, np.round(x), x) + 0.0
    if np.all(x == np.round(x)):
        y = repair_allocation(inst, x, y)
    eta, u = canonical_tail(inst, risk, x, y)
    return Solution(Policy(x, y), eta, u, float(res.objective), res)


def solve_model(inst: Instance, risk: RiskProfile, kind: str = "ms", relax: bool = False,
                tol: ToleranceConfig | None = None, allow_limit: bool = False) -> Solution:
    """Build and solve the ``ms``, ``ts`` or ``det`` model, exactly or as an LP relaxation.

    With ``allow_limit`` a MILP that stops at its node limit with an
    incumbent returns that incumbent; check ``result.status`` to tell.
    """
    if kind == "ms":
        m, idx = build_multistage(inst, risk, strengthen=not relax)
    elif kind == "ts":
        m, idx = build_twostage(inst, risk, strengthen=not relax)
    elif kind == "det":
        m, idx = build_deterministic(inst, strengthen=not relax)
        risk = RiskProfile.constant(inst.T, 0.0, 0.5)
    else:
        raise DomainError(f"unknown model kind {kind!r}")
    if relax:
        res = solve_lp(m, tol)
    else:
        res = solve_milp(m, tol, separators=[capacity_cut_separator(inst, idx)])
    limited = allow_limit and res.status is Status.ITER_LIMIT and res.values is not None
    if not res.ok and not limited:
        raise SolverError(f"{kind} {'LP' if relax else 'MILP'} solve ended with status {res.status.value}",
                          res.status)
    return _solution_from(inst, risk, idx, res)


# -- policy evaluation ------------------------------------------------------------

def policy_violations(inst: Instance, pol: Policy, tol: float = FEAS_TOL) -> list[str]:
    tree = inst.tree
    x = np.asarray(pol.x, dtype=float)
    y = np.asarray(pol.y, dtype=float)
    out = []
    if x.shape != (tree.n_nodes, inst.M) or y.shape != (tree.n_nodes, inst.M, inst.N):
        return [f"policy shapes x{x.shape}, y{y.shape} do not match the instance"]
    cum = cumulative(tree, x)
    for n in range(tree.n_nodes):
        t = int(tree.stage[n])
        scale = max(1.0, float(tree.demand[n].max(initial=0.0)))
        if np.any(x[n] < -tol):
            out.append(f"x[{n}] negative")
        if np.any(y[n] < -tol * scale):
            out.append(f"y[{n}] negative")
        served = y[n].sum(axis=0)
        for j in np.flatnonzero(np.abs(served - tree.demand[n]) > tol * scale):
            out.append(f"demand[{n}][{j}]: served {served[j]:.6g}, demand {tree.demand[n, j]:.6g}")
        load = y[n].sum(axis=1)
        room = inst.cap[t - 1] * cum[n]
        for i in np.flatnonzero(load > room + tol * scale):
            out.append(f"cap[{n}][{i}]: load {load[i]:.6g} exceeds {room[i]:.6g}")
    return out


@dataclass
class StageRisk:
    stage: int
    mean: float
    var: float
    cvar: float


@dataclass
class EcrmReport:
    objective: float
    stages: list = field(default_factory=list)
    node_costs: np.ndarray | None = None


def evaluate_ecrm(inst: Instance, risk: RiskProfile, pol: Policy) -> EcrmReport:
    """Objective of a feasible policy, with per-stage mean, VaR and CVaR.

    The per-stage VaR and CVaR are probability-weighted averages of the
    conditional values over the parents of that stage.
    """
    bad = policy_violations(inst, pol)
    if bad:
        raise InfeasiblePolicyError(bad)
    tree = inst.tree
    g = stage_costs(inst, pol.x, pol.y)
    total = float(g[0])
    stages = [StageRisk(1, float(g[0]), float(g[0]), float(g[0]))]
    for t in range(2, inst.T + 1):
        lam, a = risk.lam_at(t), risk.alpha_at(t)
        mean = var = cv = 0.0
        for n in tree.nodes_at_stage(t - 1):
            kids = list(tree.children[n])
            q = tree.prob[kids] / tree.prob[n]
            e = float(q @ g[kids])
            v = value_at_risk(g[kids], q, a)
            c = v + float(q @ np.maximum(g[kids] - v, 0.0)) / (1.0 - a)
            total += tree.prob[n] * ((1.0 - lam) * e + lam * c)
            mean += tree.prob[n] * e
            var += tree.prob[n] * v
            cv += tree.prob[n] * c
        stages.append(StageRisk(t, mean, var, cv))
    return EcrmReport(total, stages, g)
