"""Bounds on the value of the multistage model and a model-choice rule.

The value ``VMS = z_TS - z_MS`` is what one gains by letting capacity depend on
the scenario. Both bounds compare the two closed-form substructure solutions
built from one set of fixed allocations:

* lower bound: allocations of the exact two-stage optimum, both sides rounded;
* LP lower bound: allocations of the two-stage LP relaxation, multistage side
  rounded and two-stage side not, clamped at 0;
* upper bound: allocations of the multistage LP relaxation, multistage side
  not rounded and two-stage side rounded.

Each value equals ``q_TS - q_MS`` of the two substructure solutions.
"""
from __future__ import annotations

import csv
import enum
import io
import json
from dataclasses import asdict, dataclass

import numpy as np

from .errors import DomainError
from .instance import Instance, RiskProfile
from .milp import Status, ToleranceConfig
from .models import Solution, solve_model
from .substructure import Mode, SubstructureSolution, sp_rms, sp_rts

DELTA1 = 0.10
DELTA2 = 0.30


class Recommendation(str, enum.Enum):
    SOLVE_MULTISTAGE = "SolveMultistage"
    TWO_STAGE_SUFFICES = "TwoStageSuffices"
    INCONCLUSIVE = "Inconclusive"


@dataclass
class BoundWitness:
    """A bound value with the substructure solutions it was computed from."""

    value: float
    ms: SubstructureSolution
    ts: SubstructureSolution
    source: Solution
    degraded: bool = False


def gap_expression(inst: Instance, risk: RiskProfile, ms: SubstructureSolution,
                   ts: SubstructureSolution) -> float:
    """Weighted capacity difference plus weighted threshold difference, term by term."""
    tree = inst.tree
    s = tree.stage - 1
    w = np.array([1.0] + [1.0 - risk.lam_at(int(t)) for t in tree.stage[1:]])
    cap_term = tree.prob * w * np.einsum("nm,nm->n", inst.maint[s], ts.cum - ms.cum)
    lam_child = np.array([risk.lam_at(int(tree.stage[n]) + 1) if tree.children[n] else 0.0
                          for n in range(tree.n_nodes)])
    eta_term = tree.prob * lam_child * (ts.eta - ms.eta)
    return float(cap_term.sum() + eta_term.sum())


def vms_lower_bound(inst: Instance, risk: RiskProfile, ts_sol: Solution | None = None,
                    tol: ToleranceConfig | None = None) -> BoundWitness:
    """Lower bound from an optimal two-stage solution.

    If the two-stage MILP stopped at its node limit, the incumbent is used
    and the witness is flagged ``degraded``: the value is then only a bound
    if that incumbent happens to be optimal.
    """
    if ts_sol is None:
        ts_sol = solve_model(inst, risk, "ts", tol=tol, allow_limit=True)
    degraded = ts_sol.result is not None and ts_sol.result.status is not Status.OPTIMAL
    ms = sp_rms(inst, risk, ts_sol.y, ts_sol.u, Mode.ROUNDED)
    ts = sp_rts(inst, risk, ts_sol.y, ts_sol.u, Mode.ROUNDED)
    val = gap_expression(inst, risk, ms, ts)
    if -1e-9 * max(1.0, abs(ts.q)) < val < 0:
        val = 0.0   # summation noise; a clearly negative value is left visible
    return BoundWitness(val, ms, ts, ts_sol, degraded)


def vms_lower_bound_lp(inst: Instance, risk: RiskProfile, ts_lp: Solution | None = None,
                       tol: ToleranceConfig | None = None) -> BoundWitness:
    """Lower bound from the two-stage LP relaxation, clamped at 0."""
    if ts_lp is None:
        ts_lp = solve_model(inst, risk, "ts", relax=True, tol=tol)
    ms = sp_rms(inst, risk, ts_lp.y, ts_lp.u, Mode.ROUNDED)
    ts = sp_rts(inst, risk, ts_lp.y, ts_lp.u, Mode.RELAXED)
    return BoundWitness(max(gap_expression(inst, risk, ms, ts), 0.0), ms, ts, ts_lp)


def vms_upper_bound(inst: Instance, risk: RiskProfile, ms_lp: Solution | None = None,
                    tol: ToleranceConfig | None = None) -> BoundWitness:
    """Upper bound from the multistage LP relaxation."""
    if ms_lp is None:
        ms_lp = solve_model(inst, risk, "ms", relax=True, tol=tol)
    ms = sp_rms(inst, risk, ms_lp.y, ms_lp.u, Mode.RELAXED)
    ts = sp_rts(inst, risk, ms_lp.y, ms_lp.u, Mode.ROUNDED)
    return BoundWitness(gap_expression(inst, risk, ms, ts), ms, ts, ms_lp)


def recommend(vms_lb: float, vms_ub: float, z_ts: float, delta1: float = DELTA1,
              delta2: float = DELTA2) -> Recommendation:
    if not z_ts > 0:
        raise DomainError(f"relative bounds need a positive two-stage objective, got {z_ts}")
    if not (0 < delta1 < 1 and 0 < delta2 < 1):
        raise DomainError("thresholds must lie in (0, 1)")
    if vms_lb / z_ts > delta1:
        return Recommendation.SOLVE_MULTISTAGE
    if vms_ub / z_ts < delta2:
        return Recommendation.TWO_STAGE_SUFFICES
    return Recommendation.INCONCLUSIVE


CSV_FIELDS = ("z_ts", "vms_lb", "vms_lb1", "vms_ub", "rvms_lb", "rvms_lb1", "rvms_ub", "z_ms",
              "vms_exact", "rvms", "rgap_lb", "rgap_lb1", "rgap_ub", "recommendation",
              "delta1", "delta2", "degraded")


@dataclass
class BoundsReport:
    z_ts: float
    vms_lb: float
    vms_lb1: float
    vms_ub: float
    rvms_lb: float
    rvms_lb1: float
    rvms_ub: float
    recommendation: Recommendation
    delta1: float = DELTA1
    delta2: float = DELTA2
    degraded: bool = False
    z_ms: float | None = None
    vms_exact: float | None = None
    rvms: float | None = None
    rgap_lb: float | None = None
    rgap_lb1: float | None = None
    rgap_ub: float | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["recommendation"] = self.recommendation.value
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    def csv_row(self) -> dict:
        d = self.to_dict()
        return {k: ("" if d[k] is None else repr(d[k]) if isinstance(d[k], float) else d[k])
                for k in CSV_FIELDS}

    def to_csv(self, header: bool = True) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
        if header:
            w.writeheader()
        w.writerow(self.csv_row())
        return buf.getvalue()


def compute_bounds(inst: Instance, risk: RiskProfile, delta1: float = DELTA1, delta2: float = DELTA2,
                   exact: bool = False, tol: ToleranceConfig | None = None) -> BoundsReport:
    """All three bounds and the recommendation; ``exact`` also solves the multistage MILP."""
    lb = vms_lower_bound(inst, risk, tol=tol)
    z_ts = lb.source.objective
    lb1 = vms_lower_bound_lp(inst, risk, tol=tol)
    ub = vms_upper_bound(inst, risk, tol=tol)
    rec = recommend(lb.value, ub.value, z_ts, delta1, delta2)
    rep = BoundsReport(z_ts=z_ts, vms_lb=lb.value, vms_lb1=lb1.value, vms_ub=ub.value,
                       rvms_lb=lb.value / z_ts, rvms_lb1=lb1.value / z_ts, rvms_ub=ub.value / z_ts,
                       recommendation=rec, delta1=delta1, delta2=delta2, degraded=lb.degraded)
    if exact:
        ms = solve_model(inst, risk, "ms", tol=tol)
        fill_exact(rep, ms.objective)
    return rep


def fill_exact(rep: BoundsReport, z_ms: float) -> BoundsReport:
    """Add the exact value and the three tightness gaps to a report."""
    rep.z_ms = z_ms
    rep.vms_exact = rep.z_ts - z_ms
    rep.rvms = rep.vms_exact / rep.z_ts
    rep.rgap_lb = rep.rvms - rep.rvms_lb
    rep.rgap_lb1 = rep.rvms - rep.rvms_lb1
    rep.rgap_ub = rep.rvms_ub - rep.rvms
    return rep


def tightness_metrics(inst: Instance, risk: RiskProfile, tol: ToleranceConfig | None = None):
    """``(rvms, rgap_lb, rgap_lb1, rgap_ub)`` from exact solves of both models."""
    rep = compute_bounds(inst, risk, exact=True, tol=tol)
    return rep.rvms, rep.rgap_lb, rep.rgap_lb1, rep.rgap_ub

