"""Seeded sweep harness: bounds, exact values and the approximation on random instances.

Replication ``r`` uses seed ``base_seed + r`` for every axis value, so cells
along an axis compare the same random draws wherever the axis does not
change how instances are drawn.
"""
from __future__ import annotations

import csv
import dataclasses
import io
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .approx import ApproxConfig, approx_multistage
from .bounds import DELTA1, DELTA2, recommend, vms_lower_bound, vms_lower_bound_lp, vms_upper_bound
from .errors import DomainError
from .instance import GenConfig, generate_synthetic
from .milp import ToleranceConfig
from .models import solve_model

log = logging.getLogger(__name__)

AXES = {
    "branches": ("branches", int),
    "stages": ("stages", int),
    "lambda": ("lam", float),
    "sigma": ("sigma", float),
    "facilities": ("facilities", int),
    "sites": ("sites", int),
}
COLUMNS = ("axis", "value", "rep", "seed", "z_ts", "z_ms", "rvms", "vms_lb", "vms_lb1", "vms_ub",
           "case", "ratio", "iters", "t_ts_ms", "t_ms_ms", "t_aa_ms", "error")
NUMERIC = ("z_ts", "z_ms", "rvms", "vms_lb", "vms_lb1", "vms_ub", "ratio", "iters",
           "t_ts_ms", "t_ms_ms", "t_aa_ms")
TIME_COLUMNS = ("t_ts_ms", "t_ms_ms", "t_aa_ms")


@dataclass
class ExperimentSpec:
    axis: str
    values: tuple
    reps: int = 20
    base: GenConfig = field(default_factory=GenConfig)
    delta1: float = DELTA1
    delta2: float = DELTA2
    approx: bool = True
    timing: bool = True
    jobs: int = 1
    tol: ToleranceConfig | None = None

    def __post_init__(self):
        if self.axis not in AXES:
            raise DomainError(f"unknown axis {self.axis!r}; choose from {', '.join(AXES)}")
        if self.reps < 1:
            raise DomainError("reps must be >= 1")
        if not self.values:
            raise DomainError("need at least one axis value")
        conv = AXES[self.axis][1]
        self.values = tuple(conv(v) for v in self.values)
        for v in self.values:
            self.config(v, 0)   # surfaces out-of-range values before any solve

    def config(self, value, rep: int) -> GenConfig:
        name = AXES[self.axis][0]
        return dataclasses.replace(self.base, **{name: value, "seed": self.base.seed + rep})


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _measure(inst, risk, spec: ExperimentSpec, row: dict) -> dict:
    try:
        t0 = time.perf_counter()
        lb = vms_lower_bound(inst, risk, tol=spec.tol)
        t1 = time.perf_counter()
        ms = solve_model(inst, risk, "ms", tol=spec.tol)
        t2 = time.perf_counter()
        z_ts = lb.source.objective
        lb1 = vms_lower_bound_lp(inst, risk, tol=spec.tol)
        ub = vms_upper_bound(inst, risk, tol=spec.tol)
        row.update(z_ts=z_ts, z_ms=ms.objective, rvms=(z_ts - ms.objective) / z_ts,
                   vms_lb=lb.value, vms_lb1=lb1.value, vms_ub=ub.value,
                   case=recommend(lb.value, ub.value, z_ts, spec.delta1, spec.delta2).value)
        if lb.degraded:
            row["error"] = "two-stage solve hit the node limit"
        if spec.timing:
            row.update(t_ts_ms=1e3 * (t1 - t0), t_ms_ms=1e3 * (t2 - t1))
        if spec.approx:
            t3 = time.perf_counter()
            aa = approx_multistage(inst, risk, ApproxConfig(), tol=spec.tol)
            t4 = time.perf_counter()
            row.update(ratio=aa.objective / ms.objective if ms.objective > 0 else 1.0,
                       iters=aa.iterations)
            if spec.timing:
                row["t_aa_ms"] = 1e3 * (t4 - t3)
    except Exception as exc:   # recorded, the sweep goes on
        log.warning("%s=%s rep %s failed: %s", row["axis"], row["value"], row["rep"], exc)
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


def run_one(spec: ExperimentSpec, value, rep: int) -> dict:
    """One replication; failures land in the ``error`` column instead of raising."""
    row = {c: None for c in COLUMNS}
    row.update(axis=spec.axis, value=value, rep=rep, seed=spec.base.seed + rep)
    try:
        inst, risk = generate_synthetic(spec.config(value, rep))
    except Exception as exc:
        row["error"] = f"{type(exc).__name__}: {exc}"
        return row
    return _measure(inst, risk, spec, row)


def run_fixture(inst, risk, spec: ExperimentSpec, label: str = "") -> list[dict]:
    """The harness applied to one given instance: a single row, no aggregates."""
    row = {c: None for c in COLUMNS}
    row.update(axis="instance", value=label, rep=0)
    return [_measure(inst, risk, spec, row)]


def _run_packed(args):
    return run_one(*args)


def aggregate(rows, spec: ExperimentSpec) -> list[dict]:
    """Mean and min rows per axis value over replications without errors."""
    out = []
    for value in spec.values:
        ok = [r for r in rows if r["value"] == value and not r["error"]]
        for how, fn in (("mean", np.mean), ("min", np.min)):
            agg = {c: None for c in COLUMNS}
            agg.update(axis=spec.axis, value=value, rep=how)
            for c in NUMERIC:
                vals = [float(r[c]) for r in ok if r[c] is not None]
                if vals:
                    agg[c] = float(fn(vals))
            out.append(agg)
    return out


def run_experiment(spec: ExperimentSpec) -> list[dict]:
    """All replication rows in (value, rep) order, followed by the aggregate rows."""
    tasks = [(spec, v, r) for v in spec.values for r in range(spec.reps)]
    if spec.jobs > 1:
        with ProcessPoolExecutor(spec.jobs) as pool:
            rows = list(pool.map(_run_packed, tasks))
    else:
        rows = [run_one(*t) for t in tasks]
    return rows + aggregate(rows, spec)


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in COLUMNS])
    return buf.getvalue()


def strip_timing(text: str) -> str:
    """CSV text with the wall-time columns removed, for reproducibility checks."""
    keep = [i for i, c in enumerate(COLUMNS) if c not in TIME_COLUMNS]
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    for rec in csv.reader(io.StringIO(text)):
        w.writerow([rec[i] for i in keep])
    return out.getvalue()


def read_csv(text: str) -> list[dict]:
    return list(csv.DictReader(io.StringIO(text)))


__all__ = ["AXES", "COLUMNS", "ExperimentSpec", "aggregate", "read_csv", "rows_to_csv",
           "run_experiment", "run_fixture", "run_one", "strip_timing"]
