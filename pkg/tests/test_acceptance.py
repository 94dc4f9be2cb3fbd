"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``criterion N: PASS|FAIL`` line (visible in
``pytest -v`` output) before asserting. Run alone with
``pytest tests/test_acceptance.py -v``.
"""
import itertools
import time

import numpy as np
import pytest

from _oracles import enumerate_milp, random_lp, random_tiny_milp
from riskcap.approx import approx_multistage
from riskcap.bounds import vms_lower_bound, vms_lower_bound_lp, vms_upper_bound
from riskcap.experiments import ExperimentSpec, rows_to_csv, run_experiment, strip_timing
from riskcap.instance import GenConfig, RiskProfile, example1_instance, generate_synthetic
from riskcap.milp import Status, ToleranceConfig, solve_lp, solve_milp
from riskcap.milp import dual as dual_mod
from riskcap.models import evaluate_ecrm, solve_model
from riskcap.substructure import build_substructure_model, sp_rms, sp_rts

pytestmark = pytest.mark.acceptance


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'} - {detail}")
        assert ok, detail
    return emit


# -- 1, 2: the one-facility example -------------------------------------------------

def _ex1_ms_enumerated(f, c, lam):
    """Enumerate x in {0..3}^3 and price the allocation, which is forced, by hand."""
    best = np.inf
    for x1, x2, x3 in itertools.product(range(4), repeat=3):
        k2, k3 = x1 + x2, x1 + x3
        if 50 * k2 < 50 or 50 * k3 < 150:
            continue
        g2, g3 = f * k2 + 50 * c, f * k3 + 150 * c
        best = min(best, f * x1 + (1 - lam) * 0.5 * (g2 + g3) + lam * max(g2, g3))
    return best


def test_criterion_1_example_exactness(report):
    t0 = time.perf_counter()
    out = {}
    for f in (1000.0, 100.0):
        inst, risk = example1_instance(f, 10.0, 0.5)
        lb = vms_lower_bound(inst, risk)
        out[f] = (lb.source.objective, lb.value, vms_upper_bound(inst, risk).value,
                  solve_model(inst, risk, "ms").objective)
    secs = time.perf_counter() - t0
    z_ts, lb, ub, z_ms = out[1000.0]
    checks = [
        abs(z_ts - 4250) <= 1e-9, abs(lb - 500) <= 1e-9, abs(ub - 1500) <= 1e-9,
        abs(z_ms - 3750) <= 1e-9, abs(z_ms - _ex1_ms_enumerated(1000, 10, 0.5)) <= 1e-9,
        abs(z_ms - (2 * 1000 + 100 * 10 + 0.5 * 1000 + 50 * 0.5 * 10)) <= 1e-9,
    ]
    z_ts2, lb2, ub2, _ = out[100.0]
    checks += [abs(z_ts2 - 1550) <= 1e-9, abs(lb2 - 50) <= 1e-9, abs(ub2 - 150) <= 1e-9, secs < 1.0]
    report(1, all(checks), f"f=1000: z_ts={z_ts:.10g} lb={lb:.10g} ub={ub:.10g} z_ms={z_ms:.10g}; "
                           f"f=100: z_ts={z_ts2:.10g} lb={lb2:.10g} ub={ub2:.10g}; {secs:.2f} s")


def test_criterion_2_parametric_tightness(report):
    t0 = time.perf_counter()
    worst = 0.0
    for lam in (0.0, 0.25, 0.5, 0.75, 1.0):
        for f, c in ((1000.0, 10.0), (100.0, 10.0), (500.0, 1.0)):
            inst, risk = example1_instance(f, c, lam)
            lb = vms_lower_bound(inst, risk)
            vms = lb.source.objective - solve_model(inst, risk, "ms").objective
            worst = max(worst, abs(vms - (1 - lam) * f), abs(lb.value - (1 - lam) * f))
    secs = time.perf_counter() - t0
    report(2, worst <= 1e-6 and secs < 5.0, f"15 cases, max deviation {worst:.2e}, {secs:.2f} s")


# -- 3, 5: the seeded batch ---------------------------------------------------------

def batch_configs():
    """50 configurations covering SD/SI, C in {2,3}, T in {3,4} and three risk weights."""
    shapes = list(itertools.product(("sd", "si"), (2, 3), (3, 4), (0.0, 0.5, 1.0)))
    return [GenConfig(branches=C, stages=T, facilities=3, sites=5, tree_kind=kind, lam=lam, seed=500 + k)
            for k, (kind, C, T, lam) in enumerate(itertools.islice(itertools.cycle(shapes), 50))]


# keeps the batch inside its time budget; an instance that reaches it is reported, not hidden
BATCH_NODE_CAP = 500


@pytest.fixture(scope="module")
def batch():
    out = []
    t0 = time.perf_counter()
    capped = ToleranceConfig().replace(node_limit=BATCH_NODE_CAP)
    for cfg in batch_configs():
        inst, risk = generate_synthetic(cfg)
        ts = solve_model(inst, risk, "ts", tol=capped, allow_limit=True)
        ms = solve_model(inst, risk, "ms", tol=capped, allow_limit=True)
        out.append(dict(
            cfg=cfg, inst=inst, risk=risk, ts=ts, ms=ms,
            lb=vms_lower_bound(inst, risk, ts).value,
            lb1=vms_lower_bound_lp(inst, risk).value,
            ub=vms_upper_bound(inst, risk).value,
            aa=approx_multistage(inst, risk),
        ))
    return out, time.perf_counter() - t0


def _exact(sol):
    return sol.result.status is Status.OPTIMAL


def test_criterion_3_sandwich(batch, report):
    rows, secs = batch
    bad, inexact = [], []
    for r in rows:
        ts, ms = r["ts"], r["ms"]
        slack = 1e-6 * abs(ts.objective)
        # the value lies in [z_ts - ms incumbent, z_ts - ms bound]; both ends coincide when solved
        low, high = ts.objective - ms.objective, ts.objective - ms.result.bound
        if not (max(r["lb"], r["lb1"]) <= low + slack and high <= r["ub"] + slack):
            bad.append(r["cfg"].seed)
        if not (_exact(ts) and _exact(ms)):
            inexact.append(f"{r['cfg'].seed} (ms gap {ms.result.gap:.1e})")
    report(3, not bad and not inexact and secs < 600,
           f"sandwich holds on {len(rows) - len(bad)}/{len(rows)} (failing seeds {bad}); "
           f"{len(rows) - len(inexact)}/{len(rows)} pairs solved to the 1e-6 gap within {BATCH_NODE_CAP} nodes"
           f"{' - not solved: ' + ', '.join(inexact) if inexact else ''}; batch with approximation {secs:.1f} s")


def test_criterion_5_approximation(batch, report):
    rows, _ = batch
    fails = []
    for r in rows:
        # the proven lower bound stands in for the optimum, which keeps (b) and (c) sound
        aa, exact = r["aa"], r["ms"].result.bound
        trace = aa.trace[1:]
        a = all(b <= x + 1e-9 * max(1.0, abs(x)) for x, b in zip(trace, trace[1:]))
        b = aa.objective - exact <= r["inst"].maint.sum() + 1e-6
        c = (not np.isfinite(aa.ratio_bound)) or aa.objective <= aa.ratio_bound * exact * (1 + 1e-9)
        feas = aa.max_violation <= 1e-6 * max(1.0, float(r["inst"].tree.demand.max()))
        if not (a and b and c and feas):
            fails.append((r["cfg"].seed, a, b, c, feas))
    ratios = []
    for rep in range(20):
        inst, risk = generate_synthetic(GenConfig(branches=2, stages=3, facilities=5, sites=10,
                                                  sigma=0.8, seed=900 + rep))
        ratios.append(approx_multistage(inst, risk).objective / solve_model(inst, risk, "ms").objective)
    mean_ratio = float(np.mean(ratios))
    report(5, not fails and mean_ratio <= 1.05,
           f"(a)-(c) hold on {len(rows) - len(fails)}/{len(rows)} {fails}; "
           f"(d) mean ratio {mean_ratio:.4f} over 20 (max {max(ratios):.4f}; "
           f"{'within' if mean_ratio <= 1.03 else 'above'} 1.03)")


# -- 4: closed forms against the explicit substructure MILPs ---------------------------

def test_criterion_4_closed_forms(report):
    worst, count = 0.0, 0
    for s in range(30):
        rng = np.random.default_rng(4000 + s)
        cfg = GenConfig(branches=2, stages=3, facilities=int(rng.integers(1, 4)), sites=int(rng.integers(2, 5)),
                        tree_kind=("sd", "si")[s % 2], seed=4000 + s, lam=float(rng.choice([0.0, 0.5, 1.0])))
        inst, risk = generate_synthetic(cfg)
        tree = inst.tree
        if s % 3 == 0:
            # allocations from an optimal relaxation, as the bounds use them
            sol = solve_model(inst, risk, "ts" if s % 2 else "ms", relax=True)
            y, u = sol.y, sol.u
        else:
            w = rng.dirichlet(np.ones(inst.M), size=(tree.n_nodes, inst.N)).transpose(0, 2, 1)
            y = w * tree.demand[:, None, :]
            u = rng.uniform(0, 5e4, tree.n_nodes)
            u[0] = 0.0
        for two_stage, fn in ((False, sp_rms), (True, sp_rts)):
            m, _, _ = build_substructure_model(inst, risk, y, u, two_stage=two_stage)
            res = solve_milp(m)
            q = fn(inst, risk, y, u).q
            worst = max(worst, abs(q - res.objective) / max(1.0, abs(res.objective)))
            count += res.status is Status.OPTIMAL
    report(4, worst <= 1e-7 and count == 60, f"60 solves ({count} optimal), max relative deviation {worst:.2e}")


# -- 6, 7: model-level properties ---------------------------------------------------------

def test_criterion_6_risk_monotonicity(report):
    worst = 0.0
    for s in range(10):
        inst, _ = generate_synthetic(GenConfig(branches=2 + s % 2, stages=3, facilities=3, sites=5,
                                               tree_kind=("sd", "si")[s % 2], seed=600 + s))
        for kind in ("ts", "ms"):
            z = [solve_model(inst, RiskProfile.constant(inst.T, lam, 0.95), kind).objective
                 for lam in (0.0, 0.5, 1.0)]
            worst = max(worst, (z[0] - z[1]) / abs(z[1]), (z[1] - z[2]) / abs(z[2]))
    report(6, worst <= 1e-7, f"10 instances x 2 models, largest decrease {max(worst, 0):.2e} relative")


def test_criterion_7_evaluator(report):
    worst = 0.0
    for s in range(20):
        inst, risk = generate_synthetic(GenConfig(branches=2 + s % 2, stages=3 + (s % 4 == 3), facilities=3,
                                                  sites=5, tree_kind=("sd", "si")[(s // 2) % 2],
                                                  lam=(0.0, 0.3, 0.7, 1.0)[s % 4], seed=700 + s))
        for kind in ("ms", "ts"):
            sol = solve_model(inst, risk, kind)
            val = evaluate_ecrm(inst, risk, sol.policy).objective
            worst = max(worst, abs(val - sol.objective) / abs(sol.objective))
    report(7, worst <= 1e-7, f"20 instances x 2 models, max relative deviation {worst:.2e}")


# -- 8, 10: the experiment harness ----------------------------------------------------------

DEFAULT = GenConfig(branches=2, stages=3, facilities=5, sites=10, sigma=0.8, lam=0.5, seed=8000)


def trend_specs(jobs=1):
    return {
        "sd": ExperimentSpec("lambda", (0.5,), reps=20, base=DEFAULT, jobs=jobs),
        "si": ExperimentSpec("lambda", (0.5,), reps=20, base=GenConfig(**{**DEFAULT.__dict__, "tree_kind": "si"}),
                             jobs=jobs),
        "lambda": ExperimentSpec("lambda", (0.0, 0.5, 1.0), reps=20, base=DEFAULT, jobs=jobs),
        "sigma": ExperimentSpec("sigma", (0.2, 0.8), reps=20, base=DEFAULT, jobs=jobs),
    }


@pytest.fixture(scope="module")
def trends():
    t0 = time.perf_counter()
    csv = {k: rows_to_csv(run_experiment(spec)) for k, spec in trend_specs().items()}
    return csv, time.perf_counter() - t0


def _cell_mean(text, value, key="rvms"):
    from riskcap.experiments import read_csv
    rows = read_csv(text)
    mean = next(r for r in rows if r["rep"] == "mean" and float(r["value"]) == value)
    return float(mean[key])


def test_criterion_8_trends(trends, report):
    csv, secs = trends
    errors = sum(1 for text in csv.values() for line in text.splitlines()[1:] if not line.endswith(","))
    sd, si = _cell_mean(csv["sd"], 0.5), _cell_mean(csv["si"], 0.5)
    lam = [_cell_mean(csv["lambda"], v) for v in (0.0, 0.5, 1.0)]
    sig = [_cell_mean(csv["sigma"], v) for v in (0.2, 0.8)]
    ok = (sd >= si and lam[0] >= lam[1] >= lam[2] and sig[0] <= sig[1] and errors == 0 and secs < 900)
    report(8, ok, f"RVMS SD {sd:.4f} vs SI {si:.4f}; lambda 0/0.5/1: {lam[0]:.4f} {lam[1]:.4f} {lam[2]:.4f}; "
                  f"sigma 0.2/0.8: {sig[0]:.4f} {sig[1]:.4f}; {errors} error rows; {secs:.1f} s")


def test_criterion_10_determinism(trends, report):
    csv, _ = trends
    again = {k: rows_to_csv(run_experiment(spec)) for k, spec in trend_specs(jobs=2).items()}
    same = [k for k in csv if strip_timing(csv[k]) == strip_timing(again[k])]
    report(10, len(same) == len(csv), f"{len(same)}/{len(csv)} harness CSVs byte-identical without wall times "
                                      f"(rerun with 2 worker processes)")


# -- 9: the MILP core ----------------------------------------------------------------------

def test_criterion_9_milp_core(report, monkeypatch):
    residuals = []
    original = dual_mod.attach_duals

    def recording(res, *args):
        original(res, *args)
        residuals.append(res.dual_residual)

    monkeypatch.setattr(dual_mod, "attach_duals", recording)
    rng = np.random.default_rng(9)
    worst, agree = 0.0, 0
    for _ in range(100):
        m = random_tiny_milp(rng)
        ref, _ = enumerate_milp(m)
        res = solve_milp(m)
        if ref is None:
            agree += res.status is Status.INFEASIBLE
            continue
        dev = abs(res.objective - ref) / max(1.0, abs(ref)) if res.ok else np.inf
        worst = max(worst, dev)
        agree += dev <= 1e-6
    for _ in range(50):
        lp = random_lp(rng, n=int(rng.integers(2, 12)), rows=int(rng.integers(1, 9)))
        for method in ("dual", "primal"):
            solve_lp(lp, method=method)
    max_res = max(residuals)
    report(9, agree == 100 and max_res <= 1e-6,
           f"{agree}/100 tiny MILPs match enumeration (max deviation {worst:.1e}); "
           f"{len(residuals)} LP solves, max duality residual {max_res:.1e}")
