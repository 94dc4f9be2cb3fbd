"""Command-line entry point: ``riskcap gen | solve | bounds | experiment | validate``.

Exit codes: 0 success, 2 usage error, 3 solver failure, 4 invalid input.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .approx import ApproxConfig, approx_multistage, approx_twostage
from .bounds import DELTA1, DELTA2, compute_bounds
from .errors import DomainError, SolverError, ValidationError
from .experiments import AXES, ExperimentSpec, rows_to_csv, run_experiment, run_fixture
from .instance import GenConfig, example1_instance, generate_synthetic, read_instance, write_instance
from .milp import ToleranceConfig
from .models import build_multistage, build_twostage, cumulative, evaluate_ecrm, Policy, solve_model

EXIT_OK, EXIT_USAGE, EXIT_SOLVER, EXIT_INVALID = 0, 2, 3, 4

log = logging.getLogger("riskcap")


def _tol(args) -> ToleranceConfig:
    tol = ToleranceConfig()
    over = {}
    if args.tol_gap is not None:
        over["rel_gap"] = args.tol_gap
    if args.tol_int is not None:
        over["integrality"] = args.tol_int
    if args.tol_feas is not None:
        over["primal_feas"] = args.tol_feas
    if args.node_limit is not None:
        over["node_limit"] = args.node_limit
    return tol.replace(**over) if over else tol


def _gen_config(args) -> GenConfig:
    return GenConfig(branches=args.branches, stages=args.stages, facilities=args.facilities,
                     sites=args.sites, tree_kind=args.tree, sigma=args.sigma, pattern=args.pattern,
                     seed=args.seed, lam=args.lam, alpha=args.alpha)


def _write(path, text):
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_gen(args) -> int:
    if args.example1:
        inst, risk = example1_instance(args.f, args.c, args.lam)
    else:
        inst, risk = generate_synthetic(_gen_config(args))
    out = args.out or "instance.json"
    write_instance(out, inst, risk)
    m, _ = build_multistage(inst, risk)
    m2, _ = build_twostage(inst, risk)
    print(f"wrote {out}: {inst.tree.n_nodes} nodes, T={inst.T}, M={inst.M}, N={inst.N}")
    print(f"multistage: {m.n_vars} variables, {m.n_rows} rows; two-stage: {m2.n_vars} variables, {m2.n_rows} rows")
    return EXIT_OK


def _solution_summary(inst, x, y, objective, seconds):
    tree = inst.tree
    cum = cumulative(tree, x)
    s = tree.stage - 1
    per_stage = [float(tree.prob[tree.stage == t] @ x[tree.stage == t].sum(axis=1))
                 for t in range(1, inst.T + 1)]
    maint = float(tree.prob @ np.einsum("nm,nm->n", inst.maint[s], cum))
    oper = float(tree.prob @ np.einsum("nmj,nmj->n", inst.op[s], y))
    return {"objective": objective, "expansion_per_stage": per_stage,
            "expected_maintenance": maint, "expected_operational": oper, "seconds": seconds}


def cmd_solve(args) -> int:
    inst, risk = read_instance(args.instance)
    tol = _tol(args)
    t0 = time.perf_counter()
    extra = {}
    if args.method == "exact":
        sol = solve_model(inst, risk, args.model, tol=tol)
        x, y, obj = sol.x, sol.y, sol.objective
        extra = {"eta": sol.eta.tolist(), "u": sol.u.tolist(), "nodes": sol.result.nodes,
                 "gap": sol.result.gap}
    else:
        if args.model == "det":
            raise DomainError("the approximation covers the ms and ts models only")
        run = approx_multistage if args.model == "ms" else approx_twostage
        res = run(inst, risk, ApproxConfig(eps=args.eps, max_iters=args.max_iters), tol=tol)
        x, y, obj = res.x, res.y, res.objective
        extra = res.to_dict()
    seconds = time.perf_counter() - t0
    summary = _solution_summary(inst, np.asarray(x), np.asarray(y), obj, seconds)
    print(f"model {args.model} ({args.method}): objective {obj:.10g}")
    if args.model != "det":
        rep = evaluate_ecrm(inst, risk, Policy(np.asarray(x), np.asarray(y)))
        print(f"  re-evaluated risk-adjusted cost {rep.objective:.10g}")
    print("  mean expansion per stage: " + " ".join(f"|x_{t + 1}|={v:.4g}"
                                                    for t, v in enumerate(summary["expansion_per_stage"])))
    print(f"  expected maintenance {summary['expected_maintenance']:.6g}, "
          f"operational {summary['expected_operational']:.6g}")
    print(f"  wall time {seconds:.3f} s")
    if args.method == "approx":
        print(f"  iterations {extra['iterations']}, trace {', '.join(f'{v:.10g}' for v in extra['trace'])}")
    if args.out:
        doc = dict(summary, model=args.model, method=args.method, x=np.asarray(x).tolist(),
                   y=np.asarray(y).tolist())
        doc.update({k: v for k, v in extra.items() if k not in doc})
        Path(args.out).write_text(json.dumps(doc, indent=1) + "\n")
    return EXIT_OK


def cmd_bounds(args) -> int:
    inst, risk = read_instance(args.instance)
    rep = compute_bounds(inst, risk, args.delta1, args.delta2, exact=args.exact, tol=_tol(args))
    text = rep.to_csv() if args.format == "csv" else rep.to_json() + "\n"
    _write(args.out, text)
    if args.out:
        print(f"recommendation: {rep.recommendation.value}")
    return EXIT_OK


def cmd_experiment(args) -> int:
    base = _gen_config(args)
    values = args.values or [getattr(base, AXES[args.axis][0])]
    spec = ExperimentSpec(axis=args.axis, values=tuple(values), reps=args.reps, base=base,
                          delta1=args.delta1, delta2=args.delta2, approx=not args.no_approx,
                          timing=not args.no_timing, jobs=args.jobs, tol=_tol(args))
    if args.instance:
        inst, risk = read_instance(args.instance)
        rows = run_fixture(inst, risk, spec, label=Path(args.instance).name)
    else:
        rows = run_experiment(spec)
    _write(args.out, rows_to_csv(rows))
    failed = sum(1 for r in rows if r["error"])
    if failed:
        log.warning("%d row(s) carry errors", failed)
    return EXIT_OK


def cmd_validate(args) -> int:
    try:
        inst, risk = read_instance(args.instance)
    except ValidationError as exc:
        for where, msg in exc.violations:
            print(f"invalid: {where}: {msg}")
        return EXIT_INVALID
    print(f"ok: {inst.tree.n_nodes} nodes, T={inst.T}, M={inst.M}, N={inst.N}")
    return EXIT_OK


def _add_tol(p):
    g = p.add_argument_group("solver tolerances")
    g.add_argument("--tol-gap", type=float, help="relative optimality gap")
    g.add_argument("--tol-int", type=float, help="integrality tolerance")
    g.add_argument("--tol-feas", type=float, help="primal feasibility tolerance")
    g.add_argument("--node-limit", type=int, help="branch-and-bound node cap")


def _add_gen(p):
    p.add_argument("--tree", choices=["sd", "si"], default="sd")
    p.add_argument("--branches", type=int, default=2)
    p.add_argument("--stages", type=int, default=3)
    p.add_argument("--facilities", type=int, default=5)
    p.add_argument("--sites", type=int, default=10)
    p.add_argument("--sigma", type=float, default=0.8)
    p.add_argument("--pattern", choices=["grid", "I", "II", "III", "IV"], default="grid")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lambda", dest="lam", type=float, default=0.5)
    p.add_argument("--alpha", type=float, default=0.95)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="riskcap", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("gen", help="write an instance file")
    _add_gen(p)
    p.add_argument("--example1", action="store_true", help="the one-facility two-branch illustration")
    p.add_argument("--f", type=float, default=1000.0)
    p.add_argument("--c", type=float, default=10.0)
    p.add_argument("-o", "--out")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("solve", help="solve one model")
    p.add_argument("instance")
    p.add_argument("--model", choices=["ms", "ts", "det"], default="ms")
    p.add_argument("--method", choices=["exact", "approx"], default="exact")
    p.add_argument("--eps", type=float, default=1e-6)
    p.add_argument("--max-iters", type=int, default=100)
    p.add_argument("-o", "--out", help="write the full solution as JSON")
    _add_tol(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("bounds", help="bounds and model recommendation")
    p.add_argument("instance")
    p.add_argument("--delta1", type=float, default=DELTA1)
    p.add_argument("--delta2", type=float, default=DELTA2)
    p.add_argument("--exact", action="store_true", help="also solve the multistage MILP")
    p.add_argument("--format", choices=["json", "csv"], default="json")
    p.add_argument("-o", "--out")
    _add_tol(p)
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("experiment", help="seeded sweep, CSV output")
    _add_gen(p)
    p.add_argument("--axis", choices=sorted(AXES), default="lambda")
    p.add_argument("--values", nargs="+", type=float)
    p.add_argument("--reps", type=int, default=20)
    p.add_argument("--instance", help="run the harness on this instance file instead of a sweep")
    p.add_argument("--delta1", type=float, default=DELTA1)
    p.add_argument("--delta2", type=float, default=DELTA2)
    p.add_argument("--no-approx", action="store_true")
    p.add_argument("--no-timing", action="store_true", help="leave wall-time columns empty")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("-o", "--out")
    _add_tol(p)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("validate", help="check an instance file")
    p.add_argument("instance")
    p.set_defaults(func=cmd_validate)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (DomainError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
