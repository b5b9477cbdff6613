"""Command-line entry point: ``iscc solve|eval|sweep|oracle``."""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np


def _plan(path):
    from .harness import ExperimentPlan
    return ExperimentPlan.load(path)


def cmd_solve(args) -> int:
    from .harness import _write_csv, design_frame, frame_inputs, point_setup
    from .pda import write_trace_csv
    plan = _plan(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seed = plan.effective_seed()
    setup = point_setup(plan, plan.points()[0], seed)
    frame, aux = frame_inputs(setup, seed, 0)
    status = 0
    for method in plan.methods:
        x, scales, d, report = design_frame(method, setup, frame, aux)
        _write_csv(out / f"waveform_{method}.csv", ["slot", "antenna", "re", "im"],
                   [(l, n, x[l, n].real, x[l, n].imag) for l in range(x.shape[0]) for n in range(x.shape[1])])
        rec = report.to_dict()
        if d is not None:
            rec["d"] = [[float(v.real), float(v.imag)] for v in np.atleast_1d(d)]
        with open(out / f"report_{method}.json", "w") as fh:
            json.dump(rec, fh, indent=1)
        trace = report.merged_trace()
        if trace:
            write_trace_csv(out / f"trace_0_{method}.csv", trace)
        print(f"{method}: converged={report.converged} infeasible={report.infeasible} "
              f"outer={report.outer_iters} objective={rec['objective_trace'][-1] if rec['objective_trace'] else 'n/a'}")
        if report.infeasible:
            status = 2
    return status


def _run(args, single: bool) -> int:
    from .harness import run_experiment
    plan = _plan(args.config)
    if single:
        plan = replace(plan, sweep_variable=None, sweep_values=[])
    rows = run_experiment(plan, args.out, workers=args.workers, log=lambda m: print(m, file=sys.stderr))
    for r in rows:
        print(f"point={r['point']} method={r['method']} min_scnr={r['min_scnr']:.4g} "
              f"ser_user={r['ser_user_mean']:.3g} ser_eve={r['ser_eve_min']:.3g} jsd={r['jsd']:.3g}")
    n_jobs = len(plan.points()) * len(plan.methods)
    return 0 if len(rows) == n_jobs else 1


def cmd_oracle(args) -> int:
    from .oracles import run_suite
    tol = 1e-6 if args.suite == "projections" else 1e-5
    results = run_suite(args.suite, seed=args.seed, cases=args.cases, tol=tol)
    failed = 0
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
        failed += not ok
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="iscc", description="Covert symbol-level ISCC waveform design")
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("solve", help="design one frame per method at the base configuration")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_solve)
    for name, single, text in (("eval", True, "design and evaluate the base configuration"),
                               ("sweep", False, "design and evaluate every sweep point")):
        e = sub.add_parser(name, help=text)
        e.add_argument("--config", required=True)
        e.add_argument("--out", required=True)
        e.add_argument("--workers", type=int, default=None, help="process pool size (default ISCC_THREADS or 1)")
        e.set_defaults(func=lambda a, single=single: _run(a, single))
    o = sub.add_parser("oracle", help="cross-check the closed-form projections against independent oracles")
    o.add_argument("--suite", default="projections", choices=["projections", "conic"])
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--cases", type=int, default=100)
    o.set_defaults(func=cmd_oracle)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return int(args.func(args))
    except (ValueError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
