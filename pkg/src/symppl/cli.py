"""Command-line front end.

Subcommands: ``analyze``, ``run``, ``gen-data``, ``bench``,
``enumerate-plans``.  Exit codes: 0 ok, 1 usage error, 2 analyze verdict
is unsatisfiable, 3 runtime error.
"""

from __future__ import annotations

import argparse
import json
import os
import signal
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import benchmarks as bm
from .analysis import analyze
from .checker import MAX_PLAN_SITES, apply_plan, check, plan_annotations, rv_sites
from .interface import CastError
from .parser import parse, print_program
from .runtime import DegenerateWeights, Mixture, run_model
from .ds import DsBackend
from .ssi import SsiBackend
from .sym import Distr, EvalError, distr_to_json


def _load_program(path: str):
    with open(path) as fh:
        source = fh.read()
    program = parse(source)
    diags = check(program)
    if diags:
        for d in diags:
            print(f"error: {d}", file=sys.stderr)
        raise SystemExit(1)
    return program


def _backend(method: str):
    return SsiBackend() if method == "ssi" else DsBackend()


def _emit(obj) -> None:
    print(json.dumps(obj, sort_keys=True))


def _tree_to_json(tree):
    if isinstance(tree, Distr):
        return distr_to_json(tree)
    if isinstance(tree, tuple):
        return {"tuple": [_tree_to_json(x) for x in tree]}
    return [_tree_to_json(x) for x in tree]


def _mixture_to_json(mix: Mixture):
    return {
        "components": [
            {"weight": w, "outputs": _tree_to_json(tree)} for w, tree in mix.components
        ],
        "casts": [{"rv": rid, "label": label} for rid, label in mix.casts],
        "output_casts": mix.output_casts,
    }


def cmd_analyze(args) -> int:
    program = _load_program(args.file)
    if args.all_plans:
        sites = rv_sites(program)
        if len(sites) > MAX_PLAN_SITES:
            print("error: too many annotation sites to enumerate", file=sys.stderr)
            return 1
        plans = []
        t0 = time.perf_counter()
        for plan in range(2 ** len(sites)):
            verdict = analyze(apply_plan(program, plan), args.method)
            plans.append({
                "plan": plan,
                "annotations": {k: str(v) for k, v in plan_annotations(program, plan).items()},
                "verdict": "satisfiable" if verdict.satisfiable else "fail",
                "witnesses": [list(w) for w in verdict.witnesses],
                "elapsed_ms": round(verdict.elapsed_ms, 3),
            })
        _emit({
            "method": args.method,
            "total_plans": len(plans),
            "identified": sum(p["verdict"] == "satisfiable" for p in plans),
            "plans": plans,
            "elapsed_ms": round((time.perf_counter() - t0) * 1000.0, 3),
        })
        return 0
    if args.plan is not None:
        program = apply_plan(program, args.plan)
    verdict = analyze(program, args.method)
    _emit({
        "method": args.method,
        "verdict": "satisfiable" if verdict.satisfiable else "fail",
        "witnesses": [list(w) for w in verdict.witnesses],
        "elapsed_ms": round(verdict.elapsed_ms, 3),
    })
    return 0 if verdict.satisfiable else 2


def _load_data(args, benchmark: str | None):
    if args.data:
        rows = bm.read_csv(args.data)
        if benchmark is not None:
            spec = bm.BENCHMARKS[benchmark]
            value = spec.data_value(rows)
            if benchmark == "slam":
                from .sym import VConst, VLst, VTup

                value = VLst(tuple(VTup((VConst(bool(r.items[0].v)), r.items[1])) for r in value.items))
            return value
        from .sym import VConst, VLst, VTup

        if rows and len(rows[0]) == 1:
            return VLst(tuple(VConst(r[0]) for r in rows))
        return VLst(tuple(VTup(tuple(VConst(x) for x in r)) for r in rows))
    if benchmark is not None:
        value, _ = bm.data_for(benchmark, args.data_seed, args.timesteps, args.variant)
        return value
    from .sym import VLst

    return VLst(())


def cmd_run(args) -> int:
    program = _load_program(args.file)
    if args.plan is not None:
        program = apply_plan(program, args.plan)
    data = _load_data(args, args.benchmark)
    backend = _backend(args.method)
    t0 = time.perf_counter()
    try:
        mix = run_model(program, args.particles, args.seed, backend, data,
                        strict_casts=args.strict_casts)
    except (CastError, DegenerateWeights, EvalError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    out = _mixture_to_json(mix)
    out["particles"] = args.particles
    out["seed"] = args.seed
    out["method"] = args.method
    out["wall_ms"] = round((time.perf_counter() - t0) * 1000.0, 3)
    _emit(out)
    return 0


def cmd_gen_data(args) -> int:
    if args.benchmark not in bm.BENCHMARKS:
        print(f"error: unknown benchmark {args.benchmark}", file=sys.stderr)
        return 1
    spec = bm.BENCHMARKS[args.benchmark]
    rows, truth = bm.generate(args.benchmark, args.seed, args.timesteps, args.variant)
    prefix = args.out or args.benchmark
    bm.write_csv(f"{prefix}_data.csv", list(spec.data_columns), rows)
    bm.write_csv(f"{prefix}_truth.csv", list(spec.truth_columns),
                 bm.truth_rows(spec, truth, args.timesteps))
    _emit({"data": f"{prefix}_data.csv", "truth": f"{prefix}_truth.csv",
           "timesteps": args.timesteps, "seed": args.seed, "variant": args.variant})
    return 0


class _TrialTimeout(Exception):
    pass


def _bench_trial(payload):
    (name, plan, method, particles, trial_seed, timesteps, strict, timeout_s) = payload
    spec = bm.BENCHMARKS[name]
    program = apply_plan(spec.program(), plan)
    data, truth = bm.data_for(name, trial_seed, timesteps)
    backend = _backend(method)
    t0 = time.perf_counter()
    if timeout_s > 0 and hasattr(signal, "SIGALRM"):
        def _expire(signum, frame):
            raise _TrialTimeout
        old = signal.signal(signal.SIGALRM, _expire)
        signal.alarm(timeout_s)
    else:
        old = None
    try:
        mix = run_model(program, particles, trial_seed, backend, data, strict_casts=strict)
    except _TrialTimeout:
        return {"error": f"trial timed out after {timeout_s}s"}
    except (CastError, DegenerateWeights, EvalError) as exc:
        return {"error": str(exc)}
    finally:
        if old is not None:
            signal.alarm(0)
            signal.signal(signal.SIGALRM, old)
    wall = (time.perf_counter() - t0) * 1000.0
    mses = bm.mse_per_variable(name, mix, truth)
    return {"wall_ms": wall, "mse": mses, "casts": len(mix.casts)}


def cmd_bench(args) -> int:
    if args.benchmark not in bm.BENCHMARKS:
        print(f"error: unknown benchmark {args.benchmark}", file=sys.stderr)
        return 1
    spec = bm.BENCHMARKS[args.benchmark]
    plans = [int(p) for p in args.plans.split(",")]
    particle_counts = [int(p) for p in args.particles.split(",")]
    if not args.allow_casts:
        program = spec.program()
        for plan in plans:
            if not analyze(apply_plan(program, plan), args.method).satisfiable:
                print(f"error: plan {plan} is unsatisfiable under {args.method} "
                      "(use --allow-casts to run anyway)", file=sys.stderr)
                return 1
    workers = int(os.environ.get("SYMPPL_WORKERS", "1"))
    jobs = []
    for plan in plans:
        for n in particle_counts:
            for trial in range(args.trials):
                jobs.append((args.benchmark, plan, args.method, n,
                             args.seed + trial, args.timesteps, False, args.timeout))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_bench_trial, jobs))
    else:
        results = [_bench_trial(j) for j in jobs]
    writer = sys.stdout
    var_names = [v.name for v in spec.variables]
    header = ["plan", "particles", "trials", "median_wall_ms", "mean_casts"]
    for v in var_names:
        header += [f"p10_mse_{v}", f"p50_mse_{v}", f"p90_mse_{v}"]
    print(",".join(header), file=writer)
    idx = 0
    for plan in plans:
        for n in particle_counts:
            chunk = results[idx:idx + args.trials]
            idx += args.trials
            ok = [r for r in chunk if "error" not in r]
            if not ok:
                continue
            walls = sorted(r["wall_ms"] for r in ok)
            row = [str(plan), str(n), str(len(ok)),
                   repr(float(np.median(walls))),
                   repr(float(np.mean([r["casts"] for r in ok])))]
            for v in var_names:
                vals = np.array([r["mse"][v] for r in ok])
                row += [repr(float(np.percentile(vals, q))) for q in (10, 50, 90)]
            print(",".join(row), file=writer)
    return 0


def cmd_enumerate_plans(args) -> int:
    program = _load_program(args.file)
    sites = rv_sites(program)
    if len(sites) > MAX_PLAN_SITES:
        print("error: too many annotation sites to enumerate", file=sys.stderr)
        return 1
    out = {
        "sites": [s.name for s in sites],
        "total_plans": 2 ** len(sites),
        "plans": [
            {"plan": p, "annotations": {k: str(v) for k, v in plan_annotations(program, p).items()}}
            for p in range(2 ** len(sites))
        ],
    }
    if args.print_programs:
        out["programs"] = [print_program(apply_plan(program, p)) for p in range(2 ** len(sites))]
    _emit(out)
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="symppl")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="plan satisfiability analysis")
    p.add_argument("file")
    p.add_argument("--method", choices=["ssi", "ds"], default="ssi")
    p.add_argument("--plan", type=int, default=None)
    p.add_argument("--all-plans", action="store_true")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("run", help="run the particle filter")
    p.add_argument("file")
    p.add_argument("--method", choices=["ssi", "ds"], default="ssi")
    p.add_argument("--plan", type=int, default=None)
    p.add_argument("--particles", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--data", default=None, help="observation CSV")
    p.add_argument("--benchmark", default=None, help="schema for --data / generation")
    p.add_argument("--data-seed", type=int, default=0)
    p.add_argument("--timesteps", type=int, default=10)
    p.add_argument("--variant", default="prior")
    p.add_argument("--strict-casts", action="store_true")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("gen-data", help="forward-simulate benchmark data")
    p.add_argument("benchmark")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--timesteps", type=int, default=100)
    p.add_argument("--variant", default="prior", choices=["prior", "cruising", "descent"])
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("bench", help="accuracy/runtime profile as CSV")
    p.add_argument("benchmark")
    p.add_argument("--method", choices=["ssi", "ds"], default="ssi")
    p.add_argument("--plans", required=True, help="comma-separated plan indices")
    p.add_argument("--particles", default="16", help="comma-separated particle counts")
    p.add_argument("--trials", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--timesteps", type=int, default=50)
    p.add_argument("--timeout", type=int, default=60, help="per-trial budget in seconds")
    p.add_argument("--allow-casts", action="store_true")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("enumerate-plans", help="list all annotation plans")
    p.add_argument("file")
    p.add_argument("--print-programs", action="store_true")
    p.set_defaults(func=cmd_enumerate_plans)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SystemExit as exc:
        return int(exc.code or 0)
    except BrokenPipeError:
        return 0


if __name__ == "__main__":
    sys.exit(main())
