"""Command-line entry points: generate, solve, train, bench.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical hard
failure.  Solver soft failures (iteration budget exhausted) are reported in
the per-instance rows and do not change the exit code.
"""

from __future__ import annotations

import argparse
import glob
import hashlib
import json
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np

from . import datasets, serialize
from .admm import MaxIterExceeded
from .estimators import ExactAdmm, InexactAdmm, LstmSolver
from .inexact import rho_effective, write_trace_csv
from .linalg import SingularMatrixError
from .problem import NonFiniteError, SolveMetrics, ValidationError, constraint_violations, eval_objective
from .training import write_train_log

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4

REPORT_COLUMNS = ("instance", "obj", "mean_ineq", "mean_eq", "n_fac", "iterations",
                  "time_s", "status")
BENCH_COLUMNS = ("instance", "obj", "time_s", "status")


def _git_revision() -> str:
    try:
        out = subprocess.run(["git", "rev-parse", "--short", "HEAD"],
                             capture_output=True, text=True, timeout=5,
                             cwd=os.path.dirname(os.path.abspath(__file__)))
        return out.stdout.strip() or "unknown"
    except OSError:
        return "unknown"


def _config_hash(args: argparse.Namespace) -> str:
    payload = json.dumps({k: repr(v) for k, v in sorted(vars(args).items())
                          if k != "func"}, sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def _write_report(path, columns, rows, args) -> None:
    lines = [
        f"# seed={getattr(args, 'seed', None)} git={_git_revision()} config={_config_hash(args)}",
        ",".join(columns),
    ]
    for row in rows:
        lines.append(",".join(repr(v) if isinstance(v, float) else str(v) for v in row))
    if rows:
        agg = ["mean"]
        for j in range(1, len(columns)):
            vals = [row[j] for row in rows if isinstance(row[j], (int, float))]
            agg.append(repr(float(np.mean(vals))) if vals else "")
        lines.append(",".join(agg))
    text = "\n".join(lines) + "\n"
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def _expand_problems(patterns: list[str]) -> list[str]:
    paths: list[str] = []
    for pat in patterns:
        hits = sorted(glob.glob(pat))
        paths.extend(hits if hits else [pat])
    return paths


def cmd_generate(args) -> int:
    spec = datasets.GeneratorSpec(
        family=args.family, n=args.n, m_ineq=args.m_ineq, m_eq=args.m_eq,
        seed=args.seed, count=args.count,
        alpha_reg=args.alpha_reg, lambda_svm=args.lambda_svm)
    problems = datasets.generate(spec)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = []
    for i, prob in enumerate(problems):
        name = f"instance_{i:05d}.qpf"
        serialize.save_problem(out_dir / name, prob, sparse=args.sparse)
        files.append(name)
    datasets.write_manifest(out_dir / "manifest.json", spec, files)
    print(f"wrote {len(files)} instances + manifest to {out_dir}")
    return EXIT_OK


def _solve_one(mode: str, prob, args, solver):
    t0 = time.perf_counter()
    status = "ok"
    trace = None
    if mode == "exact":
        try:
            it, metrics = solver.solve(prob)
        except MaxIterExceeded as err:
            it, metrics, status = err.iterate, err.metrics, "max_iter"
    elif mode == "inexact":
        try:
            result = solver.solve(prob)
        except MaxIterExceeded as err:
            result, status = err.result, "max_iter"
        it, metrics, trace = result.iterate, result.metrics, result
    else:  # lstm / lstm-fr
        restore = args.restore_iters if mode == "lstm-fr" else 0
        it, info = solver.solve(prob, restore_iters=restore)
        metrics = SolveMetrics(
            objective=eval_objective(prob, it.x),
            factorization_count=info["factorizations"],
            iteration_count=info["iterations"],
        )
        metrics.mean_ineq_violation, metrics.mean_eq_violation = \
            constraint_violations(prob, it.x)
    metrics.wall_time_seconds = time.perf_counter() - t0
    return it, metrics, status, trace


def _make_solver(mode: str, args):
    if mode == "exact":
        return ExactAdmm(eps_abs=args.eps_tol, eps_rel=args.eps_tol,
                         max_iter=args.max_iter)
    if mode == "inexact":
        return InexactAdmm(rho=args.rho, eps_tol=args.eps_tol, max_iter=args.max_iter,
                           record_trace=bool(args.trace))
    if not args.checkpoint:
        raise ValidationError(f"mode {mode} requires --checkpoint")
    return LstmSolver().load(args.checkpoint)


def cmd_solve(args) -> int:
    paths = _expand_problems(args.problems)
    solver = _make_solver(args.mode, args)
    rows = []
    for path in paths:
        prob = serialize.load_problem(path)
        it, metrics, status, result = _solve_one(args.mode, prob, args, solver)
        rows.append((Path(path).name, metrics.objective, metrics.mean_ineq_violation,
                     metrics.mean_eq_violation, metrics.factorization_count,
                     metrics.iteration_count, metrics.wall_time_seconds, status))
        if args.trace and result is not None:
            trace_dir = Path(args.trace)
            trace_dir.mkdir(parents=True, exist_ok=True)
            write_trace_csv(trace_dir / (Path(path).stem + "_trace.csv"),
                            result.reports, result.energies, result.rho_eff)
    _write_report(args.out, REPORT_COLUMNS, rows, args)
    return EXIT_OK


def cmd_train(args) -> int:
    manifest = datasets.read_manifest(Path(args.data) / "manifest.json")
    base = Path(args.data)
    split: dict[str, list] = {"train": [], "val": [], "test": []}
    for entry in manifest["instances"]:
        split[entry["split"]].append(serialize.load_problem(base / entry["file"]))
    solver = LstmSolver(iterations=args.K, truncation=args.T or args.K,
                        hidden=args.hidden, learning_rate=args.lr,
                        batch_size=args.batch, patience=args.patience,
                        max_epochs=args.max_epochs, seed=args.seed,
                        violation_tolerance=args.violation_tolerance)
    start_epoch = 0
    if args.resume:
        solver.load(args.resume)
        start_epoch = int(solver.meta_.get("next_epoch", 0))
        solver.max_epochs = args.max_epochs
    solver.fit(split["train"], split["val"] or None, start_epoch=start_epoch)
    next_epoch = (solver.history_[-1]["epoch"] + 1) if solver.history_ else start_epoch
    solver.save(args.checkpoint, extra_meta={"next_epoch": float(next_epoch)})
    if args.log:
        write_train_log(args.log, solver.history_)
    print(f"trained {len(solver.history_)} epochs; checkpoint at {args.checkpoint}")
    return EXIT_OK


def cmd_bench(args) -> int:
    from concurrent.futures import ThreadPoolExecutor

    paths = _expand_problems(args.problems)[:100]  # batch cap
    problems = [serialize.load_problem(p) for p in paths]
    solver = _make_solver(args.mode, args)
    workers = int(os.environ.get("LADMM_NUM_THREADS", "0")) or min(args.batch_size,
                                                                   os.cpu_count() or 1)

    def work(item):
        idx, prob = item
        t0 = time.perf_counter()
        status = "ok"
        try:
            _, metrics, status, _ = _solve_one(args.mode, prob, args, solver)
            obj = metrics.objective
        except MaxIterExceeded:
            obj, status = float("nan"), "max_iter"
        return idx, obj, time.perf_counter() - t0, status

    t_start = time.perf_counter()
    with ThreadPoolExecutor(max_workers=max(workers, 1)) as pool:
        results = list(pool.map(work, enumerate(problems)))
    total = time.perf_counter() - t_start
    rows = [(Path(paths[idx]).name, obj, dt, status) for idx, obj, dt, status in results]
    _write_report(args.out, BENCH_COLUMNS, rows, args)
    print(f"solved {len(rows)} instances in {total:.3f}s "
          f"({len(rows) / total:.2f} inst/s, {workers} workers)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ladmm",
                                     description="QP solver toolkit: ADMM engines, "
                                                 "learned inner solver, generators")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="write benchmark instances + manifest")
    gen.add_argument("--family", required=True, choices=datasets.FAMILIES)
    gen.add_argument("--n", type=int, required=True)
    gen.add_argument("--m-ineq", dest="m_ineq", type=int, default=0)
    gen.add_argument("--m-eq", dest="m_eq", type=int, default=0)
    gen.add_argument("--count", type=int, default=1)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--alpha-reg", dest="alpha_reg", type=float, default=1e-2)
    gen.add_argument("--lambda-svm", dest="lambda_svm", type=float, default=None)
    gen.add_argument("--sparse", action="store_true")
    gen.add_argument("--out", required=True)
    gen.set_defaults(func=cmd_generate)

    slv = sub.add_parser("solve", help="solve problem files")
    slv.add_argument("--mode", required=True, choices=("exact", "inexact", "lstm", "lstm-fr"))
    slv.add_argument("--checkpoint", default=None)
    slv.add_argument("--eps-tol", dest="eps_tol", type=float, default=1e-6)
    slv.add_argument("--rho", type=float, default=None)
    slv.add_argument("--max-iter", dest="max_iter", type=int, default=5000)
    slv.add_argument("--restore-iters", dest="restore_iters", type=int, default=20)
    slv.add_argument("--trace", default=None, help="directory for condition CSVs")
    slv.add_argument("--seed", type=int, default=0)
    slv.add_argument("--out", default=None, help="report CSV (stdout if omitted)")
    slv.add_argument("problems", nargs="+")
    slv.set_defaults(func=cmd_solve)

    trn = sub.add_parser("train", help="train the learned solver on a dataset")
    trn.add_argument("--data", required=True, help="directory with manifest.json")
    trn.add_argument("--K", type=int, default=100)
    trn.add_argument("--T", type=int, default=None)
    trn.add_argument("--hidden", type=int, default=64)
    trn.add_argument("--lr", type=float, default=5e-5)
    trn.add_argument("--batch", type=int, default=2)
    trn.add_argument("--patience", type=int, default=50)
    trn.add_argument("--max-epochs", dest="max_epochs", type=int, default=500)
    trn.add_argument("--violation-tolerance", dest="violation_tolerance",
                     type=float, default=5e-2)
    trn.add_argument("--seed", type=int, default=0)
    trn.add_argument("--resume", default=None)
    trn.add_argument("--checkpoint", required=True, help="output checkpoint path")
    trn.add_argument("--log", default=None, help="training log CSV")
    trn.set_defaults(func=cmd_train)

    ben = sub.add_parser("bench", help="solve a batch concurrently and time it")
    ben.add_argument("--mode", required=True, choices=("exact", "inexact", "lstm", "lstm-fr"))
    ben.add_argument("--checkpoint", default=None)
    ben.add_argument("--eps-tol", dest="eps_tol", type=float, default=1e-6)
    ben.add_argument("--rho", type=float, default=None)
    ben.add_argument("--max-iter", dest="max_iter", type=int, default=5000)
    ben.add_argument("--restore-iters", dest="restore_iters", type=int, default=20)
    ben.add_argument("--batch-size", dest="batch_size", type=int, default=1)
    ben.add_argument("--trace", default=None)
    ben.add_argument("--seed", type=int, default=0)
    ben.add_argument("--out", default=None)
    ben.add_argument("problems", nargs="+")
    ben.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValidationError, serialize.FormatError, FileNotFoundError,
            datasets.RankDeficientA, json.JSONDecodeError) as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except (NonFiniteError, SingularMatrixError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
