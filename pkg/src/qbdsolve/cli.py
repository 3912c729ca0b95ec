"""Command line: solve, compare, bench and validate.

Exit codes: 0 success, 2 method not applicable, 3 numerical failure,
4 input error.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import warnings
from pathlib import Path

import numpy as np

from .bench import BENCH_ALGORITHMS, BENCH_FAMILIES, run_bench, write_bench_csv
from .core import LevelBlockChain, check_des_columns, validate_generator
from .errors import ApplicabilityError, InputError, QBDError
from .models import ModelSpec, parse_model_spec
from .solvers import METHODS, Problem, SolveResult, applicable_methods, compare_results, solve

EXIT_OK = 0
EXIT_APPLICABILITY = 2
EXIT_NUMERICAL = 3
EXIT_INPUT = 4

SOLVE_CSV_COLUMNS = ("level", "position", "state", "probability")
COMPARE_CSV_COLUMNS = ("method_a", "method_b", "linf_error", "l1_error", "tolerance", "passed", "error")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_INPUT)


# ---------------------------------------------------------------------------
# input
# ---------------------------------------------------------------------------


def _chain_from_blocks(data: dict) -> LevelBlockChain:
    blocks = data["blocks"]
    try:
        W = [np.asarray(b, dtype=float) for b in blocks["W"]]
        U = [np.asarray(b, dtype=float) for b in blocks.get("U", [])]
        D = [np.asarray(b, dtype=float) for b in blocks.get("D", [])]
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"blocks: expected W, U, D lists of matrices ({exc})") from exc
    chain = LevelBlockChain.from_blocks(W, U, D)
    report = validate_generator(chain)
    if not report.ok:
        raise InputError("blocks do not form a generator: " + "; ".join(str(i) for i in report.issues[:5]))
    return chain


def load_problem(path) -> tuple[Problem, ModelSpec | None]:
    """Read a model spec, or a raw block chain ``{"blocks": {"W": ..., "U": ..., "D": ...}}``."""
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON ({exc})") from exc
    if isinstance(data, dict) and "blocks" in data:
        return Problem.from_chain(_chain_from_blocks(data)), None
    spec = parse_model_spec(path)
    return Problem.from_spec(spec), spec


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------


def _clean(x):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to None."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, np.integer):
        return int(x)
    return x


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return "" if not math.isfinite(x) else f"{float(x):.17g}"
    return "" if x is None else str(x)


def _state_str(label) -> str:
    return ";".join(str(int(v)) for v in label) if isinstance(label, tuple) else str(label)


def solve_report(result: SolveResult, spec: ModelSpec | None, top_k: int | None = None) -> dict:
    pi = result.distribution()
    order = np.arange(pi.size)
    if top_k is not None:
        order = np.argsort(-pi, kind="stable")[:top_k]
    return _clean(
        {
            "method_requested": result.method_requested,
            "method_used": result.method_used,
            "variant": result.info.get("variant", result.method_used),
            "spec": spec.to_dict() if spec is not None else None,
            "num_states": int(pi.size),
            "level_sizes": list(result.state.level_sizes),
            "residuals": result.residuals,
            "timings": {"build_seconds": result.info.get("build_seconds"), "solve_seconds": result.seconds},
            "info": {k: v for k, v in result.info.items() if k != "build_seconds"},
            "level_marginal": result.state.level_marginal(),
            "pi_top_k": top_k,
            "pi": [{"state": list(result.labels[k]), "probability": float(pi[k])} for k in order],
        }
    )


def write_json(path, payload) -> None:
    try:
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2, allow_nan=False)
            fh.write("\n")
    except OSError as exc:
        raise InputError(f"cannot write {path}: {exc}") from exc


def write_solve_csv(path, result: SolveResult, top_k: int | None = None) -> None:
    pi = result.distribution()
    sizes = result.state.level_sizes
    level = np.repeat(np.arange(len(sizes)), sizes)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    order = np.arange(pi.size) if top_k is None else np.argsort(-pi, kind="stable")[:top_k]
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(SOLVE_CSV_COLUMNS)
            for k in order:
                m = int(level[k])
                w.writerow([m, int(k - offsets[m]), _state_str(result.labels[k]), _fmt(pi[k])])
    except OSError as exc:
        raise InputError(f"cannot write {path}: {exc}") from exc


def emit_report(payload, path, fmt: str = "json", result: SolveResult | None = None, top_k=None) -> None:
    """Write a report as JSON (full fidelity) or CSV (flat records)."""
    if fmt == "json":
        write_json(path, payload)
    elif fmt == "csv":
        if result is not None:
            write_solve_csv(path, result, top_k)
        else:
            try:
                with open(path, "w", newline="") as fh:
                    w = csv.writer(fh)
                    w.writerow(COMPARE_CSV_COLUMNS)
                    for row in payload.get("pairs", []):
                        w.writerow([_fmt(row.get(c)) for c in COMPARE_CSV_COLUMNS])
            except OSError as exc:
                raise InputError(f"cannot write {path}: {exc}") from exc
    else:
        raise InputError(f"unknown report format {fmt!r}")


def _error_payload(exc: Exception) -> dict:
    return {"type": type(exc).__name__, "message": str(exc), "exit_code": getattr(exc, "exit_code", EXIT_NUMERICAL)}


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_solve(args) -> int:
    problem, spec = load_problem(args.spec)
    result = solve(problem, args.method)
    payload = solve_report(result, spec, args.top_k)
    if args.out:
        emit_report(payload, args.out, args.format, result, args.top_k)
    print(
        f"{result.method_used}: {payload['num_states']} states, "
        f"residual {result.residuals['generator_residual_inf']:.3e}, {result.seconds:.3f} s"
    )
    return EXIT_OK


def cmd_compare(args) -> int:
    methods = [m.strip().lower() for m in args.methods.split(",") if m.strip()]
    if len(methods) < 2:
        raise InputError("compare needs at least two methods")
    for m in methods:
        if m not in METHODS:
            raise InputError(f"unknown method {m!r}; expected one of {', '.join(METHODS)}")
    problem, spec = load_problem(args.spec)
    results: dict[str, SolveResult] = {}
    failures: dict[str, QBDError] = {}
    for m in methods:
        try:
            results[m] = solve(problem, m)
        except QBDError as exc:
            failures[m] = exc
    pairs = []
    all_ok = True
    for i, a in enumerate(methods):
        for b in methods[i + 1:]:
            row = {"method_a": a, "method_b": b, "tolerance": args.tol}
            if a in results and b in results:
                rep = compare_results(results[a], results[b], args.tol)
                row.update(linf_error=rep.linf_error, l1_error=rep.l1_error, passed=rep.passed)
                row["per_level_max"] = list(rep.per_level_max)
                all_ok &= bool(rep.passed)
            else:
                failed = a if a not in results else b
                row.update(passed=False, error=f"{failed} failed: {failures[failed]}")
                all_ok = False
            pairs.append(row)
    payload = _clean(
        {
            "spec": spec.to_dict() if spec is not None else None,
            "methods": methods,
            "tolerance": args.tol,
            "results": {
                m: {
                    "method_used": r.method_used,
                    "residuals": r.residuals,
                    "solve_seconds": r.seconds,
                    "variant": r.info.get("variant", r.method_used),
                }
                for m, r in results.items()
            },
            "errors": {m: _error_payload(e) for m, e in failures.items()},
            "pairs": pairs,
            "passed": all_ok,
        }
    )
    if args.out:
        emit_report(payload, args.out, args.format)
    for row in pairs:
        if row.get("error"):
            print(f"{row['method_a']} vs {row['method_b']}: FAIL ({row['error']})")
        else:
            verdict = "pass" if row["passed"] else "FAIL"
            print(f"{row['method_a']} vs {row['method_b']}: linf {row['linf_error']:.3e} {verdict}")
    if failures:
        return min(e.exit_code for e in failures.values())
    return EXIT_OK if all_ok else EXIT_NUMERICAL


def cmd_bench(args) -> int:
    try:
        sizes = [int(s) for s in args.sizes.split(",") if s.strip()]
    except ValueError as exc:
        raise InputError(f"--sizes must be a comma-separated list of integers ({exc})") from exc
    algorithms = [a.strip() for a in args.algorithms.split(",")] if args.algorithms else list(BENCH_ALGORITHMS)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        records, slopes = run_bench(args.family, sizes, args.repeats, algorithms)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    try:
        write_bench_csv(args.out, records, slopes)
    except OSError as exc:
        raise InputError(f"cannot write {args.out}: {exc}") from exc
    for r in records:
        print(f"{r.algorithm:8s} size {r.size:6d}  {r.seconds:.6g} s  {r.status}")
    for s in slopes:
        print(f"{s.algorithm:8s} log-log slope {s.slope:.3f} ({s.points} points) {s.status}")
    return EXIT_OK


def cmd_validate(args) -> int:
    problem, spec = load_problem(args.spec)
    ok = True
    if spec is not None:
        print(f"spec: {spec.family} {dict(spec.params)} caps ({spec.level_cap}, {spec.stage_cap})")
    if problem.chain is None:
        print("chain: not a level QBD (several-level jumps); only the direct solver applies")
    else:
        chain = problem.chain
        report = validate_generator(chain)
        print(f"chain: {chain.num_levels} levels, {chain.num_states} states")
        if report.ok:
            print("generator: ok")
        else:
            ok = False
            for issue in report.issues:
                print(f"generator: {issue}")
        des = check_des_columns(chain)
        print("down entrance states: " + ("ok" if des.ok else f"violated at levels {list(des.violations)}"))
    for method, reason in applicable_methods(problem).items():
        print(f"{method:8s} " + ("applicable" if reason is None else f"not applicable: {reason}"))
    return EXIT_OK if ok else EXIT_INPUT


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="qbdsolve", description="Stationary distributions of level and stage QBD chains.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("solve", help="solve a model with one method")
    s.add_argument("--spec", required=True, help="JSON model spec or raw block chain")
    s.add_argument("--method", default="auto", choices=METHODS)
    s.add_argument("--out", help="report path")
    s.add_argument("--format", default="json", choices=("json", "csv"))
    s.add_argument("--top-k", type=int, default=None, help="only report the k most likely states")
    s.set_defaults(func=cmd_solve)

    c = sub.add_parser("compare", help="solve with several methods and compare")
    c.add_argument("--spec", required=True)
    c.add_argument("--methods", required=True, help="comma-separated, e.g. qdesa++,lpca,direct")
    c.add_argument("--tol", type=float, default=1e-7)
    c.add_argument("--out")
    c.add_argument("--format", default="json", choices=("json", "csv"))
    c.set_defaults(func=cmd_compare)

    b = sub.add_parser("bench", help="runtime scaling benchmark")
    b.add_argument("--family", required=True, choices=BENCH_FAMILIES)
    b.add_argument("--sizes", required=True, help="comma-separated, strictly increasing, at least 4")
    b.add_argument("--repeats", type=int, default=5)
    b.add_argument("--algorithms", default=None, help="comma-separated subset of qdesa++,lpca")
    b.add_argument("--out", required=True, help="CSV path")
    b.set_defaults(func=cmd_bench)

    v = sub.add_parser("validate", help="check a spec and report which methods apply")
    v.add_argument("--spec", required=True)
    v.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return args.func(args)
    except QBDError as exc:
        kind = "not applicable" if isinstance(exc, ApplicabilityError) else type(exc).__name__
        print(f"error ({kind}): {exc}", file=sys.stderr)
        return exc.exit_code
    except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"error (numerical): {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
