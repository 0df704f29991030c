"""
SHQP Feasibility - Command Line Interface

Verbs:
    solve     run one solver on a problem file
    bench     compare working-set policies and the projection baseline
    diagnose  rate report, kappa estimate and angle statistics of a trace CSV

Exit status of `solve`: 0 Feasible, 2 Infeasible, 3 Diverging,
4 MaxIterations, 1 usage or input error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import __version__
from .diagnostics import (
    angle_statistics,
    estimate_kappa,
    estimate_rates,
    recession_report,
)
from .errors import FeasibilityError, NotDiverging, TooFewIterations
from .halfspaces import parse_policy
from .model import Diverging, Infeasible, SolveOutcome, SolveTrace
from .problem_io import ProblemFile, parse_problem, read_trace, write_certificate, write_trace
from .solvers import SolverConfig, solve_bap, solve_cip, solve_map, solve_sip

logger = logging.getLogger(__name__)

EXIT_CODES = {
    "feasible": 0,
    "infeasible": 2,
    "diverging": 3,
    "max_iterations": 4,
}
EXIT_ERROR = 1

DEFAULT_BENCH_POLICIES = ("current", "last:1", "last:10", "all")
METHODS = ("auto", "sip", "cip", "bap", "map")


def main(argv: Optional[List[str]] = None) -> int:
    """
    Main CLI entry point.

    Args:
        argv: Command line arguments (for testing)

    Returns:
        Exit code (see module docstring)
    """
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse exits 2 on usage errors, which would read as Infeasible
        if e.code:
            return EXIT_ERROR
        raise
    _configure_logging(args)

    try:
        if args.command == "solve":
            return _cmd_solve(args)
        if args.command == "bench":
            return _cmd_bench(args)
        return _cmd_diagnose(args)
    except KeyboardInterrupt:
        print("\n\nInterrupted by user", file=sys.stderr)
        return 130
    except (FeasibilityError, OSError, ValueError) as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_ERROR


# ============================================================================
# Parser
# ============================================================================

def _add_output_flags(p: argparse.ArgumentParser) -> None:
    group = p.add_argument_group("Output options")
    group.add_argument("--verbose", action="store_true", help="Log solver progress to stderr")
    group.add_argument("--quiet", action="store_true", help="Suppress all output except errors")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    group = p.add_argument_group("Solver options")
    group.add_argument("--config", metavar="PATH", help="JSON file with SolverConfig fields")
    group.add_argument("--tol", type=float, metavar="T", help="Feasibility tolerance (default: 1e-9)")
    group.add_argument("--max-iter", type=int, metavar="N", help="Maximum outer iterations (default: 500)")
    group.add_argument("--gi-budget", type=int, metavar="N", help="Inner QP steps per iteration (default: exact)")
    group.add_argument("--aggregate", action="store_true", help="Aggregate old halfspaces (bap only)")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shqp",
        description="Supporting halfspace + QP methods for convex feasibility",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"SHQP Feasibility v{__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    solve = sub.add_parser("solve", help="Solve one problem file")
    solve.add_argument("--problem", required=True, metavar="PATH", help="JSON problem file")
    solve.add_argument("--policy", metavar="POLICY", help="current | all | last:P | pruned:ALPHA,P (default: all)")
    solve.add_argument("--method", choices=METHODS, default="auto",
                       help="Solver; auto picks by problem kind, map is the projection baseline")
    solve.add_argument("--trace-out", metavar="PATH", help="Write the trace CSV")
    solve.add_argument("--cert-out", metavar="PATH", help="Write the Farkas certificate JSON when infeasible")
    _add_config_flags(solve)
    _add_output_flags(solve)

    bench = sub.add_parser("bench", help="Compare policies and the projection baseline")
    bench.add_argument("--problem", required=True, nargs="+", metavar="PATH", help="JSON problem files")
    bench.add_argument("--policy", action="append", metavar="POLICY",
                       help=f"Policy to compare; repeatable (default: {', '.join(DEFAULT_BENCH_POLICIES)})")
    bench.add_argument("--jobs", type=int, default=1, metavar="N", help="Worker processes (default: 1)")
    bench.add_argument("--table-out", metavar="PATH", help="Write the comparison table as CSV")
    _add_config_flags(bench)
    _add_output_flags(bench)

    diagnose = sub.add_parser("diagnose", help="Analyse a stored trace CSV")
    diagnose.add_argument("--trace", required=True, metavar="PATH", help="Trace CSV written by solve")
    diagnose.add_argument("--problem", metavar="PATH", help="Problem file (known_solution becomes the reference)")
    diagnose.add_argument("--reference", metavar="X1,X2,...", help="Reference point (default: final iterate)")
    diagnose.add_argument("--window", type=int, default=2, metavar="N", help="Angle window in rounds (default: 2)")
    diagnose.add_argument("--alpha", type=float, metavar="RAD", help="Report the first round with a pair within RAD")
    diagnose.add_argument("--json", dest="json_out", action="store_true", help="Print the report as JSON")
    _add_output_flags(diagnose)
    return parser


def _configure_logging(args: argparse.Namespace) -> None:
    level = logging.WARNING
    if args.verbose:
        level = logging.INFO
    if args.quiet:
        level = logging.ERROR
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")


def _load_config(args: argparse.Namespace, policy: Optional[str] = None) -> SolverConfig:
    """Defaults, then the --config file, then flags"""
    config = SolverConfig()
    if args.config:
        with open(args.config, encoding="utf-8") as f:
            try:
                data = json.load(f)
            except json.JSONDecodeError as e:
                raise FeasibilityError(f"{args.config}:{e.lineno}:{e.colno}: {e.msg}") from None
        config = SolverConfig.from_dict(data, base=config)
    updates: Dict[str, Any] = {}
    if policy:
        updates["policy"] = parse_policy(policy)
    if args.tol is not None:
        updates["tol_feas"] = args.tol
    if args.max_iter is not None:
        updates["max_outer"] = args.max_iter
    if args.gi_budget is not None:
        updates["gi_step_budget"] = args.gi_budget
    if args.aggregate:
        updates["aggregation_enabled"] = True
    return replace(config, **updates).validate()


# ============================================================================
# solve
# ============================================================================

def run_problem(problem_file: ProblemFile, method: str, config: SolverConfig) -> Tuple[SolveOutcome, SolveTrace]:
    """Dispatch to the solver matching `method` (auto: by problem kind)"""
    if method == "auto":
        method = problem_file.kind
    if method == "cip":
        if problem_file.kind != "cip":
            raise FeasibilityError(f"method cip needs a cip problem, got {problem_file.kind}")
        return solve_cip(problem_file.to_problem(), config)
    if problem_file.kind == "cip":
        raise FeasibilityError(f"method {method} needs a set list; {problem_file.name} is a cip problem")
    if method == "bap":
        if problem_file.kind != "bap":
            raise FeasibilityError("method bap needs an anchor; use a bap problem file")
        return solve_bap(problem_file.to_problem(), config)
    if method == "map":
        return solve_map(problem_file.as_sip(), config)
    return solve_sip(problem_file.as_sip(), config)


def _cmd_solve(args: argparse.Namespace) -> int:
    problem_file = parse_problem(args.problem)
    config = _load_config(args, args.policy)
    outcome, trace = run_problem(problem_file, args.method, config)

    if args.trace_out:
        write_trace(trace, args.trace_out)
    if isinstance(outcome, Infeasible) and args.cert_out:
        write_certificate(outcome, args.cert_out)

    if not args.quiet:
        print(outcome.summary())
        if isinstance(outcome, Infeasible):
            print("multipliers: " + " ".join(f"{v:.6g}" for v in outcome.certificate.multipliers))
        if isinstance(outcome, Diverging) and problem_file.kind != "cip":
            try:
                report = recession_report(outcome, problem_file.as_sip())
                print("recession residuals: " + " ".join(f"{v:.3g}" for v in report.per_set_recession_residuals))
            except NotDiverging as e:
                logger.warning("no recession report: %s", e)
        if args.trace_out:
            print(f"Trace written to {args.trace_out}", file=sys.stderr)
    return EXIT_CODES[outcome.kind]


# ============================================================================
# bench
# ============================================================================

BENCH_COLUMNS = ("instance", "method", "policy", "outcome", "iterations", "final_residual", "rate")


def _rate_label(trace: SolveTrace, reference: Optional[np.ndarray]) -> str:
    if not len(trace):
        return "n/a"
    ref = reference if reference is not None else trace.last.iterate
    try:
        return estimate_rates(trace, ref).classification.describe()
    except TooFewIterations:
        return "n/a"


def _bench_case(case: Tuple[str, str, str, str, Dict[str, Any]]) -> Dict[str, str]:
    """One table row; module level so worker processes can run it"""
    instance_id, path, method, policy, config_data = case
    problem_file = parse_problem(path)
    config = SolverConfig.from_dict(dict(config_data, policy=policy))
    outcome, trace = run_problem(problem_file, method, config)
    return {
        "instance": instance_id,
        "method": method,
        "policy": policy if method != "map" else "-",
        "outcome": outcome.kind,
        "iterations": str(outcome.iterations),
        "final_residual": format(trace.last.max_set_distance, ".3g") if len(trace) else "n/a",
        "rate": _rate_label(trace, problem_file.known_solution),
    }


def _bench_cases(args: argparse.Namespace, config: SolverConfig) -> List[Tuple[str, str, str, str, Dict[str, Any]]]:
    policies = args.policy or list(DEFAULT_BENCH_POLICIES)
    for p in policies:
        parse_policy(p)
    config_data = config.to_dict()
    cases = []
    for path in args.problem:
        problem_file = parse_problem(path)
        methods = [problem_file.kind]
        for policy in policies:
            for method in methods:
                cases.append((f"{problem_file.name}/{method}/{policy}", path, method, policy, config_data))
        if problem_file.kind == "sip":
            cases.append((f"{problem_file.name}/map", path, "map", "all", config_data))
    return cases


def _cmd_bench(args: argparse.Namespace) -> int:
    config = _load_config(args)
    cases = _bench_cases(args, config)
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(_bench_case, cases))
    else:
        rows = [_bench_case(c) for c in cases]
    rows.sort(key=lambda r: r["instance"])

    if args.table_out:
        with open(args.table_out, "w", encoding="utf-8", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=BENCH_COLUMNS, lineterminator="\n")
            writer.writeheader()
            writer.writerows(rows)
    if not args.quiet:
        _print_table(rows)
    return 0


def _print_table(rows: Sequence[Dict[str, str]]) -> None:
    widths = {c: max([len(c)] + [len(r[c]) for r in rows]) for c in BENCH_COLUMNS}
    print("  ".join(c.ljust(widths[c]) for c in BENCH_COLUMNS))
    print("  ".join("-" * widths[c] for c in BENCH_COLUMNS))
    for r in rows:
        print("  ".join(r[c].ljust(widths[c]) for c in BENCH_COLUMNS))


# ============================================================================
# diagnose
# ============================================================================

def _parse_point(text: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.split(",")])
    except ValueError:
        raise FeasibilityError(f"bad reference point {text!r}; expected X1,X2,...") from None


def diagnose_report(
    trace: SolveTrace,
    reference: Optional[np.ndarray] = None,
    window: int = 2,
    alpha: Optional[float] = None,
) -> Dict[str, Any]:
    """Rates, kappa and angle statistics of a trace as one JSON-ready dict"""
    if not len(trace):
        raise TooFewIterations("trace is empty")
    ref = reference if reference is not None else trace.last.iterate
    report: Dict[str, Any] = {"reference_point": [float(v) for v in ref]}
    try:
        report["rates"] = estimate_rates(trace, ref).to_dict()
    except TooFewIterations as e:
        report["rates"] = {"classification": "n/a", "reason": str(e)}
    try:
        kappa = estimate_kappa(trace, ref)
        report["kappa"] = {"tail_max": kappa.tail_max, "ratios": [float(v) for v in kappa.ratios]}
    except TooFewIterations as e:
        report["kappa"] = {"tail_max": None, "reason": str(e)}
    angles = angle_statistics(trace, window=window, alpha=alpha)
    present = [a for a in angles.min_angles if a is not None]
    report["angles"] = {
        "window": window,
        "min_angles": angles.min_angles,
        "overall_min": min(present) if present else None,
        "rounds_until_alpha": angles.rounds_until_alpha,
    }
    return report


def _cmd_diagnose(args: argparse.Namespace) -> int:
    trace = read_trace(args.trace)
    reference = None
    if args.reference:
        reference = _parse_point(args.reference)
    elif args.problem:
        reference = parse_problem(args.problem).known_solution
    report = diagnose_report(trace, reference, window=args.window, alpha=args.alpha)

    if args.quiet:
        return 0
    if args.json_out:
        print(json.dumps(report, indent=2))
        return 0
    rates = report["rates"]
    print(f"reference: {' '.join(format(v, '.10g') for v in report['reference_point'])}")
    print(f"rate: {rates['classification']}")
    if rates.get("q_ratios"):
        print(f"last q-ratio: {rates['q_ratios'][-1]:.6g}")
    tail_max = report["kappa"]["tail_max"]
    print(f"kappa (tail max): {tail_max:.6g}" if tail_max is not None else "kappa: n/a")
    overall = report["angles"]["overall_min"]
    print(f"min normal angle (window {args.window}): {overall:.6g}" if overall is not None else "min normal angle: n/a")
    if args.alpha is not None:
        print(f"first round with a pair within {args.alpha:g}: {report['angles']['rounds_until_alpha']}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
