# =============================================================================
# CLI ENTRY POINT
# =============================================================================
#
# Usage:
#   poetry run cvarlab generate --domain gridworld --rows 5 --cols 5 --out grid.json
#   poetry run cvarlab solve --domain gridworld --rows 5 --cols 5 --solver viq --atoms 7 --alpha0 0.1 --out sol.json
#   poetry run cvarlab evaluate --model grid.json --solution sol.json --alpha 0.1 1.0 --out rows.csv
#   poetry run cvarlab evaluate --domain river --rows 10 --cols 3 --evaluator mc --samples 20000 --out rows.csv
#   poetry run cvarlab evaluate --domain gridworld --rows 5 --cols 5 --alpha 0.1 --trace-out traces/ --out rows.csv
#   poetry run cvarlab sweep --domain gridworld --rows 5 --cols 5 --atoms 7 13 --alpha0 0.1 0.01 --out sweep.csv
#   poetry run cvarlab simulate --domain gridworld --rows 5 --cols 5 --alpha 0.1 --time-budget 2 --out mc.json
#
# Exit codes: 0 success, 2 validation failure, 3 convergence failure,
# 4 improper policy, 1 anything else.
#
# =============================================================================

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path
from typing import Callable

from rich.console import Console
from rich.logging import RichHandler

from cvarlab.api import to_csv
from cvarlab.config import BELOW_ALPHA0_MODES, DEFAULT_EPSILON, ENVELOPE_ENGINES
from cvarlab.domains import DOMAINS, make_spec, spec_from_dict
from cvarlab.errors import ConfigError, CvarlabError, InvalidModelError
from cvarlab.forpecvar import EvalResult
from cvarlab.formatter import (
    print_error,
    print_eval_table,
    print_footer,
    print_header,
    print_model_summary,
    print_output,
    print_progress,
    print_simulation,
    print_solve_summary,
)
from cvarlab.montecarlo import McConfig, histogram, mc_cvar_estimate, simulate_policy
from cvarlab.runner import (
    EVALUATORS,
    SOLVERS,
    EvalRow,
    ExperimentConfig,
    Problem,
    SolveResult,
    check_target,
    evaluate,
    load_problem,
    solve,
    sweep,
)
from cvarlab.serialize import dump_eval, dump_model, dump_solution, load_solution, read_json

logger = logging.getLogger(__name__)


def _cell(text: str) -> tuple[int, int]:
    try:
        r, c = text.split(",")
        return int(r), int(c)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a cell as row,col, got {text!r}")


def _source_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(add_help=False)
    source = parser.add_mutually_exclusive_group(required=True)
    source.add_argument("--model", type=str, help="Path to an SSP model JSON file")
    source.add_argument("--spec", type=str, help="Path to a domain spec JSON file")
    source.add_argument("--domain", choices=DOMAINS, help="Generate a benchmark domain")
    parser.add_argument("--rows", type=int, default=5, help="Grid rows m (default: 5)")
    parser.add_argument("--cols", type=int, default=5, help="Grid columns n (default: 5)")
    parser.add_argument(
        "--obstacles",
        type=_cell,
        nargs="*",
        default=None,
        help="Gridworld obstacle cells as row,col (default: 10%% random cells)",
    )
    parser.add_argument("--seed", type=int, default=0, help="Seed for obstacles and sampling (default: 0)")
    parser.add_argument("--verbose", action="store_true", default=False, help="DEBUG logging")
    return parser


def _solver_parser(multi: bool) -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(add_help=False)
    nargs = "+" if multi else None
    parser.add_argument("--solver", choices=SOLVERS, default="viq", help="Solver (default: viq)")
    parser.add_argument("--atoms", type=int, nargs=nargs, default=[7] if multi else 7, help="Atom count N (default: 7)")
    parser.add_argument(
        "--alpha0", type=float, nargs=nargs, default=[0.1] if multi else 0.1, help="Smallest atom (default: 0.1)"
    )
    parser.add_argument("--epsilon", type=float, default=DEFAULT_EPSILON, help=f"Residual (default: {DEFAULT_EPSILON})")
    parser.add_argument(
        "--below-alpha0", choices=BELOW_ALPHA0_MODES, default="extend", help="yCVaR on (0, α₀] (default: extend)"
    )
    parser.add_argument("--envelope", choices=ENVELOPE_ENGINES, default="greedy", help="vili inner solver (default: greedy)")
    return parser


def _target_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(add_help=False)
    parser.add_argument("--s0", type=int, nargs="+", default=None, help="Initial states (default: domain start, else 0)")
    parser.add_argument("--alpha", type=float, nargs="+", default=None, help="Target α values (default: every atom)")
    parser.add_argument("--evaluator", choices=EVALUATORS, default="forpecvar", help="Exact or sampled (default: forpecvar)")
    parser.add_argument("--samples", type=int, default=10_000, help="Monte Carlo rollouts (default: 10000)")
    parser.add_argument(
        "--no-timings", action="store_true", default=False, help="Leave solve_ms and eval_ms empty in the CSV"
    )
    return parser


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cvarlab",
        description="CVaR stochastic shortest path solvers with exact policy evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    source = _source_parser()
    target = _target_parser()

    gen = sub.add_parser("generate", parents=[source], help="Write the SSP JSON of a domain")
    gen.add_argument("--out", type=str, required=True, help="Output model JSON path (required)")

    slv = sub.add_parser("solve", parents=[source, _solver_parser(multi=False)], help="Run vili or viq")
    slv.add_argument("--out", type=str, required=True, help="Output solution JSON path (required)")

    ev = sub.add_parser(
        "evaluate", parents=[source, _solver_parser(multi=False), target], help="Approximate vs exact values"
    )
    ev.add_argument("--solution", type=str, default=None, help="Solution JSON from solve (default: solve in-process)")
    ev.add_argument(
        "--trace-out", type=str, default=None, help="Directory for one ForPECVaR trace JSON per (s0, alpha)"
    )
    ev.add_argument("--out", type=str, required=True, help="Output CSV path (required)")

    sw = sub.add_parser("sweep", parents=[source, _solver_parser(multi=True), target], help="Atom count x α₀ sweep")
    sw.add_argument("--out", type=str, required=True, help="Output CSV path (required)")

    sim = sub.add_parser("simulate", parents=[source, _solver_parser(multi=False)], help="Monte Carlo of a solution")
    sim.add_argument("--solution", type=str, default=None, help="Solution JSON from solve (default: solve in-process)")
    sim.add_argument("--s0", type=int, default=None, help="Initial state (default: domain start, else 0)")
    sim.add_argument("--alpha", type=float, default=1.0, help="Confidence level (default: 1.0)")
    sim.add_argument("--samples", type=int, default=10_000, help="Rollouts (default: 10000)")
    sim.add_argument("--time-budget", type=float, default=None, help="Seconds to sample instead of --samples")
    sim.add_argument("--out", type=str, required=True, help="Output JSON path (required)")

    return parser


def _setup_logging(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=Console(stderr=True), show_path=False)],
        force=True,
    )


def _load(args) -> Problem:
    if args.model:
        path = Path(args.model)
        if not path.is_file():
            raise ConfigError(f"file not found: {args.model}")
        return load_problem(model_path=path)
    if args.spec:
        path = Path(args.spec)
        if not path.is_file():
            raise ConfigError(f"file not found: {args.spec}")
        return load_problem(spec=spec_from_dict(read_json(path)))
    options = {}
    if args.domain == "gridworld":
        options["seed"] = args.seed
        if args.obstacles is not None:
            options["obstacles"] = args.obstacles
    return load_problem(spec=make_spec(args.domain, args.rows, args.cols, **options))


def _starts(args, problem: Problem) -> list[int]:
    if args.s0 is not None:
        starts = args.s0 if isinstance(args.s0, list) else [args.s0]
    else:
        starts = [problem.start if problem.start is not None else 0]
    for s in starts:
        if not 0 <= s < problem.model.n_states:
            raise ConfigError(f"s0={s} is not a state of the model ({problem.model.n_states} states)")
    return starts


def _solution(args, problem: Problem) -> SolveResult:
    if getattr(args, "solution", None):
        path = Path(args.solution)
        if not path.is_file():
            raise ConfigError(f"file not found: {args.solution}")
        solution = load_solution(path, problem.model)
        return SolveResult(solution=solution, solver=solution.kind, elapsed=sum(solution.iteration_ms) / 1000)
    ExperimentConfig(
        solver=args.solver, atoms=[args.atoms], alpha0=[args.alpha0], epsilon=args.epsilon, envelope=args.envelope
    ).check()
    return solve(
        problem.model, args.solver, args.atoms, args.alpha0, args.epsilon,
        below_alpha0=args.below_alpha0, envelope=args.envelope,
    )


def _write_csv(rows: list[EvalRow], output_path: str, timings: bool = True) -> None:
    """Write evaluation rows to CSV."""
    csv_content = to_csv(rows, timings=timings)
    with open(output_path, "w", encoding="utf-8") as f:
        f.write(csv_content)


def _append_csv(rows: list[EvalRow], output_path: str, timings: bool = True) -> None:
    """Append rows to a CSV started by _write_csv, without the header."""
    body = to_csv(rows, timings=timings).split("\n", 1)[1]
    with open(output_path, "a", encoding="utf-8") as f:
        f.write(body)


def _trace_writer(trace_out: str, evaluator: str) -> Callable[[int, float, EvalResult], None]:
    """Writes each ForPECVaR result to trace_s<s0>_a<alpha>.json under trace_out."""
    if evaluator != "forpecvar":
        raise ConfigError("--trace-out needs --evaluator forpecvar")
    trace_dir = Path(trace_out)
    trace_dir.mkdir(parents=True, exist_ok=True)

    def write(s0: int, alpha: float, exact: EvalResult) -> None:
        dump_eval(exact, trace_dir / f"trace_s{s0}_a{alpha:.6g}.json")

    return write


def _write_json(data: dict, output_path: str) -> None:
    with open(output_path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=1)
        f.write("\n")


# ── Commands ─────────────────────────────────────────────────────────────────


def _cmd_generate(args) -> None:
    problem = _load(args)
    print_model_summary(problem)
    dump_model(problem.model, args.out)
    print_output(Path(args.out), problem.model.n_states, "states")


def _cmd_solve(args) -> None:
    problem = _load(args)
    print_model_summary(problem)
    result = _solution(args, problem)
    print_solve_summary(result)
    dump_solution(result.solution, problem.model, args.out)
    print_output(Path(args.out), problem.model.n_states, "states")


def _cmd_evaluate(args) -> None:
    problem = _load(args)
    print_model_summary(problem)
    result = _solution(args, problem)
    print_solve_summary(result)
    starts = _starts(args, problem)
    on_exact = _trace_writer(args.trace_out, args.evaluator) if args.trace_out else None
    rows = evaluate(
        problem, result, starts, args.alpha, args.evaluator, args.samples, args.seed, on_exact=on_exact
    )
    print_eval_table(rows)
    _write_csv(rows, args.out, timings=not args.no_timings)
    print_output(Path(args.out), len(rows), "rows")


def _cmd_sweep(args) -> None:
    problem = _load(args)
    print_model_summary(problem)
    config = ExperimentConfig(
        solver=args.solver,
        atoms=args.atoms,
        alpha0=args.alpha0,
        epsilon=args.epsilon,
        s0=args.s0,
        alphas=args.alpha,
        evaluator=args.evaluator,
        samples=args.samples,
        seed=args.seed,
        below_alpha0=args.below_alpha0,
        envelope=args.envelope,
    )
    config.check()
    starts = _starts(args, problem)
    timings = not args.no_timings
    _write_csv([], args.out, timings=timings)
    total = len(config.atoms) * len(config.alpha0)
    done = 0

    def flush(chunk: list[EvalRow]) -> None:
        nonlocal done
        _append_csv(chunk, args.out, timings=timings)
        done += 1
        label = f"N={chunk[0].N} alpha0={chunk[0].alpha0:g}" if chunk else ""
        print_progress(done, total, label)

    rows = sweep(problem, config, starts, on_rows=flush)
    print_eval_table(rows)
    print_output(Path(args.out), len(rows), "rows")


def _cmd_simulate(args) -> None:
    problem = _load(args)
    print_model_summary(problem)
    result = _solution(args, problem)
    print_solve_summary(result)
    check_target(args.alpha, result.solution.grid.alpha0)
    s0 = _starts(args, problem)[0]
    config = McConfig(samples=args.samples, seed=args.seed, time_budget=args.time_budget)
    sampled = simulate_policy(problem.model, result.solution, s0, config, alpha=args.alpha)
    cvar, var = mc_cvar_estimate(sampled.distribution, args.alpha)
    estimates = {"mean": sampled.distribution.mean(), "cvar": cvar, "var": var}
    print_simulation(sampled.samples, sampled.failures, estimates)
    data = histogram(sampled)
    data.update(s0=s0, alpha=args.alpha, seed=args.seed, **estimates)
    _write_json(data, args.out)
    print_output(Path(args.out), len(data["support"]), "support")


_COMMANDS = {
    "generate": _cmd_generate,
    "solve": _cmd_solve,
    "evaluate": _cmd_evaluate,
    "sweep": _cmd_sweep,
    "simulate": _cmd_simulate,
}


def main(argv: list[str] | None = None) -> None:
    parser = _build_parser()
    args = parser.parse_args(argv)
    _setup_logging(args.verbose)

    start = time.perf_counter()
    try:
        print_header(args.command)
        _COMMANDS[args.command](args)
        print_footer(time.perf_counter() - start)

    except InvalidModelError as e:
        print_error(str(e))
        for violation in e.violations:
            print_error(f"  {violation.message}")
        sys.exit(e.exit_code)
    except CvarlabError as e:
        print_error(str(e))
        sys.exit(e.exit_code)
    except Exception as e:
        print_error(str(e))
        sys.exit(1)


if __name__ == "__main__":
    main()
