# =============================================================================
# PUBLIC API
# =============================================================================
#
# Programmatic interface to cvarlab.
#
# Usage:
#   from cvarlab import solve_domain, evaluate_rows, to_csv
#
#   problem, result = solve_domain("gridworld", 5, 5, solver="viq", atoms=7, alpha0=0.1)
#   rows = evaluate_rows(problem, result, alphas=[0.1, 1.0])
#   csv_str = to_csv(rows)
#
# =============================================================================

from __future__ import annotations

import csv
import io
from typing import Any, Sequence

from cvarlab.config import DEFAULT_BELOW_ALPHA0, DEFAULT_EPSILON
from cvarlab.domains import make_spec
from cvarlab.runner import EvalRow, Problem, SolveResult, evaluate, load_problem, solve

CSV_COLUMNS = [
    "domain", "m", "n", "solver", "N", "alpha0", "s0", "alpha",
    "approx", "exact_cvar", "exact_var", "solve_ms", "eval_ms", "normalized",
]


def solve_domain(
    domain: str,
    rows: int,
    cols: int,
    solver: str = "viq",
    atoms: int = 7,
    alpha0: float = 0.1,
    epsilon: float = DEFAULT_EPSILON,
    below_alpha0: str = DEFAULT_BELOW_ALPHA0,
    **options: Any,
) -> tuple[Problem, SolveResult]:
    """Generate a benchmark domain and solve it.

    Args:
        domain: "gridworld" or "river".
        rows: Grid rows m.
        cols: Grid columns n.
        solver: "vili" or "viq".
        atoms: Number of atoms N.
        alpha0: Smallest atom.
        epsilon: Residual at which iteration stops.
        below_alpha0: "extend" or "origin".
        **options: Extra domain spec fields (obstacles, seed, ...).

    Returns:
        (Problem, SolveResult).
    """
    problem = load_problem(spec=make_spec(domain, rows, cols, **options))
    result = solve(problem.model, solver, atoms, alpha0, epsilon, below_alpha0=below_alpha0)
    return problem, result


def evaluate_rows(
    problem: Problem,
    result: SolveResult,
    s0: Sequence[int] | None = None,
    alphas: Sequence[float] | None = None,
    evaluator: str = "forpecvar",
    samples: int = 10_000,
    seed: int = 0,
) -> list[EvalRow]:
    """Approximate vs exact rows; s0 defaults to the domain's start state."""
    if s0 is None:
        s0 = [problem.start if problem.start is not None else 0]
    return evaluate(problem, result, s0, alphas, evaluator, samples, seed)


def _cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def to_csv(rows: Sequence[EvalRow], timings: bool = True) -> str:
    """Convert evaluation rows to a CSV string.

    Returns CSV content with columns:
    domain, m, n, solver, N, alpha0, s0, alpha, approx, exact_cvar,
    exact_var, solve_ms, eval_ms, normalized

    With timings=False the solve_ms and eval_ms cells are left empty so
    reruns produce identical bytes.
    """
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in rows:
        writer.writerow([
            _cell(row.domain),
            _cell(row.m),
            _cell(row.n),
            _cell(row.solver),
            _cell(row.N),
            _cell(float(row.alpha0)),
            _cell(row.s0),
            _cell(float(row.alpha)),
            _cell(float(row.approx)),
            _cell(float(row.exact_cvar)),
            _cell(float(row.exact_var)),
            _cell(round(row.solve_ms, 3)) if timings else "",
            _cell(round(row.eval_ms, 3)) if timings else "",
            _cell(float(row.normalized)),
        ])
    return buf.getvalue()
