# =============================================================================
# CLI FORMATTER
# =============================================================================
#
# Rich CLI output for cvarlab runs.
#
# =============================================================================

from __future__ import annotations

from pathlib import Path
from typing import Sequence

from rich.console import Console
from rich.table import Table

from cvarlab.runner import EvalRow, Problem, SolveResult

console = Console()
_err_console = Console(stderr=True)


def _cfg(label: str, value: str) -> str:
    """Format a config line with dim label and bold value."""
    return f"  [dim]{label:<13}[/dim] [bold]{value}[/bold]"


def _fmt(value: float) -> str:
    return f"{value:.6g}"


# ── Output Functions ─────────────────────────────────────────────────────────


def print_header(command: str) -> None:
    console.print()
    console.rule(f"[bold cyan]cvarlab {command}[/bold cyan]", style="cyan")
    console.print()


def print_model_summary(problem: Problem) -> None:
    """Print the model block."""
    model = problem.model
    console.print(_cfg("domain", problem.domain))
    if problem.rows is not None:
        console.print(_cfg("grid", f"{problem.rows} x {problem.cols}"))
    console.print(_cfg("states", f"{model.n_states:,}"))
    console.print(_cfg("actions", str(model.n_actions)))
    console.print(_cfg("goals", str(len(model.goals))))
    console.print(_cfg("transitions", f"{len(model.transitions):,}"))
    if model.gamma != 1.0:
        console.print(_cfg("gamma", str(model.gamma)))
    if problem.start is not None:
        console.print(_cfg("start", str(problem.start)))
    console.print()


def print_solve_summary(result: SolveResult) -> None:
    """Print solver, grid and convergence info."""
    solution = result.solution
    grid = solution.grid
    console.print(f"  [bold cyan]Solve[/bold cyan]")
    console.print(f"  [dim]{'═' * 40}[/dim]")
    console.print(_cfg("solver", result.solver))
    console.print(_cfg("atoms", str(len(grid))))
    console.print(_cfg("alpha0", str(grid.alpha0)))
    console.print(_cfg("below_alpha0", solution.below_alpha0))
    console.print(_cfg("iterations", str(solution.iterations)))
    console.print(_cfg("residual", f"{solution.residual:.3e}"))
    console.print(_cfg("elapsed", f"{result.elapsed * 1000:.1f} ms"))
    if solution.iteration_ms:
        per_iter = sum(solution.iteration_ms) / len(solution.iteration_ms)
        console.print(_cfg("per_iter", f"{per_iter:.2f} ms"))
    console.print()


def print_eval_table(rows: Sequence[EvalRow], limit: int = 40) -> None:
    """Print evaluation rows as a table; long sweeps are cut at `limit`."""
    table = Table(show_header=True, header_style="dim", box=None, padding=(0, 2))
    for name in ("solver", "N", "alpha0", "s0", "alpha", "approx", "exact", "var", "norm"):
        table.add_column(name, justify="right")
    for row in rows[:limit]:
        norm = row.normalized
        color = "green" if norm <= 1.0 + 1e-9 else "yellow"
        table.add_row(
            row.solver,
            str(row.N),
            f"{row.alpha0:g}",
            str(row.s0),
            f"{row.alpha:.4g}",
            _fmt(row.approx),
            _fmt(row.exact_cvar),
            _fmt(row.exact_var),
            f"[{color}]{norm:.4f}[/{color}]",
        )
    console.print(table)
    if len(rows) > limit:
        console.print(f"  [dim]... {len(rows) - limit:,} more rows in the output file[/dim]")
    console.print()


def print_simulation(samples: int, failures: int, estimates: dict[str, float]) -> None:
    console.print(f"  [bold cyan]Monte Carlo[/bold cyan]")
    console.print(f"  [dim]{'═' * 40}[/dim]")
    console.print(_cfg("samples", f"{samples:,}"))
    console.print(_cfg("failures", f"{failures:,}"))
    for label, value in estimates.items():
        console.print(_cfg(label, _fmt(value)))
    console.print()


def print_output(path: Path, count: int, unit: str) -> None:
    """Written file, what it holds and its size in KB."""
    kib = path.stat().st_size / 1024
    console.print(f"  [bold cyan]Output[/bold cyan]")
    console.print(f"  [dim]{'═' * 40}[/dim]")
    console.print(_cfg("file", str(path)))
    console.print(_cfg(unit, f"{count:,}"))
    console.print(_cfg("size", f"{kib:.1f} KB"))
    console.print()


def print_footer(elapsed: float) -> None:
    console.rule(style="dim")
    shown = f"{elapsed * 1000:.0f} ms" if elapsed < 1.0 else f"{elapsed:.1f} s"
    console.print(f"  [green]Done in {shown}[/green]")
    console.print()


def print_progress(done: int, total: int, label: str = "") -> None:
    """One overwriting line per finished sweep point.

    Raw ANSI and \\r because rich.console.print cannot overwrite a line.
    """
    dim, bold, reset = "\033[2m", "\033[1m", "\033[0m"
    pct = 100 * done // max(total, 1)
    end = "\n" if done == total else ""
    print(f"\r  {dim}{pct:>3}%{reset} {bold}sweep {done}/{total}{reset} {dim}{label}{reset}", end=end, flush=True)


def print_error(message: str) -> None:
    """Print an error message."""
    _err_console.print(f"  [bold red]ERROR[/bold red]  {message}")
