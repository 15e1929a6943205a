# =============================================================================
# RUNNER
# =============================================================================
#
# Orchestrates model loading, solver dispatch, exact or sampled evaluation,
# parameter sweeps and timing.
#
# =============================================================================

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from cvarlab.config import (
    ALPHA_TOL,
    DEFAULT_BELOW_ALPHA0,
    DEFAULT_EPSILON,
    worker_count,
)
from cvarlab.domains import GridworldSpec, RiverSpec, build_domain
from cvarlab.errors import ConfigError
from cvarlab.forpecvar import EvalResult, create_extended_mdp, nearest_atom_log, run_forpecvar
from cvarlab.montecarlo import McConfig, mc_cvar_estimate, simulate_policy
from cvarlab.serialize import Solution, load_model
from cvarlab.ssp import SspMdp, require_valid
from cvarlab.vili import build_atom_grid, interpolate_yV, run_vili
from cvarlab.viq import run_viq

logger = logging.getLogger(__name__)

SOLVERS = ("vili", "viq")
EVALUATORS = ("forpecvar", "mc")


@dataclass
class Problem:
    """A validated model plus where it came from."""

    model: SspMdp
    domain: str = "model"
    rows: int | None = None
    cols: int | None = None
    start: int | None = None


@dataclass
class SolveResult:
    """Result of running one solver."""

    solution: Solution
    solver: str
    elapsed: float


@dataclass
class EvalRow:
    """One (s₀, α) comparison of the approximate and exact values."""

    domain: str
    m: int | None
    n: int | None
    solver: str
    N: int
    alpha0: float
    s0: int
    alpha: float
    approx: float
    exact_cvar: float
    exact_var: float
    solve_ms: float
    eval_ms: float

    @property
    def normalized(self) -> float:
        return self.approx / self.exact_cvar if self.exact_cvar != 0 else float("nan")


@dataclass
class ExperimentConfig:
    """Everything a solve/evaluate/sweep run needs."""

    solver: str = "viq"
    atoms: Sequence[int] = (7,)
    alpha0: Sequence[float] = (0.1,)
    epsilon: float = DEFAULT_EPSILON
    s0: Sequence[int] | None = None
    alphas: Sequence[float] | None = None
    evaluator: str = "forpecvar"
    samples: int = 10_000
    seed: int = 0
    below_alpha0: str = DEFAULT_BELOW_ALPHA0
    envelope: str = "greedy"

    def check(self) -> None:
        if self.solver not in SOLVERS:
            raise ConfigError(f"solver must be one of {SOLVERS}, got {self.solver!r}")
        if self.evaluator not in EVALUATORS:
            raise ConfigError(f"evaluator must be one of {EVALUATORS}, got {self.evaluator!r}")
        if self.epsilon <= 0:
            raise ConfigError(f"epsilon must be > 0, got {self.epsilon}")
        for n in self.atoms:
            if n < 2:
                raise ConfigError(f"atom counts must be >= 2, got {n}")
        for a0 in self.alpha0:
            if not 0.0 < a0 < 1.0:
                raise ConfigError(f"alpha0 must be in (0, 1), got {a0}")
            for alpha in self.alphas or ():
                check_target(alpha, a0)


def check_target(alpha: float, alpha0: float) -> None:
    if alpha > 1.0 + ALPHA_TOL:
        raise ConfigError(f"target α={alpha} above 1")
    if alpha < alpha0 - 1e-9:
        raise ConfigError(f"target α below α₀: {alpha} < {alpha0}")


def load_problem(model_path: Path | None = None, spec: GridworldSpec | RiverSpec | None = None) -> Problem:
    """A validated model from a model file or a domain spec."""
    if model_path is not None:
        return Problem(model=load_model(model_path))
    if spec is None:
        raise ConfigError("either a model file or a domain spec is required")
    model = require_valid(build_domain(spec))
    domain = "gridworld" if isinstance(spec, GridworldSpec) else "river"
    return Problem(model=model, domain=domain, rows=spec.rows, cols=spec.cols, start=spec.state(spec.start))


def solve(
    model: SspMdp,
    solver: str = "viq",
    atoms: int = 7,
    alpha0: float = 0.1,
    epsilon: float = DEFAULT_EPSILON,
    below_alpha0: str = DEFAULT_BELOW_ALPHA0,
    envelope: str = "greedy",
) -> SolveResult:
    """Run CVaRVILI or CVaRVIQ on a log-spaced grid.

    Args:
        model: Validated SSP.
        solver: "vili" or "viq".
        atoms: Grid size N.
        alpha0: Smallest atom.
        epsilon: Residual at which iteration stops.
        below_alpha0: "extend" or "origin".
        envelope: Inner solver of vili, "greedy" or "lp".

    Returns:
        SolveResult with the solution and wall-clock seconds.
    """
    grid = build_atom_grid(alpha0, atoms)
    start = time.perf_counter()
    if solver == "vili":
        solution = run_vili(model, grid, epsilon, below_alpha0=below_alpha0, envelope=envelope)
    elif solver == "viq":
        solution = run_viq(model, grid, epsilon, below_alpha0=below_alpha0)
    else:
        raise ConfigError(f"solver must be one of {SOLVERS}, got {solver!r}")
    elapsed = time.perf_counter() - start
    return SolveResult(solution=solution, solver=solver, elapsed=elapsed)


def approximate_value(solution: Solution, s0: int, alpha: float) -> float:
    """V(s₀, α) read from the solution: at an atom directly, else I_s[V](α)/α."""
    grid = solution.grid
    check_target(alpha, grid.alpha0)
    i = grid.index_of(alpha)
    if i is not None:
        return float(solution.value[s0, i])
    return interpolate_yV(grid, solution.value[s0], alpha, solution.below_alpha0) / alpha


def evaluate(
    problem: Problem,
    result: SolveResult,
    s0_list: Sequence[int],
    alphas: Sequence[float] | None = None,
    evaluator: str = "forpecvar",
    samples: int = 10_000,
    seed: int = 0,
    on_exact: Callable[[int, float, EvalResult], None] | None = None,
) -> list[EvalRow]:
    """One row per (s₀, α); α defaults to every atom of the grid.

    `on_exact` receives each ForPECVaR result as (s₀, α, result).
    """
    model = problem.model
    solution = result.solution
    grid = solution.grid
    targets = list(grid.atoms) if alphas is None else list(alphas)
    for alpha in targets:
        check_target(alpha, grid.alpha0)

    rows = []
    for s0 in s0_list:
        extended = None
        for alpha in targets:
            tick = time.perf_counter()
            if evaluator == "forpecvar":
                if extended is None:
                    starts = [(s0, nearest_atom_log(grid, a)) for a in targets]
                    extended = create_extended_mdp(model, grid, solution, starts=starts)
                exact: EvalResult = run_forpecvar(model, solution, s0, alpha, extended=extended)
                if on_exact is not None:
                    on_exact(s0, float(alpha), exact)
                exact_cvar, exact_var = exact.cvar, exact.var
            elif evaluator == "mc":
                sampled = simulate_policy(model, solution, s0, McConfig(samples=samples, seed=seed), alpha=alpha)
                exact_cvar, exact_var = mc_cvar_estimate(sampled.distribution, alpha)
            else:
                raise ConfigError(f"evaluator must be one of {EVALUATORS}, got {evaluator!r}")
            rows.append(
                EvalRow(
                    domain=problem.domain,
                    m=problem.rows,
                    n=problem.cols,
                    solver=result.solver,
                    N=len(grid),
                    alpha0=grid.alpha0,
                    s0=s0,
                    alpha=float(alpha),
                    approx=approximate_value(solution, s0, alpha),
                    exact_cvar=exact_cvar,
                    exact_var=exact_var,
                    solve_ms=result.elapsed * 1000,
                    eval_ms=(time.perf_counter() - tick) * 1000,
                )
            )
    return rows


def sweep(
    problem: Problem,
    config: ExperimentConfig,
    s0_list: Sequence[int],
    on_rows: Callable[[list[EvalRow]], None] | None = None,
) -> list[EvalRow]:
    """Cross product of atom counts and α₀ values; rows in config order.

    Each finished config point is handed to on_rows before the next one is
    collected, so a failure keeps the rows already produced.
    """
    config.check()
    points = [(n, a0) for n in config.atoms for a0 in config.alpha0]

    def job(point: tuple[int, float]) -> list[EvalRow]:
        n, a0 = point
        result = solve(
            problem.model, config.solver, n, a0, config.epsilon,
            below_alpha0=config.below_alpha0, envelope=config.envelope,
        )
        return evaluate(problem, result, s0_list, config.alphas, config.evaluator, config.samples, config.seed)

    rows: list[EvalRow] = []
    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        for chunk in pool.map(job, points):
            rows.extend(chunk)
            if on_rows is not None:
                on_rows(chunk)
    return rows


@dataclass
class McComparison:
    """Exact value against Monte Carlo runs given the same wall-clock."""

    exact: float
    exact_ms: float
    estimates: list[float] = field(default_factory=list)
    samples: list[int] = field(default_factory=list)

    @property
    def errors(self) -> np.ndarray:
        return np.abs(np.array(self.estimates) - self.exact)

    @property
    def spread(self) -> float:
        return float(np.std(self.estimates)) if self.estimates else 0.0


def compare_mc(
    model: SspMdp,
    policy,
    s0: int,
    alpha: float,
    seeds: Sequence[int],
    min_budget: float = 0.01,
) -> McComparison:
    """Evaluate exactly, then give each MC seed the same wall-clock budget."""
    tick = time.perf_counter()
    exact = run_forpecvar(model, policy, s0, alpha)
    spent = time.perf_counter() - tick
    budget = max(spent, min_budget)
    comparison = McComparison(exact=exact.cvar, exact_ms=spent * 1000)
    for seed in seeds:
        sampled = simulate_policy(model, policy, s0, McConfig(samples=1, seed=seed, time_budget=budget), alpha=alpha)
        estimate, _ = mc_cvar_estimate(sampled.distribution, alpha)
        comparison.estimates.append(estimate)
        comparison.samples.append(sampled.samples)
    logger.info(
        "mc vs exact at alpha=%.4g: exact %.6g, mean |error| %.4g, spread %.4g",
        alpha, comparison.exact, float(comparison.errors.mean()), comparison.spread,
    )
    return comparison
