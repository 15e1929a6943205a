# =============================================================================
# TESTS: Runner (problem loading, solve dispatch, evaluation rows, sweeps)
# =============================================================================

from __future__ import annotations

import numpy as np
import pytest

from cvarlab.api import to_csv
from cvarlab.domains import GridworldSpec, RiverSpec
from cvarlab.errors import ConfigError
from cvarlab.forpecvar import run_forpecvar
from cvarlab.runner import (
    ExperimentConfig,
    Problem,
    SolveResult,
    approximate_value,
    compare_mc,
    evaluate,
    load_problem,
    solve,
    sweep,
)
from cvarlab.vili import AtomGrid, run_vili

from tests.helpers import first_action_policy, two_trajectory_model


_GRID = AtomGrid(atoms=np.array([0.1, 0.2, 1.0]))
_SWEEP_ALPHAS = (0.1, 0.2, 0.5, 0.8, 1.0)


def _two_trajectory_result() -> tuple[Problem, SolveResult]:
    model = two_trajectory_model()
    solution = run_vili(model, _GRID, epsilon=1e-9)
    return Problem(model=model), SolveResult(solution=solution, solver="vili", elapsed=0.0)


def _gridworld() -> Problem:
    return load_problem(spec=GridworldSpec(rows=5, cols=5, seed=0))


class TestLoadProblem:
    def test_from_gridworld_spec(self):
        problem = _gridworld()
        assert problem.domain == "gridworld"
        assert (problem.rows, problem.cols) == (5, 5)
        assert problem.start == 24

    def test_from_river_spec(self):
        problem = load_problem(spec=RiverSpec(rows=10, cols=3))
        assert problem.domain == "river"
        assert problem.start == 24

    def test_requires_a_source(self):
        with pytest.raises(ConfigError):
            load_problem()


class TestSolve:
    @pytest.mark.parametrize("solver", ["vili", "viq"])
    def test_solution_shape(self, solver):
        result = solve(_gridworld().model, solver, atoms=7, alpha0=0.1)
        assert result.solution.value.shape == (25, 7)
        assert result.solution.kind == solver
        assert result.elapsed > 0

    def test_unknown_solver(self):
        with pytest.raises(ConfigError):
            solve(two_trajectory_model(), "pi")


class TestApproximateValue:
    def test_at_atom(self):
        _, result = _two_trajectory_result()
        assert approximate_value(result.solution, 0, 0.2) == pytest.approx(50.5)

    def test_between_atoms(self):
        _, result = _two_trajectory_result()
        # y·V is linear between (0.2, 10.1) and (1, 10.9)
        assert approximate_value(result.solution, 0, 0.6) == pytest.approx(10.5 / 0.6)

    def test_below_alpha0(self):
        _, result = _two_trajectory_result()
        with pytest.raises(ConfigError, match="below"):
            approximate_value(result.solution, 0, 0.05)


class TestEvaluate:
    def test_two_trajectory_rows(self):
        problem, result = _two_trajectory_result()
        rows = evaluate(problem, result, [0], [0.2, 1.0])
        assert [r.alpha for r in rows] == [0.2, 1.0]
        assert rows[0].approx == pytest.approx(50.5)
        assert rows[0].exact_cvar == pytest.approx(50.5)
        assert rows[0].exact_var == 1.0
        assert rows[0].normalized == pytest.approx(1.0)
        assert rows[1].exact_cvar == pytest.approx(10.9)

    def test_defaults_to_every_atom(self):
        problem, result = _two_trajectory_result()
        rows = evaluate(problem, result, [0])
        assert [r.alpha for r in rows] == pytest.approx([0.1, 0.2, 1.0])
        assert rows[0].exact_cvar == pytest.approx(100.0)

    def test_exact_results_reach_callback(self):
        problem, result = _two_trajectory_result()
        seen = []
        rows = evaluate(problem, result, [0], [0.2, 1.0], on_exact=lambda *args: seen.append(args))
        assert [(s0, alpha) for s0, alpha, _ in seen] == [(0, 0.2), (0, 1.0)]
        assert [exact.cvar for _, _, exact in seen] == [r.exact_cvar for r in rows]
        assert all(exact.trace for _, _, exact in seen)

    def test_callback_skipped_when_sampling(self):
        problem, result = _two_trajectory_result()
        seen = []
        evaluate(problem, result, [0], [1.0], evaluator="mc", samples=100, on_exact=lambda *args: seen.append(args))
        assert seen == []

    def test_rejects_target_below_alpha0(self):
        problem, result = _two_trajectory_result()
        with pytest.raises(ConfigError):
            evaluate(problem, result, [0], [0.01])

    def test_monte_carlo_evaluator(self):
        problem, result = _two_trajectory_result()
        rows = evaluate(problem, result, [0], [1.0], evaluator="mc", samples=20_000, seed=4)
        assert rows[0].exact_cvar == pytest.approx(10.9, rel=0.05)

    def test_unknown_evaluator(self):
        problem, result = _two_trajectory_result()
        with pytest.raises(ConfigError):
            evaluate(problem, result, [0], [1.0], evaluator="oracle")


class TestExperimentConfig:
    def test_unknown_solver(self):
        with pytest.raises(ConfigError):
            ExperimentConfig(solver="pi").check()

    def test_alpha_below_smallest_alpha0(self):
        with pytest.raises(ConfigError):
            ExperimentConfig(alpha0=(0.1, 0.2), alphas=(0.15,)).check()

    def test_too_few_atoms(self):
        with pytest.raises(ConfigError):
            ExperimentConfig(atoms=(1,)).check()


class TestSweep:
    def _config(self) -> ExperimentConfig:
        return ExperimentConfig(solver="viq", atoms=(7, 13), alpha0=(0.1, 0.01), alphas=_SWEEP_ALPHAS)

    def test_row_count_and_order(self):
        problem = _gridworld()
        chunks = []
        rows = sweep(problem, self._config(), [problem.start], on_rows=chunks.append)
        assert len(rows) == 20
        assert len(chunks) == 4
        assert [(r.N, r.alpha0) for r in rows[::5]] == [(7, 0.1), (7, 0.01), (13, 0.1), (13, 0.01)]

    def test_normalized_values(self):
        problem = _gridworld()
        rows = sweep(problem, self._config(), [problem.start])
        assert all(r.normalized <= 1.05 for r in rows)

    def test_reruns_are_byte_identical(self):
        problem = _gridworld()
        first = to_csv(sweep(problem, self._config(), [problem.start]), timings=False)
        second = to_csv(sweep(problem, self._config(), [problem.start]), timings=False)
        assert first == second


class TestRefinement:
    """7 vs 25 atoms on the 5x5 gridworld, rows continued through the origin below α₀."""

    @pytest.fixture(scope="class")
    def solutions(self):
        model = _gridworld().model
        coarse = solve(model, "viq", atoms=7, alpha0=0.01, epsilon=1e-9, below_alpha0="origin").solution
        fine = solve(model, "viq", atoms=25, alpha0=0.01, epsilon=1e-9, below_alpha0="origin").solution
        return model, coarse, fine

    def test_shared_atoms(self, solutions):
        _, coarse, fine = solutions
        # atoms[k] of the 7-atom grid is atoms[4k] of the 25-atom grid
        assert np.allclose(fine.grid.atoms[::4], coarse.grid.atoms)

    def test_approximate_values_rise(self, solutions):
        _, coarse, fine = solutions
        assert (fine.value[:, ::4] >= coarse.value - 1e-6).all()

    def test_exact_values_fall_and_gap_shrinks(self, solutions):
        model, coarse, fine = solutions
        start = _gridworld().start
        for k, alpha in enumerate(coarse.grid.atoms):
            exact_coarse = run_forpecvar(model, coarse, start, float(alpha)).cvar
            exact_fine = run_forpecvar(model, fine, start, float(alpha)).cvar
            assert exact_fine <= exact_coarse + 1e-6
            gap_coarse = exact_coarse - coarse.value[start, k]
            gap_fine = exact_fine - fine.value[start, 4 * k]
            assert gap_fine <= gap_coarse + 1e-6


class TestCompareMc:
    def test_matched_budget(self):
        model = two_trajectory_model(p_bad=0.01)
        comparison = compare_mc(model, first_action_policy(model), 0, 0.02, seeds=range(8))
        assert comparison.exact == pytest.approx(50.5)
        assert len(comparison.estimates) == 8
        assert min(comparison.samples) >= 4096
        assert comparison.spread > 0
        assert float(comparison.errors.mean()) < 25.0
