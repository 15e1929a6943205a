# =============================================================================
# TESTS: Monte Carlo rollouts and empirical CVaR
# =============================================================================

from __future__ import annotations

import numpy as np
import pytest

from cvarlab.domains import GridworldSpec, make_gridworld
from cvarlab.errors import ImproperPolicyError, TooManyFailuresError
from cvarlab.forpecvar import run_forpecvar
from cvarlab.montecarlo import McConfig, histogram, mc_cvar_estimate, simulate_policy
from cvarlab.ssp import SspMdp, StationaryPolicy, value_iteration_neutral
from cvarlab.vili import AtomGrid, run_vili

from tests.helpers import chain_model, first_action_policy, self_loop_model, two_trajectory_model


_TEN_SAMPLES = np.array([1.0] * 9 + [100.0])


class TestMcConfig:
    def test_rejects_no_samples(self):
        with pytest.raises(ValueError):
            McConfig(samples=0)

    def test_rejects_negative_seed(self):
        with pytest.raises(ValueError):
            McConfig(samples=10, seed=-1)

    def test_rejects_bad_budget(self):
        with pytest.raises(ValueError):
            McConfig(samples=10, time_budget=0.0)


class TestSimulate:
    def test_deterministic_chain(self):
        model = chain_model(5.0)
        result = simulate_policy(model, first_action_policy(model), 0, McConfig(samples=500))
        assert result.costs.tolist() == [5.0] * 500
        assert result.failures == 0

    def test_start_at_goal(self):
        model = chain_model(5.0)
        result = simulate_policy(model, first_action_policy(model), 1, McConfig(samples=100))
        assert result.costs.tolist() == [0.0] * 100

    def test_outcome_frequency(self):
        model = two_trajectory_model()
        result = simulate_policy(model, first_action_policy(model), 0, McConfig(samples=1_000_000, seed=1))
        share = float(np.mean(result.costs == 1.0))
        assert share == pytest.approx(0.9, abs=1e-3)
        assert set(result.distribution.support.tolist()) == {1.0, 100.0}

    def test_same_result_for_any_worker_count(self):
        model = self_loop_model()
        policy = first_action_policy(model)
        one = simulate_policy(model, policy, 0, McConfig(samples=10_000, seed=5, block=1000, workers=1))
        four = simulate_policy(model, policy, 0, McConfig(samples=10_000, seed=5, block=1000, workers=4))
        assert np.array_equal(one.costs, four.costs)

    def test_seed_changes_samples(self):
        model = self_loop_model()
        policy = first_action_policy(model)
        a = simulate_policy(model, policy, 0, McConfig(samples=2000, seed=1))
        b = simulate_policy(model, policy, 0, McConfig(samples=2000, seed=2))
        assert not np.array_equal(a.costs, b.costs)

    def test_too_many_failures(self):
        model = self_loop_model()
        with pytest.raises(TooManyFailuresError):
            simulate_policy(model, first_action_policy(model), 0, McConfig(samples=1000, max_steps=1))

    def test_improper_policy(self):
        looping = SspMdp(
            n_states=2,
            n_actions=1,
            transitions={(0, 0): ((0, 1.0),)},
            costs={(0, 0): 1.0},
            goals=frozenset({1}),
        )
        with pytest.raises(ImproperPolicyError):
            simulate_policy(looping, StationaryPolicy.from_mapping(2, {0: 0}), 0, McConfig(samples=10))

    def test_time_budget(self):
        model = self_loop_model()
        config = McConfig(samples=1, time_budget=0.05, block=100, workers=1)
        result = simulate_policy(model, first_action_policy(model), 0, config)
        assert result.samples >= 100
        assert result.samples % 100 == 0

    def test_augmented_policy_needs_alpha(self):
        model = two_trajectory_model()
        solution = run_vili(model, AtomGrid(atoms=np.array([0.1, 0.2, 1.0])), epsilon=1e-9)
        with pytest.raises(ValueError):
            simulate_policy(model, solution, 0, McConfig(samples=10))

    def test_augmented_policy(self):
        model = two_trajectory_model()
        solution = run_vili(model, AtomGrid(atoms=np.array([0.1, 0.2, 1.0])), epsilon=1e-9)
        result = simulate_policy(model, solution, 0, McConfig(samples=20_000, seed=3), alpha=0.2)
        assert set(result.distribution.support.tolist()) == {1.0, 100.0}
        assert result.distribution.mean() == pytest.approx(10.9, rel=0.05)

    def test_histogram(self):
        model = two_trajectory_model()
        result = simulate_policy(model, first_action_policy(model), 0, McConfig(samples=1000))
        hist = histogram(result)
        assert hist["support"] == [1.0, 100.0]
        assert sum(hist["counts"]) == 1000
        assert hist["failures"] == 0


class TestEstimate:
    def test_tail_boundary(self):
        cvar, var = mc_cvar_estimate(_TEN_SAMPLES, 0.1)
        assert cvar == pytest.approx(100.0)
        assert var == 1.0

    def test_fractional_boundary_sample(self):
        cvar, _ = mc_cvar_estimate(_TEN_SAMPLES, 0.2)
        assert cvar == pytest.approx(50.5)

    def test_expectation(self):
        cvar, var = mc_cvar_estimate(_TEN_SAMPLES, 1.0)
        assert cvar == pytest.approx(10.9)
        assert var == 1.0

    def test_rejects_bad_alpha(self):
        with pytest.raises(ValueError):
            mc_cvar_estimate(_TEN_SAMPLES, 0.0)


class TestConcentration:
    def test_seeds_land_near_exact_cvar(self):
        model = make_gridworld(GridworldSpec(rows=5, cols=5, seed=0))
        _, policy = value_iteration_neutral(model, 1e-9)
        exact = run_forpecvar(model, policy, 24, 0.1).cvar
        close = 0
        for seed in range(20):
            result = simulate_policy(model, policy, 24, McConfig(samples=10_000, seed=seed))
            estimate, _ = mc_cvar_estimate(result.distribution, 0.1)
            close += abs(estimate - exact) <= 1.0
        assert close >= 19
