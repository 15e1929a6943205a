# =============================================================================
# TEST HELPERS: small SSPs and brute-force oracles
# =============================================================================

from __future__ import annotations

import itertools

import numpy as np

from cvarlab.risk import DiscreteDistribution
from cvarlab.ssp import SspMdp, StationaryPolicy, policy_evaluation_neutral, require_valid

RANDOM_COSTS = (0.5, 1.0, 2.0, 99.0)


def chain_model(cost: float = 5.0) -> SspMdp:
    """s0 --cost--> g."""
    return SspMdp(
        n_states=2,
        n_actions=1,
        transitions={(0, 0): ((1, 1.0),)},
        costs={(0, 0): cost},
        goals=frozenset({1}),
    )


def two_trajectory_model(p_bad: float = 0.1) -> SspMdp:
    """s0 --1--> {g: 1 − p_bad, s_bad: p_bad}; s_bad --99--> g.

    States: 0 = s0, 1 = s_bad, 2 = g. Costs 1 w.p. 1 − p_bad, 100 w.p. p_bad.
    """
    return SspMdp(
        n_states=3,
        n_actions=1,
        transitions={
            (0, 0): ((1, p_bad), (2, 1.0 - p_bad)),
            (1, 0): ((2, 1.0),),
        },
        costs={(0, 0): 1.0, (1, 0): 99.0},
        goals=frozenset({2}),
    )


def self_loop_model(gamma: float = 1.0) -> SspMdp:
    """s0 --1--> {s0: 0.5, g: 0.5}."""
    return SspMdp(
        n_states=2,
        n_actions=1,
        transitions={(0, 0): ((0, 0.5), (1, 0.5))},
        costs={(0, 0): 1.0},
        goals=frozenset({1}),
        gamma=gamma,
    )


def two_action_model(costs: tuple[float, float] = (5.0, 7.0)) -> SspMdp:
    return SspMdp(
        n_states=2,
        n_actions=2,
        transitions={(0, 0): ((1, 1.0),), (0, 1): ((1, 1.0),)},
        costs={(0, 0): costs[0], (0, 1): costs[1]},
        goals=frozenset({1}),
    )


def first_action_policy(model: SspMdp) -> StationaryPolicy:
    return StationaryPolicy.from_mapping(
        model.n_states, {s: model.actions(s)[0] for s in range(model.n_states) if not model.is_goal(s)}
    )


def random_ssp(rng: np.random.Generator) -> SspMdp:
    """Up to 6 states and 3 actions; the last state is the goal.

    Action 0 only moves forward or stays (stay mass ≤ 0.25), so the policy
    "always action 0" is proper. Other actions go anywhere.
    """
    n = int(rng.integers(2, 7))
    m = int(rng.integers(1, 4))
    transitions = {}
    costs = {}
    for s in range(n - 1):
        for a in range(m):
            if a == 0:
                targets = np.arange(s + 1, n)
            else:
                targets = np.arange(n)
            k = int(rng.integers(1, len(targets) + 1))
            chosen = rng.choice(targets, size=k, replace=False)
            weights = rng.uniform(0.1, 1.0, size=k)
            stay = float(rng.uniform(0.05, 0.25)) if a == 0 and rng.random() < 0.5 else 0.0
            probs = (1.0 - stay) * weights / weights.sum()
            row = {int(t): float(p) for t, p in zip(chosen, probs)}
            if stay:
                row[s] = row.get(s, 0.0) + stay
            transitions[(s, a)] = tuple(sorted(row.items()))
            costs[(s, a)] = float(rng.choice(RANDOM_COSTS))
    return require_valid(
        SspMdp(
            n_states=n,
            n_actions=m,
            transitions=transitions,
            costs=costs,
            goals=frozenset({n - 1}),
        )
    )


def brute_force_distribution(
    model: SspMdp,
    policy: StationaryPolicy,
    s0: int,
    floor: float = 1e-24,
) -> DiscreteDistribution:
    """Accumulated-cost distribution by stepping (state, cost) mass forward.

    Entries lighter than `floor` are closed off at cost-so-far plus their
    expected cost-to-go, so the mean is kept exactly. Undiscounted models only.
    """
    to_go = policy_evaluation_neutral(model, policy, 1e-12, starts=[s0])
    frontier = {(s0, 0.0): 1.0}
    costs: list[float] = []
    weights: list[float] = []
    while frontier:
        nxt: dict[tuple[int, float], float] = {}
        for (s, c), p in frontier.items():
            if model.is_goal(s):
                costs.append(c)
                weights.append(p)
                continue
            if p < floor:
                costs.append(c + to_go[s])
                weights.append(p)
                continue
            a = policy[s]
            step = c + model.cost(s, a)
            for s_next, q in model.successors(s, a):
                key = (s_next, step)
                nxt[key] = nxt.get(key, 0.0) + p * q
        frontier = nxt
    return DiscreteDistribution.from_values(costs, weights)


def pwl(atoms: np.ndarray, yv: np.ndarray, z: float) -> float:
    """Concave piecewise-linear g through (atoms, yv), first slope extended to 0."""
    first = (yv[1] - yv[0]) / (atoms[1] - atoms[0])
    xs = np.concatenate(([0.0], atoms))
    ys = np.concatenate(([yv[0] - first * atoms[0]], yv))
    return float(np.interp(z, xs, ys))


def envelope_oracle(y: float, probs: np.ndarray, atoms: np.ndarray, rows: list[np.ndarray]) -> float:
    """Vertex enumeration of max Σ p_j g_j(z_j) / y  s.t. Σ p_j z_j = y, 0 ≤ z_j ≤ 1.

    Some optimum has every z_j but one on a breakpoint of its g_j.
    """
    breaks = np.concatenate(([0.0], atoms))
    d = len(probs)
    best = -np.inf
    for free in range(d):
        others = [j for j in range(d) if j != free]
        for combo in itertools.product(breaks, repeat=len(others)):
            used = sum(probs[j] * z for j, z in zip(others, combo))
            z_free = (y - used) / probs[free]
            if z_free < -1e-12 or z_free > 1.0 + 1e-12:
                continue
            z_free = min(max(z_free, 0.0), 1.0)
            total = probs[free] * pwl(atoms, rows[free], z_free)
            total += sum(probs[j] * pwl(atoms, rows[j], z) for j, z in zip(others, combo))
            best = max(best, total)
    return best / y


def random_concave_row(rng: np.random.Generator, atoms: np.ndarray, scale: float = 100.0) -> np.ndarray:
    """yCVaR-like row: non-increasing non-negative slopes, non-negative intercept."""
    slopes = np.sort(rng.uniform(0.0, scale, size=len(atoms) - 1))[::-1]
    start = atoms[0] * (slopes[0] + rng.uniform(0.0, scale / 10))
    return np.concatenate(([start], start + np.cumsum(slopes * np.diff(atoms))))


def min_trajectory_cost(model: SspMdp, policy: StationaryPolicy, s0: int) -> float:
    """Cheapest goal-reaching trajectory, by enumerating simple paths.

    Costs are non-negative, so revisiting a state never helps. Undiscounted
    models only.
    """
    best = np.inf

    def walk(s: int, cost: float, seen: frozenset[int]) -> None:
        nonlocal best
        if model.is_goal(s):
            best = min(best, cost)
            return
        a = policy[s]
        step = cost + model.cost(s, a)
        for s_next, p in model.successors(s, a):
            if p > 0 and s_next not in seen:
                walk(s_next, step, seen | {s_next})

    walk(s0, 0.0, frozenset({s0}))
    return float(best)


def absorption_probability(model: SspMdp, policy: StationaryPolicy, steps: int = 2**40) -> np.ndarray:
    """Mass in the goals after `steps` transitions, by repeated squaring."""
    n = model.n_states
    matrix = np.zeros((n, n))
    for s in range(n):
        if model.is_goal(s) or policy[s] < 0:
            matrix[s, s] = 1.0
            continue
        for s_next, p in model.successors(s, policy[s]):
            matrix[s, s_next] += p
    power = np.linalg.matrix_power(matrix, steps)
    goals = sorted(model.goals)
    return power[:, goals].sum(axis=1)


def all_policies(model: SspMdp) -> list[StationaryPolicy]:
    """Every deterministic stationary policy of a small model."""
    free = [s for s in range(model.n_states) if not model.is_goal(s)]
    return [
        StationaryPolicy.from_mapping(model.n_states, dict(zip(free, choice)))
        for choice in itertools.product(*(model.actions(s) for s in free))
    ]
