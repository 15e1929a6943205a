# =============================================================================
# STOCHASTIC SHORTEST PATH CORE
# =============================================================================
#
# Finite SSP model <S, A, P, c, G> plus discount γ, model validation,
# risk-neutral policy evaluation and value iteration, properness checks and
# the best-outcome determinized min-cost values used as the ForPECVaR
# heuristic.
#
# State and action ids are dense integers. Inner loops run on padded numpy
# tables: for a model, succ/prob of shape (S, A, D); for a fixed policy,
# a PolicyChain with succ/prob of shape (S, D). Padding entries point at the
# state itself with probability 0.
#
# Goal states need no transitions: they are absorbing with zero cost.
#
# =============================================================================

from __future__ import annotations

import heapq
import logging
import time
from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np

from cvarlab.config import (
    DEFAULT_MAX_ITERATIONS,
    DIRECT_SOLVE_LIMIT,
    MIN_COST_TOL,
    PROB_TOL,
)
from cvarlab.errors import (
    ImproperPolicyError,
    InvalidModelError,
    NoProperPolicyError,
    NonConvergenceError,
)

logger = logging.getLogger(__name__)

# Values over states, indexed by state id (cost units)
ValueFunction = np.ndarray

Outcomes = tuple[tuple[int, float], ...]


@dataclass(frozen=True)
class Violation:
    """One failed SspMdp invariant."""

    kind: str
    state: int | None
    action: int | None
    message: str


@dataclass(frozen=True, eq=False)
class ModelArrays:
    """Padded transition tables of an SspMdp."""

    succ: np.ndarray  # (S, A, D) int
    prob: np.ndarray  # (S, A, D) float
    cost: np.ndarray  # (S, A) float
    available: np.ndarray  # (S, A) bool
    goal: np.ndarray  # (S,) bool


@dataclass(frozen=True, eq=False)
class Branch:
    """One available action of a state with its positive-probability outcomes."""

    action: int
    cost: float
    succ: np.ndarray
    prob: np.ndarray


@dataclass(frozen=True, eq=False)
class SspMdp:
    """Finite stochastic shortest path model."""

    n_states: int
    n_actions: int
    transitions: Mapping[tuple[int, int], Outcomes]
    costs: Mapping[tuple[int, int], float]
    goals: frozenset[int]
    gamma: float = 1.0
    state_names: tuple[str, ...] | None = None
    action_names: tuple[str, ...] | None = None

    def is_goal(self, s: int) -> bool:
        return s in self.goals

    def actions(self, s: int) -> tuple[int, ...]:
        """Actions with transitions in state s, ascending."""
        return self._actions_by_state[s]

    def successors(self, s: int, a: int) -> Outcomes:
        return self.transitions.get((s, a), ())

    def cost(self, s: int, a: int) -> float:
        return self.costs.get((s, a), 0.0)

    def branch(self, s: int, a: int) -> Branch:
        for candidate in self.branches[s]:
            if candidate.action == a:
                return candidate
        raise KeyError(f"action {a} is not available in state {s}")

    @cached_property
    def max_degree(self) -> int:
        return max((len(b.succ) for row in self.branches for b in row), default=1)

    @cached_property
    def _actions_by_state(self) -> tuple[tuple[int, ...], ...]:
        by_state: list[list[int]] = [[] for _ in range(self.n_states)]
        for s, a in self.transitions:
            if 0 <= s < self.n_states:
                by_state[s].append(a)
        return tuple(tuple(sorted(acts)) for acts in by_state)

    @cached_property
    def branches(self) -> tuple[tuple[Branch, ...], ...]:
        """Per state, its actions in ascending order; empty for goals."""
        table = []
        for s in range(self.n_states):
            if s in self.goals:
                table.append(())
                continue
            row = []
            for a in self.actions(s):
                outcomes = [(s_next, p) for s_next, p in self.successors(s, a) if p > 0]
                row.append(
                    Branch(
                        action=a,
                        cost=self.cost(s, a),
                        succ=np.array([s_next for s_next, _ in outcomes], dtype=int),
                        prob=np.array([p for _, p in outcomes], dtype=float),
                    )
                )
            table.append(tuple(row))
        return tuple(table)

    @cached_property
    def arrays(self) -> ModelArrays:
        n, m = self.n_states, self.n_actions
        degree = max((len(v) for v in self.transitions.values()), default=1)
        degree = max(degree, 1)
        succ = np.repeat(np.arange(n)[:, None, None], m, axis=1).repeat(degree, axis=2)
        prob = np.zeros((n, m, degree))
        cost = np.zeros((n, m))
        available = np.zeros((n, m), dtype=bool)
        for (s, a), outcomes in self.transitions.items():
            if s in self.goals:
                continue
            available[s, a] = True
            cost[s, a] = self.cost(s, a)
            for d, (s_next, p) in enumerate(outcomes):
                succ[s, a, d] = s_next
                prob[s, a, d] = p
        goal = np.zeros(n, dtype=bool)
        goal[list(self.goals)] = True
        return ModelArrays(succ=succ, prob=prob, cost=cost, available=available, goal=goal)


@dataclass(frozen=True, eq=False)
class StationaryPolicy:
    """Maps every non-goal state to an action; -1 marks goals/undefined."""

    action: np.ndarray = field(repr=False)

    @classmethod
    def from_mapping(cls, n_states: int, mapping: Mapping[int, int] | Sequence[int]) -> StationaryPolicy:
        table = np.full(n_states, -1, dtype=int)
        items = mapping.items() if isinstance(mapping, Mapping) else enumerate(mapping)
        for s, a in items:
            table[s] = -1 if a is None else a
        return cls(action=table)

    def __getitem__(self, s: int) -> int:
        return int(self.action[s])

    def __len__(self) -> int:
        return len(self.action)


@dataclass(frozen=True, eq=False)
class PolicyChain:
    """The Markov chain induced by a fixed single action per state."""

    succ: np.ndarray  # (S, D) int
    prob: np.ndarray  # (S, D) float
    cost: np.ndarray  # (S,) float
    goal: np.ndarray  # (S,) bool
    gamma: float

    @property
    def n_states(self) -> int:
        return len(self.cost)


# =============================================================================
# VALIDATION
# =============================================================================


def validate_ssp(model: SspMdp) -> list[Violation]:
    """Report every violated SspMdp invariant; never raises."""
    violations: list[Violation] = []

    if not model.goals:
        violations.append(Violation("no goals", None, None, "goal set is empty"))
    for g in sorted(model.goals):
        if not 0 <= g < model.n_states:
            violations.append(Violation("unknown state", g, None, f"goal {g} is not a state"))
    if not 0.0 < model.gamma <= 1.0:
        violations.append(Violation("discount", None, None, f"gamma={model.gamma} outside (0, 1]"))

    for (s, a), outcomes in sorted(model.transitions.items()):
        if not 0 <= s < model.n_states or not 0 <= a < model.n_actions:
            violations.append(Violation("unknown state", s, a, f"({s},{a}) outside model bounds"))
            continue
        total = 0.0
        for s_next, p in outcomes:
            if not 0 <= s_next < model.n_states:
                violations.append(Violation("unknown state", s, a, f"successor {s_next} is not a state"))
            if p < 0:
                violations.append(Violation("negative probability", s, a, f"P({s},{a},{s_next})={p}"))
            total += p
        if abs(total - 1.0) > PROB_TOL:
            violations.append(Violation("probability mass", s, a, f"P({s},{a},.) sums to {total!r}"))
        if s in model.goals:
            stay = sum(p for s_next, p in outcomes if s_next == s)
            if abs(stay - 1.0) > PROB_TOL:
                violations.append(Violation("goal not absorbing", s, a, f"P({s},{a},{s})={stay!r}"))

    for (s, a), c in sorted(model.costs.items()):
        if c < 0:
            violations.append(Violation("negative cost", s, a, f"c({s},{a})={c}"))
        if s in model.goals and c != 0:
            violations.append(Violation("goal cost nonzero", s, a, f"c({s},{a})={c} at goal"))

    for s in range(model.n_states):
        if s not in model.goals and not model.actions(s):
            violations.append(Violation("dead end", s, None, f"non-goal state {s} has no actions"))

    return violations


def require_valid(model: SspMdp) -> SspMdp:
    """Raise InvalidModelError unless the model validates; renormalize rows."""
    violations = validate_ssp(model)
    if violations:
        raise InvalidModelError(
            f"model has {len(violations)} violation(s): {violations[0].message}",
            violations,
        )
    return normalize_probabilities(model)


def normalize_probabilities(model: SspMdp) -> SspMdp:
    """Merge duplicate successors, drop zero mass, rescale rows to sum 1."""
    rows: dict[tuple[int, int], Outcomes] = {}
    changed = False
    for key, outcomes in model.transitions.items():
        merged: dict[int, float] = {}
        for s_next, p in outcomes:
            if p > 0:
                merged[s_next] = merged.get(s_next, 0.0) + float(p)
        total = sum(merged.values())
        if total <= 0:
            rows[key] = ()
            changed = True
            continue
        row = tuple((s_next, p / total) for s_next, p in sorted(merged.items()))
        if row != tuple(outcomes):
            changed = True
        rows[key] = row
    if not changed:
        return model
    logger.debug("renormalized transition rows of a %d-state model", model.n_states)
    return SspMdp(
        n_states=model.n_states,
        n_actions=model.n_actions,
        transitions=rows,
        costs=dict(model.costs),
        goals=model.goals,
        gamma=model.gamma,
        state_names=model.state_names,
        action_names=model.action_names,
    )


# =============================================================================
# POLICY CHAINS AND REACHABILITY
# =============================================================================


def policy_chain(model: SspMdp, policy: StationaryPolicy) -> PolicyChain:
    """Padded chain of the policy; undefined non-goal actions become dead ends."""
    arrays = model.arrays
    n = model.n_states
    actions = np.asarray(policy.action)
    rows = np.arange(n)
    defined = (actions >= 0) & ~arrays.goal
    safe = np.where(defined, actions, 0)
    succ = arrays.succ[rows, safe].copy()
    prob = arrays.prob[rows, safe].copy()
    cost = arrays.cost[rows, safe].copy()
    usable = defined & arrays.available[rows, safe]
    prob[~usable] = 0.0
    cost[~usable] = 0.0
    succ[~usable] = rows[~usable, None]
    return PolicyChain(succ=succ, prob=prob, cost=cost, goal=arrays.goal.copy(), gamma=model.gamma)


def reaches_goal(chain: PolicyChain) -> np.ndarray:
    """Mask of states with a positive-probability path to some goal."""
    reach = chain.goal.copy()
    edges = chain.prob > 0
    while True:
        grown = reach | (edges & reach[chain.succ]).any(axis=1)
        if np.array_equal(grown, reach):
            return reach
        reach = grown


def reachable_from(chain: PolicyChain, starts: Sequence[int]) -> np.ndarray:
    """Mask of states reachable from the given starts under the chain."""
    mask = np.zeros(chain.n_states, dtype=bool)
    mask[list(starts)] = True
    frontier = mask.copy()
    while frontier.any():
        rows = np.flatnonzero(frontier & ~chain.goal)
        nxt = chain.succ[rows][chain.prob[rows] > 0]
        frontier = np.zeros_like(mask)
        frontier[nxt] = True
        frontier &= ~mask
        mask |= frontier
    return mask


def _closure(chain: PolicyChain, starts: Sequence[int] | None) -> np.ndarray:
    if starts is None:
        return np.ones(chain.n_states, dtype=bool)
    return reachable_from(chain, starts)


def is_proper(model: SspMdp, policy: StationaryPolicy, starts: Sequence[int] | None = None) -> bool:
    """True iff every state (or every state reachable from starts) reaches a goal w.p. 1.

    In a finite chain, absorption with probability 1 from s is equivalent to
    every state reachable from s having a path to a goal.
    """
    chain = policy_chain(model, policy)
    return chain_is_proper(chain, starts)


def chain_is_proper(chain: PolicyChain, starts: Sequence[int] | None = None) -> bool:
    scope = _closure(chain, starts)
    return bool(reaches_goal(chain)[scope].all())


# =============================================================================
# RISK-NEUTRAL EVALUATION
# =============================================================================


def evaluate_chain(
    chain: PolicyChain,
    epsilon: float,
    starts: Sequence[int] | None = None,
    method: str = "auto",
    max_iterations: int = DEFAULT_MAX_ITERATIONS,
    error: type[ImproperPolicyError] = ImproperPolicyError,
) -> ValueFunction:
    """Expected accumulated (discounted) cost of every state of the chain.

    States outside the closure of `starts` are reported as NaN.
    """
    if epsilon <= 0:
        raise ValueError(f"epsilon must be > 0, got {epsilon}")
    if method not in ("auto", "direct", "iterative"):
        raise ValueError(f"method must be auto, direct or iterative, got {method!r}")

    scope = _closure(chain, starts)
    bad = scope & ~reaches_goal(chain)
    if bad.any():
        raise error(
            f"policy is improper: {int(bad.sum())} state(s) cannot reach a goal "
            f"(first: {int(np.flatnonzero(bad)[0])})"
        )

    active = scope & ~chain.goal
    if method == "auto":
        method = "direct" if active.sum() <= DIRECT_SOLVE_LIMIT else "iterative"

    values = np.zeros(chain.n_states)
    if active.any():
        if method == "direct":
            values[active] = _solve_direct(chain, active)
        else:
            values = _solve_iterative(chain, active, epsilon, max_iterations)
    values[~scope] = np.nan
    return values


def _solve_direct(chain: PolicyChain, active: np.ndarray) -> np.ndarray:
    index = np.full(chain.n_states, -1)
    rows = np.flatnonzero(active)
    index[rows] = np.arange(len(rows))
    system = np.eye(len(rows))
    for r, s in enumerate(rows):
        for s_next, p in zip(chain.succ[s], chain.prob[s]):
            if p > 0 and index[s_next] >= 0:
                system[r, index[s_next]] -= chain.gamma * p
    return np.linalg.solve(system, chain.cost[rows])


def _solve_iterative(
    chain: PolicyChain,
    active: np.ndarray,
    epsilon: float,
    max_iterations: int,
) -> np.ndarray:
    values = np.zeros(chain.n_states)
    for iteration in range(1, max_iterations + 1):
        updated = chain.cost + chain.gamma * (chain.prob * values[chain.succ]).sum(axis=1)
        updated[~active] = 0.0
        residual = float(np.max(np.abs(updated - values)))
        values = updated
        if residual <= epsilon:
            logger.debug("policy evaluation converged in %d iterations", iteration)
            return values
    raise NonConvergenceError(f"policy evaluation did not reach epsilon={epsilon} in {max_iterations} iterations")


def policy_evaluation_neutral(
    model: SspMdp,
    policy: StationaryPolicy,
    epsilon: float,
    starts: Sequence[int] | None = None,
    method: str = "auto",
) -> ValueFunction:
    """Mean cost-to-go of a policy: V(g)=0, V(s) = c(s,π(s)) + γ Σ P(s,π(s),s') V(s')."""
    return evaluate_chain(policy_chain(model, policy), epsilon, starts=starts, method=method)


def value_iteration_neutral(
    model: SspMdp,
    epsilon: float,
    max_iterations: int = DEFAULT_MAX_ITERATIONS,
) -> tuple[ValueFunction, StationaryPolicy]:
    """Optimal expected cost-to-goal and a greedy policy (lowest action on ties)."""
    if epsilon <= 0:
        raise ValueError(f"epsilon must be > 0, got {epsilon}")
    arrays = model.arrays
    edges = arrays.available[:, :, None] & (arrays.prob > 0)

    reach = arrays.goal.copy()
    while True:
        grown = reach | (edges & reach[arrays.succ]).any(axis=(1, 2))
        if np.array_equal(grown, reach):
            break
        reach = grown
    if not reach.all():
        stuck = np.flatnonzero(~reach)
        raise NoProperPolicyError(f"{len(stuck)} state(s) cannot reach a goal under any action (first: {int(stuck[0])})")

    values = np.zeros(model.n_states)
    start = time.perf_counter()
    for iteration in range(1, max_iterations + 1):
        q = _neutral_q(model, values)
        updated = np.where(arrays.goal, 0.0, q.min(axis=1))
        residual = float(np.max(np.abs(updated - values))) if len(values) else 0.0
        values = updated
        if residual <= epsilon:
            logger.info(
                "neutral value iteration converged: %d iterations, %.1f ms",
                iteration,
                (time.perf_counter() - start) * 1000,
            )
            break
    else:
        raise NonConvergenceError(f"value iteration did not reach epsilon={epsilon} in {max_iterations} iterations")

    actions = np.argmin(_neutral_q(model, values), axis=1)
    actions[arrays.goal] = -1
    return values, StationaryPolicy(action=actions)


def _neutral_q(model: SspMdp, values: np.ndarray) -> np.ndarray:
    arrays = model.arrays
    q = arrays.cost + model.gamma * (arrays.prob * values[arrays.succ]).sum(axis=2)
    return np.where(arrays.available, q, np.inf)


# =============================================================================
# DETERMINIZED MIN-COST HEURISTIC
# =============================================================================


def chain_min_cost(
    chain: PolicyChain,
    starts: Sequence[int] | None = None,
    error: type[ImproperPolicyError] = ImproperPolicyError,
) -> ValueFunction:
    """Best-outcome determinization: V(s) = c(s) + γ min_{s': P>0} V(s')."""
    scope = _closure(chain, starts)
    bad = scope & ~reaches_goal(chain)
    if bad.any():
        raise error(f"policy is improper: {int(bad.sum())} state(s) cannot reach a goal")

    if chain.gamma >= 1.0:
        values = _dijkstra_min_cost(chain)
    else:
        values = _discounted_min_cost(chain)
    values[~scope] = np.nan
    return values


def _predecessors(chain: PolicyChain) -> list[list[int]]:
    preds: list[list[int]] = [[] for _ in range(chain.n_states)]
    for s, t in zip(*np.nonzero(chain.prob > 0)):
        if not chain.goal[s]:
            preds[int(chain.succ[s, t])].append(int(s))
    return preds


def _dijkstra_min_cost(chain: PolicyChain) -> np.ndarray:
    # c >= 0, so keys never decrease along an edge and each state settles once
    values = np.full(chain.n_states, np.inf)
    values[chain.goal] = 0.0
    heap = [(0.0, int(g)) for g in np.flatnonzero(chain.goal)]
    heapq.heapify(heap)
    preds = _predecessors(chain)
    done = np.zeros(chain.n_states, dtype=bool)
    while heap:
        v, s = heapq.heappop(heap)
        if done[s]:
            continue
        done[s] = True
        for u in preds[s]:
            candidate = float(chain.cost[u]) + v
            if not done[u] and candidate < values[u]:
                values[u] = candidate
                heapq.heappush(heap, (candidate, u))
    values[~np.isfinite(values)] = 0.0
    return values


def _discounted_min_cost(chain: PolicyChain) -> np.ndarray:
    # contraction for γ < 1; iterates from zero rise monotonically toward the fixed point
    edges = chain.prob > 0
    values = np.zeros(chain.n_states)
    for _ in range(DEFAULT_MAX_ITERATIONS):
        best = np.where(edges, values[chain.succ], np.inf).min(axis=1)
        updated = np.where(chain.goal, 0.0, chain.cost + chain.gamma * best)
        updated[~np.isfinite(updated)] = 0.0
        scale = max(1.0, float(updated.max(initial=0.0)))
        if np.max(np.abs(updated - values), initial=0.0) <= MIN_COST_TOL * scale:
            return updated
        values = updated
    return values


def determinized_min_cost(
    model: SspMdp,
    policy: StationaryPolicy,
    starts: Sequence[int] | None = None,
) -> ValueFunction:
    """Admissible lower bound on the cost of every trajectory under the policy."""
    return chain_min_cost(policy_chain(model, policy), starts=starts)
