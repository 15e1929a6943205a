# =============================================================================
# FORWARD POLICY EVALUATION OF CVaR (ForPECVaR)
# =============================================================================
#
# Exact CVaR and VaR of a policy at (s₀, α) by best-first expansion of
# trajectories in order of accumulated cost.
#
#   - popped goal nodes add their probability to P and their cost·prob to
#     a running partial expectation
#   - the loop stops once the unpopped mass y^X = 1 − P is at most α
#   - the unpopped mass is the upper tail; its partial expectation is
#     V_mean(s₀) − Σ cost·prob, so
#
#       CVaR_α = (y^X·V(s₀, y^X) + (α − y^X)·X) / α,   VaR_α = X
#
# Policies:
#   StationaryPolicy    nodes grouped by (state, cost)
#   augmented solution  evaluated on the extended MDP over S × Y; nodes
#                       grouped by (augmented state, cost)
#   HistoryPolicy       action from the full history; nodes never merge
#
# With γ < 1 the grouping key also includes the stage t.
#
# =============================================================================

from __future__ import annotations

import heapq
import itertools
import logging
import time
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Iterator, Protocol, Sequence

import numpy as np

from cvarlab.config import (
    ALPHA_TOL,
    COST_GROUP_TOL,
    DEFAULT_EVAL_EPSILON,
    DEFAULT_NODE_BUDGET,
)
from cvarlab.errors import DegenerateAlphaError, ImproperExtendedPolicyError, ImproperPolicyError
from cvarlab.ssp import (
    PolicyChain,
    SspMdp,
    StationaryPolicy,
    chain_is_proper,
    chain_min_cost,
    evaluate_chain,
    policy_chain,
    reachable_from,
    reaches_goal,
)
from cvarlab.vili import AtomGrid

logger = logging.getLogger(__name__)

History = tuple[tuple[int, int, float], ...]


class AugmentedPolicy(Protocol):
    """Solver output usable as an augmented-state policy."""

    grid: AtomGrid
    policy: np.ndarray

    def xi_table(self, model: SspMdp) -> np.ndarray: ...


@dataclass
class SearchNode:
    """Frontier entry; `state` is the search id (model or augmented state)."""

    state: int
    cost: float
    prob: float
    t: int
    priority: float
    alpha: float | None = None
    history: History | None = None


@dataclass
class EvalResult:
    """Exact CVaR/VaR at (s₀, α) and the per-goal-pop trace (X, y^X, V(s₀, y^X))."""

    cvar: float
    var: float
    trace: list[tuple[float, float, float]]
    mean: float
    nodes_expanded: int = 0
    merges: int = 0
    elapsed_ms: float = 0.0


@dataclass(frozen=True)
class HistoryPolicy:
    """History-dependent policy: decide(state, history) -> action.

    `mean` is the policy's risk-neutral expected cost from s₀, supplied by
    the caller since no finite chain represents the policy.
    """

    decide: Callable[[int, History], int]
    mean: float


# =============================================================================
# ATOM SNAPPING
# =============================================================================


def nearest_atom_log(grid: AtomGrid, alpha_next: float) -> int:
    """Index of the atom closest to alpha_next in log distance; ties go to the smaller atom."""
    if alpha_next <= 0:
        raise DegenerateAlphaError(f"cannot snap alpha={alpha_next} to the atom grid")
    distance = np.abs(np.log(grid.atoms) - np.log(alpha_next))
    return int(np.argmin(distance))


def next_atom(grid: AtomGrid, y: float, xi: float) -> int:
    """Atom index of y·ξ; a ξ = 0 branch goes to the smallest atom."""
    if xi <= 0:
        return 0
    return nearest_atom_log(grid, y * xi)


# =============================================================================
# EXTENDED MDP
# =============================================================================


@dataclass(eq=False)
class ExtendedMdp:
    """Single-action SSP over augmented states x = s·N + i."""

    mdp: SspMdp
    grid: AtomGrid
    n_base: int
    zero_xi_branches: int = 0
    _values: dict[int, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict, repr=False)

    def index(self, s: int, i: int) -> int:
        return s * len(self.grid) + i

    def decode(self, x: int) -> tuple[int, int]:
        return divmod(x, len(self.grid))

    @cached_property
    def chain(self) -> PolicyChain:
        policy = StationaryPolicy(action=np.where(self.mdp.arrays.goal, -1, 0))
        return policy_chain(self.mdp, policy)

    def values_from(self, x0: int, epsilon: float = DEFAULT_EVAL_EPSILON) -> tuple[np.ndarray, np.ndarray]:
        """(V_mean, V_min) over the closure of x0; NaN elsewhere."""
        if x0 not in self._values:
            chain = self.chain
            mean = evaluate_chain(chain, epsilon, starts=[x0], error=ImproperExtendedPolicyError)
            minimum = chain_min_cost(chain, starts=[x0], error=ImproperExtendedPolicyError)
            self._values[x0] = (mean, minimum)
        return self._values[x0]


def create_extended_mdp(
    model: SspMdp,
    grid: AtomGrid,
    solution: AugmentedPolicy,
    starts: Sequence[tuple[int, int]] | None = None,
) -> ExtendedMdp:
    """Encode the augmented policy and its ξ as an SSP over S × Y.

    (s, y_i) moves to (s', nearest_atom_log(y_i·ξ(s, y_i, s'))) with
    probability P(s'|s, π(s, y_i)) at cost c(s, π(s, y_i)).

    Properness is checked on the closure of `starts` ((state, atom index)
    pairs), or on every augmented state when None.
    """
    n_atoms = len(grid)
    if solution.policy.shape != (model.n_states, n_atoms):
        raise ValueError(f"policy shape {solution.policy.shape} does not match {model.n_states} states x {n_atoms} atoms")
    xi = solution.xi_table(model)
    transitions: dict[tuple[int, int], tuple[tuple[int, float], ...]] = {}
    costs: dict[tuple[int, int], float] = {}
    zero_branches = 0

    for s in range(model.n_states):
        if model.is_goal(s):
            continue
        for i, y in enumerate(grid.atoms):
            branch = model.branch(s, int(solution.policy[s, i]))
            merged: dict[int, float] = {}
            for k, (s_next, p) in enumerate(zip(branch.succ, branch.prob)):
                if xi[s, i, k] <= 0:
                    zero_branches += 1
                j = next_atom(grid, y, xi[s, i, k])
                x_next = int(s_next) * n_atoms + j
                merged[x_next] = merged.get(x_next, 0.0) + float(p)
            x = s * n_atoms + i
            transitions[(x, 0)] = tuple(sorted(merged.items()))
            costs[(x, 0)] = branch.cost

    if zero_branches:
        logger.warning("%d branches with xi = 0 were sent to the smallest atom", zero_branches)

    goals = frozenset(g * n_atoms + i for g in model.goals for i in range(n_atoms))
    extended = ExtendedMdp(
        mdp=SspMdp(
            n_states=model.n_states * n_atoms,
            n_actions=1,
            transitions=transitions,
            costs=costs,
            goals=goals,
            gamma=model.gamma,
        ),
        grid=grid,
        n_base=model.n_states,
        zero_xi_branches=zero_branches,
    )

    chain = extended.chain
    scope = None if starts is None else [extended.index(s, i) for s, i in starts]
    if not chain_is_proper(chain, scope):
        reach = reaches_goal(chain)
        mask = np.ones(chain.n_states, dtype=bool) if scope is None else reachable_from(chain, scope)
        stuck = np.flatnonzero(mask & ~reach)
        s, i = extended.decode(int(stuck[0]))
        raise ImproperExtendedPolicyError(
            f"{len(stuck)} augmented state(s) cannot reach a goal (first: state {s}, atom {grid.atoms[i]:.4g})"
        )
    return extended


def mdp_policy_evaluation(
    model: SspMdp,
    grid: AtomGrid,
    solution: AugmentedPolicy,
    s0: int | None = None,
    alpha: float | None = None,
    epsilon: float = DEFAULT_EVAL_EPSILON,
) -> tuple[np.ndarray, np.ndarray]:
    """Risk-neutral value and determinized min-cost of the augmented policy.

    Returns (V_mean, V_min) of shape (S, N). With s0 and alpha given, only
    the closure of (s₀, nearest atom of α) is evaluated (NaN elsewhere).
    """
    if s0 is None:
        extended = create_extended_mdp(model, grid, solution)
        chain = extended.chain
        mean = evaluate_chain(chain, epsilon, error=ImproperExtendedPolicyError)
        minimum = chain_min_cost(chain, error=ImproperExtendedPolicyError)
    else:
        i0 = nearest_atom_log(grid, 1.0 if alpha is None else alpha)
        extended = create_extended_mdp(model, grid, solution, starts=[(s0, i0)])
        mean, minimum = extended.values_from(extended.index(s0, i0), epsilon)
    shape = (model.n_states, len(grid))
    return mean.reshape(shape), minimum.reshape(shape)


# =============================================================================
# BEST-FIRST SEARCH
# =============================================================================


def _search(
    start: SearchNode,
    alpha: float,
    mean: float,
    gamma: float,
    is_goal: Callable[[SearchNode], bool],
    expand: Callable[[SearchNode], Iterator[SearchNode]],
    grouped: bool,
    node_budget: int,
    cost_tol: float,
) -> EvalResult:
    tick = time.perf_counter()
    heap: list[tuple[float, float, int, int]] = []
    nodes: dict[int, SearchNode] = {}
    keys: dict[int, tuple] = {}
    open_keys: dict[tuple, int] = {}
    counter = itertools.count()
    merges = 0

    def push(node: SearchNode) -> None:
        nonlocal merges
        key = None
        if grouped:
            key = (node.state, round(node.cost / cost_tol))
            if gamma < 1.0:
                key += (node.t,)
            if key in open_keys:
                nodes[open_keys[key]].prob += node.prob
                merges += 1
                return
        seq = next(counter)
        nodes[seq] = node
        if key is not None:
            keys[seq] = key
            open_keys[key] = seq
        heapq.heappush(heap, (node.priority, node.cost, node.state, seq))

    whole = alpha >= 1.0 - ALPHA_TOL
    popped = 0.0
    partial = 0.0
    tail = mean
    tail_mass = 1.0
    last_cost: float | None = None
    trace: list[tuple[float, float, float]] = []
    expanded = 0
    since_goal = 0

    push(start)
    while (whole and last_cost is None) or (not whole and 1.0 - popped > alpha + ALPHA_TOL):
        if not heap:
            raise ImproperPolicyError(
                f"frontier exhausted with {1.0 - popped:.3g} probability not absorbed (alpha={alpha})"
            )
        *_, seq = heapq.heappop(heap)
        node = nodes.pop(seq)
        key = keys.pop(seq, None)
        if key is not None:
            del open_keys[key]

        if is_goal(node):
            popped += node.prob
            partial += node.cost * node.prob
            last_cost = node.cost
            tail_mass = max(1.0 - popped, 0.0)
            tail = max(mean - partial, 0.0) if tail_mass > ALPHA_TOL else 0.0
            trace.append((node.cost, tail_mass, tail / tail_mass if tail_mass > ALPHA_TOL else 0.0))
            since_goal = 0
            logger.debug("goal pop X=%.6g P=%.12g y=%.6g", node.cost, popped, tail_mass)
            continue

        expanded += 1
        since_goal += 1
        if since_goal > node_budget:
            raise ImproperPolicyError(f"no goal reached within {node_budget} expansions; policy looks improper")
        for child in expand(node):
            push(child)

    if whole:
        cvar, var = mean, last_cost
    else:
        cvar = (tail + (alpha - tail_mass) * last_cost) / alpha
        var = last_cost

    elapsed_ms = (time.perf_counter() - tick) * 1000
    logger.info(
        "forpecvar alpha=%.4g: cvar=%.9g var=%.6g, %d expanded, %d merges, %.1f ms",
        alpha, cvar, var, expanded, merges, elapsed_ms,
    )
    return EvalResult(
        cvar=float(cvar),
        var=float(var),
        trace=trace,
        mean=float(mean),
        nodes_expanded=expanded,
        merges=merges,
        elapsed_ms=elapsed_ms,
    )


def _chain_expander(chain: PolicyChain, heuristic: np.ndarray, atoms: np.ndarray | None) -> Callable:
    gamma = chain.gamma
    n_atoms = None if atoms is None else len(atoms)

    def expand(node: SearchNode) -> Iterator[SearchNode]:
        s = node.state
        discount = gamma**node.t
        cost = node.cost + discount * chain.cost[s]
        for s_next, p in zip(chain.succ[s], chain.prob[s]):
            if p <= 0:
                continue
            s_next = int(s_next)
            yield SearchNode(
                state=s_next,
                cost=float(cost),
                prob=node.prob * float(p),
                t=node.t + 1,
                priority=float(cost + discount * gamma * heuristic[s_next]),
                alpha=None if atoms is None else float(atoms[s_next % n_atoms]),
            )

    return expand


def run_forpecvar(
    model: SspMdp,
    policy: StationaryPolicy | AugmentedPolicy | HistoryPolicy,
    s0: int,
    alpha: float,
    heuristic: np.ndarray | None = None,
    node_budget: int = DEFAULT_NODE_BUDGET,
    cost_tol: float = COST_GROUP_TOL,
    epsilon: float = DEFAULT_EVAL_EPSILON,
    extended: ExtendedMdp | None = None,
) -> EvalResult:
    """Exact CVaR_α and VaR_α of the policy's accumulated cost from s₀.

    Args:
        model: The SSP.
        policy: A StationaryPolicy, a solver solution (augmented policy with
            its ξ), or a HistoryPolicy.
        s0: Initial state.
        alpha: Confidence level in (0, 1].
        heuristic: Admissible lower bound on cost-to-go, over model states
            (stationary, history) or augmented states (solutions). Defaults
            to the determinized min-cost of the policy chain (zero for
            history policies).
        node_budget: Expansions allowed between two goal pops.
        cost_tol: Accumulated costs closer than this share a grouping key.
        epsilon: Residual for iterative risk-neutral evaluation.
        extended: Prebuilt extended MDP of the same solution, reused across calls.

    Returns:
        EvalResult with cvar, var and the goal-pop trace.
    """
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must be in (0, 1], got {alpha}")
    if not 0 <= s0 < model.n_states:
        raise ValueError(f"s0={s0} is not a state of the model")

    if isinstance(policy, HistoryPolicy):
        h = np.zeros(model.n_states) if heuristic is None else np.asarray(heuristic, dtype=float)
        gamma = model.gamma

        def expand(node: SearchNode) -> Iterator[SearchNode]:
            action = policy.decide(node.state, node.history)
            try:
                branch = model.branch(node.state, action)
            except KeyError as exc:
                raise ImproperPolicyError(str(exc)) from exc
            discount = gamma**node.t
            cost = node.cost + discount * branch.cost
            history = node.history + ((node.state, action, branch.cost),)
            for s_next, p in zip(branch.succ, branch.prob):
                yield SearchNode(
                    state=int(s_next),
                    cost=cost,
                    prob=node.prob * float(p),
                    t=node.t + 1,
                    priority=cost + discount * gamma * h[s_next],
                    history=history,
                )

        start = SearchNode(state=s0, cost=0.0, prob=1.0, t=0, priority=float(h[s0]), history=())
        return _search(
            start, alpha, policy.mean, gamma,
            is_goal=lambda node: model.is_goal(node.state),
            expand=expand,
            grouped=False,
            node_budget=node_budget,
            cost_tol=cost_tol,
        )

    if isinstance(policy, StationaryPolicy):
        chain = policy_chain(model, policy)
        x0 = s0
        mean_values = evaluate_chain(chain, epsilon, starts=[s0])
        h = chain_min_cost(chain, starts=[s0]) if heuristic is None else np.asarray(heuristic, dtype=float)
        atoms = None
        start_alpha = None
    else:
        grid = policy.grid
        i0 = nearest_atom_log(grid, alpha)
        if extended is None:
            extended = create_extended_mdp(model, grid, policy, starts=[(s0, i0)])
        chain = extended.chain
        x0 = extended.index(s0, i0)
        mean_values, min_values = extended.values_from(x0, epsilon)
        h = min_values if heuristic is None else np.asarray(heuristic, dtype=float).reshape(-1)
        atoms = grid.atoms
        start_alpha = float(atoms[i0])

    h = np.nan_to_num(h, nan=0.0)
    start = SearchNode(state=x0, cost=0.0, prob=1.0, t=0, priority=float(h[x0]), alpha=start_alpha)
    return _search(
        start, alpha, float(mean_values[x0]), chain.gamma,
        is_goal=lambda node: bool(chain.goal[node.state]),
        expand=_chain_expander(chain, h, atoms),
        grouped=True,
        node_budget=node_budget,
        cost_tol=cost_tol,
    )
