# =============================================================================
# QUANTILE-BASED CVaR VALUE ITERATION (CVaRVIQ)
# =============================================================================
#
# Distributional form of the interpolated CVaR backup. For each (s, a):
#
#   1. every successor's yCVaR row is differentiated into a quantile step
#      function (one VaR value per atom segment, plus the below-α₀ segment)
#   2. the steps are mixed with weights P(s'|s,a), equal values merged, and
#      sorted worst-first
#   3. the mixture quantile is integrated up to each atom and shifted by the
#      cost: Q(s, y, a) = c + γ (Σ_j p_j g_j(0) + ∫₀^y Q_mix) / y
#
# Σ_j p_j g_j(0) is zero in "origin" mode; in "extend" mode it carries the
# intercepts of the extended rows so that the result equals the CVaRVILI
# envelope maximum.
#
# ξ is not produced by the backup. It is recovered on demand from the stored
# VaR table: successor s' contributes its probability above v = (VaR − c)/γ
# plus a share of its mass at v.
#
# =============================================================================

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from cvarlab.config import (
    ALPHA_TOL,
    DEFAULT_BELOW_ALPHA0,
    DEFAULT_EPSILON,
    DEFAULT_MAX_ITERATIONS,
    check_below_alpha0,
)
from cvarlab.errors import NonConvergenceError
from cvarlab.risk import PwlYcvar, SegmentTable, greedy_envelope, segment_table
from cvarlab.ssp import Branch, SspMdp
from cvarlab.vili import AtomGrid

logger = logging.getLogger(__name__)

# Slack when matching a stored VaR against successor step values
_VAR_MATCH_TOL = 1e-9


@dataclass
class QuantileSolution:
    """CVaRVIQ output: values, policy and VaR_y at every (s, atom)."""

    grid: AtomGrid
    value: np.ndarray  # (S, N)
    policy: np.ndarray  # (S, N), -1 at goals
    var: np.ndarray  # (S, N)
    below_alpha0: str = DEFAULT_BELOW_ALPHA0
    iterations: int = 0
    residual: float = float("inf")
    iteration_ms: list[float] = field(default_factory=list)
    _xi: np.ndarray | None = field(default=None, repr=False, compare=False)

    kind = "viq"

    def xi_table(self, model: SspMdp) -> np.ndarray:
        """ξ for every (s, atom), aligned with the successors of the chosen branch."""
        if self._xi is None:
            self._xi = xi_table(model, self)
        return self._xi


def _mixture(branch: Branch, table: SegmentTable) -> tuple[np.ndarray, np.ndarray, float]:
    """Worst-first (values, masses) of the successor mixture, plus the intercept anchor."""
    masses = (branch.prob[:, None] * table.lengths[None, :]).ravel()
    values = table.slopes[branch.succ].ravel()
    steps, inverse = np.unique(values, return_inverse=True)
    mass = np.bincount(inverse, weights=masses, minlength=len(steps))
    anchor = float(branch.prob @ table.intercepts[branch.succ])
    return steps[::-1], mass[::-1], anchor


def viq_backup(model: SspMdp, current: QuantileSolution) -> QuantileSolution:
    """One distributional backup of every augmented state."""
    atoms = current.grid.atoms
    table = segment_table(atoms, atoms[None, :] * current.value, current.below_alpha0)

    value = np.zeros_like(current.value)
    policy = np.full(current.value.shape, -1, dtype=int)
    var = np.zeros_like(current.value)

    for s, branches in enumerate(model.branches):
        if not branches:
            continue
        best = np.full(len(atoms), np.inf)
        for branch in branches:
            steps, mass, anchor = _mixture(branch, table)
            cum = np.cumsum(mass)
            take = np.clip(atoms[:, None] - (cum - mass)[None, :], 0.0, mass[None, :])
            q = branch.cost + model.gamma * (anchor + take @ steps) / atoms
            # quantile at each atom from the left
            idx = np.minimum(np.searchsorted(cum, atoms - ALPHA_TOL, side="left"), len(steps) - 1)
            better = q < best
            best = np.where(better, q, best)
            policy[s, better] = branch.action
            var[s, better] = branch.cost + model.gamma * steps[idx[better]]
        value[s] = best

    return QuantileSolution(
        grid=current.grid,
        value=value,
        policy=policy,
        var=var,
        below_alpha0=current.below_alpha0,
        iterations=current.iterations + 1,
        residual=float(np.max(np.abs(value - current.value))) if value.size else 0.0,
        iteration_ms=current.iteration_ms,
    )


def run_viq(
    model: SspMdp,
    grid: AtomGrid,
    epsilon: float = DEFAULT_EPSILON,
    max_iterations: int = DEFAULT_MAX_ITERATIONS,
    below_alpha0: str = DEFAULT_BELOW_ALPHA0,
) -> QuantileSolution:
    """Iterate the quantile backup from V⁰ ≡ 0 until the sup-norm change of V is ≤ ε.

    The returned value table is the last iterate V; policy and VaR come from
    the backup of that same table.
    """
    if epsilon <= 0:
        raise ValueError(f"epsilon must be > 0, got {epsilon}")
    n, m = model.n_states, len(grid)
    current = QuantileSolution(
        grid=grid,
        value=np.zeros((n, m)),
        policy=np.full((n, m), -1, dtype=int),
        var=np.zeros((n, m)),
        below_alpha0=check_below_alpha0(below_alpha0),
    )
    timings: list[float] = []
    start = time.perf_counter()

    for iteration in range(1, max_iterations + 1):
        tick = time.perf_counter()
        updated = viq_backup(model, current)
        elapsed_ms = (time.perf_counter() - tick) * 1000
        timings.append(elapsed_ms)
        logger.debug("viq iteration %d residual=%.3e (%.1f ms)", iteration, updated.residual, elapsed_ms)
        if updated.residual <= epsilon:
            logger.info(
                "viq converged: %d iterations, residual %.3e, %.1f ms",
                iteration,
                updated.residual,
                (time.perf_counter() - start) * 1000,
            )
            return replace(updated, value=current.value, iteration_ms=timings)
        current = updated

    raise NonConvergenceError(f"viq did not reach epsilon={epsilon} in {max_iterations} iterations")


# =============================================================================
# ξ RECOVERY
# =============================================================================


def _xi_from_steps(
    var_s: float,
    y: float,
    probs: np.ndarray,
    table: SegmentTable,
    cost: float,
    gamma: float,
) -> np.ndarray | None:
    """Tail shares y·ξ_j = Pr(Z_j > v) + θ·Pr(Z_j = v); None when var_s does not fit."""
    v = (var_s - cost) / gamma
    tol = _VAR_MATCH_TOL * max(1.0, abs(v))
    above = (table.slopes > v + tol) @ table.lengths
    at = (np.abs(table.slopes - v) <= tol) @ table.lengths
    head = float(probs @ above)
    plateau = float(probs @ at)
    if plateau > 0:
        theta = (y - head) / plateau
    elif abs(y - head) <= tol:
        theta = 0.0
    else:
        return None
    if theta < -tol or theta > 1.0 + tol:
        return None
    theta = min(max(theta, 0.0), 1.0)
    return (above + theta * at) / y


def xi_from_var(
    var_s: float,
    y: float,
    successors: Sequence[tuple[float, PwlYcvar]],
    cost: float = 0.0,
    gamma: float = 1.0,
    below_alpha0: str = DEFAULT_BELOW_ALPHA0,
) -> np.ndarray:
    """ξ per successor from the VaR of s at level y and the successors' yCVaR rows.

    Successor cost distributions are the step quantile functions of their
    rows. Falls back to the exact envelope allocation when var_s is not a
    quantile of the successor mixture.
    """
    if not 0.0 < y <= 1.0:
        raise ValueError(f"y must be in (0, 1], got {y}")
    probs = np.array([p for p, _ in successors], dtype=float)
    atoms = successors[0][1].atoms
    table = segment_table(atoms, np.stack([g.yv for _, g in successors]), below_alpha0)
    xi = _xi_from_steps(var_s, y, probs, table, cost, gamma)
    if xi is None:
        logger.warning("VaR %.6g at y=%.4g does not match the successor steps; using the envelope allocation", var_s, y)
        xi = greedy_envelope(y, probs, table)[1]
    return xi


def xi_table(model: SspMdp, solution: QuantileSolution) -> np.ndarray:
    """ξ for every non-goal (s, atom) of a converged QuantileSolution."""
    atoms = solution.grid.atoms
    table = segment_table(atoms, atoms[None, :] * solution.value, solution.below_alpha0)
    xi = np.zeros((model.n_states, len(atoms), model.max_degree))
    fallbacks = 0

    for s, branches in enumerate(model.branches):
        if not branches:
            continue
        for i, y in enumerate(atoms):
            branch = model.branch(s, int(solution.policy[s, i]))
            sub = SegmentTable(
                lengths=table.lengths,
                slopes=table.slopes[branch.succ],
                intercepts=table.intercepts[branch.succ],
            )
            weights = _xi_from_steps(solution.var[s, i], y, branch.prob, sub, branch.cost, model.gamma)
            if weights is None:
                fallbacks += 1
                weights = greedy_envelope(y, branch.prob, sub)[1]
            xi[s, i, : len(weights)] = weights

    if fallbacks:
        logger.warning("%d (state, atom) pairs used the envelope allocation instead of the VaR rule", fallbacks)
    return xi
