# =============================================================================
# CVaR VALUE ITERATION WITH LINEAR INTERPOLATION (CVaRVILI)
# =============================================================================
#
# Value function over augmented states (s, y), y on a log-spaced atom grid
# Y = {α₀, ..., 1}. Between atoms y·V(s, y) is interpolated linearly
# (I_s[V]); the interpolated Bellman operator is
#
#   T_I[V](s, y) = min_a  c(s, a) + γ · max_ξ Σ_{s'} P(s'|s,a) I_{s'}[V](y ξ(s')) / y
#
# with ξ ranging over the CVaR envelope at level y. Each (s, y, a) solves its
# own envelope problem (greedy slope allocation or LP engine).
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
    ENVELOPE_ENGINES,
    check_below_alpha0,
)
from cvarlab.errors import NonConvergenceError
from cvarlab.risk import SegmentTable, evaluate_rows, greedy_envelope, segment_table
from cvarlab.ssp import SspMdp

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class AtomGrid:
    """Ascending confidence levels in (0, 1] ending at 1."""

    atoms: np.ndarray

    def __post_init__(self) -> None:
        atoms = np.asarray(self.atoms, dtype=float)
        if atoms.ndim != 1 or len(atoms) < 2:
            raise ValueError(f"an atom grid needs at least 2 atoms, got {atoms.tolist()}")
        if atoms[0] <= 0 or np.any(np.diff(atoms) <= 0) or atoms[-1] != 1.0:
            raise ValueError(f"atoms must be strictly ascending in (0, 1] and end at 1, got {atoms.tolist()}")
        object.__setattr__(self, "atoms", atoms)

    @property
    def alpha0(self) -> float:
        return float(self.atoms[0])

    def __len__(self) -> int:
        return len(self.atoms)

    def index_of(self, alpha: float, tol: float = 1e-9) -> int | None:
        """Index of the atom equal to alpha within tol, else None."""
        idx = int(np.argmin(np.abs(self.atoms - alpha)))
        return idx if abs(self.atoms[idx] - alpha) <= tol else None


def build_atom_grid(alpha0: float, n: int) -> AtomGrid:
    """Log-spaced grid atoms[k] = α₀^(1 − k/(N−1)), k = 0..N−1."""
    if not 0.0 < alpha0 < 1.0:
        raise ValueError(f"alpha0 must be in (0, 1), got {alpha0}")
    if n < 2:
        raise ValueError(f"number of atoms must be >= 2, got {n}")
    atoms = alpha0 ** (1.0 - np.arange(n) / (n - 1))
    atoms[0] = alpha0
    atoms[-1] = 1.0
    return AtomGrid(atoms=atoms)


def interpolate_yV(
    atoms: Sequence[float] | AtomGrid,
    values: Sequence[float],
    y: float,
    below_alpha0: str = DEFAULT_BELOW_ALPHA0,
) -> float:
    """I_s[V](y): linear interpolation of y·V(s, y) through the atoms."""
    atoms = atoms.atoms if isinstance(atoms, AtomGrid) else np.asarray(atoms, dtype=float)
    if not 0.0 < y <= 1.0 + ALPHA_TOL:
        raise ValueError(f"y must be in (0, 1], got {y}")
    yv = atoms * np.asarray(values, dtype=float)
    return float(evaluate_rows(atoms, yv[None, :], np.array([min(y, 1.0)]), below_alpha0)[0, 0])


@dataclass
class AugmentedSolution:
    """CVaRVILI output over S × Y.

    xi[s, i, k] is ξ for the k-th successor of the branch policy[s, i] (in the
    order of SspMdp.branches); padding entries are 0.
    """

    grid: AtomGrid
    value: np.ndarray  # (S, N)
    policy: np.ndarray  # (S, N), -1 at goals
    xi: np.ndarray  # (S, N, D)
    below_alpha0: str = DEFAULT_BELOW_ALPHA0
    iterations: int = 0
    residual: float = float("inf")
    iteration_ms: list[float] = field(default_factory=list)

    kind = "vili"

    def xi_table(self, model: SspMdp) -> np.ndarray:
        return self.xi


def initial_solution(model: SspMdp, grid: AtomGrid, below_alpha0: str = DEFAULT_BELOW_ALPHA0) -> AugmentedSolution:
    """V⁰ ≡ 0 with no policy yet."""
    n, m = model.n_states, len(grid)
    return AugmentedSolution(
        grid=grid,
        value=np.zeros((n, m)),
        policy=np.full((n, m), -1, dtype=int),
        xi=np.zeros((n, m, model.max_degree)),
        below_alpha0=check_below_alpha0(below_alpha0),
    )


def _single_rows(table: SegmentTable) -> list[SegmentTable]:
    return [
        SegmentTable(lengths=table.lengths, slopes=table.slopes[j : j + 1], intercepts=table.intercepts[j : j + 1])
        for j in range(len(table.intercepts))
    ]


def vili_backup(model: SspMdp, current: AugmentedSolution, envelope: str = "greedy") -> AugmentedSolution:
    """One application of T_I to every augmented state."""
    if envelope not in ENVELOPE_ENGINES:
        raise ValueError(f"envelope must be one of {ENVELOPE_ENGINES}, got {envelope!r}")
    if envelope == "lp":
        from cvarlab.envelope_lp import solve_envelope_lp

    atoms = current.grid.atoms
    table = segment_table(atoms, atoms[None, :] * current.value, current.below_alpha0)

    value = np.zeros_like(current.value)
    policy = np.full(current.value.shape, -1, dtype=int)
    xi = np.zeros((model.n_states, len(atoms), model.max_degree))

    for s, branches in enumerate(model.branches):
        if not branches:
            continue
        best = np.full(len(atoms), np.inf)
        for branch in branches:
            sub = SegmentTable(
                lengths=table.lengths,
                slopes=table.slopes[branch.succ],
                intercepts=table.intercepts[branch.succ],
            )
            singles = _single_rows(sub) if envelope == "lp" else None
            d = len(branch.succ)
            for i, y in enumerate(atoms):
                if singles is None:
                    inner, weights = greedy_envelope(y, branch.prob, sub)
                else:
                    inner, weights = solve_envelope_lp(y, branch.prob, singles)
                q = branch.cost + model.gamma * inner
                # strict: ties keep the lowest action
                if q < best[i]:
                    best[i] = q
                    policy[s, i] = branch.action
                    xi[s, i, :d] = weights
                    xi[s, i, d:] = 0.0
        value[s] = best

    return AugmentedSolution(
        grid=current.grid,
        value=value,
        policy=policy,
        xi=xi,
        below_alpha0=current.below_alpha0,
        iterations=current.iterations + 1,
        residual=float(np.max(np.abs(value - current.value))) if value.size else 0.0,
        iteration_ms=current.iteration_ms,
    )


def run_vili(
    model: SspMdp,
    grid: AtomGrid,
    epsilon: float = DEFAULT_EPSILON,
    max_iterations: int = DEFAULT_MAX_ITERATIONS,
    below_alpha0: str = DEFAULT_BELOW_ALPHA0,
    envelope: str = "greedy",
) -> AugmentedSolution:
    """Iterate T_I from V⁰ ≡ 0 until the sup-norm change of V is ≤ ε.

    The returned value table is the last iterate V; policy and ξ are greedy
    with respect to that same table.
    """
    if epsilon <= 0:
        raise ValueError(f"epsilon must be > 0, got {epsilon}")
    current = initial_solution(model, grid, below_alpha0)
    timings: list[float] = []
    start = time.perf_counter()

    for iteration in range(1, max_iterations + 1):
        tick = time.perf_counter()
        updated = vili_backup(model, current, envelope=envelope)
        elapsed_ms = (time.perf_counter() - tick) * 1000
        timings.append(elapsed_ms)
        logger.debug("vili iteration %d residual=%.3e (%.1f ms)", iteration, updated.residual, elapsed_ms)
        if updated.residual <= epsilon:
            logger.info(
                "vili converged: %d iterations, residual %.3e, %.1f ms",
                iteration,
                updated.residual,
                (time.perf_counter() - start) * 1000,
            )
            return replace(updated, value=current.value, iteration_ms=timings)
        current = updated

    raise NonConvergenceError(f"vili did not reach epsilon={epsilon} in {max_iterations} iterations")
