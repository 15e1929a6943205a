# =============================================================================
# RISK MEASURES
# =============================================================================
#
# VaR and CVaR of finite cost distributions, the yCVaR function
# y ↦ y·CVaR_y and its derivative (the quantile / VaR step function), and
# the exact maximizer over the CVaR risk envelope used by the interpolated
# Bellman backup.
#
# Cost convention throughout: larger is worse, the α-tail is the upper tail.
#
# yCVaR rows are continued to [0, 1] as concave piecewise-linear functions:
#   segments  [0, y_0], (y_0, y_1], ..., (y_{N-2}, y_{N-1}=1]
#   below y_0 "extend" keeps the first segment's slope (intercept at 0 may be
#   positive), "origin" draws the chord through (0, 0).
#
# The envelope problem
#
#   max  Σ_j p_j g_j(y ξ_j) / y   s.t.  0 ≤ ξ_j ≤ 1/y,  Σ_j p_j ξ_j = 1
#
# substitutes z_j = y ξ_j and becomes a separable concave knapsack: segment k
# of successor j offers capacity p_j·len_k at marginal gain slope_jk, and the
# budget is y. Filling segments in decreasing slope order is optimal.
#
# =============================================================================

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from cvarlab.config import (
    ALPHA_TOL,
    CONCAVITY_TOL,
    DEFAULT_BELOW_ALPHA0,
    PROB_TOL,
    check_below_alpha0,
)
from cvarlab.errors import ConcavityViolationError

logger = logging.getLogger(__name__)


# =============================================================================
# DISTRIBUTIONS
# =============================================================================


@dataclass(frozen=True, eq=False)
class DiscreteDistribution:
    """Finite cost distribution with strictly ascending support."""

    support: np.ndarray
    probs: np.ndarray

    def __post_init__(self) -> None:
        support = np.asarray(self.support, dtype=float)
        probs = np.asarray(self.probs, dtype=float)
        if support.ndim != 1 or support.shape != probs.shape or len(support) == 0:
            raise ValueError("support and probs must be non-empty 1-d arrays of equal length")
        if np.any(np.diff(support) <= 0):
            raise ValueError("support must be strictly ascending")
        if np.any(probs <= 0):
            raise ValueError("probs must be > 0")
        if abs(probs.sum() - 1.0) > PROB_TOL:
            raise ValueError(f"probs must sum to 1, got {probs.sum()!r}")
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "probs", probs)

    @classmethod
    def from_values(cls, values: Sequence[float], weights: Sequence[float] | None = None) -> DiscreteDistribution:
        """Merge equal values; weights default to equal mass per value."""
        values = np.asarray(values, dtype=float)
        if weights is None:
            weights = np.ones_like(values)
        weights = np.asarray(weights, dtype=float)
        keep = weights > 0
        support, inverse = np.unique(values[keep], return_inverse=True)
        mass = np.bincount(inverse, weights=weights[keep], minlength=len(support))
        return cls(support=support, probs=mass / mass.sum())

    @classmethod
    def point(cls, value: float) -> DiscreteDistribution:
        return cls(support=np.array([float(value)]), probs=np.array([1.0]))

    def mean(self) -> float:
        return float(self.support @ self.probs)

    def cdf(self, z: float) -> float:
        return float(self.probs[self.support <= z].sum())

    def __len__(self) -> int:
        return len(self.support)


def _check_alpha(alpha: float) -> None:
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must be in (0, 1], got {alpha}")


def var(dist: DiscreteDistribution, alpha: float) -> float:
    """VaR_α: the smallest support value z with F(z) ≥ 1 − α."""
    _check_alpha(alpha)
    cum = np.cumsum(dist.probs)
    idx = int(np.searchsorted(cum, 1.0 - alpha - ALPHA_TOL, side="left"))
    return float(dist.support[min(idx, len(dist) - 1)])


def cvar(dist: DiscreteDistribution, alpha: float) -> float:
    """CVaR_α = VaR_α + E[(Z − VaR_α)^+] / α; the mean at α = 1."""
    _check_alpha(alpha)
    if alpha == 1.0:
        return dist.mean()
    w = var(dist, alpha)
    excess = np.maximum(dist.support - w, 0.0) @ dist.probs
    return float(w + excess / alpha)


def tail_expectation(dist: DiscreteDistribution, y: float | np.ndarray) -> np.ndarray:
    """y·CVaR_y: expected cost over the worst y of probability mass."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    values = dist.support[::-1]
    mass = dist.probs[::-1]
    before = np.cumsum(mass) - mass
    take = np.clip(y[:, None] - before[None, :], 0.0, mass[None, :])
    return take @ values


# =============================================================================
# yCVaR FUNCTIONS
# =============================================================================


@dataclass(frozen=True, eq=False)
class PwlYcvar:
    """Piecewise-linear y·CVaR_y through (atoms, yv)."""

    atoms: np.ndarray
    yv: np.ndarray

    def __post_init__(self) -> None:
        atoms = np.asarray(self.atoms, dtype=float)
        yv = np.asarray(self.yv, dtype=float)
        if atoms.ndim != 1 or atoms.shape != yv.shape or len(atoms) == 0:
            raise ValueError("atoms and yv must be non-empty 1-d arrays of equal length")
        if atoms[0] <= 0 or atoms[-1] > 1 or np.any(np.diff(atoms) <= 0):
            raise ValueError("atoms must be strictly ascending in (0, 1]")
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "yv", yv)

    def __call__(self, y: float, below_alpha0: str = DEFAULT_BELOW_ALPHA0) -> float:
        """Interpolated value at y ∈ [0, 1] under the chosen below-α₀ rule."""
        return float(evaluate_rows(self.atoms, self.yv[None, :], np.array([y]), below_alpha0)[0, 0])


def ycvar_from_dist(dist: DiscreteDistribution, atoms: Sequence[float]) -> PwlYcvar:
    """Sample y·CVaR_y of the distribution at each atom."""
    atoms = np.asarray(atoms, dtype=float)
    return PwlYcvar(atoms=atoms, yv=tail_expectation(dist, atoms))


def _violations(slopes: np.ndarray) -> np.ndarray:
    """Per-row mask of slope increases beyond tolerance."""
    rise = slopes[..., 1:] - slopes[..., :-1]
    scale = np.maximum(1.0, np.abs(slopes[..., :-1]))
    return (rise > CONCAVITY_TOL * scale).any(axis=-1)


def quantile_steps(f: PwlYcvar) -> list[tuple[tuple[float, float], float]]:
    """Segment slopes of a yCVaR function: the VaR step on each (y_i, y_{i+1}]."""
    slopes = np.diff(f.yv) / np.diff(f.atoms)
    if _violations(slopes):
        raise ConcavityViolationError(f"yCVaR slopes increase: {slopes.tolist()}")
    return [
        ((float(lo), float(hi)), float(slope))
        for lo, hi, slope in zip(f.atoms[:-1], f.atoms[1:], slopes)
    ]


@dataclass(frozen=True, eq=False)
class SegmentTable:
    """yCVaR rows continued to [0, 1], as slopes over shared segments."""

    lengths: np.ndarray  # (K,)
    slopes: np.ndarray  # (R, K), non-increasing along K
    intercepts: np.ndarray  # (R,) value at y = 0

    @property
    def starts(self) -> np.ndarray:
        return np.concatenate(([0.0], np.cumsum(self.lengths)[:-1]))


def segment_table(
    atoms: np.ndarray,
    yv_rows: np.ndarray,
    below_alpha0: str = DEFAULT_BELOW_ALPHA0,
) -> SegmentTable:
    """Slopes and intercepts of every row; raises on lost concavity."""
    check_below_alpha0(below_alpha0)
    atoms = np.asarray(atoms, dtype=float)
    yv_rows = np.atleast_2d(np.asarray(yv_rows, dtype=float))
    if abs(atoms[-1] - 1.0) > ALPHA_TOL:
        raise ValueError(f"atoms must end at 1 to span the envelope, got {atoms[-1]}")

    lengths = np.diff(np.concatenate(([0.0], atoms)))
    inner = np.diff(yv_rows, axis=1) / np.diff(atoms)
    chord = yv_rows[:, 0] / atoms[0]
    if below_alpha0 == "extend" and inner.shape[1] > 0:
        first = inner[:, 0]
        intercepts = yv_rows[:, 0] - first * atoms[0]
    else:
        first = chord
        intercepts = np.zeros(len(yv_rows))
    slopes = np.concatenate((first[:, None], inner), axis=1)

    bad = _violations(slopes)
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        raise ConcavityViolationError(f"yCVaR row {row} is not concave: slopes {slopes[row].tolist()}")
    # round-off only; flatten tiny rises so the allocation stays exact
    slopes = np.minimum.accumulate(slopes, axis=1)
    return SegmentTable(lengths=lengths, slopes=slopes, intercepts=intercepts)


def evaluate_rows(
    atoms: np.ndarray,
    yv_rows: np.ndarray,
    ys: np.ndarray,
    below_alpha0: str = DEFAULT_BELOW_ALPHA0,
) -> np.ndarray:
    """Interpolated yCVaR of each row at each query point, shape (R, Q)."""
    table = segment_table(atoms, yv_rows, below_alpha0)
    ys = np.asarray(ys, dtype=float)
    covered = np.clip(ys[:, None] - table.starts[None, :], 0.0, table.lengths[None, :])
    return table.intercepts[:, None] + table.slopes @ covered.T


# =============================================================================
# RISK ENVELOPE
# =============================================================================


def _allocate(
    y: float,
    probs: np.ndarray,
    owner: np.ndarray,
    slope: np.ndarray,
    cap: np.ndarray,
    rank: np.ndarray,
    base: float,
) -> tuple[float, np.ndarray]:
    # steepest first; equal slopes go to the lower successor index
    order = np.lexsort((rank, owner, -slope))
    cap_sorted = cap[order]
    before = np.cumsum(cap_sorted) - cap_sorted
    take = np.clip(y - before, 0.0, cap_sorted)
    value = (base + take @ slope[order]) / y
    taken = np.bincount(owner[order], weights=take, minlength=len(probs))
    return float(value), taken / probs / y


def greedy_envelope(
    y: float,
    probs: np.ndarray,
    table: SegmentTable,
) -> tuple[float, np.ndarray]:
    """Maximize the envelope objective for successors sharing one segment grid.

    `table` holds one row per successor, aligned with `probs`.
    """
    d, k = table.slopes.shape
    owner = np.repeat(np.arange(d), k)
    rank = np.tile(np.arange(k), d)
    cap = (probs[:, None] * table.lengths[None, :]).ravel()
    return _allocate(y, probs, owner, table.slopes.ravel(), cap, rank, float(probs @ table.intercepts))


def maximize_risk_envelope(
    y: float,
    successors: Sequence[tuple[float, PwlYcvar]],
    below_alpha0: str = DEFAULT_BELOW_ALPHA0,
    engine: str = "greedy",
) -> tuple[float, np.ndarray]:
    """Exact max of Σ p_j g_j(y ξ_j)/y over the CVaR envelope at level y.

    Args:
        y: Confidence level in (0, 1].
        successors: (p_j, g_j) pairs; the p_j sum to 1.
        below_alpha0: Continuation rule of each g_j below its first atom.
        engine: "greedy" (slope allocation) or "lp" (scipy linprog).

    Returns:
        (objective value, ξ per successor).
    """
    _check_alpha(y)
    if not successors:
        raise ValueError("successors must be non-empty")
    probs = np.array([p for p, _ in successors], dtype=float)
    if np.any(probs <= 0) or abs(probs.sum() - 1.0) > PROB_TOL:
        raise ValueError(f"successor probabilities must be > 0 and sum to 1, got {probs.tolist()}")
    tables = [segment_table(g.atoms, g.yv[None, :], below_alpha0) for _, g in successors]

    if engine == "lp":
        from cvarlab.envelope_lp import solve_envelope_lp

        return solve_envelope_lp(y, probs, tables)
    if engine != "greedy":
        raise ValueError(f"engine must be greedy or lp, got {engine!r}")

    owner = np.concatenate([np.full(len(t.lengths), j) for j, t in enumerate(tables)])
    rank = np.concatenate([np.arange(len(t.lengths)) for t in tables])
    slope = np.concatenate([t.slopes[0] for t in tables])
    cap = np.concatenate([p * t.lengths for p, t in zip(probs, tables)])
    base = float(sum(p * t.intercepts[0] for p, t in zip(probs, tables)))
    return _allocate(y, probs, owner, slope, cap, rank, base)
