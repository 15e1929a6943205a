# =============================================================================
# RISK ENVELOPE ENGINE (SCIPY LINPROG)
# =============================================================================
#
# Solves the envelope problem of the interpolated CVaR backup as a linear
# program with scipy.optimize.linprog (HiGHS), using the hypograph form of
# each concave piecewise-linear g_j:
#
#   max  Σ_j p_j t_j
#   s.t. t_j ≤ g_j(b_k) + slope_jk (z_j − b_k)   for every segment k of g_j
#        Σ_j p_j z_j = y,   0 ≤ z_j ≤ 1
#
# with z_j = y ξ_j. Optimal values match the greedy allocation in
# cvarlab.risk; ξ may differ where several allocations are optimal.
#
# =============================================================================

from __future__ import annotations

import logging

import numpy as np

try:
    from scipy.optimize import linprog
except ImportError:
    raise ImportError(
        "scipy is required for the lp envelope engine. "
        "Install it with: pip install cvarlab[lp]"
    )

from cvarlab.errors import CvarlabError
from cvarlab.risk import SegmentTable

logger = logging.getLogger(__name__)


def solve_envelope_lp(
    y: float,
    probs: np.ndarray,
    tables: list[SegmentTable],
) -> tuple[float, np.ndarray]:
    """LP counterpart of risk.maximize_risk_envelope; one single-row table per successor."""
    d = len(probs)
    rows: list[np.ndarray] = []
    bounds_ub: list[float] = []
    for j, table in enumerate(tables):
        slopes = table.slopes[0]
        starts = table.starts
        at_start = table.intercepts[0] + np.concatenate(([0.0], np.cumsum(slopes * table.lengths)[:-1]))
        for slope, b, g_b in zip(slopes, starts, at_start):
            row = np.zeros(2 * d)
            row[d + j] = 1.0
            row[j] = -slope
            rows.append(row)
            bounds_ub.append(g_b - slope * b)

    objective = np.concatenate((np.zeros(d), -probs))
    a_eq = np.concatenate((probs, np.zeros(d)))[None, :]
    bounds = [(0.0, 1.0)] * d + [(None, None)] * d

    result = linprog(
        objective,
        A_ub=np.array(rows),
        b_ub=np.array(bounds_ub),
        A_eq=a_eq,
        b_eq=[y],
        bounds=bounds,
        method="highs",
    )
    if not result.success:
        raise CvarlabError(f"envelope LP failed at y={y}: {result.message}")

    z = result.x[:d]
    value = -result.fun / y
    logger.debug("envelope LP y=%.6g value=%.9g", y, value)
    return float(value), z / y
