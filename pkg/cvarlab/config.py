# =============================================================================
# CONFIGURATION
# =============================================================================
#
# Defaults shared by the solvers, the evaluator and the CLI. Every operation
# takes these as keyword arguments; the CLI maps its flags onto the same
# keywords. The only environment variable is CVARLAB_THREADS.
#
# =============================================================================

from __future__ import annotations

import logging
import os

logger = logging.getLogger(__name__)

# Probability mass of a (s, a) row must sum to 1 within this tolerance
PROB_TOL = 1e-9

# Residual (sup-norm of value change) at which value iteration stops
DEFAULT_EPSILON = 1e-3

DEFAULT_MAX_ITERATIONS = 1_000_000

# Residual for risk-neutral evaluation of chains too large for a direct solve
DEFAULT_EVAL_EPSILON = 1e-10

# Relative change at which the discounted min-cost iteration stops
MIN_COST_TOL = 1e-12

# ForPECVaR pops allowed between two goal pops before the policy is
# declared improper
DEFAULT_NODE_BUDGET = 5_000_000

# Accumulated costs closer than this share a ForPECVaR grouping key
COST_GROUP_TOL = 1e-9

# Slack on the ForPECVaR loop guard and on y^X = 0
ALPHA_TOL = 1e-12

# Slope increase tolerated before a yCVaR row counts as non-concave
CONCAVITY_TOL = 1e-9

# How yCVaR rows are continued on (0, α₀]
BELOW_ALPHA0_MODES = ("extend", "origin")
DEFAULT_BELOW_ALPHA0 = "extend"

ENVELOPE_ENGINES = ("greedy", "lp")

# Chains up to this size are evaluated with a dense linear solve
DIRECT_SOLVE_LIMIT = 2000

# Monte Carlo rollouts per Philox substream
DEFAULT_MC_BLOCK = 4096
DEFAULT_MC_MAX_STEPS = 100_000
MC_FAILURE_LIMIT = 1e-3

THREADS_ENV = "CVARLAB_THREADS"


def worker_count() -> int:
    """Worker pool size from CVARLAB_THREADS (default 1)."""
    raw = os.environ.get(THREADS_ENV)
    if raw is None or raw.strip() == "":
        return 1
    try:
        value = int(raw)
    except ValueError:
        logger.warning("%s=%r is not an integer; using 1 worker", THREADS_ENV, raw)
        return 1
    if value < 1:
        logger.warning("%s=%d must be >= 1; using 1 worker", THREADS_ENV, value)
        return 1
    return value


def check_below_alpha0(mode: str) -> str:
    if mode not in BELOW_ALPHA0_MODES:
        raise ValueError(f"below_alpha0 must be one of {BELOW_ALPHA0_MODES}, got {mode!r}")
    return mode
