# =============================================================================
# MONTE CARLO EVALUATION
# =============================================================================
#
# Sampled accumulated-cost distribution of a policy, used as the baseline
# the exact evaluator is compared against.
#
# Rollouts run vectorized in blocks. Block b draws from its own Philox
# stream keyed by (b, seed), so results do not depend on the number of
# workers. Augmented policies run on their extended chain, which moves the
# confidence level exactly as the exact evaluator does.
#
# =============================================================================

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from cvarlab.config import (
    DEFAULT_MC_BLOCK,
    DEFAULT_MC_MAX_STEPS,
    MC_FAILURE_LIMIT,
    worker_count,
)
from cvarlab.errors import ImproperPolicyError, TooManyFailuresError
from cvarlab.forpecvar import AugmentedPolicy, create_extended_mdp, nearest_atom_log
from cvarlab.risk import DiscreteDistribution, tail_expectation, var
from cvarlab.ssp import PolicyChain, SspMdp, StationaryPolicy, chain_is_proper, policy_chain

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class McConfig:
    samples: int
    seed: int = 0
    max_steps: int = DEFAULT_MC_MAX_STEPS
    time_budget: float | None = None
    block: int = DEFAULT_MC_BLOCK
    workers: int | None = None

    def __post_init__(self) -> None:
        if self.samples < 1:
            raise ValueError(f"samples must be >= 1, got {self.samples}")
        if not 0 <= self.seed < 2**64:
            raise ValueError(f"seed must be in [0, 2**64), got {self.seed}")
        if self.block < 1 or self.max_steps < 1:
            raise ValueError("block and max_steps must be >= 1")
        if self.time_budget is not None and self.time_budget <= 0:
            raise ValueError(f"time_budget must be > 0, got {self.time_budget}")


@dataclass
class McResult:
    """Empirical cost distribution plus rollout bookkeeping."""

    distribution: DiscreteDistribution
    costs: np.ndarray
    samples: int
    failures: int
    elapsed: float


def _block_rng(seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=(block << 64) | seed))


class _ChainSampler:
    """Vectorized rollouts of a PolicyChain from one start state."""

    def __init__(self, chain: PolicyChain, start: int, max_steps: int) -> None:
        self.chain = chain
        self.start = start
        self.max_steps = max_steps
        self.cum = np.cumsum(chain.prob, axis=1)
        positive = chain.prob > 0
        self.last = np.where(positive.any(axis=1), chain.prob.shape[1] - 1 - np.argmax(positive[:, ::-1], axis=1), 0)

    def run(self, n: int, rng: np.random.Generator) -> tuple[np.ndarray, int]:
        chain = self.chain
        state = np.full(n, self.start, dtype=int)
        cost = np.zeros(n)
        active = ~chain.goal[state]
        for t in range(self.max_steps):
            idx = np.flatnonzero(active)
            if idx.size == 0:
                break
            cur = state[idx]
            cost[idx] += chain.gamma**t * chain.cost[cur]
            u = rng.random(idx.size)
            pick = np.minimum((u[:, None] >= self.cum[cur]).sum(axis=1), self.last[cur])
            nxt = chain.succ[cur, pick]
            state[idx] = nxt
            active[idx] = ~chain.goal[nxt]
        return cost[~active], int(active.sum())


def _sampler(
    model: SspMdp,
    policy: StationaryPolicy | AugmentedPolicy,
    s0: int,
    alpha: float | None,
    max_steps: int,
) -> _ChainSampler:
    if isinstance(policy, StationaryPolicy):
        chain, start = policy_chain(model, policy), s0
    else:
        if alpha is None:
            raise ValueError("alpha is required to simulate an augmented policy")
        i0 = nearest_atom_log(policy.grid, alpha)
        extended = create_extended_mdp(model, policy.grid, policy, starts=[(s0, i0)])
        chain, start = extended.chain, extended.index(s0, i0)
    if not chain_is_proper(chain, [start]):
        raise ImproperPolicyError(f"policy cannot reach a goal from every state reachable from {s0}")
    return _ChainSampler(chain, start, max_steps)


def simulate_policy(
    model: SspMdp,
    policy: StationaryPolicy | AugmentedPolicy,
    s0: int,
    config: McConfig,
    alpha: float | None = None,
) -> McResult:
    """Roll out the policy from s₀ and return the empirical cost distribution.

    Rollouts that hit max_steps without reaching a goal are failures; more
    than MC_FAILURE_LIMIT of them raises TooManyFailuresError. With a time
    budget, blocks keep running until the budget is spent and `samples` is
    ignored.
    """
    sampler = _sampler(model, policy, s0, alpha, config.max_steps)
    workers = config.workers or worker_count()
    start = time.perf_counter()

    def run_block(b: int, n: int) -> tuple[np.ndarray, int]:
        return sampler.run(n, _block_rng(config.seed, b))

    results: list[tuple[np.ndarray, int]] = []
    with ThreadPoolExecutor(max_workers=workers) as pool:
        if config.time_budget is None:
            n_blocks = math.ceil(config.samples / config.block)
            sizes = [min(config.block, config.samples - b * config.block) for b in range(n_blocks)]
            results = list(pool.map(run_block, range(n_blocks), sizes))
        else:
            b = 0
            while not results or time.perf_counter() - start < config.time_budget:
                wave = range(b, b + workers)
                results.extend(pool.map(run_block, wave, [config.block] * workers))
                b += workers
            overrun = time.perf_counter() - start - config.time_budget
            if overrun > config.time_budget:
                logger.warning("monte carlo overran its %.3f s budget by %.3f s", config.time_budget, overrun)

    costs = np.concatenate([c for c, _ in results])
    failures = sum(f for _, f in results)
    total = len(costs) + failures
    elapsed = time.perf_counter() - start

    if failures / total > MC_FAILURE_LIMIT:
        raise TooManyFailuresError(
            f"{failures} of {total} rollouts did not reach a goal within {config.max_steps} steps"
        )
    if failures:
        logger.warning("%d of %d rollouts hit the step horizon and were dropped", failures, total)
    logger.info("monte carlo: %d rollouts in %.1f ms (%d workers)", total, elapsed * 1000, workers)

    return McResult(
        distribution=DiscreteDistribution.from_values(costs),
        costs=costs,
        samples=total,
        failures=failures,
        elapsed=elapsed,
    )


def mc_cvar_estimate(samples: DiscreteDistribution | np.ndarray, alpha: float) -> tuple[float, float]:
    """Empirical (CVaR_α, VaR_α): the worst α of the sample mass, boundary sample weighted fractionally."""
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must be in (0, 1], got {alpha}")
    dist = samples if isinstance(samples, DiscreteDistribution) else DiscreteDistribution.from_values(samples)
    return float(tail_expectation(dist, alpha)[0] / alpha), var(dist, alpha)


def histogram(result: McResult) -> dict:
    """JSON-ready histogram of the sampled costs."""
    counts = np.rint(result.distribution.probs * len(result.costs)).astype(int)
    return {
        "samples": result.samples,
        "failures": result.failures,
        "support": result.distribution.support.tolist(),
        "counts": counts.tolist(),
    }
