# =============================================================================
# BENCHMARK DOMAINS
# =============================================================================
#
# Generators for the Gridworld and River families. Cells are (row, col) with
# row 0 at the top; state id = row·cols + col. Actions N, S, E, W = 0..3.
#
# Gridworld
#   start (m−1, n−1), goal (0, n−1). The intended move succeeds w.p. 0.95,
#   each other direction w.p. 0.05/3; off-grid moves stay put. Entering an
#   obstacle is allowed; every action of an obstacle leads to the goal at
#   the obstacle penalty.
#
# River
#   columns 0 and n−1 are banks, row 0 is a bridge, row m−1 a waterfall.
#   Start (m−2, 0), goal (m−2, n−1). Bank and bridge moves are
#   deterministic at cost 1; waterfall cells return to the start at cost 1.
#   In the river, the move succeeds w.p. 0.8 (else stay) and the current
#   then drops the agent one row w.p. 0.2; the current only acts on water
#   cells. Costs N 2, E/W 1, S 0.5.
#
# =============================================================================

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np

from cvarlab.errors import InvalidSpecError
from cvarlab.ssp import SspMdp

logger = logging.getLogger(__name__)

ACTION_NAMES = ("N", "S", "E", "W")
MOVES = ((-1, 0), (1, 0), (0, 1), (0, -1))

Cell = tuple[int, int]


def _cell_names(rows: int, cols: int) -> tuple[str, ...]:
    return tuple(f"{r},{c}" for r in range(rows) for c in range(cols))


def _step(cell: Cell, action: int, rows: int, cols: int) -> Cell:
    dr, dc = MOVES[action]
    r, c = cell[0] + dr, cell[1] + dc
    if 0 <= r < rows and 0 <= c < cols:
        return r, c
    return cell


def _merge(outcomes: list[tuple[int, float]]) -> tuple[tuple[int, float], ...]:
    merged: dict[int, float] = {}
    for s, p in outcomes:
        if p > 0:
            merged[s] = merged.get(s, 0.0) + p
    return tuple(sorted(merged.items()))


# =============================================================================
# GRIDWORLD
# =============================================================================


@dataclass(frozen=True)
class GridworldSpec:
    rows: int
    cols: int
    obstacles: tuple[Cell, ...] | None = None
    success_prob: float = 0.95
    obstacle_penalty: float = 100.0
    step_cost: float = 1.0
    seed: int = 0
    start_cell: Cell | None = None
    goal_cell: Cell | None = None

    @property
    def start(self) -> Cell:
        return self.start_cell if self.start_cell is not None else (self.rows - 1, self.cols - 1)

    @property
    def goal(self) -> Cell:
        return self.goal_cell if self.goal_cell is not None else (0, self.cols - 1)

    def state(self, cell: Cell) -> int:
        return cell[0] * self.cols + cell[1]

    def obstacle_cells(self) -> tuple[Cell, ...]:
        """Configured obstacles, or round(0.1·m·n) seeded random cells."""
        if self.obstacles is not None:
            return tuple(tuple(cell) for cell in self.obstacles)
        free = [
            (r, c)
            for r in range(self.rows)
            for c in range(self.cols)
            if (r, c) not in (self.start, self.goal)
        ]
        count = min(int(round(0.1 * self.rows * self.cols)), len(free))
        rng = np.random.default_rng(self.seed)
        picked = rng.choice(len(free), size=count, replace=False)
        return tuple(sorted(free[i] for i in picked))


def _check_gridworld(spec: GridworldSpec) -> tuple[Cell, ...]:
    problems = []
    if spec.rows < 1 or spec.cols < 1 or spec.rows * spec.cols < 2:
        problems.append(f"grid {spec.rows}x{spec.cols} needs at least 2 cells")
    if not 0.0 < spec.success_prob <= 1.0:
        problems.append(f"success_prob={spec.success_prob} outside (0, 1]")
    if spec.obstacle_penalty < 0 or spec.step_cost < 0:
        problems.append("costs must be >= 0")
    if problems:
        raise InvalidSpecError("; ".join(problems))

    for name, cell in (("start", spec.start), ("goal", spec.goal)):
        if not (0 <= cell[0] < spec.rows and 0 <= cell[1] < spec.cols):
            problems.append(f"{name} {cell} is off the grid")
    if spec.start == spec.goal:
        problems.append("start and goal coincide")
    obstacles = spec.obstacle_cells()
    for cell in obstacles:
        if not (0 <= cell[0] < spec.rows and 0 <= cell[1] < spec.cols):
            problems.append(f"obstacle {cell} is off the grid")
        if cell in (spec.start, spec.goal):
            problems.append(f"obstacle {cell} covers the start or goal")
    if problems:
        raise InvalidSpecError("; ".join(problems))
    return obstacles


def make_gridworld(spec: GridworldSpec) -> SspMdp:
    obstacles = set(_check_gridworld(spec))
    rows, cols = spec.rows, spec.cols
    goal = spec.state(spec.goal)
    slip = (1.0 - spec.success_prob) / 3.0
    transitions: dict[tuple[int, int], tuple[tuple[int, float], ...]] = {}
    costs: dict[tuple[int, int], float] = {}

    for r in range(rows):
        for c in range(cols):
            s = spec.state((r, c))
            if s == goal:
                continue
            for a in range(len(MOVES)):
                if (r, c) in obstacles:
                    transitions[(s, a)] = ((goal, 1.0),)
                    costs[(s, a)] = spec.obstacle_penalty
                    continue
                outcomes = [
                    (spec.state(_step((r, c), b, rows, cols)), spec.success_prob if b == a else slip)
                    for b in range(len(MOVES))
                ]
                transitions[(s, a)] = _merge(outcomes)
                costs[(s, a)] = spec.step_cost

    logger.debug("gridworld %dx%d with %d obstacles", rows, cols, len(obstacles))
    return SspMdp(
        n_states=rows * cols,
        n_actions=len(MOVES),
        transitions=transitions,
        costs=costs,
        goals=frozenset({goal}),
        state_names=_cell_names(rows, cols),
        action_names=ACTION_NAMES,
    )


# =============================================================================
# RIVER
# =============================================================================


@dataclass(frozen=True)
class RiverSpec:
    rows: int
    cols: int
    move_prob: float = 0.8
    drop_prob: float = 0.2
    action_costs: tuple[float, float, float, float] = field(default=(2.0, 0.5, 1.0, 1.0))
    land_cost: float = 1.0

    @property
    def start(self) -> Cell:
        return self.rows - 2, 0

    @property
    def goal(self) -> Cell:
        return self.rows - 2, self.cols - 1

    def state(self, cell: Cell) -> int:
        return cell[0] * self.cols + cell[1]

    def is_water(self, cell: Cell) -> bool:
        r, c = cell
        return 0 < c < self.cols - 1 and 0 < r

    def is_waterfall(self, cell: Cell) -> bool:
        return self.is_water(cell) and cell[0] == self.rows - 1


def _check_river(spec: RiverSpec) -> None:
    problems = []
    if spec.cols < 3:
        problems.append(f"cols={spec.cols}: a river needs two banks and at least one water column")
    if spec.rows < 2:
        problems.append(f"rows={spec.rows}: need at least a bridge row and a waterfall row")
    for name, p in (("move_prob", spec.move_prob), ("drop_prob", spec.drop_prob)):
        if not 0.0 <= p <= 1.0:
            problems.append(f"{name}={p} outside [0, 1]")
    if min(spec.action_costs) < 0 or spec.land_cost < 0:
        problems.append("costs must be >= 0")
    if problems:
        raise InvalidSpecError("; ".join(problems))


def river_outcomes(spec: RiverSpec, cell: Cell, action: int) -> list[tuple[Cell, float]]:
    """Composed (move, current) outcomes of a river cell, before merging."""
    moved = _step(cell, action, spec.rows, spec.cols)
    outcomes = []
    for target, p_move in ((moved, spec.move_prob), (cell, 1.0 - spec.move_prob)):
        for drops, p_drop in ((False, 1.0 - spec.drop_prob), (True, spec.drop_prob)):
            landed = target
            if drops and spec.is_water(target):
                landed = (min(target[0] + 1, spec.rows - 1), target[1])
            outcomes.append((landed, p_move * p_drop))
    return outcomes


def make_river(spec: RiverSpec) -> SspMdp:
    _check_river(spec)
    rows, cols = spec.rows, spec.cols
    goal = spec.state(spec.goal)
    start = spec.state(spec.start)
    transitions: dict[tuple[int, int], tuple[tuple[int, float], ...]] = {}
    costs: dict[tuple[int, int], float] = {}

    for r in range(rows):
        for c in range(cols):
            cell = (r, c)
            s = spec.state(cell)
            if s == goal:
                continue
            for a in range(len(MOVES)):
                if spec.is_waterfall(cell):
                    transitions[(s, a)] = ((start, 1.0),)
                    costs[(s, a)] = spec.land_cost
                elif spec.is_water(cell):
                    outcomes = [(spec.state(landed), p) for landed, p in river_outcomes(spec, cell, a)]
                    transitions[(s, a)] = _merge(outcomes)
                    costs[(s, a)] = spec.action_costs[a]
                else:
                    transitions[(s, a)] = ((spec.state(_step(cell, a, rows, cols)), 1.0),)
                    costs[(s, a)] = spec.land_cost

    logger.debug("river %dx%d", rows, cols)
    return SspMdp(
        n_states=rows * cols,
        n_actions=len(MOVES),
        transitions=transitions,
        costs=costs,
        goals=frozenset({goal}),
        state_names=_cell_names(rows, cols),
        action_names=ACTION_NAMES,
    )


# =============================================================================
# SPEC FILES
# =============================================================================

DOMAINS = ("gridworld", "river")


def make_spec(domain: str, rows: int, cols: int, **options: Any) -> GridworldSpec | RiverSpec:
    if domain == "gridworld":
        if options.get("obstacles") is not None:
            options["obstacles"] = tuple(tuple(int(v) for v in cell) for cell in options["obstacles"])
        for key in ("start_cell", "goal_cell"):
            if options.get(key) is not None:
                options[key] = tuple(int(v) for v in options[key])
        return GridworldSpec(rows=rows, cols=cols, **options)
    if domain == "river":
        if "action_costs" in options:
            options["action_costs"] = tuple(float(v) for v in options["action_costs"])
        return RiverSpec(rows=rows, cols=cols, **options)
    raise InvalidSpecError(f"unknown domain {domain!r}; expected one of {DOMAINS}")


def spec_from_dict(data: Mapping[str, Any]) -> GridworldSpec | RiverSpec:
    """{"domain": "gridworld"|"river", "rows": m, "cols": n, ...options}."""
    options = dict(data)
    try:
        domain = options.pop("domain")
        rows = int(options.pop("rows"))
        cols = int(options.pop("cols"))
        return make_spec(domain, rows, cols, **options)
    except KeyError as exc:
        raise InvalidSpecError(f"domain spec is missing {exc}") from exc
    except TypeError as exc:
        raise InvalidSpecError(f"invalid domain spec: {exc}") from exc


def build_domain(spec: GridworldSpec | RiverSpec) -> SspMdp:
    if isinstance(spec, GridworldSpec):
        return make_gridworld(spec)
    return make_river(spec)
