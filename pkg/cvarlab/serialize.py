# =============================================================================
# JSON CODECS
# =============================================================================
#
# Model file:
#   {"states": N, "actions": M, "goals": [ids], "gamma": g,
#    "transitions": [{"s": i, "a": j, "next": [[s', p], ...]}],
#    "costs": [{"s": i, "a": j, "c": x}],
#    "state_names": [...], "action_names": [...]}        (names optional)
#   Probabilities may be floats or decimal strings.
#
# Solution file (both solvers):
#   {"kind": "vili"|"viq", "grid": [...], "value": [[...]], "policy": [[...]],
#    "xi": [[s, i, s', ξ], ...]   (vili, nonzero entries)
#    "var": [[...]]               (viq)
#    "below_alpha0": mode, "meta": {...}}
#
# Evaluation file:
#   {"cvar": x, "var": x, "trace": [[X, y, V], ...]}
#
# =============================================================================

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from cvarlab.errors import InvalidModelError
from cvarlab.forpecvar import EvalResult
from cvarlab.ssp import SspMdp, require_valid
from cvarlab.vili import AtomGrid, AugmentedSolution
from cvarlab.viq import QuantileSolution

logger = logging.getLogger(__name__)

Solution = AugmentedSolution | QuantileSolution


# =============================================================================
# MODELS
# =============================================================================


def model_from_dict(data: Mapping[str, Any]) -> SspMdp:
    """Build an SspMdp from the JSON layout without validating it."""
    try:
        transitions = {}
        for entry in data["transitions"]:
            key = (int(entry["s"]), int(entry["a"]))
            transitions[key] = tuple((int(s_next), float(p)) for s_next, p in entry["next"])
        costs = {(int(e["s"]), int(e["a"])): float(e["c"]) for e in data.get("costs", [])}
        names = data.get("state_names")
        actions = data.get("action_names")
        return SspMdp(
            n_states=int(data["states"]),
            n_actions=int(data["actions"]),
            transitions=transitions,
            costs=costs,
            goals=frozenset(int(g) for g in data["goals"]),
            gamma=float(data.get("gamma", 1.0)),
            state_names=tuple(names) if names is not None else None,
            action_names=tuple(actions) if actions is not None else None,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidModelError(f"malformed model document: {exc}") from exc


def model_to_dict(model: SspMdp) -> dict[str, Any]:
    data: dict[str, Any] = {
        "states": model.n_states,
        "actions": model.n_actions,
        "goals": sorted(model.goals),
        "gamma": model.gamma,
        "transitions": [
            {"s": s, "a": a, "next": [[s_next, p] for s_next, p in outcomes]}
            for (s, a), outcomes in sorted(model.transitions.items())
        ],
        "costs": [{"s": s, "a": a, "c": c} for (s, a), c in sorted(model.costs.items())],
    }
    if model.state_names is not None:
        data["state_names"] = list(model.state_names)
    if model.action_names is not None:
        data["action_names"] = list(model.action_names)
    return data


def read_json(path: str | Path) -> Any:
    """Parse a JSON document; syntax errors surface as InvalidModelError."""
    with open(path, encoding="utf-8") as f:
        try:
            return json.load(f)
        except json.JSONDecodeError as exc:
            raise InvalidModelError(f"not valid JSON ({exc.msg} at line {exc.lineno}): {path}") from exc


def load_model(path: str | Path) -> SspMdp:
    """Read, validate and renormalize a model file."""
    data = read_json(path)
    return require_valid(model_from_dict(data))


def dump_model(model: SspMdp, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(model_to_dict(model), f, indent=1)
        f.write("\n")


# =============================================================================
# SOLUTIONS
# =============================================================================


def solution_to_dict(solution: Solution, model: SspMdp) -> dict[str, Any]:
    data: dict[str, Any] = {
        "kind": solution.kind,
        "grid": solution.grid.atoms.tolist(),
        "value": solution.value.tolist(),
        "policy": solution.policy.tolist(),
        "below_alpha0": solution.below_alpha0,
        "meta": {
            "iterations": solution.iterations,
            "residual": solution.residual,
            "iteration_ms": list(solution.iteration_ms),
        },
    }
    if isinstance(solution, AugmentedSolution):
        triplets = []
        for s, i in zip(*np.nonzero(solution.policy >= 0)):
            branch = model.branch(int(s), int(solution.policy[s, i]))
            for k, s_next in enumerate(branch.succ):
                weight = float(solution.xi[s, i, k])
                if weight != 0.0:
                    triplets.append([int(s), int(i), int(s_next), weight])
        data["xi"] = triplets
    else:
        data["var"] = solution.var.tolist()
    return data


def solution_from_dict(data: Mapping[str, Any], model: SspMdp) -> Solution:
    grid = AtomGrid(atoms=np.array(data["grid"], dtype=float))
    value = np.array(data["value"], dtype=float)
    policy = np.array(data["policy"], dtype=int)
    if value.shape != (model.n_states, len(grid)) or policy.shape != value.shape:
        raise InvalidModelError(
            f"solution tables {value.shape} do not match {model.n_states} states x {len(grid)} atoms"
        )
    meta = data.get("meta", {})
    common = dict(
        grid=grid,
        value=value,
        policy=policy,
        below_alpha0=data.get("below_alpha0", "extend"),
        iterations=int(meta.get("iterations", 0)),
        residual=float(meta.get("residual", float("inf"))),
        iteration_ms=list(meta.get("iteration_ms", [])),
    )
    kind = data.get("kind")
    if kind == "viq":
        return QuantileSolution(var=np.array(data["var"], dtype=float), **common)
    if kind != "vili":
        raise InvalidModelError(f"unknown solution kind {kind!r}")

    xi = np.zeros((model.n_states, len(grid), model.max_degree))
    for s, i, s_next, weight in data.get("xi", []):
        branch = model.branch(int(s), int(policy[s, i]))
        slots = np.flatnonzero(branch.succ == int(s_next))
        if len(slots) == 0:
            raise InvalidModelError(f"xi entry ({s}, {i}, {s_next}) is not a successor of the stored action")
        xi[int(s), int(i), slots[0]] = float(weight)
    return AugmentedSolution(xi=xi, **common)


def dump_solution(solution: Solution, model: SspMdp, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(solution_to_dict(solution, model), f)
        f.write("\n")


def load_solution(path: str | Path, model: SspMdp) -> Solution:
    return solution_from_dict(read_json(path), model)


# =============================================================================
# EVALUATIONS
# =============================================================================


def eval_to_dict(result: EvalResult) -> dict[str, Any]:
    return {
        "cvar": result.cvar,
        "var": result.var,
        "trace": [list(entry) for entry in result.trace],
    }


def dump_eval(result: EvalResult, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(eval_to_dict(result), f, indent=1)
        f.write("\n")
