from cvarlab.api import evaluate_rows, solve_domain, to_csv
from cvarlab.forpecvar import HistoryPolicy, create_extended_mdp, mdp_policy_evaluation, run_forpecvar
from cvarlab.montecarlo import McConfig, mc_cvar_estimate, simulate_policy
from cvarlab.risk import DiscreteDistribution, PwlYcvar, cvar, maximize_risk_envelope, var
from cvarlab.runner import evaluate, load_problem, solve, sweep
from cvarlab.ssp import SspMdp, StationaryPolicy, validate_ssp, value_iteration_neutral
from cvarlab.vili import build_atom_grid, run_vili
from cvarlab.viq import run_viq

__all__ = [
    "solve_domain",
    "evaluate_rows",
    "to_csv",
    "run_forpecvar",
    "create_extended_mdp",
    "mdp_policy_evaluation",
    "HistoryPolicy",
    "simulate_policy",
    "mc_cvar_estimate",
    "McConfig",
    "DiscreteDistribution",
    "PwlYcvar",
    "cvar",
    "var",
    "maximize_risk_envelope",
    "load_problem",
    "solve",
    "evaluate",
    "sweep",
    "SspMdp",
    "StationaryPolicy",
    "validate_ssp",
    "value_iteration_neutral",
    "build_atom_grid",
    "run_vili",
    "run_viq",
]
