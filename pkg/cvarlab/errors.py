# =============================================================================
# ERRORS
# =============================================================================
#
# Exception hierarchy for cvarlab. Each class carries the exit code the CLI
# uses when it surfaces the error:
#   2  validation failure (model, domain spec, experiment config)
#   3  convergence failure (solver iteration cap, corrupted yCVaR rows)
#   4  improper policy (no goal reachable, stalled evaluation)
#
# =============================================================================

from __future__ import annotations


class CvarlabError(Exception):
    """Base class for all cvarlab errors."""

    exit_code = 1


class InvalidModelError(CvarlabError, ValueError):
    """An SSP model failed validation."""

    exit_code = 2

    def __init__(self, message: str, violations: list | None = None) -> None:
        super().__init__(message)
        self.violations = list(violations or [])


class InvalidSpecError(InvalidModelError):
    """A domain generator spec is inconsistent."""


class ConfigError(CvarlabError, ValueError):
    """An experiment configuration is inconsistent with its solution."""

    exit_code = 2


class NonConvergenceError(CvarlabError, RuntimeError):
    """A value iteration hit its iteration cap before reaching ε."""

    exit_code = 3


class ConcavityViolationError(CvarlabError, ArithmeticError):
    """A yCVaR row lost concavity beyond tolerance."""

    exit_code = 3


class ImproperPolicyError(CvarlabError, RuntimeError):
    """A policy does not reach a goal with probability 1."""

    exit_code = 4


class NoProperPolicyError(ImproperPolicyError):
    """Some state cannot reach a goal under any action."""


class ImproperExtendedPolicyError(ImproperPolicyError):
    """An augmented state of an extended MDP cannot reach G × Y."""


class TooManyFailuresError(ImproperPolicyError):
    """Too many Monte Carlo rollouts hit the step horizon."""


class DegenerateAlphaError(CvarlabError, ValueError):
    """A confidence level of zero cannot be snapped to the atom grid."""

    exit_code = 4
