"""Exception types shared across the package."""


class CoexistError(Exception):
    """Base class for all package errors."""


class ConfigError(CoexistError):
    """Configuration file is missing, unparsable, or violates an invariant."""


class Infeasible(CoexistError):
    """The requested SDR targets cannot be met within the power budgets."""


class InfeasiblePower(Infeasible):
    """No radar transmit power within the cap satisfies all SDR constraints."""


class ConvergenceFailure(CoexistError):
    """An iterative solver terminated without meeting its tolerance."""


class MaxIterations(ConvergenceFailure):
    """Iteration cap reached before the stopping criterion."""
