"""Exception types raised across the package."""


class GoalError(Exception):
    """Base class for all package errors."""


class NormalizationError(GoalError, ValueError):
    """A vector with zero (or non-finite) norm cannot be L2-normalized."""


class MiningError(GoalError, ValueError):
    """An anchor has no valid negative candidate in the batch."""


class OracleError(GoalError, ArithmeticError):
    """The finite-difference oracle produced a non-finite loss."""


class DivergenceError(GoalError, ArithmeticError):
    """A training step produced a non-finite gradient or parameter."""

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class EvalError(GoalError, ValueError):
    """Invalid retrieval evaluation request."""
