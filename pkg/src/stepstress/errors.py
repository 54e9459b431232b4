"""Exception and warning types shared across the package."""

import numpy as np


class StepStressError(Exception):
    """Base class for all package errors."""


class DomainError(StepStressError, ValueError):
    """An input lies outside the domain of an operation."""


class NumericalError(StepStressError, ArithmeticError):
    """A computation produced a non-finite or inconsistent value."""


class SingularMatrixError(StepStressError, np.linalg.LinAlgError):
    """A matrix that must be inverted is singular or badly conditioned."""


class NonConvergenceError(StepStressError, RuntimeError):
    """Every optimizer start failed to converge.

    The best (non-converged) result is kept on ``result`` for diagnostics.
    """

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class ProbabilityFloorWarning(RuntimeWarning):
    """A cell probability was floored or clamped before a power or a log."""


class BoundaryWarning(RuntimeWarning):
    """An estimate approached the boundary of the parameter space."""
