"""Exception types raised across the package."""

import numpy as np


class DimensionError(ValueError):
    """Array shapes do not agree."""


class SingularDesignError(np.linalg.LinAlgError):
    """A normal-equations system is singular or not positive definite."""


class ConvergenceError(RuntimeError):
    """An iterative solver stopped before reaching its tolerance.

    The last iterate and its gradient norm are kept so callers can inspect
    how far the run got.
    """

    def __init__(self, message, last_iterate=None, grad_norm=None, iterations=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.grad_norm = grad_norm
        self.iterations = iterations


class DivergenceError(RuntimeError):
    """Stochastic iterates blew up; usually the step size is too large."""


class MlmcError(RuntimeError):
    """A replica of the multilevel estimator failed."""

    def __init__(self, message, replica=None):
        super().__init__(message)
        self.replica = replica
