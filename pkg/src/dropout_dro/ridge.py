"""Closed-form dropout solutions for the Gaussian linear model.

Under dropout, ``E[(y - beta @ (x * xi))**2]`` equals the squared residual
plus ``sum_j delta_j/(1-delta_j) x_j**2 beta_j**2``, so dropout training is a
ridge regression whose penalty matrix is ``diag(X'X)``.
"""

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .exceptions import SingularDesignError
from .glm import Dataset, solve_spd
from .noise import DropoutSpec


@dataclass(frozen=True)
class RidgeDropoutSolution:
    beta: np.ndarray
    lambda_matrix: np.ndarray
    delta: object

    def residual(self, data: Dataset):
        """Infinity norm of the normal-equations residual."""
        spec = DropoutSpec.coerce(self.delta, data.d)
        gram = data.x.T @ data.x
        lhs = gram + np.diag(spec.penalty_weights * np.diag(self.lambda_matrix))
        return float(np.max(np.abs(lhs @ self.beta - data.x.T @ data.y)))


def dropout_ridge(data: Dataset, delta) -> RidgeDropoutSolution:
    """Solve ``(X'X + delta/(1-delta) diag(X'X)) beta = X'y``.

    ``delta`` may be a scalar, a per-coordinate vector or a DropoutSpec.

    Raises
    ------
    SingularDesignError
        When the penalized Gram matrix is singular, e.g. ``delta = 0`` with a
        rank-deficient design.
    """
    spec = DropoutSpec.coerce(delta, data.d)
    gram = data.x.T @ data.x
    lam = np.diag(np.diag(gram))
    lhs = gram + np.diag(spec.penalty_weights * np.diag(gram))
    beta = solve_spd(lhs, data.x.T @ data.y)
    return RidgeDropoutSolution(beta, lam, delta if np.ndim(delta) == 0 else spec.deltas)


def penalized_objective(data: Dataset, beta, delta):
    """``[(Y - X b)'(Y - X b) + delta/(1-delta) b' Lambda b] / n``."""
    spec = DropoutSpec.coerce(delta, data.d)
    resid = data.y - data.x @ beta
    lam = np.sum(data.x**2, axis=0)
    return float((resid @ resid + np.sum(spec.penalty_weights * lam * beta**2)) / data.n)


def population_limit_lr(second_moment, cross_moment, delta):
    """Population dropout coefficient ``(M + delta/(1-delta) diag(M))^{-1} E[y x]``."""
    m = np.atleast_2d(np.asarray(second_moment, dtype=float))
    cross = np.asarray(cross_moment, dtype=float).reshape(-1)
    if m.shape != (cross.size, cross.size):
        raise ValueError("second moment and cross moment dimensions disagree")
    try:
        linalg.cholesky(m, lower=True)
    except linalg.LinAlgError:
        raise SingularDesignError("second moment matrix is not positive definite") from None
    spec = DropoutSpec.coerce(delta, cross.size)
    return solve_spd(m + np.diag(spec.penalty_weights * np.diag(m)), cross)
