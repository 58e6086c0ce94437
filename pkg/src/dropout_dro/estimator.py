"""Scikit-learn style estimator wrapping the dropout solvers."""

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted, check_random_state, validate_data

from .glm import Dataset, ModelParams, avg_neg_loglik, fit_mle, make_family
from .ridge import dropout_ridge
from .solvers import MlmcConfig, baseline_phi, SgdConfig, mlmc_solve, solve_exact_gd, solve_saa, solve_sgd
from .tuning import tune_delta_plugin

METHODS = ("auto", "mle", "closed_form", "exact", "sgd", "saa", "mlmc")


class DropoutGLM(RegressorMixin, BaseEstimator):
    """Generalized linear model trained under dropout noise.

    Parameters
    ----------
    family : {"linear", "logistic", "poisson"}
    delta : float or "auto"
        Dropout probability.  ``"auto"`` picks it from the data with the
        coverage rule at level ``alpha``.
    alpha : float
        Target miscoverage used when ``delta="auto"``.
    method : str
        ``"auto"`` uses the closed form for the linear family and exact
        enumeration otherwise.  ``"sgd"``, ``"saa"`` and ``"mlmc"`` are the
        stochastic solvers.
    fit_intercept : bool
        Append a constant column; the intercept is never dropped out.
    masks_per_row, replicas, budget, lr : int, int, int, float
        Settings of the stochastic solvers.
    random_state : int, RandomState instance or None

    Attributes
    ----------
    coef_ : ndarray of shape (n_features,)
    intercept_ : float
    phi_ : float
        Dispersion from the ``delta = 0`` fit (1 for families without one).
    delta_ : float
        Dropout probability actually used.
    """

    def __init__(
        self,
        family="linear",
        delta=0.1,
        alpha=0.1,
        method="auto",
        fit_intercept=True,
        masks_per_row=256,
        replicas=100,
        budget=100_000,
        lr=1e-4,
        random_state=None,
    ):
        self.family = family
        self.delta = delta
        self.alpha = alpha
        self.method = method
        self.fit_intercept = fit_intercept
        self.masks_per_row = masks_per_row
        self.replicas = replicas
        self.budget = budget
        self.lr = lr
        self.random_state = random_state

    def _design(self, X):
        if self.fit_intercept:
            return np.hstack([X, np.ones((X.shape[0], 1))])
        return X

    def fit(self, X, y):
        X, y = validate_data(self, X, y, y_numeric=True)
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        family = make_family(self.family)
        data = Dataset(self._design(X), y).check_for(family)
        if self.delta == "auto":
            if X.shape[0] < 2:
                raise ValueError(f"delta='auto' needs a variance estimate; got n_samples={X.shape[0]}")
            delta = tune_delta_plugin(family, data, self.alpha).delta
        else:
            delta = float(self.delta)
        deltas = np.full(data.d, delta)
        if self.fit_intercept:
            deltas[-1] = 0.0
        rng = check_random_state(self.random_state)
        seed = int(rng.randint(np.iinfo(np.int32).max))
        method = self.method
        if method == "auto":
            method = "closed_form" if family.has_dispersion else "exact"
        if method == "mle" or not np.any(deltas):
            params = fit_mle(family, data)
        elif method == "closed_form":
            if not family.has_dispersion:
                raise ValueError("the closed form exists only for the linear family")
            params = ModelParams(dropout_ridge(data, deltas).beta, baseline_phi(family, data))
        elif method == "exact":
            params = solve_exact_gd(family, data, deltas)
        elif method == "sgd":
            params = solve_sgd(family, data, deltas, SgdConfig(lr=self.lr, budget=self.budget, seed=seed))
        elif method == "saa":
            params = solve_saa(family, data, deltas, self.masks_per_row, rng=np.random.default_rng(seed))
        else:
            report = mlmc_solve(family, data, deltas, MlmcConfig(replicas=self.replicas, master_seed=seed))
            params = ModelParams(report.estimate, report.phi)
        beta = params.beta
        self.coef_ = beta[:-1] if self.fit_intercept else beta
        self.intercept_ = float(beta[-1]) if self.fit_intercept else 0.0
        self.phi_ = params.phi
        self.delta_ = delta
        self.family_ = family
        return self

    def linear_predictor(self, X):
        """``X @ coef_ + intercept_``."""
        check_is_fitted(self)
        X = validate_data(self, X, reset=False)
        return X @ self.coef_ + self.intercept_

    def predict(self, X):
        """Conditional mean ``psi'(eta)``."""
        check_is_fitted(self)
        return self.family_.psi_dot(self.linear_predictor(X))

    def log_likelihood(self, X, y):
        """Average log-likelihood of ``(X, y)`` at the fitted parameters.

        ``score`` keeps the scikit-learn regressor meaning (R^2).
        """
        check_is_fitted(self)
        X, y = validate_data(self, X, y, reset=False, y_numeric=True)
        beta = np.append(self.coef_, self.intercept_) if self.fit_intercept else self.coef_
        data = Dataset(self._design(X), y)
        return -avg_neg_loglik(self.family_, data, ModelParams(beta, self.phi_))
