"""The dropout training objective, exactly and by Monte Carlo, plus its derivatives.

Sign convention: everything returned as an *objective* is in minimization
form, ``mean_i E_xi[loss(x_i * xi, y_i, theta)]``.  :func:`dropout_score` and
:func:`dropout_hessian` follow the maximization convention of the underlying
asymptotic theory (score and Hessian of the concave criterion ``Q_n``), so the
gradient of the minimized objective in ``beta`` is ``-score / a(phi)`` and its
Hessian is ``-hessian / a(phi)``.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .exceptions import DimensionError
from .glm import Dataset, ModelParams, make_family, row_losses
from .noise import DropoutSpec, enumerate_masks, one_zero_masks, sample_masks


@dataclass(frozen=True)
class DropoutObjectiveValue:
    value: float
    method: str
    masks_per_row: Optional[int] = None
    mc_std_err: Optional[float] = None

    def __post_init__(self):
        if self.method == "exact" and self.mc_std_err is not None:
            raise ValueError("exact values carry no standard error")
        if self.mc_std_err is not None and not self.mc_std_err >= 0:
            raise ValueError("standard error must be nonnegative")

    def __float__(self):
        return self.value


@dataclass(frozen=True)
class WeightedDesign:
    """Noisy rows ``x_i * xi`` with weights summing to one.

    Both the exact objective (all masks weighted by their probability) and a
    sample-average approximation (``K`` drawn masks per row, equal weights)
    reduce to ``sum_r w_r * (psi(x_r @ beta) - y_r * x_r @ beta)``.
    """

    x: np.ndarray
    y: np.ndarray
    w: np.ndarray

    @classmethod
    def exact(cls, data: Dataset, spec: DropoutSpec):
        enum = enumerate_masks(spec)
        keep = enum.probs > 0
        masks, probs = enum.masks[keep], enum.probs[keep]
        m = probs.size
        x = (data.x[:, None, :] * masks[None, :, :]).reshape(data.n * m, data.d)
        y = np.repeat(data.y, m)
        w = np.tile(probs, data.n) / data.n
        return cls(x, y, w)

    @classmethod
    def from_masks(cls, data: Dataset, masks):
        """``masks`` has shape ``(n, K, d)``: ``K`` draws for every row."""
        n, k, d = masks.shape
        if n != data.n or d != data.d:
            raise DimensionError("mask array does not match the dataset")
        x = (data.x[:, None, :] * masks).reshape(n * k, d)
        y = np.repeat(data.y, k)
        w = np.full(n * k, 1.0 / (n * k))
        return cls(x, y, w)

    def value(self, family, beta):
        eta = self.x @ beta
        return float(self.w @ (family.psi(eta) - self.y * eta))

    def grad(self, family, beta):
        return self.x.T @ (self.w * (family.psi_dot(self.x @ beta) - self.y))

    def hess(self, family, beta):
        c = self.w * family.psi_ddot(self.x @ beta)
        return (self.x * c[:, None]).T @ self.x


def _prepare(family, data, params_or_beta, spec):
    family = make_family(family)
    spec = DropoutSpec.coerce(spec, data.d)
    beta = params_or_beta.beta if isinstance(params_or_beta, ModelParams) else np.asarray(params_or_beta, float)
    if beta.shape != (data.d,):
        raise DimensionError(f"beta has shape {beta.shape}, expected ({data.d},)")
    return family, spec, beta


def dropout_objective_exact(family, data: Dataset, params: ModelParams, spec) -> DropoutObjectiveValue:
    """Average expected loss under dropout noise, summed over every mask."""
    family, spec, beta = _prepare(family, data, params, spec)
    design = WeightedDesign.exact(data, spec)
    base = float(np.mean(-family.log_base(data.y, params.phi)))
    value = base + design.value(family, beta) / family.dispersion(params.phi)
    return DropoutObjectiveValue(float(value), "exact")


def dropout_objective_mc(family, data: Dataset, params: ModelParams, spec, masks_per_row, rng) -> DropoutObjectiveValue:
    """Monte Carlo version with ``masks_per_row`` fresh masks for every row.

    Rows are processed in order and each draws its masks from ``rng``.  The
    standard error treats the rows as fixed: it pools the within-row sample
    variances, ``sqrt(sum_i s_i**2 / K) / n``.  It is None when ``K == 1``.
    """
    family, spec, _ = _prepare(family, data, params, spec)
    k = int(masks_per_row)
    if k < 1:
        raise ValueError("masks_per_row must be at least 1")
    means = np.empty(data.n)
    variances = np.empty(data.n)
    for i in range(data.n):
        xi = sample_masks(spec, rng, k)
        terms = row_losses(family, data.x[i] * xi, np.full(k, data.y[i]), params)
        means[i] = terms.mean()
        variances[i] = terms.var(ddof=1) if k > 1 else np.nan
    se = float(np.sqrt(variances.sum() / k) / data.n) if k > 1 else None
    return DropoutObjectiveValue(float(means.mean()), "monte_carlo", k, se)


def dropout_score(family, data: Dataset, beta, spec):
    """Score of the concave dropout criterion at ``beta``.

    ``S_n(beta) - mean_i(E[x_i*xi psi'(beta @ (x_i*xi))] - x_i psi'(x_i @ beta))``
    with ``S_n`` the ordinary GLM score.
    """
    family, spec, beta = _prepare(family, data, beta, spec)
    x, y = data.x, data.y
    plain = family.psi_dot(x @ beta)
    s_n = x.T @ (y - plain) / data.n
    design = WeightedDesign.exact(data, spec)
    noisy = design.x.T @ (design.w * family.psi_dot(design.x @ beta))
    correction = noisy - x.T @ plain / data.n
    return s_n - correction


def dropout_hessian(family, data: Dataset, beta, spec):
    """Hessian of the concave dropout criterion (negative semidefinite)."""
    family, spec, beta = _prepare(family, data, beta, spec)
    return -WeightedDesign.exact(data, spec).hess(family, beta)


def dropout_objective_grad(family, data: Dataset, params: ModelParams, spec):
    """Gradient in ``beta`` of :func:`dropout_objective_exact`."""
    family, spec, beta = _prepare(family, data, params, spec)
    return WeightedDesign.exact(data, spec).grad(family, beta) / family.dispersion(params.phi)


def sigma_matrix(family, sample_x, beta):
    """Empirical ``E[psi''(x @ beta) x x']`` over the rows of ``sample_x``."""
    family = make_family(family)
    sample_x = np.atleast_2d(np.asarray(sample_x, dtype=float))
    if sample_x.shape[0] == 0:
        raise ValueError("empty sample")
    w = family.psi_ddot(sample_x @ np.asarray(beta, float))
    out = (sample_x * w[:, None]).T @ sample_x / sample_x.shape[0]
    return 0.5 * (out + out.T)


def asymptotic_bias_mu(family, sample: Dataset, beta_star):
    """Plug-in estimate of the bias vector of the ``c / sqrt(n)`` dropout estimator.

    ``sum_{xi in A} E[psi'((x*xi) @ b) (x*xi)] - (d-1) E[y x] + Sigma(b) b``
    where ``A`` holds the one-zero masks; the limit law of
    ``sqrt(n) (beta_hat - beta_star)`` is centered at ``-Sigma^{-1} c mu``.
    """
    family = make_family(family)
    beta_star = np.asarray(beta_star, float)
    x, y, d = sample.x, sample.y, sample.d
    if sample.n == 0:
        raise ValueError("empty sample")
    first = np.zeros(d)
    for xi in one_zero_masks(d):
        xs = x * xi
        first += xs.T @ family.psi_dot(xs @ beta_star) / sample.n
    cross = x.T @ y / sample.n
    return first - (d - 1) * cross + sigma_matrix(family, x, beta_star) @ beta_star


def first_order_residual(family, sample: Dataset, beta_star):
    """``E[y x] - E[psi'(x @ b) x]``; zero in population at the true ``beta``.

    Two algebraically different forms of the bias vector agree only when
    this vanishes.
    """
    family = make_family(family)
    x = sample.x
    return x.T @ (sample.y - family.psi_dot(x @ np.asarray(beta_star, float))) / sample.n
