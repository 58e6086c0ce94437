"""Choosing the dropout probability so in-sample loss covers population loss.

With ``delta_n = c / sqrt(n)`` the in-sample dropout loss exceeds the true
population loss by ``c * mu / sqrt(n)`` on average, with fluctuations of
order ``sigma / sqrt(n)``.  Picking ``c = z_{1-alpha} sigma / mu`` makes the
coverage probability approach ``1 - alpha``.
"""

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.stats import norm

from .glm import PHI_FLOOR, Dataset, FamilyKind, ModelParams, fit_mle, make_family, row_losses
from .noise import DropoutSpec, enumerate_masks, one_zero_masks, sample_masks

DELTA_CAP = 0.9
EXACT_ENUM_LIMIT = 16
MC_MASKS = 10_000


@dataclass(frozen=True)
class LossReport:
    """In-sample dropout loss, its ``delta = 0`` baseline and their gap ``mu_n``."""

    in_sample: float
    baseline: float
    mu_n: float
    method: str
    mc_std_err: Optional[float] = None
    population: Optional[float] = None

    def __post_init__(self):
        if self.method == "exact" and self.mu_n < -1e-12:
            raise ValueError(f"negative loss inflation {self.mu_n}: dropout must not lower the expected loss")


def _linear_in_sample(data, params, spec):
    resid = data.y - data.x @ params.beta
    base = 0.5 * np.log(2.0 * np.pi * params.phi) + np.mean(resid**2) / (2.0 * params.phi)
    shift = np.sum(spec.penalty_weights * np.sum(data.x**2, axis=0) * params.beta**2) / (2.0 * data.n * params.phi)
    return float(base), float(shift)


def in_sample_loss(family, data: Dataset, params: ModelParams, spec, rng=None, masks_per_row=MC_MASKS) -> LossReport:
    """In-sample loss ``L_n(beta, phi, delta)`` and the gap to ``L_n(beta, phi, 0)``.

    The Gaussian model uses its closed form for any ``d``; other families
    enumerate masks for ``d <= 16`` and fall back to Monte Carlo otherwise
    (``rng`` required, standard error reported).
    """
    family = make_family(family)
    spec = DropoutSpec.coerce(spec, data.d)
    baseline_terms = row_losses(family, data.x, data.y, params)
    baseline = float(np.mean(baseline_terms))
    if family.kind is FamilyKind.LINEAR:
        base, shift = _linear_in_sample(data, params, spec)
        return LossReport(base + shift, base, shift, "exact")
    if spec.is_degenerate:
        return LossReport(baseline, baseline, 0.0, "exact")
    if data.d <= EXACT_ENUM_LIMIT:
        enum = enumerate_masks(spec)
        total = 0.0
        for mask, p in zip(enum.masks, enum.probs):
            if p > 0:
                total += p * np.mean(row_losses(family, data.x * mask, data.y, params) - baseline_terms)
        return LossReport(baseline + float(total), baseline, float(total), "exact")
    if rng is None:
        raise ValueError("d too large for enumeration; pass rng for the Monte Carlo estimate")
    gaps = np.empty(data.n)
    variances = np.empty(data.n)
    for i in range(data.n):
        xi = sample_masks(spec, rng, masks_per_row)
        terms = row_losses(family, data.x[i] * xi, np.full(masks_per_row, data.y[i]), params) - baseline_terms[i]
        gaps[i] = terms.mean()
        variances[i] = terms.var(ddof=1)
    gap = float(gaps.mean())
    se = float(np.sqrt(variances.sum() / masks_per_row) / data.n)
    return LossReport(baseline + gap, baseline, gap, "monte_carlo", se)


def population_loss_linear(phi_star):
    """Expected Gaussian negative log-likelihood at the true parameters."""
    return 0.5 * np.log(2.0 * np.pi * phi_star) + 0.5


def population_loss_mc(family, generator: Callable, params_true: ModelParams, sample_size, rng):
    """Monte Carlo population loss ``E[-log f(Y | X, beta*, phi*)]``.

    ``generator(rng, size)`` must return a :class:`Dataset` drawn from the
    true distribution.  Returns ``(estimate, std_err)``.
    """
    family = make_family(family)
    data = generator(rng, int(sample_size))
    phi = max(params_true.phi, PHI_FLOOR)
    terms = row_losses(family, data.x, data.y, ModelParams(params_true.beta, phi))
    se = float(terms.std(ddof=1) / np.sqrt(terms.size)) if terms.size > 1 else float("nan")
    return float(terms.mean()), se


def mu_linear(second_moments_diag, beta_star, phi_star):
    """``sum_j E[X_j^2] beta_j^2 / (2 phi)`` for the Gaussian model."""
    if not phi_star > 0:
        raise ValueError("phi_star must be positive")
    m = np.asarray(second_moments_diag, float)
    b = np.asarray(beta_star, float)
    return float(np.sum(m * b**2) / (2.0 * phi_star))


def _loss_shift_terms(family, sample: Dataset, beta_star):
    beta_star = np.asarray(beta_star, float)
    x, y = sample.x, sample.y
    eta = x @ beta_star
    terms = y * eta - sample.d * family.psi(eta)
    for xi in one_zero_masks(sample.d):
        terms = terms + family.psi((x * xi) @ beta_star)
    return terms


def mu_general(family, sample: Dataset, beta_star, phi_star=1.0, return_std_err=False):
    """Plug-in ``mu`` for any family from a sample of the true distribution.

    ``(sum_{xi in A} E[psi((x*xi) @ b)] - d E[psi(x @ b)] + E[y x] @ b) / a(phi)``
    """
    family = make_family(family)
    if sample.n == 0:
        raise ValueError("empty sample")
    terms = _loss_shift_terms(family, sample, beta_star) / family.dispersion(phi_star)
    mu = float(terms.mean())
    if return_std_err:
        return mu, float(terms.std(ddof=1) / np.sqrt(terms.size))
    return mu


def asymptotic_loss_shift_delta(family, sample: Dataset, beta_star, c):
    """Limit of ``sqrt(n)`` times the dropout loss inflation, before dividing by ``a(phi)``."""
    family = make_family(family)
    if sample.n == 0:
        raise ValueError("empty sample")
    return float(c * _loss_shift_terms(family, sample, beta_star).mean())


def sigma_linear(phi_star, sample_residuals):
    """Standard deviation of the Gaussian per-observation loss at the truth."""
    if not phi_star > 0:
        raise ValueError("phi_star must be positive")
    r = np.asarray(sample_residuals, float).reshape(-1)
    if r.size < 2:
        raise ValueError("variance undefined for fewer than two residuals")
    terms = 0.5 * np.log(2.0 * np.pi * phi_star) + r**2 / (2.0 * phi_star)
    return float(terms.std(ddof=1))


SIGMA_GAUSSIAN = float(np.sqrt(0.5))


def normal_quantile(p):
    return float(norm.ppf(p))


@dataclass(frozen=True)
class DeltaChoice:
    alpha: float
    mu_hat: float
    sigma_hat: float
    c: float
    delta: float
    n: int
    z_quantile: float
    delta_cap: float = DELTA_CAP

    @property
    def clipped(self):
        return self.delta != self.c / np.sqrt(self.n)


def choose_delta(alpha, n, mu_hat, sigma_hat, delta_cap=DELTA_CAP) -> DeltaChoice:
    """``delta = clip(z_{1-alpha} sigma / (mu sqrt(n)), 0, delta_cap)``.

    Raises
    ------
    ValueError
        If ``mu_hat <= 0``: the rule needs a positive loss inflation.  Also
        for ``alpha > 1/2``, where the quantile and hence ``c`` turn negative.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    if alpha > 0.5:
        raise ValueError("alpha above 1/2 gives a negative c; no dropout level achieves that coverage")
    if n < 1:
        raise ValueError("n must be at least 1")
    if not mu_hat > 0:
        raise ValueError("tuning rule undefined: mu must be positive")
    if sigma_hat < 0:
        raise ValueError("sigma must be nonnegative")
    z = normal_quantile(1.0 - alpha)
    c = z * sigma_hat / mu_hat
    delta = float(min(max(c / np.sqrt(n), 0.0), delta_cap))
    return DeltaChoice(float(alpha), float(mu_hat), float(sigma_hat), float(c), delta, int(n), z, delta_cap)


def tune_delta_oracle(alpha, n, beta_star, phi_star, second_moments_diag=None, delta_cap=DELTA_CAP):
    """Gaussian model with known truth: exact ``mu`` and ``sigma = sqrt(1/2)``."""
    beta_star = np.asarray(beta_star, float)
    m = np.ones_like(beta_star) if second_moments_diag is None else second_moments_diag
    return choose_delta(alpha, n, mu_linear(m, beta_star, phi_star), SIGMA_GAUSSIAN, delta_cap)


def tune_delta_plugin(family, data: Dataset, alpha, delta_cap=DELTA_CAP) -> DeltaChoice:
    """Estimate ``mu`` and ``sigma`` at the ``delta = 0`` fit and apply the rule."""
    family = make_family(family)
    params = fit_mle(family, data)
    if family.kind is FamilyKind.LINEAR:
        mu = mu_linear(np.mean(data.x**2, axis=0), params.beta, params.phi)
        sigma = sigma_linear(params.phi, data.y - data.x @ params.beta)
    else:
        mu = mu_general(family, data, params.beta, params.phi)
        terms = row_losses(family, data.x, data.y, params)
        sigma = float(terms.std(ddof=1))
    return choose_delta(alpha, data.n, mu, sigma, delta_cap)
