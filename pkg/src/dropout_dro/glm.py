"""Exponential-family GLM machinery: log-partition functions, data containers and the MLE.

A GLM with natural parameter ``eta = beta @ x`` has conditional density

    f(y | x, beta, phi) = h(y, phi) * exp((y * eta - psi(eta)) / a(phi))

and every other module in the package works with the per-observation
negative log-likelihood built from ``psi``, ``a`` and ``h``.
"""

import csv
import enum
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import linalg, special

from ._optim import GdConfig, minimize
from .exceptions import DimensionError, SingularDesignError

PHI_FLOOR = 1e-12


class FamilyKind(str, enum.Enum):
    LINEAR = "linear"
    LOGISTIC = "logistic"
    POISSON = "poisson"


@dataclass(frozen=True)
class GlmFamily:
    """Log-partition function and its companions for one canonical GLM.

    All callables are vectorized over numpy arrays.  ``bounded_curvature`` is
    False for families whose ``psi_ddot`` is unbounded (Poisson); the
    consistency and coverage guarantees do not cover those.
    """

    kind: FamilyKind
    psi: Callable
    psi_dot: Callable
    psi_ddot: Callable
    dispersion: Callable
    log_base: Callable
    response_domain: str
    bounded_curvature: bool
    curvature_bound: float = np.inf

    @property
    def name(self):
        return self.kind.value

    def __reduce__(self):
        # the callables are module-level lambdas; rebuild by kind when unpickling
        return make_family, (self.kind.value,)

    @property
    def has_dispersion(self):
        """Whether ``phi`` is a free parameter (only the Gaussian model here)."""
        return self.kind is FamilyKind.LINEAR

    def check_response(self, y):
        y = np.asarray(y, dtype=float)
        if self.kind is FamilyKind.LOGISTIC and not np.all((y == 0) | (y == 1)):
            raise ValueError("logistic responses must be 0 or 1")
        if self.kind is FamilyKind.POISSON and not np.all((y >= 0) & (y == np.floor(y))):
            raise ValueError("poisson responses must be nonnegative integers")
        return y


def _logistic_psi(eta):
    eta = np.asarray(eta, dtype=float)
    return np.maximum(eta, 0.0) + np.log1p(np.exp(-np.abs(eta)))


def _logistic_psi_ddot(eta):
    p = special.expit(eta)
    return p * (1.0 - p)


def _linear_log_base(y, phi):
    y = np.asarray(y, dtype=float)
    return -0.5 * np.log(2.0 * np.pi * phi) - y**2 / (2.0 * phi)


def _zero_log_base(y, phi):
    return np.zeros_like(np.asarray(y, dtype=float))


def _poisson_log_base(y, phi):
    return -special.gammaln(np.asarray(y, dtype=float) + 1.0)


def _unit_dispersion(phi):
    return np.ones_like(np.asarray(phi, dtype=float)) if np.ndim(phi) else 1.0


def _identity_dispersion(phi):
    return phi


_FAMILIES = {
    FamilyKind.LINEAR: dict(
        psi=lambda eta: 0.5 * np.square(eta),
        psi_dot=lambda eta: np.asarray(eta, dtype=float) * 1.0,
        psi_ddot=lambda eta: np.ones_like(np.asarray(eta, dtype=float)),
        dispersion=_identity_dispersion,
        log_base=_linear_log_base,
        response_domain="real line",
        bounded_curvature=True,
        curvature_bound=1.0,
    ),
    FamilyKind.LOGISTIC: dict(
        psi=_logistic_psi,
        psi_dot=special.expit,
        psi_ddot=_logistic_psi_ddot,
        dispersion=_unit_dispersion,
        log_base=_zero_log_base,
        response_domain="{0, 1}",
        bounded_curvature=True,
        curvature_bound=0.25,
    ),
    FamilyKind.POISSON: dict(
        psi=np.exp,
        psi_dot=np.exp,
        psi_ddot=np.exp,
        dispersion=_unit_dispersion,
        log_base=_poisson_log_base,
        response_domain="nonnegative integers",
        bounded_curvature=False,
    ),
}


def make_family(kind) -> GlmFamily:
    """Build the family for ``kind`` ("linear", "logistic" or "poisson")."""
    if isinstance(kind, GlmFamily):
        return kind
    try:
        kind = FamilyKind(kind)
    except ValueError:
        raise ValueError(f"unknown GLM family {kind!r}") from None
    return GlmFamily(kind=kind, **_FAMILIES[kind])


@dataclass(frozen=True)
class ModelParams:
    """Coefficients ``beta`` and dispersion ``phi`` of a GLM."""

    beta: np.ndarray
    phi: float = 1.0

    def __post_init__(self):
        beta = np.array(self.beta, dtype=float).reshape(-1)
        if not np.all(np.isfinite(beta)):
            raise ValueError("beta must be finite")
        phi = float(self.phi)
        if not (phi > 0 and np.isfinite(phi)):
            raise ValueError(f"phi must be positive and finite, got {phi}")
        beta.setflags(write=False)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "phi", phi)

    @property
    def d(self):
        return self.beta.size


@dataclass(frozen=True)
class Dataset:
    """Covariates ``x`` (n x d) and responses ``y`` (n,)."""

    x: np.ndarray
    y: np.ndarray
    names: Optional[tuple] = field(default=None, compare=False)

    def __post_init__(self):
        x = np.array(self.x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        y = np.array(self.y, dtype=float).reshape(-1)
        if x.ndim != 2:
            raise DimensionError("x must be a 2-d array")
        if x.shape[0] != y.shape[0]:
            raise DimensionError(f"x has {x.shape[0]} rows but y has {y.shape[0]} entries")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValueError("dataset entries must be finite")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def n(self):
        return self.x.shape[0]

    @property
    def d(self):
        return self.x.shape[1]

    def subset(self, rows):
        return Dataset(self.x[rows], self.y[rows])

    def check_for(self, family):
        family.check_response(self.y)
        return self


def read_csv(path) -> Dataset:
    """Read a dataset with header ``y,x1,...,xd``; missing values are rejected."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ValueError(f"{path}: empty file")
        header = [h.strip() for h in header]
        if len(header) < 2 or header[0] != "y":
            raise ValueError(f"{path}: header must be y,x1,...,xd")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ValueError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            if any(cell.strip() == "" for cell in row):
                raise ValueError(f"{path}:{lineno}: missing value")
            try:
                rows.append([float(cell) for cell in row])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise ValueError(f"{path}: no data rows")
    arr = np.array(rows)
    return Dataset(arr[:, 1:], arr[:, 0], names=tuple(header[1:]))


def write_csv(data: Dataset, path_or_buf):
    """Write ``y,x1,...,xd`` with shortest round-trip float formatting."""
    if hasattr(path_or_buf, "write"):
        _write_rows(data, path_or_buf)
        return
    with open(path_or_buf, "w", newline="") as fh:
        _write_rows(data, fh)


def _write_rows(data, fh):
    names = data.names or tuple(f"x{j + 1}" for j in range(data.d))
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(("y",) + tuple(names))
    for yi, xi in zip(data.y, data.x):
        writer.writerow([repr(float(yi))] + [repr(float(v)) for v in xi])


def _check_params(params, d):
    if params.d != d:
        raise DimensionError(f"beta has length {params.d}, covariates have {d}")


def loss(family, x_row, y, params: ModelParams) -> float:
    """Negative log-likelihood of one observation."""
    family = make_family(family)
    x_row = np.asarray(x_row, dtype=float).reshape(-1)
    _check_params(params, x_row.size)
    eta = float(params.beta @ x_row)
    a = family.dispersion(params.phi)
    return float(-family.log_base(y, params.phi) + (family.psi(eta) - y * eta) / a)


def row_losses(family, x, y, params: ModelParams):
    """Vector of per-observation negative log-likelihoods."""
    eta = x @ params.beta
    a = family.dispersion(params.phi)
    return -family.log_base(y, params.phi) + (family.psi(eta) - y * eta) / a


def avg_neg_loglik(family, data: Dataset, params: ModelParams) -> float:
    """Average negative log-likelihood over the rows of ``data``."""
    family = make_family(family)
    if data.n == 0:
        raise ValueError("empty dataset")
    _check_params(params, data.d)
    return float(np.mean(row_losses(family, data.x, data.y, params)))


def avg_neg_loglik_grad(family, data: Dataset, params: ModelParams):
    """Gradient in ``beta`` of :func:`avg_neg_loglik`."""
    family = make_family(family)
    _check_params(params, data.d)
    resid = family.psi_dot(data.x @ params.beta) - data.y
    return data.x.T @ resid / (data.n * family.dispersion(params.phi))


def fit_mle(family, data: Dataset, solver_cfg: Optional[GdConfig] = None) -> ModelParams:
    """Maximum-likelihood fit (the ``delta = 0`` baseline).

    The Gaussian model is solved through the normal equations and ``phi`` is
    the mean squared residual, floored at ``PHI_FLOOR``.  Other families use
    the iterative solver in ``solver_cfg`` on the ``beta`` part of the loss and
    report ``phi = 1``.

    Raises
    ------
    SingularDesignError
        If ``X'X`` is singular for the Gaussian model.
    ConvergenceError
        If the iterative solver hits its iteration cap.
    """
    family = make_family(family)
    if data.n == 0:
        raise ValueError("empty dataset")
    data.check_for(family)
    x, y = data.x, data.y
    if family.kind is FamilyKind.LINEAR:
        beta = solve_spd(x.T @ x, x.T @ y)
        resid = y - x @ beta
        phi = max(float(np.mean(resid**2)), PHI_FLOOR)
        return ModelParams(beta, phi)

    cfg = solver_cfg or GdConfig()
    n = data.n

    def fun(b):
        eta = x @ b
        return float(np.sum(family.psi(eta) - y * eta) / n)

    def grad(b):
        return x.T @ (family.psi_dot(x @ b) - y) / n

    def hess(b):
        w = family.psi_ddot(x @ b)
        return (x * w[:, None]).T @ x / n

    res = minimize(fun, grad, cfg, data.d, hess=hess)
    return ModelParams(res.x, 1.0)


def solve_spd(a, b):
    """Solve ``a @ x = b`` for symmetric positive definite ``a`` via Cholesky."""
    try:
        factor = linalg.cho_factor(a, check_finite=False)
    except linalg.LinAlgError as exc:
        raise SingularDesignError(f"system is singular or not positive definite: {exc}") from None
    # reject numerically singular systems that slip through the factorization
    diag = np.abs(np.diag(factor[0]))
    if diag.min() <= 1e-10 * max(diag.max(), 1e-300):
        raise SingularDesignError("system is numerically singular")
    return linalg.cho_solve(factor, b, check_finite=False)
