"""Four routes to the dropout training solution.

* :func:`solve_exact_gd` minimizes the fully enumerated objective;
* :func:`solve_sgd` is classical dropout SGD, one fresh mask per gradient;
* :func:`solve_saa` freezes ``K`` masks per row and solves the resulting
  sample-average problem;
* :func:`mlmc_solve` averages independent randomized-level multilevel
  estimators whose expectation is the exact solution.

Only ``beta`` is estimated.  The dropout argmin in ``beta`` does not depend on
``phi``, so every solver works on the ``a(phi) = 1`` scaling of the loss and
reports ``phi`` from the ``delta = 0`` maximum-likelihood fit.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from joblib import Parallel, delayed

from ._optim import GdConfig, minimize
from ._sgd_kernel import sgd_run
from .exceptions import ConvergenceError, DivergenceError, MlmcError
from .glm import PHI_FLOOR, Dataset, FamilyKind, ModelParams, make_family, solve_spd
from .noise import DropoutSpec, rng_stream, sample_masks
from .objective import WeightedDesign

__all__ = [
    "GdConfig",
    "SgdConfig",
    "MlmcConfig",
    "MlmcReport",
    "ReplicaResult",
    "solve_exact_gd",
    "solve_sgd",
    "solve_saa",
    "mlmc_solve",
    "expected_mlmc_cost",
]

log = logging.getLogger(__name__)

R_OPTIMAL = 1.0 - 2.0 ** -1.5
LEVEL_CAP = 40
DIVERGENCE_LIMIT = 1e8


def baseline_phi(family, data):
    """Dispersion of the ``delta = 0`` least-squares fit; 1 for families without one."""
    if not family.has_dispersion:
        return 1.0
    # least squares keeps this defined when d > n (zero residual, floored phi)
    beta = np.linalg.lstsq(data.x, data.y, rcond=None)[0]
    return max(float(np.mean((data.y - data.x @ beta) ** 2)), PHI_FLOOR)


def _solve_design(family, design: WeightedDesign, cfg: GdConfig, d):
    res = minimize(
        lambda b: design.value(family, b),
        lambda b: design.grad(family, b),
        cfg,
        d,
        hess=lambda b: design.hess(family, b),
    )
    return res.x


def solve_exact_gd(family, data: Dataset, spec, cfg: Optional[GdConfig] = None) -> ModelParams:
    """Minimize the enumerated dropout objective (``n * 2**d`` terms).

    Convergence means ``||score||_inf <= cfg.tol`` for the concave criterion.
    """
    family = make_family(family)
    data.check_for(family)
    spec = DropoutSpec.coerce(spec, data.d)
    cfg = cfg or GdConfig()
    beta = _solve_design(family, WeightedDesign.exact(data, spec), cfg, data.d)
    return ModelParams(beta, baseline_phi(family, data))


@dataclass(frozen=True)
class SgdConfig:
    """Dropout SGD settings; ``budget`` counts per-example gradient evaluations."""

    lr: float = 1e-4
    batch: int = 1
    budget: int = 100_000
    init: Optional[np.ndarray] = None
    seed: int = 0

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.batch < 1:
            raise ValueError("batch must be at least 1")
        if self.budget < 0:
            raise ValueError("budget must be nonnegative")


_KIND_CODES = {FamilyKind.LINEAR: 0, FamilyKind.LOGISTIC: 1, FamilyKind.POISSON: 2}
_SGD_CHUNK = 1 << 20  # uniforms generated per chunk


def solve_sgd(family, data: Dataset, spec, cfg: SgdConfig) -> ModelParams:
    """Mini-batch dropout SGD.

    Each step draws ``batch`` rows uniformly with replacement and an
    independent mask for each, then moves ``lr`` times the averaged loss
    gradient.  ``budget // batch`` steps are taken, so a zero budget returns
    the initial point.  The trajectory is fixed by ``cfg.seed``.

    Raises
    ------
    DivergenceError
        If ``||beta||_inf`` exceeds 1e8 ("step size too large").
    """
    family = make_family(family)
    data.check_for(family)
    spec = DropoutSpec.coerce(spec, data.d)
    d = data.d
    beta = np.zeros(d) if cfg.init is None else np.array(cfg.init, dtype=float).reshape(d)
    steps = cfg.budget // cfg.batch
    rng = np.random.default_rng(cfg.seed)
    chunk_steps = max(1, _SGD_CHUNK // (cfg.batch * d))
    x = np.ascontiguousarray(data.x)
    y = np.ascontiguousarray(data.y)
    kind = _KIND_CODES[family.kind]
    done = 0
    while done < steps:
        m = min(chunk_steps, steps - done)
        rows = rng.integers(0, data.n, size=(m, cfg.batch))
        u = rng.random((m, cfg.batch, d))
        if not sgd_run(beta, x, y, rows, u, spec.deltas, spec.scales, cfg.lr, kind, DIVERGENCE_LIMIT):
            raise DivergenceError("step size too large: SGD iterates diverged")
        done += m
    return ModelParams(beta, baseline_phi(family, data))


def solve_saa(family, data: Dataset, spec, masks_per_row, inner: Optional[GdConfig] = None, rng=None) -> ModelParams:
    """Minimize the sample-average objective with ``masks_per_row`` frozen masks per row."""
    family = make_family(family)
    data.check_for(family)
    spec = DropoutSpec.coerce(spec, data.d)
    k = int(masks_per_row)
    if k < 1:
        raise ValueError("masks_per_row must be at least 1")
    rng = np.random.default_rng() if rng is None else rng
    masks = sample_masks(spec, rng, (data.n, k))
    beta = _saa_beta(family, data, masks, inner or _default_inner())
    return ModelParams(beta, baseline_phi(family, data))


def _default_inner():
    return GdConfig(step_rule="newton", tol=1e-10, max_iters=200)


def _saa_beta(family, data, masks, cfg):
    if family.kind is FamilyKind.LINEAR:
        gram, rhs = _linear_stats(data, masks)
        return solve_spd(gram, rhs)
    return _solve_design(family, WeightedDesign.from_masks(data, masks), cfg, data.d)


def _linear_stats(data, masks):
    """Unnormalized normal equations of the Gaussian SAA problem for ``masks`` (n, K, d)."""
    n, k, d = masks.shape
    xt = (data.x[:, None, :] * masks).reshape(n * k, d)
    return xt.T @ xt, xt.T @ np.repeat(data.y, k)


@dataclass(frozen=True)
class MlmcConfig:
    """Settings of the randomized multilevel estimator.

    ``r`` is the success probability of the geometric level draw; the expected
    cost is finite for ``r > 1/2`` and the variance for ``r < 3/4``.
    """

    r: float = R_OPTIMAL
    m0: int = 3
    replicas: int = 100
    inner: GdConfig = field(default_factory=_default_inner)
    master_seed: int = 0
    n_jobs: int = 1
    allow_infinite_variance: bool = False  # lets r in [3/4, 1) through, for diagnostics only

    def __post_init__(self):
        upper = 1.0 if self.allow_infinite_variance else 0.75
        if not 0.5 < self.r < upper:
            raise ValueError(f"r must lie in (1/2, {'1' if self.allow_infinite_variance else '3/4'}), got {self.r}")
        if self.m0 < 0:
            raise ValueError("m0 must be nonnegative")
        if self.replicas < 1:
            raise ValueError("replicas must be at least 1")

    def check_dimension(self, d):
        """Warn when the burn-in sample is not much smaller than full enumeration."""
        if 2 ** (self.m0 + 1) >= 2**d / 4:
            log.warning("2**(m0+1)=%d is not much smaller than 2**d=%d", 2 ** (self.m0 + 1), 2**d)


def expected_mlmc_cost(n, m0, r):
    """Expected mask draws per replica, ``n 2^(m0+1) r / (2r - 1)``."""
    return n * 2.0 ** (m0 + 1) * r / (2.0 * r - 1.0)


@dataclass(frozen=True)
class ReplicaResult:
    level: int
    z: np.ndarray
    delta_bar: np.ndarray
    theta_m0: np.ndarray
    draws_used: int


@dataclass(frozen=True)
class MlmcReport:
    estimate: np.ndarray
    replicas: List[ReplicaResult]
    total_draws: int
    empirical_variance: np.ndarray
    expected_cost: float
    phi: float

    @property
    def std_error(self):
        return np.sqrt(self.empirical_variance / len(self.replicas))

    @property
    def levels(self):
        return np.array([rep.level for rep in self.replicas])

    @property
    def z_matrix(self):
        return np.array([rep.z for rep in self.replicas])


def draw_level(rng, r, m0):
    """``m0 + m`` with ``P(m) = r (1-r)**m`` on ``{0, 1, 2, ...}``."""
    return m0 + int(rng.geometric(r)) - 1


def _replica(family, data, spec, cfg: MlmcConfig, index, level=None):
    """One randomized-level estimate; ``level`` overrides the draw (diagnostics)."""
    if level is None:
        level = draw_level(rng_stream(cfg.master_seed, index, 0), cfg.r, cfg.m0)
    if level > cfg.m0 + LEVEL_CAP:
        raise MlmcError(f"replica {index}: level {level} exceeds the cap m0 + {LEVEL_CAP}", index)
    k_full = 2 ** (level + 1)
    masks = sample_masks(spec, rng_stream(cfg.master_seed, index, 1), (data.n, k_full))
    odd, even = masks[:, 0::2], masks[:, 1::2]  # draws 1, 3, 5, ... and 2, 4, 6, ...
    base = masks[:, : 2**cfg.m0]
    try:
        if family.kind is FamilyKind.LINEAR:
            g_odd, b_odd = _linear_stats(data, odd)
            g_even, b_even = _linear_stats(data, even)
            theta_full = solve_spd(g_odd + g_even, b_odd + b_even)
            theta_odd = solve_spd(g_odd, b_odd)
            theta_even = solve_spd(g_even, b_even)
            theta_m0 = solve_spd(*_linear_stats(data, base))
        else:
            theta_full = _saa_beta(family, data, masks, cfg.inner)
            theta_odd = _saa_beta(family, data, odd, cfg.inner)
            theta_even = _saa_beta(family, data, even, cfg.inner)
            theta_m0 = _saa_beta(family, data, base, cfg.inner)
    except (ConvergenceError, np.linalg.LinAlgError) as exc:
        raise MlmcError(f"replica {index} (level {level}) failed: {exc}", index) from exc
    delta_bar = theta_full - 0.5 * (theta_odd + theta_even)
    weight = cfg.r * (1.0 - cfg.r) ** (level - cfg.m0)
    z = delta_bar / weight + theta_m0
    return ReplicaResult(level, z, delta_bar, theta_m0, data.n * k_full)


def mlmc_solve(family, data: Dataset, spec, cfg: MlmcConfig) -> MlmcReport:
    """Unbiased multilevel estimate of the dropout solution.

    Replica ``l`` draws its level from stream ``(master_seed, l, 0)`` and its
    ``(n, 2**(K+1), d)`` masks from ``(master_seed, l, 1)``; results are combined
    in replica order, so the report does not depend on ``n_jobs``.

    Raises
    ------
    MlmcError
        If any replica's inner solve fails.  Failed replicas are never
        dropped, since conditioning on success would bias the average.
    """
    family = make_family(family)
    data.check_for(family)
    spec = DropoutSpec.coerce(spec, data.d)
    cfg.check_dimension(data.d)
    if cfg.n_jobs == 1:
        reps = [_replica(family, data, spec, cfg, l) for l in range(cfg.replicas)]
    else:
        reps = Parallel(n_jobs=cfg.n_jobs, backend="threading")(
            delayed(_replica)(family, data, spec, cfg, l) for l in range(cfg.replicas)
        )
    z = np.array([rep.z for rep in reps])
    variance = z.var(axis=0, ddof=1) if len(reps) > 1 else np.full(data.d, np.nan)
    return MlmcReport(
        estimate=z.mean(axis=0),
        replicas=reps,
        total_draws=int(sum(rep.draws_used for rep in reps)),
        empirical_variance=variance,
        expected_cost=expected_mlmc_cost(data.n, cfg.m0, cfg.r),
        phi=baseline_phi(family, data),
    )
