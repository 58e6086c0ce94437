"""Dropout noise: mask sampling, exact enumeration and the worst-case oracle.

Nature may replace each covariate ``x_j`` by ``x_j * xi_j`` where ``xi_j`` is
any law on ``[0, 1/(1 - delta_j)]`` with mean one.  The helpers here sample
and enumerate the scaled-Bernoulli law (the dropout mask) and check by brute
force that it is the least favorable member of that set for convex losses.
"""

import itertools
from dataclasses import dataclass

import numpy as np

from .glm import Dataset, ModelParams, make_family, row_losses

MAX_ENUM_DIM = 24


def rng_stream(seed, *key) -> np.random.Generator:
    """Independent generator for ``key`` under ``seed``.

    Streams are addressed by position (replica index, row index, ...), so the
    numbers a consumer sees never depend on how work is scheduled.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=tuple(key))))


@dataclass(frozen=True)
class DropoutSpec:
    """Per-coordinate dropout probabilities ``deltas`` in ``[0, 1)``."""

    deltas: np.ndarray

    def __post_init__(self):
        deltas = np.array(self.deltas, dtype=float).reshape(-1)
        if deltas.size == 0:
            raise ValueError("need at least one coordinate")
        if not np.all((deltas >= 0) & (deltas < 1)):
            raise ValueError("every delta must lie in [0, 1)")
        deltas.setflags(write=False)
        object.__setattr__(self, "deltas", deltas)

    @classmethod
    def homogeneous(cls, delta, d):
        return cls(np.full(d, float(delta)))

    @classmethod
    def coerce(cls, delta, d):
        """Accept a spec, a scalar or a length-``d`` vector."""
        if isinstance(delta, cls):
            spec = delta
        elif np.ndim(delta) == 0:
            spec = cls.homogeneous(delta, d)
        else:
            spec = cls(delta)
        if spec.d != d:
            raise ValueError(f"dropout spec has {spec.d} coordinates, data has {d}")
        return spec

    @property
    def d(self):
        return self.deltas.size

    @property
    def scales(self):
        """Nonzero mask values ``1 / (1 - delta_j)``."""
        return 1.0 / (1.0 - self.deltas)

    @property
    def is_homogeneous(self):
        return bool(np.all(self.deltas == self.deltas[0]))

    @property
    def is_degenerate(self):
        return bool(np.all(self.deltas == 0))

    @property
    def penalty_weights(self):
        """``delta_j / (1 - delta_j)``, the ridge weights of the Gaussian case."""
        return self.deltas / (1.0 - self.deltas)


def sample_masks(spec: DropoutSpec, rng, size):
    """Draw ``size`` masks (shape ``size + (d,)``) from the dropout law."""
    size = (size,) if np.ndim(size) == 0 else tuple(size)
    u = rng.random(size + (spec.d,))
    return np.where(u < spec.deltas, 0.0, spec.scales)


def sample_mask(spec: DropoutSpec, rng):
    """One mask: entry ``j`` is 0 w.p. ``delta_j``, else ``1/(1-delta_j)``."""
    return sample_masks(spec, rng, ())


@dataclass(frozen=True)
class MaskEnumeration:
    """All ``2**d`` masks with their exact probabilities."""

    masks: np.ndarray
    probs: np.ndarray

    def __len__(self):
        return self.probs.size


def enumerate_masks(spec: DropoutSpec) -> MaskEnumeration:
    """Every mask of ``spec`` with product probabilities.

    Row ``k`` keeps coordinate ``j`` iff bit ``j`` of ``k`` is set.
    """
    d = spec.d
    if d > MAX_ENUM_DIM:
        raise ValueError(
            f"d={d} gives 2**{d} masks; exact enumeration is capped at d={MAX_ENUM_DIM}, "
            "use the Monte Carlo objective instead"
        )
    keep = ((np.arange(2**d)[:, None] >> np.arange(d)) & 1).astype(bool)
    masks = np.where(keep, spec.scales, 0.0)
    probs = np.prod(np.where(keep, 1.0 - spec.deltas, spec.deltas), axis=1)
    return MaskEnumeration(masks, probs)


def one_zero_masks(d):
    """The ``d`` binary vectors with exactly one zero (row ``k`` zeroes coordinate ``k``)."""
    if d < 1:
        raise ValueError("d must be at least 1")
    return 1.0 - np.eye(d)


@dataclass(frozen=True)
class FeasibleNoiseDist:
    """Finite law on ``[0, upper]`` with mean one."""

    support: np.ndarray
    weights: np.ndarray
    upper: float

    def __post_init__(self):
        support = np.array(self.support, dtype=float).reshape(-1)
        weights = np.array(self.weights, dtype=float).reshape(-1)
        if support.shape != weights.shape or support.size == 0:
            raise ValueError("support and weights must be nonempty and aligned")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be a probability vector")
        tol = 1e-12 * max(1.0, self.upper)
        if np.any(support < -tol) or np.any(support > self.upper + tol):
            raise ValueError(f"support must lie in [0, {self.upper}]")
        mean = float(weights @ support)
        if abs(mean - 1.0) > 1e-10:
            raise ValueError(f"mean must be 1, got {mean!r}")
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def two_point(cls, low, high, upper):
        """Mean-one law on ``{low, high}`` with ``low <= 1 <= high``."""
        if high == low:
            return cls([low], [1.0], upper)
        w_high = (1.0 - low) / (high - low)
        return cls([low, high], [1.0 - w_high, w_high], upper)

    @classmethod
    def dropout(cls, delta):
        """Scaled Bernoulli: 0 w.p. ``delta``, ``1/(1-delta)`` otherwise."""
        upper = 1.0 / (1.0 - delta)
        if delta == 0:
            return cls([1.0], [1.0], upper)
        return cls([0.0, upper], [delta, 1.0 - delta], upper)

    def expect(self, f):
        return float(self.weights @ np.array([f(z) for z in self.support], dtype=float))


def adversary_value(convex_fn, delta, grid_size=201):
    """Best mean-one two-point law on a uniform grid of ``[0, 1/(1-delta)]``.

    Searches every pair of grid points ``a <= 1 <= b`` (the extreme points of
    the feasible set restricted to the grid) and returns the maximal
    expectation of ``convex_fn`` together with the maximizing law.  The grid
    contains both endpoints, so the scaled Bernoulli law is a candidate.
    """
    if not 0 <= delta < 1:
        raise ValueError("delta must lie in [0, 1)")
    if grid_size < 3:
        raise ValueError("grid_size must be at least 3")
    upper = 1.0 / (1.0 - delta)
    grid = np.linspace(0.0, upper, grid_size)
    grid[-1] = upper
    values = np.array([convex_fn(z) for z in grid], dtype=float)
    if not np.all(np.isfinite(values)):
        raise ValueError("objective is not finite on the grid")

    lo = np.flatnonzero(grid <= 1.0)
    hi = np.flatnonzero(grid >= 1.0)
    a, b = grid[lo][:, None], grid[hi][None, :]
    fa, fb = values[lo][:, None], values[hi][None, :]
    span = b - a
    with np.errstate(invalid="ignore", divide="ignore"):
        w_hi = np.where(span > 0, (1.0 - a) / span, 1.0)
    # a == b only happens at a grid point equal to 1: a point mass there
    expect = np.where(span > 0, (1.0 - w_hi) * fa + w_hi * fb, fb)
    valid = (span > 0) | (a == 1.0)
    expect = np.where(valid, expect, -np.inf)
    if not np.any(np.isfinite(expect)):
        # 1 is not on the grid and delta == 0 cannot happen here; keep explicit
        raise ValueError("no feasible two-point law on the grid")
    i, j = np.unravel_index(np.argmax(expect), expect.shape)
    dist = FeasibleNoiseDist.two_point(grid[lo][i], grid[hi][j], upper)
    return float(expect[i, j]), dist


def random_feasible_dist(delta, rng):
    """Random mean-one two-point law on ``[0, 1/(1-delta)]``."""
    upper = 1.0 / (1.0 - delta)
    if delta == 0:
        return FeasibleNoiseDist([1.0], [1.0], upper)
    low = rng.uniform(0.0, 1.0)
    high = rng.uniform(1.0, upper)
    return FeasibleNoiseDist.two_point(low, high, upper)


def product_expected_loss(family, data: Dataset, params: ModelParams, dists):
    """Exact ``E[loss(x * xi, y)]`` averaged over rows, ``xi ~ dists[0] x ... x dists[d-1]``."""
    family = make_family(family)
    if len(dists) != data.d:
        raise ValueError("need one noise law per coordinate")
    total = 0.0
    for combo in itertools.product(*(range(q.support.size) for q in dists)):
        xi = np.array([q.support[k] for q, k in zip(dists, combo)])
        w = float(np.prod([q.weights[k] for q, k in zip(dists, combo)]))
        if w == 0.0:
            continue
        total += w * float(np.mean(row_losses(family, data.x * xi, data.y, params)))
    return total


@dataclass(frozen=True)
class CertificationReport:
    """Outcome of :func:`certify_least_favorable`."""

    trials: int
    dropout_value: float
    max_violation: float
    violations: int
    tolerance: float

    @property
    def passed(self):
        return self.violations == 0


def certify_least_favorable(family, data: Dataset, spec, params: ModelParams, trials, rng, tol=1e-9):
    """Compare the dropout law against ``trials`` random feasible product laws.

    A violation is a sampled law whose exact expected loss exceeds the
    dropout value by more than ``tol``.  ``max_violation`` is the largest
    ``E_Q[loss] - E_dropout[loss]`` seen (negative when dropout dominates).
    """
    family = make_family(family)
    if data.d > 8 or data.n > 50:
        raise ValueError("certification is meant for small instances (d <= 8, n <= 50)")
    spec = DropoutSpec.coerce(spec, data.d)
    star = [FeasibleNoiseDist.dropout(dj) for dj in spec.deltas]
    star_value = product_expected_loss(family, data, params, star)
    worst = -np.inf
    violations = 0
    for _ in range(trials):
        dists = [random_feasible_dist(dj, rng) for dj in spec.deltas]
        gap = product_expected_loss(family, data, params, dists) - star_value
        worst = max(worst, gap)
        violations += gap > tol
    return CertificationReport(trials, star_value, float(worst), int(violations), tol)


def random_convex_fn(rng):
    """Random convex scalar function: a positive mix of convex building blocks."""
    w = rng.uniform(0.1, 2.0, size=4)
    center, knot = rng.uniform(-1.0, 3.0, size=2)
    rate = rng.uniform(-2.0, 2.0)
    slope = rng.normal()

    def f(z):
        return (
            w[0] * (z - center) ** 2
            + w[1] * abs(z - knot)
            + w[2] * np.exp(rate * z)
            + w[3] * max(0.0, slope * z)
        )

    return f
