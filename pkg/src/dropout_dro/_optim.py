"""Deterministic first/second-order minimizers shared by the MLE and dropout solvers."""

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import linalg

from .exceptions import ConvergenceError

STEP_RULES = ("fixed", "backtracking", "newton")

_ARMIJO_C = 1e-4


@dataclass(frozen=True)
class GdConfig:
    """Settings for the full-batch deterministic solvers.

    Parameters
    ----------
    step_rule : {"fixed", "backtracking", "newton"}
        ``fixed`` takes ``lr``-sized gradient steps, ``backtracking`` uses an
        Armijo line search on the gradient direction and ``newton`` uses a
        damped Newton direction with the same line search.
    lr : float
        Step size for ``fixed`` and initial trial step for ``backtracking``.
    tol : float
        Stop once the gradient infinity-norm is at most ``tol``.
    max_iters : int
        Iteration cap; exceeding it raises :class:`ConvergenceError`.
    init : array or None
        Starting point, zeros when omitted.
    """

    step_rule: str = "backtracking"
    lr: float = 1.0
    tol: float = 1e-8
    max_iters: int = 100_000
    init: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.step_rule not in STEP_RULES:
            raise ValueError(f"step_rule must be one of {STEP_RULES}, got {self.step_rule!r}")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if not self.lr > 0:
            raise ValueError("lr must be positive")

    def start(self, d):
        if self.init is None:
            return np.zeros(d)
        x0 = np.array(self.init, dtype=float).reshape(-1)
        if x0.shape != (d,):
            raise ValueError(f"init has length {x0.size}, expected {d}")
        return x0


@dataclass
class OptimResult:
    x: np.ndarray
    value: float
    grad_norm: float
    iterations: int


def minimize(
    fun: Callable[[np.ndarray], float],
    grad: Callable[[np.ndarray], np.ndarray],
    cfg: GdConfig,
    d: int,
    hess: Optional[Callable[[np.ndarray], np.ndarray]] = None,
) -> OptimResult:
    """Minimize a smooth convex function until ``||grad||_inf <= cfg.tol``."""
    if cfg.step_rule == "newton" and hess is None:
        raise ValueError("newton step rule needs a Hessian")
    x = cfg.start(d)
    f = fun(x)
    g = grad(x)
    t = cfg.lr
    for it in range(cfg.max_iters + 1):
        gnorm = float(np.max(np.abs(g))) if g.size else 0.0
        if not np.isfinite(gnorm) or not np.isfinite(f):
            raise ConvergenceError("non-finite objective or gradient", x, gnorm, it)
        if gnorm <= cfg.tol:
            return OptimResult(x, float(f), gnorm, it)
        if it == cfg.max_iters:
            break

        if cfg.step_rule == "fixed":
            x = x - cfg.lr * g
            f = fun(x)
            g = grad(x)
            continue

        if cfg.step_rule == "newton":
            direction = _newton_direction(hess(x), g)
            step = 1.0
        else:
            direction = g
            step = min(2.0 * t, 1e12)
        slope = float(g @ direction)
        while True:
            x_new = x - step * direction
            f_new = fun(x_new)
            g_new = grad(x_new)
            if np.isfinite(f_new) and _sufficient_decrease(f, f_new, g, g_new, direction, step, slope):
                break
            step *= 0.5
            if step < 1e-30:
                raise ConvergenceError("line search failed", x, gnorm, it)
        t = step
        x, f, g = x_new, f_new, g_new
    raise ConvergenceError(
        f"no convergence in {cfg.max_iters} iterations (grad inf-norm {gnorm:.3e})",
        x,
        gnorm,
        cfg.max_iters,
    )


def _sufficient_decrease(f, f_new, g, g_new, direction, step, slope):
    target = _ARMIJO_C * step * slope
    if f_new <= f - target:
        return True
    # near the optimum f differences drown in roundoff; the trapezoid estimate
    # of the decrease from gradients has no cancellation (exact for quadratics)
    est = -0.5 * step * float((g + g_new) @ direction)
    return np.all(np.isfinite(g_new)) and est <= -target


def _newton_direction(h, g):
    try:
        return linalg.cho_solve(linalg.cho_factor(h, check_finite=False), g)
    except linalg.LinAlgError:
        # semidefinite Hessian: fall back to the least-squares direction
        return linalg.lstsq(h, g, check_finite=False)[0]
