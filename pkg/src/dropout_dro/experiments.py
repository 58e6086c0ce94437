"""Simulation studies: loss coverage and MLMC-versus-SGD divergence.

Every replication draws from its own positional random stream, so results
are identical whether replications run serially or on a thread pool.
"""

import csv
import io
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from joblib import Parallel, delayed

from .glm import PHI_FLOOR, Dataset, ModelParams, avg_neg_loglik, fit_mle, make_family
from .noise import rng_stream
from .ridge import dropout_ridge, penalized_objective
from .solvers import MlmcConfig, SgdConfig, mlmc_solve, solve_exact_gd, solve_sgd
from .tuning import population_loss_linear, tune_delta_oracle

DEFAULT_CV_GRID = tuple(round(0.05 * k, 2) for k in range(11))
CSV_HEADER = ("config_id", "metric", "value", "mc_std_err", "reps")


@dataclass(frozen=True)
class SimSpec:
    """Gaussian linear model ``y = x @ beta0 + noise_sd * eps`` with standard normal ``x``."""

    n: int
    d: int
    beta0: Optional[np.ndarray] = None
    noise_sd: float = 1.0
    seed: int = 0
    covariate_law: str = "std_normal"

    def __post_init__(self):
        if self.n < 1 or self.d < 1:
            raise ValueError("n and d must be at least 1")
        if not self.noise_sd >= 0:
            raise ValueError("noise_sd must be nonnegative")
        if self.covariate_law != "std_normal":
            raise ValueError(f"unsupported covariate law {self.covariate_law!r}")
        beta0 = np.ones(self.d) if self.beta0 is None else np.array(self.beta0, dtype=float).reshape(-1)
        if beta0.size == 1 and self.d > 1:
            beta0 = np.full(self.d, float(beta0[0]))
        if beta0.shape != (self.d,):
            raise ValueError(f"beta0 has length {beta0.size}, expected {self.d}")
        object.__setattr__(self, "beta0", beta0)

    @property
    def phi_star(self):
        return float(self.noise_sd) ** 2


def gen_linear_data(spec: SimSpec, rng=None) -> Dataset:
    """Draw one dataset; ``rng`` defaults to the stream of ``spec.seed``."""
    rng = rng_stream(spec.seed) if rng is None else rng
    x = rng.standard_normal((spec.n, spec.d))
    y = x @ spec.beta0 + spec.noise_sd * rng.standard_normal(spec.n)
    return Dataset(x, y)


@dataclass(frozen=True)
class ResultRow:
    config_id: str
    metric: str
    value: float
    mc_std_err: Optional[float]
    reps: int

    def __post_init__(self):
        if self.mc_std_err is not None and not self.mc_std_err >= 0:
            raise ValueError("standard errors must be nonnegative")
        if self.reps < 1:
            raise ValueError("replication count must be positive")


def _fmt(v):
    return "" if v is None else repr(float(v))


@dataclass
class ExperimentResult:
    name: str
    rows: List[ResultRow] = field(default_factory=list)

    def add(self, config_id, metric, value, mc_std_err, reps):
        self.rows.append(ResultRow(config_id, metric, float(value), None if mc_std_err is None else float(mc_std_err), int(reps)))

    def get(self, config_id, metric) -> ResultRow:
        for row in self.rows:
            if row.config_id == config_id and row.metric == metric:
                return row
        raise KeyError((config_id, metric))

    def to_csv_text(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for r in self.rows:
            writer.writerow((r.config_id, r.metric, _fmt(r.value), _fmt(r.mc_std_err), r.reps))
        return buf.getvalue()

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv_text())

    @classmethod
    def from_csv(cls, path, name=""):
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = tuple(next(reader))
            if header != CSV_HEADER:
                raise ValueError(f"{path}: unexpected header {header}")
            rows = [
                ResultRow(cid, metric, float(v), None if se == "" else float(se), int(reps))
                for cid, metric, v, se, reps in reader
            ]
        return cls(name, rows)


def _binomial(hits):
    hits = np.asarray(hits, dtype=float)
    p = float(hits.mean())
    return p, math.sqrt(p * (1.0 - p) / hits.size)


def _gaussian_in_sample(data, beta, phi_hat, delta):
    """``L_n(beta, phi_hat, delta)`` for the Gaussian model via the ridge identity."""
    return 0.5 * math.log(2.0 * math.pi * phi_hat) + penalized_objective(data, beta, delta) / (2.0 * phi_hat)


def run_cv_delta(data: Dataset, folds=10, delta_grid=DEFAULT_CV_GRID, family="linear", seed=0):
    """K-fold cross-validated dropout probability.

    Rows are shuffled by the stream of ``seed`` and split into ``folds``
    nearly equal parts.  Each ``delta`` is scored by the held-out average
    negative log-likelihood (without dropout) of the model trained on the
    remaining folds; the smallest score wins, ties going to the smaller delta.
    """
    family = make_family(family)
    grid = [float(v) for v in delta_grid]
    if not grid:
        raise ValueError("delta grid is empty")
    if any(not 0.0 <= v <= 0.95 for v in grid):
        raise ValueError("delta grid values must lie in [0, 0.95]")
    if not 2 <= folds <= data.n:
        raise ValueError("folds must lie in [2, n]")
    order = rng_stream(seed).permutation(data.n)
    parts = np.array_split(order, folds)
    scores = np.zeros(len(grid))
    for k, held in enumerate(parts):
        train = data.subset(np.concatenate([p for j, p in enumerate(parts) if j != k]))
        test = data.subset(held)
        phi = _train_phi(family, train)
        for g, delta in enumerate(grid):
            beta = _dropout_fit(family, train, delta)
            scores[g] += avg_neg_loglik(family, test, ModelParams(beta, phi)) * test.n
    return grid[int(np.argmin(scores))]


def _train_phi(family, train):
    if not family.has_dispersion:
        return 1.0
    beta = np.linalg.lstsq(train.x, train.y, rcond=None)[0]
    return max(float(np.mean((train.y - train.x @ beta) ** 2)), PHI_FLOOR)


def _dropout_fit(family, data, delta):
    if family.has_dispersion:
        if delta == 0.0:
            return np.linalg.lstsq(data.x, data.y, rcond=None)[0]
        return dropout_ridge(data, delta).beta
    return solve_exact_gd(family, data, delta).beta


def _coverage_rep(n, d, alphas, beta0, noise_sd, seed, n_index, rep, cv_folds, cv_grid):
    spec = SimSpec(n, d, beta0, noise_sd)
    data = gen_linear_data(spec, rng_stream(seed, n_index, rep))
    target = population_loss_linear(spec.phi_star)
    ols = fit_mle("linear", data)
    phi_hat = ols.phi
    out = {"ols": _gaussian_in_sample(data, ols.beta, phi_hat, 0.0) >= target}
    for a in alphas:
        delta = tune_delta_oracle(a, n, spec.beta0, spec.phi_star).delta
        beta = dropout_ridge(data, delta).beta
        out[a] = _gaussian_in_sample(data, beta, phi_hat, delta) >= target
    if cv_folds:
        delta_cv = run_cv_delta(data, cv_folds, cv_grid, seed=rep)
        beta = dropout_ridge(data, delta_cv).beta if delta_cv > 0 else ols.beta
        out["cv"] = _gaussian_in_sample(data, beta, phi_hat, delta_cv) >= target
    return out


def run_coverage(
    n_list: Sequence[int],
    d: int,
    alpha_list: Sequence[float],
    reps: int,
    seed: int,
    beta0=None,
    noise_sd=10.0,
    cv_folds: int = 10,
    cv_grid=DEFAULT_CV_GRID,
    n_jobs: int = 1,
) -> ExperimentResult:
    """Frequency with which the in-sample dropout loss covers the population loss.

    For each ``n`` and each replication a fresh dataset is drawn, ``delta`` is
    tuned with the true ``beta0`` and ``phi``, the dropout ridge estimator is
    fit and ``L_n(beta_hat, phi_hat, delta) >= L(beta0, phi)`` is recorded, with
    ``phi_hat`` the residual variance of ordinary least squares.  The OLS
    (``delta = 0``) and cross-validated ``delta`` baselines are scored the
    same way; set ``cv_folds=0`` to skip cross-validation.
    """
    if reps < 100:
        raise ValueError("coverage needs at least 100 replications")
    result = ExperimentResult("coverage")
    alphas = [float(a) for a in alpha_list]
    for ni, n in enumerate(n_list):
        spec = SimSpec(n, d, beta0, noise_sd)
        args = [(n, d, alphas, spec.beta0, noise_sd, seed, ni, rep, cv_folds, cv_grid) for rep in range(reps)]
        if n_jobs == 1:
            outs = [_coverage_rep(*a) for a in args]
        else:
            outs = Parallel(n_jobs=n_jobs, backend="threading")(delayed(_coverage_rep)(*a) for a in args)
        for a in alphas:
            cid = f"n={n},alpha={a}"
            result.add(cid, "delta", tune_delta_oracle(a, n, spec.beta0, spec.phi_star).delta, None, reps)
            result.add(cid, "coverage_dropout", *_binomial([o[a] for o in outs]), reps)
        result.add(f"n={n}", "coverage_ols", *_binomial([o["ols"] for o in outs]), reps)
        if cv_folds:
            result.add(f"n={n}", "coverage_cv", *_binomial([o["cv"] for o in outs]), reps)
    return result


def _norms(v):
    a = np.abs(v)
    return {"l1": float(a.sum()), "l2": float(np.sqrt(a @ a)), "linf": float(a.max())}


def _divergence_rep(rep, seed, l_grid, budget_grid, n, d, noise_sd, alpha, m0, r, lr, batch):
    spec = SimSpec(n, d, np.ones(d), noise_sd)
    data = gen_linear_data(spec, rng_stream(seed, rep))
    delta = tune_delta_oracle(alpha, n, spec.beta0, spec.phi_star).delta
    target = dropout_ridge(data, delta).beta
    mlmc_seed = int(rng_stream(seed, rep, 1).integers(2**62))
    sgd_seed = int(rng_stream(seed, rep, 2).integers(2**62))
    report = mlmc_solve("linear", data, delta, MlmcConfig(r=r, m0=m0, replicas=max(l_grid), master_seed=mlmc_seed))
    z = report.z_matrix
    draws = np.cumsum([rep_.draws_used for rep_ in report.replicas])
    out = {}
    for L in l_grid:
        est = z[:L].mean(axis=0)
        budget = int(draws[L - 1])
        sgd = solve_sgd("linear", data, delta, SgdConfig(lr=lr, batch=batch, budget=budget, seed=sgd_seed)).beta
        out[("mlmc", L)] = _norms(est - target)
        out[("sgd", L)] = _norms(sgd - target)
        out[("budget", L)] = budget
    for b in budget_grid:
        sgd = solve_sgd("linear", data, delta, SgdConfig(lr=lr, batch=batch, budget=int(b), seed=sgd_seed)).beta
        out[("sgd_budget", b)] = _norms(sgd - target)
    out["delta"] = delta
    return out


def _mean_se(values):
    v = np.asarray(values, dtype=float)
    se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
    return float(v.mean()), se


def run_divergence(
    budget_grid: Sequence[int] = (),
    L_grid: Sequence[int] = (400, 800, 1600),
    seed: int = 0,
    reps: int = 20,
    n: int = 50,
    d: int = 100,
    noise_sd: float = 10.0,
    alpha: float = 0.1,
    m0: int = 5,
    r: float = 0.6,
    lr: float = 1e-4,
    batch: int = 16,
    n_jobs: int = 1,
) -> ExperimentResult:
    """Distance of MLMC and dropout SGD to the closed-form dropout solution.

    Each outer repetition draws a dataset, runs ``max(L_grid)`` MLMC replicas
    once and scores every prefix of length ``L``; because replicas are
    addressed by index a prefix is exactly the ``L``-replica run.  SGD gets
    the same number of mask draws as the prefix consumed (``sgd_*`` rows
    under ``L=...``) and, separately, each fixed budget in ``budget_grid``.

    Defaults: MLMC with ``r = 0.6`` and ``m0 = 5``; SGD with learning rate
    1e-4 from the origin and mini-batches of 16.
    """
    l_grid = sorted(int(L) for L in L_grid)
    if not l_grid or reps < 1:
        raise ValueError("L grid must be nonempty and reps positive")
    if l_grid[0] < 2:
        raise ValueError("each L must be at least 2")
    args = (seed, l_grid, list(budget_grid), n, d, noise_sd, alpha, m0, r, lr, batch)
    if n_jobs == 1:
        outs = [_divergence_rep(rep, *args) for rep in range(reps)]
    else:
        outs = Parallel(n_jobs=n_jobs, backend="threading")(delayed(_divergence_rep)(rep, *args) for rep in range(reps))
    result = ExperimentResult("divergence")
    result.add("setting", "delta", outs[0]["delta"], None, reps)
    for L in l_grid:
        cid = f"L={L}"
        result.add(cid, "budget_draws", *_mean_se([o[("budget", L)] for o in outs]), reps)
        for method in ("mlmc", "sgd"):
            for norm_name in ("l1", "l2", "linf"):
                result.add(cid, f"{method}_{norm_name}", *_mean_se([o[(method, L)][norm_name] for o in outs]), reps)
        wins = [o[("mlmc", L)]["linf"] <= o[("sgd", L)]["linf"] for o in outs]
        result.add(cid, "mlmc_beats_sgd_linf", *_binomial(wins), reps)
    for b in budget_grid:
        for norm_name in ("l1", "l2", "linf"):
            result.add(f"budget={b}", f"sgd_{norm_name}", *_mean_se([o[("sgd_budget", b)][norm_name] for o in outs]), reps)
    return result
