"""Distributionally robust dropout training for generalized linear models."""

from .exceptions import ConvergenceError, DimensionError, DivergenceError, MlmcError, SingularDesignError
from .glm import Dataset, FamilyKind, GlmFamily, ModelParams, fit_mle, make_family, read_csv, write_csv
from .noise import DropoutSpec, FeasibleNoiseDist, adversary_value, certify_least_favorable
from .objective import dropout_objective_exact, dropout_objective_mc, dropout_score, dropout_hessian
from .ridge import dropout_ridge, population_limit_lr
from .solvers import GdConfig, MlmcConfig, SgdConfig, mlmc_solve, solve_exact_gd, solve_saa, solve_sgd
from .tuning import DeltaChoice, choose_delta, tune_delta_oracle, tune_delta_plugin

__version__ = "0.1.0"
from .experiments import ExperimentResult, SimSpec, gen_linear_data, run_coverage, run_cv_delta, run_divergence
from .estimator import DropoutGLM
