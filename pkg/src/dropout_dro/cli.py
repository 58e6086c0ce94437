"""Command-line driver: ``dropout-dro <command> [flags]``.

Every command writes a CSV to ``--out`` (stdout when omitted) and, next to a
file output, a ``<out>.manifest.json`` with the resolved flags and library
versions.  Flags may also come from a JSON ``--config`` file; explicit flags
win.  Outputs depend only on flags and seeds, never on ``--threads``.
"""

import argparse
import csv
import io
import json
import platform
import sys

import numpy as np
import scipy

from . import __version__
from .glm import Dataset, ModelParams, fit_mle, make_family, read_csv, write_csv
from .noise import DropoutSpec, adversary_value, certify_least_favorable, random_convex_fn, rng_stream
from .solvers import R_OPTIMAL, GdConfig, MlmcConfig, SgdConfig, mlmc_solve, solve_exact_gd, solve_saa, solve_sgd
from .experiments import SimSpec, gen_linear_data, run_coverage, run_divergence
from .tuning import tune_delta_oracle, tune_delta_plugin


def _floats(text):
    return [float(v) for v in str(text).split(",") if v.strip()]


def _ints(text):
    return [int(v) for v in str(text).split(",") if v.strip()]


def _common(p):
    p.add_argument("--config", help="JSON file supplying default flag values")
    p.add_argument("--out", help="CSV output path (stdout when omitted)")
    p.add_argument("--threads", type=int, default=1, help="worker threads; does not change results")
    p.add_argument("--seed", type=int, default=0)


def build_parser():
    parser = argparse.ArgumentParser(prog="dropout-dro", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    leaves = {}

    p = sub.add_parser("gen-data", help="simulate a Gaussian linear dataset")
    _common(p)
    p.add_argument("--n", type=int)
    p.add_argument("--d", type=int)
    p.add_argument("--beta0", type=_floats, default=[1.0], help="comma list or one value repeated")
    p.add_argument("--noise-sd", type=float, default=1.0)
    leaves["gen-data"] = p

    p = sub.add_parser("fit", help="fit by maximum likelihood or dropout training")
    _common(p)
    p.add_argument("--data")
    p.add_argument("--family", default="linear", choices=["linear", "logistic", "poisson"])
    p.add_argument("--delta", type=float, default=0.0)
    p.add_argument("--method", default="exact", choices=["mle", "exact", "sgd", "saa", "mlmc"])
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--budget", type=int, default=100_000)
    p.add_argument("--masks-per-row", type=int, default=256)
    p.add_argument("--replicas", type=int, default=100)
    p.add_argument("--m0", type=int, default=3)
    p.add_argument("--r", type=float, default=R_OPTIMAL)
    leaves["fit"] = p

    p = sub.add_parser("tune-delta", help="choose delta for a target coverage level")
    _common(p)
    p.add_argument("--alpha", type=float)
    p.add_argument("--mode", default="oracle", choices=["oracle", "plugin"])
    p.add_argument("--n", type=int, help="sample size (oracle mode)")
    p.add_argument("--d", type=int, help="dimension (oracle mode)")
    p.add_argument("--beta0", type=_floats, default=[1.0])
    p.add_argument("--noise-sd", type=float, default=1.0)
    p.add_argument("--data", help="CSV dataset (plugin mode)")
    p.add_argument("--family", default="linear", choices=["linear", "logistic", "poisson"])
    leaves["tune-delta"] = p

    p = sub.add_parser("oracle-check", help="certify dropout as the worst-case noise law")
    _common(p)
    p.add_argument("--family", default="logistic", choices=["linear", "logistic", "poisson"])
    p.add_argument("--n", type=int, default=5)
    p.add_argument("--d", type=int, default=4)
    p.add_argument("--delta", type=float, default=0.3)
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--functions", type=int, default=50)
    p.add_argument("--grid-size", type=int, default=201)
    leaves["oracle-check"] = p

    p = sub.add_parser("experiment", help="simulation studies")
    exp = p.add_subparsers(dest="experiment", required=True)
    q = exp.add_parser("coverage", help="in-sample loss coverage table")
    _common(q)
    q.add_argument("--n-list", type=_ints, default=[100, 1000, 10000])
    q.add_argument("--d", type=int, default=10)
    q.add_argument("--alpha-list", type=_floats, default=[0.2, 0.1, 0.05])
    q.add_argument("--reps", type=int, default=500)
    q.add_argument("--beta0", type=_floats, default=[1.0])
    q.add_argument("--noise-sd", type=float, default=10.0)
    q.add_argument("--cv-folds", type=int, default=10)
    leaves["experiment coverage"] = q
    q = exp.add_parser("divergence", help="MLMC versus SGD distance to the dropout solution")
    _common(q)
    q.add_argument("--L-grid", dest="L_grid", type=_ints, default=[400, 800, 1600])
    q.add_argument("--budget-grid", type=_ints, default=[])
    q.add_argument("--reps", type=int, default=20)
    q.add_argument("--n", type=int, default=50)
    q.add_argument("--d", type=int, default=100)
    q.add_argument("--noise-sd", type=float, default=10.0)
    q.add_argument("--alpha", type=float, default=0.1)
    q.add_argument("--m0", type=int, default=5)
    q.add_argument("--r", type=float, default=0.6)
    q.add_argument("--lr", type=float, default=1e-4)
    q.add_argument("--batch", type=int, default=16)
    leaves["experiment divergence"] = q
    return parser, leaves


# checked after the config merge so a config file can supply them
REQUIRED = {"gen-data": ("n", "d"), "fit": ("data",), "tune-delta": ("alpha",)}


def _leaf_key(args):
    return f"experiment {args.experiment}" if args.command == "experiment" else args.command


def parse_args(argv=None):
    """Parse ``argv``, filling unspecified flags from ``--config``."""
    parser, leaves = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        with open(args.config) as fh:
            config = json.load(fh)
        if not isinstance(config, dict):
            raise SystemExit(f"{args.config}: config must be a JSON object")
        leaf = leaves[_leaf_key(args)]
        known = {a.dest: a for a in leaf._actions}
        defaults = {}
        for key, value in config.items():
            dest = key.replace("-", "_")
            if dest not in known or dest in ("config", "help"):
                raise SystemExit(f"{args.config}: unknown option {key!r} for {_leaf_key(args)}")
            conv = known[dest].type
            if conv in (_floats, _ints) and isinstance(value, list):
                value = conv(",".join(str(v) for v in value))
            elif conv is not None and value is not None:
                value = conv(value)
            defaults[dest] = value
        leaf.set_defaults(**defaults)
        args = parser.parse_args(argv)
    missing = [f"--{dest.replace('_', '-')}" for dest in REQUIRED.get(_leaf_key(args), ()) if getattr(args, dest) is None]
    if missing:
        leaves[_leaf_key(args)].error(f"the following arguments are required: {', '.join(missing)}")
    return args


def _beta0(values, d):
    return np.full(d, values[0]) if len(values) == 1 else np.asarray(values, float)


def _rows_to_csv(header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def _cmd_gen_data(args):
    spec = SimSpec(args.n, args.d, _beta0(args.beta0, args.d), args.noise_sd, args.seed)
    data = gen_linear_data(spec)
    buf = io.StringIO()
    write_csv(data, buf)
    return buf.getvalue()


def _cmd_fit(args):
    family = make_family(args.family)
    data = read_csv(args.data).check_for(family)
    spec = DropoutSpec.homogeneous(args.delta, data.d)
    se = None
    if args.method == "mle":
        params = fit_mle(family, data)
    elif args.method == "exact":
        params = solve_exact_gd(family, data, spec, GdConfig())
    elif args.method == "sgd":
        params = solve_sgd(family, data, spec, SgdConfig(lr=args.lr, batch=args.batch, budget=args.budget, seed=args.seed))
    elif args.method == "saa":
        params = solve_saa(family, data, spec, args.masks_per_row, rng=rng_stream(args.seed))
    else:
        cfg = MlmcConfig(r=args.r, m0=args.m0, replicas=args.replicas, master_seed=args.seed, n_jobs=args.threads)
        report = mlmc_solve(family, data, spec, cfg)
        params = ModelParams(report.estimate, report.phi)
        se = report.std_error
    names = data.names or tuple(f"x{j + 1}" for j in range(data.d))
    rows = []
    for j, name in enumerate(names):
        rows.append((f"beta_{name}", float(params.beta[j]), "" if se is None else float(se[j])))
    rows.append(("phi", float(params.phi), ""))
    return _rows_to_csv(("parameter", "value", "std_err"), rows)


def _cmd_tune(args):
    if args.mode == "oracle":
        if args.n is None or args.d is None:
            raise SystemExit("oracle mode needs --n and --d")
        choice = tune_delta_oracle(args.alpha, args.n, _beta0(args.beta0, args.d), args.noise_sd**2)
    else:
        if not args.data:
            raise SystemExit("plugin mode needs --data")
        choice = tune_delta_plugin(args.family, read_csv(args.data), args.alpha)
    rows = [
        ("alpha", choice.alpha),
        ("n", choice.n),
        ("mu", choice.mu_hat),
        ("sigma", choice.sigma_hat),
        ("z", choice.z_quantile),
        ("c", choice.c),
        ("delta", choice.delta),
    ]
    return _rows_to_csv(("quantity", "value"), rows)


def _cmd_oracle(args):
    rng = rng_stream(args.seed)
    family = make_family(args.family)
    x = rng.standard_normal((args.n, args.d))
    beta = rng.standard_normal(args.d)
    eta = x @ beta
    if family.name == "logistic":
        y = (rng.random(args.n) < 1.0 / (1.0 + np.exp(-eta))).astype(float)
    elif family.name == "poisson":
        y = rng.poisson(np.exp(np.clip(eta, -5, 5))).astype(float)
    else:
        y = eta + rng.standard_normal(args.n)
    params = ModelParams(rng.standard_normal(args.d), 1.0)
    report = certify_least_favorable(family, Dataset(x, y), args.delta, params, args.trials, rng)
    worst_gap = 0.0
    for _ in range(args.functions):
        delta = rng.uniform(0.0, 0.9)
        f = random_convex_fn(rng)
        value, _dist = adversary_value(f, delta, args.grid_size)
        endpoint = delta * f(0.0) + (1.0 - delta) * f(1.0 / (1.0 - delta))
        worst_gap = max(worst_gap, abs(value - endpoint))
    rows = [
        ("trials", report.trials),
        ("dropout_value", report.dropout_value),
        ("max_violation", report.max_violation),
        ("violations", report.violations),
        ("functions", args.functions),
        ("max_endpoint_gap", worst_gap),
        ("passed", int(report.passed and worst_gap <= 1e-9)),
    ]
    return _rows_to_csv(("quantity", "value"), rows)


def _cmd_coverage(args):
    result = run_coverage(
        args.n_list,
        args.d,
        args.alpha_list,
        args.reps,
        args.seed,
        beta0=_beta0(args.beta0, args.d),
        noise_sd=args.noise_sd,
        cv_folds=args.cv_folds,
        n_jobs=args.threads,
    )
    return result.to_csv_text()


def _cmd_divergence(args):
    result = run_divergence(
        args.budget_grid,
        args.L_grid,
        args.seed,
        reps=args.reps,
        n=args.n,
        d=args.d,
        noise_sd=args.noise_sd,
        alpha=args.alpha,
        m0=args.m0,
        r=args.r,
        lr=args.lr,
        batch=args.batch,
        n_jobs=args.threads,
    )
    return result.to_csv_text()


COMMANDS = {
    "gen-data": _cmd_gen_data,
    "fit": _cmd_fit,
    "tune-delta": _cmd_tune,
    "oracle-check": _cmd_oracle,
    "experiment coverage": _cmd_coverage,
    "experiment divergence": _cmd_divergence,
}


def manifest(args):
    flags = {k: v for k, v in sorted(vars(args).items()) if k not in ("out", "threads")}
    return {
        "command": _leaf_key(args),
        "flags": flags,
        "seed": args.seed,
        "versions": {
            "dropout_dro": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
    }


def main(argv=None):
    args = parse_args(argv)
    text = COMMANDS[_leaf_key(args)](args)
    if args.out:
        with open(args.out, "w", newline="") as fh:
            fh.write(text)
        with open(args.out + ".manifest.json", "w") as fh:
            json.dump(manifest(args), fh, indent=2, sort_keys=True)
            fh.write("\n")
    else:
        sys.stdout.write(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
