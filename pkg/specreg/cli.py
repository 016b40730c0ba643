#!/usr/bin/python3
import argparse
import io
import logging
import os
import sys

import numpy as np
import pandas as pd

from specreg.config import EXPERIMENTS
from specreg.config import apply_overrides
from specreg.config import load_config
from specreg.experiments import fit_filters
from specreg.experiments import init_prom_vars
from specreg.experiments import prepare_problem
from specreg.experiments import run_experiment
from specreg.experiments import write_manifest
from specreg.learners import load_filter
from specreg.learners import reconstruct
from specreg.operators import build_operator
from specreg.stochastics import save_profile
from specreg.svd import compute_svd
from specreg.svd import load_matrix_csv
from specreg.svd import load_system
from specreg.svd import save_system
from specreg.utils import ConfigError
from specreg.utils import DimensionMismatchError
from specreg.utils import LOGLEVELS
from specreg.utils import NumericalError
from specreg.utils import read_bytes
from specreg.utils import resolve_seed
from specreg.utils import write_dataframe

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
COMMANDS = ("svd", "fit", "reconstruct", "experiment")


def argument_parser():
    parser = argparse.ArgumentParser(
        description="fit and evaluate spectral regularizers for linear inverse problems"
    )
    parser.add_argument("command", choices=COMMANDS, help="what to do")
    parser.add_argument(
        "name",
        nargs="?",
        default=None,
        help=f"experiment name for the experiment command ({', '.join(EXPERIMENTS)})",
    )
    parser.add_argument(
        "--config", default="", type=str, help="path to JSON experiment config"
    )
    parser.add_argument(
        "--seed",
        default=None,
        type=int,
        help="master seed (overrides config, falls back to $SPECREG_SEED, then 0)",
    )
    parser.add_argument(
        "--out", default=None, type=str, help="output directory (overrides config)"
    )
    parser.add_argument(
        "--uniform-scaling",
        dest="uniform_scaling",
        action="store_true",
        default=False,
        help="test every paradigm on the same noise grid instead of delta^2 for post/adv",
    )
    parser.add_argument(
        "--workers",
        default=None,
        type=int,
        help="processes for independent experiment cells",
    )
    parser.add_argument(
        "--matrix", default="", type=str, help="dense operator CSV for svd"
    )
    parser.add_argument(
        "--system",
        default="",
        type=str,
        help="singular system file from svd (.zst compressed by extension)",
    )
    parser.add_argument(
        "--filter", default="", type=str, help="filter CSV from fit, for reconstruct"
    )
    parser.add_argument(
        "--measurement",
        default="",
        type=str,
        help="measurement vector (CSV with a value column, or .npy) for reconstruct",
    )
    parser.add_argument(
        "--rank-tol",
        dest="rank_tol",
        default=0.0,
        type=float,
        help="relative singular value floor for svd",
    )
    parser.add_argument(
        "--promfile",
        default="",
        type=str,
        help="if defined, write Prometheus metrics here after the run",
    )
    parser.add_argument(
        "--loglevel",
        default="info",
        choices=LOGLEVELS,
        help="logging level",
    )
    return parser


def load_vector(path):
    if path.endswith(".npy"):
        return np.load(path)
    df = pd.read_csv(io.BytesIO(read_bytes(path)))
    if "value" not in df.columns:
        raise ConfigError("measurement", f"{path}: expected a value column")
    return df["value"].to_numpy(dtype=np.float64)


def save_vector(values, path):
    df = pd.DataFrame({"n": np.arange(1, len(values) + 1), "value": values})
    return write_dataframe(df, path)


def _config(args):
    if not args.config:
        raise ConfigError("config", f"{args.command} needs --config")
    return apply_overrides(
        load_config(args.config),
        experiment=args.name if args.command == "experiment" else None,
        seed=args.seed,
        output_dir=args.out,
        uniform_scaling=args.uniform_scaling,
        workers=args.workers,
    )


def _out_dir(args, default="results"):
    out_dir = args.out or default
    os.makedirs(out_dir, exist_ok=True)
    return out_dir


def svd_command(args):
    if args.matrix:
        A = load_matrix_csv(args.matrix)
    elif args.config:
        A = build_operator(_config(args).operator)
    else:
        raise ConfigError("matrix", "svd needs --matrix or --config")
    system = compute_svd(A, rank_tol=args.rank_tol)
    out_dir = _out_dir(args)
    system_path = save_system(system, os.path.join(out_dir, "system.svdsys"))
    save_profile(system.sigma, os.path.join(out_dir, "singular_values.csv"))
    logging.info(
        "rank %u, sigma_1 = %g, sigma_N = %g, wrote %s",
        system.n_modes,
        system.sigma[0],
        system.sigma[-1],
        system_path,
    )


def fit_command(args):
    cfg = _config(args)
    seed = resolve_seed(args.seed, cfg.seed)
    system = load_system(args.system) if args.system else None
    problem = prepare_problem(cfg, seed, system=system)
    out_dir = _out_dir(args, cfg.output_dir)
    paths, _ = fit_filters(cfg, problem, out_dir)
    write_manifest(cfg, seed, out_dir, paths)


def reconstruct_command(args):
    for field, value in (
        ("system", args.system),
        ("filter", args.filter),
        ("measurement", args.measurement),
    ):
        if not value:
            raise ConfigError(field, f"reconstruct needs --{field}")
    system = load_system(args.system)
    f = load_filter(args.filter)
    if not np.allclose(f.sigma, system.sigma, rtol=1e-12, atol=0.0):
        raise DimensionMismatchError("filter was fitted to a different operator")
    x = reconstruct(load_vector(args.measurement), f, system)
    path = os.path.join(_out_dir(args), "reconstruction.csv")
    save_vector(x, path)
    logging.info("reconstructed %u values into %s", len(x), path)


def experiment_command(args):
    if args.name not in EXPERIMENTS:
        raise ConfigError("experiment", f"expected one of {EXPERIMENTS}, got {args.name!r}")
    cfg = _config(args)
    seed = resolve_seed(args.seed, cfg.seed)
    prom_vars = init_prom_vars()
    run_experiment(cfg, seed, prom_vars, args.promfile or None)


COMMAND_HANDLERS = {
    "svd": svd_command,
    "fit": fit_command,
    "reconstruct": reconstruct_command,
    "experiment": experiment_command,
}


def main(argv=None):
    parser = argument_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=args.loglevel.upper(), format="%(asctime)s %(message)s"
    )
    try:
        COMMAND_HANDLERS[args.command](args)
    except NumericalError as err:
        logging.error("numerical failure: %s", err)
        return EXIT_NUMERICAL
    except (ValueError, OSError) as err:
        logging.error("%s", err)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
