#!/usr/bin/python3
"""Continuity, convergence, reconstruction-grid and fit-report experiments.

Error magnitudes depend on the operator and data at hand; the experiments
target orderings and log-log slopes, not absolute values.
"""
import json
import logging
import math
import os
import time
from dataclasses import asdict
from dataclasses import dataclass
from functools import partial

import numpy as np
import pandas as pd
from prometheus_client import CollectorRegistry
from prometheus_client import Counter
from prometheus_client import Gauge
from prometheus_client import write_to_textfile
from scipy import stats

from specreg import __version__
from specreg.diagnostics import CONDITION_IDS
from specreg.diagnostics import CONDITION_PARADIGMS
from specreg.diagnostics import bias
from specreg.diagnostics import check_condition
from specreg.diagnostics import expected_error
from specreg.learners import fit_paradigm
from specreg.learners import lipschitz_condition
from specreg.learners import reconstruct
from specreg.learners import save_filter
from specreg.operators import build_operator
from specreg.operators import generate_phantom
from specreg.operators import sample_data_corpus
from specreg.operators import write_pgm
from specreg.stochastics import DataModel
from specreg.stochastics import SpectrumProfile
from specreg.stochastics import load_profile
from specreg.stochastics import sample_noise
from specreg.stochastics import training_noise_rule
from specreg.svd import compute_svd
from specreg.utils import DimensionMismatchError
from specreg.utils import STREAM_CORPUS
from specreg.utils import STREAM_DATA
from specreg.utils import STREAM_NOISE
from specreg.utils import STREAM_TEST
from specreg.utils import derive_seed
from specreg.utils import finite_or_none
from specreg.utils import make_rng
from specreg.utils import map_cells
from specreg.utils import replace_ext
from specreg.utils import sha256_file
from specreg.utils import write_dataframe
from specreg.utils import write_text

RESULT_COLUMNS = [
    "experiment",
    "paradigm",
    "delta",
    "family",
    "dimension",
    "data_term",
    "noise_term",
    "total",
    "seed",
]
CONTINUITY_FAMILY = "last_mode"
# noise_term must exceed this for a point to enter a slope fit.
SLOPE_NOISE_FLOOR = 10.0 * np.finfo(np.float64).eps


@dataclass(frozen=True)
class ResultRow:
    experiment: str
    paradigm: str
    delta: float
    family: str
    dimension: int
    data_term: float
    noise_term: float
    total: float
    seed: int


@dataclass(frozen=True, eq=False)
class Problem:
    spec: object
    matrix: np.ndarray
    system: object
    data: DataModel

    @property
    def n_modes(self):
        return self.system.n_modes


def init_prom_vars(registry=None):
    if registry is None:
        registry = CollectorRegistry()
    return {
        "registry": registry,
        "fits": Counter(
            "specreg_fits", "filters fitted", ["paradigm"], registry=registry
        ),
        "cells": Counter(
            "specreg_cells", "experiment cells evaluated", ["experiment"], registry=registry
        ),
        "run_seconds": Gauge(
            "specreg_run_seconds", "wall time of the last run", ["experiment"], registry=registry
        ),
    }


def rows_frame(rows):
    return pd.DataFrame([asdict(row) for row in rows], columns=RESULT_COLUMNS)


def data_model(cfg, spec, system, seed):
    if cfg.data.profile:
        values = load_profile(cfg.data.profile).values
        if len(values) < system.n_modes:
            raise DimensionMismatchError(
                f"{cfg.data.profile}: {len(values)} modes, operator has {system.n_modes}"
            )
        return DataModel(
            SpectrumProfile.explicit(values[: system.n_modes]), source=cfg.data.profile
        )
    if cfg.data.corpus:
        samples = np.load(cfg.data.corpus)
        return DataModel.from_corpus(samples, system, source=cfg.data.corpus)
    if spec.kind == "radon2d":
        samples = sample_data_corpus(
            spec, cfg.data.corpus_size, derive_seed(seed, STREAM_CORPUS)
        )
        return DataModel.from_corpus(samples, system, source="phantoms")
    return DataModel.analytic(cfg.data.exponent, system.n_modes)


def prepare_problem(cfg, seed, dimension=None, system=None):
    """Operator, singular system and data model; a given system skips the SVD."""
    spec = cfg.operator if dimension is None else cfg.operator.resized(dimension)
    if system is None:
        matrix = build_operator(spec)
        system = compute_svd(matrix)
    else:
        matrix = system.matrix()
    return Problem(spec, matrix, system, data_model(cfg, spec, system, seed))


def fixed_ground_truth(cfg, problem, seed):
    """The single x all convergence cells share."""
    if problem.spec.kind == "radon2d":
        return generate_phantom(problem.spec.side, derive_seed(seed, STREAM_TEST)).flatten()
    if cfg.data.profile:
        rng = make_rng(derive_seed(seed, STREAM_TEST), STREAM_DATA)
        coefficients = rng.standard_normal(problem.n_modes) * np.sqrt(problem.data.pi)
        return problem.system.U @ coefficients
    return sample_data_corpus(
        problem.spec,
        1,
        derive_seed(seed, STREAM_TEST),
        q=cfg.data.exponent,
        system=problem.system,
    )[0]


def evaluation_level(paradigm, delta, uniform_scaling):
    """delta, or delta^2 for post and adv unless every paradigm faces the same grid."""
    if uniform_scaling or not paradigm.strong_scaling:
        return delta
    return delta * delta


def continuity_rows(system, pi, paradigms, training_level, perturbation, seed=0):
    """|R(eps)| for eps = perturbation * v_N, white training noise at training_level."""
    eps = perturbation * system.V[:, -1]
    rows = []
    for paradigm in paradigms:
        training = training_noise_rule(
            training_level, "white", system.n_modes, basis=paradigm.training_basis
        )
        f = fit_paradigm(paradigm, system, pi, training)
        response_norm = float(np.linalg.norm(reconstruct(eps, f, system)))
        rows.append(
            ResultRow(
                experiment="continuity_sweep",
                paradigm=paradigm.label,
                delta=training_level,
                family=CONTINUITY_FAMILY,
                dimension=system.n_modes,
                data_term=0.0,
                noise_term=response_norm,
                total=response_norm,
                seed=seed,
            )
        )
    return rows


def run_continuity_sweep(cfg, seed, out_dir, prom_vars=None):
    rows = []
    for dimension in cfg.sweep_dimensions:
        problem = prepare_problem(cfg, seed, dimension)
        rows.extend(
            continuity_rows(
                problem.system,
                problem.data,
                cfg.paradigms,
                cfg.training_level,
                cfg.perturbation,
                seed,
            )
        )
        logging.info("continuity sweep: N=%u done", problem.n_modes)
    _count(prom_vars, "continuity_sweep", rows)
    path = os.path.join(out_dir, "continuity.csv")
    write_dataframe(rows_frame(rows), path)
    return [path]


def convergence_cell(problem, x, training_rule, uniform_scaling, seed, cell):
    paradigm, rule, delta = cell
    training = training_rule.model(delta, problem.n_modes, paradigm.training_basis)
    f = fit_paradigm(paradigm, problem.system, problem.data, training)
    level = evaluation_level(paradigm, delta, uniform_scaling)
    report = expected_error(
        f, x, rule.model(level, problem.n_modes, "y"), problem.system
    )
    return ResultRow(
        experiment="convergence_sweep",
        paradigm=paradigm.label,
        delta=delta,
        family=rule.label,
        dimension=problem.n_modes,
        data_term=report.data_term,
        noise_term=report.noise_term,
        total=report.total,
        seed=seed,
    )


def convergence_slopes(rows, paradigms, uniform_scaling):
    """Log-log slope of total error against the test noise level, per curve."""
    df = rows_frame(rows)
    by_label = {paradigm.label: paradigm for paradigm in paradigms}
    slopes = []
    for (label, family), curve in df.groupby(["paradigm", "family"], sort=False):
        curve = curve[curve["noise_term"] > SLOPE_NOISE_FLOOR]
        slope = math.nan
        if len(curve) >= 2:
            levels = [
                evaluation_level(by_label[label], delta, uniform_scaling)
                for delta in curve["delta"]
            ]
            slope = stats.linregress(np.log(levels), np.log(curve["total"])).slope
        slopes.append(
            {"paradigm": label, "family": family, "slope": slope, "points": len(curve)}
        )
    return pd.DataFrame(slopes, columns=["paradigm", "family", "slope", "points"])


def convergence_sweep(cfg, problem, seed):
    x = fixed_ground_truth(cfg, problem, seed)
    cells = [
        (paradigm, rule, delta)
        for paradigm in cfg.paradigms
        for rule in cfg.test_noise
        for delta in cfg.delta_grid
    ]
    func = partial(
        convergence_cell, problem, x, cfg.training_noise, cfg.uniform_scaling, seed
    )
    rows = map_cells(func, cells, cfg.workers)
    return rows, convergence_slopes(rows, cfg.paradigms, cfg.uniform_scaling)


def run_convergence_sweep(cfg, seed, out_dir, prom_vars=None):
    problem = prepare_problem(cfg, seed)
    rows, slopes = convergence_sweep(cfg, problem, seed)
    _count(prom_vars, "convergence_sweep", rows)
    rows_path = os.path.join(out_dir, "convergence.csv")
    slopes_path = os.path.join(out_dir, "convergence_slopes.csv")
    write_dataframe(rows_frame(rows), rows_path)
    write_dataframe(slopes, slopes_path)
    return [rows_path, slopes_path]


def _unit_range(values):
    span = np.max(values) - np.min(values)
    if span == 0:
        return np.zeros_like(values)
    return (values - np.min(values)) / span


def run_recon_grid(cfg, seed, out_dir, prom_vars=None):
    problem = prepare_problem(cfg, seed)
    spec = problem.spec
    x = fixed_ground_truth(cfg, problem, seed)
    clean = problem.matrix @ x
    paths = []
    index = []
    for family_index, rule in enumerate(cfg.test_noise):
        noise_seed = derive_seed(seed, STREAM_NOISE, family_index)
        unit_noise = sample_noise(
            rule.model(1.0, problem.n_modes, "y"), problem.system, noise_seed
        )
        path = os.path.join(out_dir, f"noise_{rule.label}.pgm")
        write_pgm(path, _unit_range(unit_noise).reshape(spec.angles, spec.n_detectors))
        paths.append(path)
    for paradigm in cfg.paradigms:
        for family_index, rule in enumerate(cfg.test_noise):
            noise_seed = derive_seed(seed, STREAM_NOISE, family_index)
            for delta in cfg.delta_grid:
                training = cfg.training_noise.model(
                    delta, problem.n_modes, paradigm.training_basis
                )
                f = fit_paradigm(paradigm, problem.system, problem.data, training)
                level = evaluation_level(paradigm, delta, cfg.uniform_scaling)
                eps = sample_noise(
                    rule.model(level, problem.n_modes, "y"), problem.system, noise_seed
                )
                estimate = reconstruct(clean + eps, f, problem.system)
                name = f"{paradigm.slug}_{rule.label}_{delta:g}.pgm"
                path = os.path.join(out_dir, name)
                write_pgm(path, estimate.reshape(spec.side, spec.side))
                paths.append(path)
                index.append(
                    {
                        "file": name,
                        "paradigm": paradigm.label,
                        "family": rule.label,
                        "delta": delta,
                        "squared_error": float(np.sum(np.square(estimate - x))),
                        "seed": seed,
                    }
                )
    _count(prom_vars, "recon_grid", index)
    index_path = os.path.join(out_dir, "recon_grid.csv")
    write_dataframe(pd.DataFrame(index), index_path)
    return paths + [index_path]


def fit_report_entry(paradigm, f, problem, training, test):
    """Report numbers are JSON-safe; tsvd's infinite lambdas are left out of max_lambda."""
    finite_lam = f.lam[np.isfinite(f.lam)]
    entry = {
        "paradigm": paradigm.label,
        "bias": finite_or_none(bias(f, problem.data)),
        "sup_g": finite_or_none(f.sup_g),
        "max_lambda": float(np.max(finite_lam)) if len(finite_lam) else None,
        "lipschitz": lipschitz_condition(f),
        "conditions": [],
    }
    if paradigm.name in CONDITION_PARADIGMS:
        entry["conditions"] = [
            check_condition(
                paradigm, training, problem.data, problem.system, test, condition_id
            ).to_dict()
            for condition_id in CONDITION_IDS
        ]
    return entry


def fit_filters(cfg, problem, out_dir):
    """Fit every configured paradigm at training_level and save filter_{slug}.csv/.json."""
    paths = []
    fits = []
    for paradigm in cfg.paradigms:
        training = cfg.training_noise.model(
            cfg.training_level, problem.n_modes, paradigm.training_basis
        )
        f = fit_paradigm(paradigm, problem.system, problem.data, training)
        path = os.path.join(out_dir, f"filter_{paradigm.slug}.csv")
        save_filter(f, path)
        paths.extend([path, replace_ext(path, "json")])
        fits.append((paradigm, training, f))
        logging.info("fitted %s, sup g = %g", paradigm.label, f.sup_g)
    return paths, fits


def run_fit_report(cfg, seed, out_dir, prom_vars=None):
    problem = prepare_problem(cfg, seed)
    test = cfg.test_noise[0].model(cfg.training_level, problem.n_modes, "y")
    paths, fits = fit_filters(cfg, problem, out_dir)
    entries = [
        fit_report_entry(paradigm, f, problem, training, test)
        for paradigm, training, f in fits
    ]
    _count(prom_vars, "fit_report", entries)
    summary = pd.DataFrame(
        [
            {
                "paradigm": entry["paradigm"],
                "bias": entry["bias"],
                "sup_g": entry["sup_g"],
                "lipschitz": entry["lipschitz"],
                **{
                    f"{condition['condition_id']}_holds": condition["holds"]
                    for condition in entry["conditions"]
                },
            }
            for entry in entries
        ],
        columns=[
            "paradigm",
            "bias",
            "sup_g",
            "lipschitz",
            "continuity_holds",
            "convergence_holds",
        ],
    )
    json_path = os.path.join(out_dir, "fit_report.json")
    csv_path = os.path.join(out_dir, "fit_report.csv")
    text = json.dumps(entries, indent=2, sort_keys=True, allow_nan=False)
    write_text(json_path, text + "\n")
    write_dataframe(summary, csv_path)
    return paths + [json_path, csv_path]


EXPERIMENT_RUNNERS = {
    "continuity_sweep": run_continuity_sweep,
    "convergence_sweep": run_convergence_sweep,
    "recon_grid": run_recon_grid,
    "fit_report": run_fit_report,
}


def get_runner(experiment):
    try:
        return EXPERIMENT_RUNNERS[experiment]
    except KeyError as err:
        raise NotImplementedError(experiment) from err


def _count(prom_vars, experiment, cells):
    if prom_vars:
        prom_vars["cells"].labels(experiment=experiment).inc(len(cells))


def write_manifest(cfg, seed, out_dir, artifacts):
    """Config echo, seed and artifact hashes; usable again as --config."""
    config = cfg.to_dict()
    config["seed"] = seed
    manifest = {
        "tool": "specreg",
        "version": __version__,
        "experiment": cfg.experiment,
        "seed": seed,
        "config": config,
        "artifacts": {
            os.path.relpath(path, out_dir): sha256_file(path) for path in sorted(artifacts)
        },
    }
    path = os.path.join(out_dir, "manifest.json")
    write_text(path, json.dumps(manifest, indent=2, sort_keys=True, allow_nan=False) + "\n")
    return path


def run_experiment(cfg, seed, prom_vars=None, promfile=None):
    out_dir = cfg.output_dir
    os.makedirs(out_dir, exist_ok=True)
    start_time = time.time()
    logging.info("running %s with seed %u into %s", cfg.experiment, seed, out_dir)
    artifacts = get_runner(cfg.experiment)(cfg, seed, out_dir, prom_vars)
    manifest_path = write_manifest(cfg, seed, out_dir, artifacts)
    if prom_vars:
        prom_vars["run_seconds"].labels(experiment=cfg.experiment).set(
            time.time() - start_time
        )
        for paradigm in cfg.paradigms:
            prom_vars["fits"].labels(paradigm=paradigm.label).inc()
        if promfile:
            write_to_textfile(promfile, prom_vars["registry"])
    logging.info("wrote %u artifacts and %s", len(artifacts), manifest_path)
    return manifest_path
