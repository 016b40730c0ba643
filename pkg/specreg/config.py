#!/usr/bin/python3
"""Experiment configuration: JSON in, validated frozen dataclasses out.

    {
      "experiment": "convergence_sweep",
      "operator": {"kind": "diagonal", "size": 64, "decay": 1.0},
      "data": {"exponent": 2.0},
      "training_noise": {"family": "power_law", "exponent": 0.5},
      "test_noise": ["white", {"family": "power_law", "exponent": 0.5}],
      "delta_grid": [0.1, 0.01, 0.001],
      "paradigms": ["mse", "post", "adv(3/8)"],
      "seed": 1
    }

A run manifest is accepted too; its "config" member is used.
"""
import json
import math
import os
from dataclasses import dataclass
from dataclasses import field
from dataclasses import replace

from specreg.learners import parse_paradigms
from specreg.operators import OperatorSpec
from specreg.stochastics import NoiseRule
from specreg.utils import ConfigError
from specreg.utils import TraceClassError
from specreg.utils import check_seed
from specreg.utils import read_bytes

EXPERIMENTS = ("continuity_sweep", "convergence_sweep", "recon_grid", "fit_report")
DEFAULT_TRAINING_NOISE = NoiseRule("power_law", 0.5)
DEFAULT_TEST_NOISE = (
    NoiseRule("white"),
    NoiseRule("power_law", 0.5),
    NoiseRule("power_law", 4.0),
)
DEFAULT_DELTA_GRID = (1e-1, 1e-2, 1e-3)
DEFAULT_TRAINING_LEVEL = 1e-3
DEFAULT_PERTURBATION = 1e-3
DEFAULT_CORPUS_SIZE = 200
MAX_RECON_SIDE = 32
KNOWN_FIELDS = {
    "experiment",
    "operator",
    "dimensions",
    "data",
    "training_noise",
    "test_noise",
    "delta_grid",
    "paradigms",
    "seed",
    "output_dir",
    "uniform_scaling",
    "training_level",
    "perturbation",
    "workers",
}


@dataclass(frozen=True)
class DataSpec:
    """Analytic Pi_n = n^-exponent, a .npy corpus of ground truths (one per row),
    or an n,value profile CSV truncated to the operator's modes.
    """

    exponent: float = 2.0
    corpus: str = None
    corpus_size: int = DEFAULT_CORPUS_SIZE
    profile: str = None

    def to_dict(self):
        fields = {"exponent": self.exponent, "corpus_size": self.corpus_size}
        if self.corpus:
            fields["corpus"] = self.corpus
        if self.profile:
            fields["profile"] = self.profile
        return fields


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    operator: OperatorSpec
    paradigms: tuple
    dimensions: tuple = ()
    data: DataSpec = field(default_factory=DataSpec)
    training_noise: NoiseRule = DEFAULT_TRAINING_NOISE
    test_noise: tuple = DEFAULT_TEST_NOISE
    delta_grid: tuple = DEFAULT_DELTA_GRID
    seed: int = None
    output_dir: str = "results"
    uniform_scaling: bool = False
    training_level: float = DEFAULT_TRAINING_LEVEL
    perturbation: float = DEFAULT_PERTURBATION
    workers: int = 1

    @property
    def sweep_dimensions(self):
        return self.dimensions or (self.operator.dimension,)

    def to_dict(self):
        return {
            "experiment": self.experiment,
            "operator": self.operator.to_dict(),
            "dimensions": list(self.dimensions),
            "data": self.data.to_dict(),
            "training_noise": self.training_noise.to_dict(),
            "test_noise": [rule.to_dict() for rule in self.test_noise],
            "delta_grid": list(self.delta_grid),
            "paradigms": [paradigm.label for paradigm in self.paradigms],
            "seed": self.seed,
            "output_dir": self.output_dir,
            "uniform_scaling": self.uniform_scaling,
            "training_level": self.training_level,
            "perturbation": self.perturbation,
            "workers": self.workers,
        }


def _positive_float(value, path):
    try:
        value = float(value)
    except (TypeError, ValueError) as err:
        raise ConfigError(path, f"not a number: {value!r}") from err
    if not (math.isfinite(value) and value > 0):
        raise ConfigError(path, "must be positive and finite")
    return value


def _int(value, path, minimum):
    if isinstance(value, bool) or not isinstance(value, (int, float)) or value != int(value):
        raise ConfigError(path, f"not an integer: {value!r}")
    if int(value) < minimum:
        raise ConfigError(path, f"must be at least {minimum}")
    return int(value)


def _list(value, path):
    if not isinstance(value, (list, tuple)):
        raise ConfigError(path, "must be a list")
    return list(value)


def _data_path(fields, name, path, base_dir):
    value = fields.get(name)
    if value is None:
        return None
    if not isinstance(value, str) or not value:
        raise ConfigError(f"{path}.{name}", "must be a path")
    if base_dir and not os.path.isabs(value):
        value = os.path.join(base_dir, value)
    return value


def parse_data(fields, path="data", base_dir=None):
    """Relative corpus and profile paths are taken from base_dir when given."""
    if fields is None:
        return DataSpec()
    if not isinstance(fields, dict):
        raise ConfigError(path, "must be an object")
    unknown = sorted(set(fields) - {"exponent", "corpus", "corpus_size", "profile"})
    if unknown:
        raise ConfigError(f"{path}.{unknown[0]}", "unknown field")
    try:
        exponent = float(fields.get("exponent", 2.0))
    except (TypeError, ValueError) as err:
        raise ConfigError(f"{path}.exponent", "not a number") from err
    if not exponent > 1:
        raise TraceClassError(
            f"{path}.exponent", f"trace-class violated: q={exponent:g} must exceed 1"
        )
    corpus = _data_path(fields, "corpus", path, base_dir)
    profile = _data_path(fields, "profile", path, base_dir)
    if corpus and profile:
        raise ConfigError(f"{path}.profile", "give either a corpus or a profile")
    corpus_size = _int(
        fields.get("corpus_size", DEFAULT_CORPUS_SIZE), f"{path}.corpus_size", 1
    )
    return DataSpec(exponent, corpus, corpus_size, profile)


def parse_delta_grid(values, path="delta_grid"):
    grid = tuple(
        _positive_float(value, f"{path}[{i}]") for i, value in enumerate(_list(values, path))
    )
    if not grid:
        raise ConfigError(path, "must not be empty")
    for i in range(1, len(grid)):
        if not grid[i] < grid[i - 1]:
            raise ConfigError(f"{path}[{i}]", "delta_grid must be strictly decreasing")
    return grid


def config_from_dict(doc, base_dir=None):
    if not isinstance(doc, dict):
        raise ConfigError("config", "must be a JSON object")
    if "config" in doc and "artifacts" in doc:
        doc = doc["config"]
    unknown = sorted(set(doc) - KNOWN_FIELDS)
    if unknown:
        raise ConfigError(unknown[0], "unknown field")
    experiment = doc.get("experiment")
    if experiment not in EXPERIMENTS:
        raise ConfigError(
            "experiment", f"unknown experiment {experiment!r}, expected {EXPERIMENTS}"
        )
    if "operator" not in doc:
        raise ConfigError("operator", "missing")
    operator = OperatorSpec.from_dict(doc["operator"])
    dimensions = tuple(
        _int(value, f"dimensions[{i}]", 1)
        for i, value in enumerate(_list(doc.get("dimensions", []), "dimensions"))
    )
    for i, dimension in enumerate(dimensions):
        operator.resized(dimension).validate(f"dimensions[{i}]")
    paradigm_texts = _list(doc.get("paradigms", []), "paradigms")
    if not paradigm_texts:
        raise ConfigError("paradigms", "must not be empty")
    paradigms = parse_paradigms(paradigm_texts)
    rules = doc.get("test_noise", [rule.to_dict() for rule in DEFAULT_TEST_NOISE])
    test_noise = tuple(
        NoiseRule.from_dict(rule, f"test_noise[{i}]")
        for i, rule in enumerate(_list(rules, "test_noise"))
    )
    if not test_noise:
        raise ConfigError("test_noise", "must not be empty")
    uniform_scaling = doc.get("uniform_scaling", False)
    if not isinstance(uniform_scaling, bool):
        raise ConfigError("uniform_scaling", "must be true or false")
    output_dir = doc.get("output_dir", "results")
    if not isinstance(output_dir, str) or not output_dir:
        raise ConfigError("output_dir", "must be a non-empty path")
    seed = doc.get("seed")
    if seed is not None:
        try:
            seed = check_seed(seed)
        except ConfigError as err:
            raise ConfigError("seed", err.msg) from err
    cfg = ExperimentConfig(
        experiment=experiment,
        operator=operator,
        paradigms=paradigms,
        dimensions=dimensions,
        data=parse_data(doc.get("data"), base_dir=base_dir),
        training_noise=NoiseRule.from_dict(
            doc.get("training_noise", DEFAULT_TRAINING_NOISE.to_dict()), "training_noise"
        ),
        test_noise=test_noise,
        delta_grid=parse_delta_grid(doc.get("delta_grid", list(DEFAULT_DELTA_GRID))),
        seed=seed,
        output_dir=output_dir,
        uniform_scaling=uniform_scaling,
        training_level=_positive_float(
            doc.get("training_level", DEFAULT_TRAINING_LEVEL), "training_level"
        ),
        perturbation=_positive_float(
            doc.get("perturbation", DEFAULT_PERTURBATION), "perturbation"
        ),
        workers=_int(doc.get("workers", 1), "workers", 1),
    )
    return validate_experiment(cfg)


def validate_experiment(cfg):
    if cfg.experiment == "recon_grid":
        if cfg.operator.kind != "radon2d":
            raise ConfigError("operator.kind", "recon_grid needs a radon2d operator")
        if cfg.operator.side > MAX_RECON_SIDE:
            raise ConfigError("operator.side", f"recon_grid side must be at most {MAX_RECON_SIDE}")
    return cfg


def load_config(path):
    try:
        doc = json.loads(read_bytes(path).decode("utf-8"))
    except json.JSONDecodeError as err:
        raise ConfigError("config", f"{path}: {err}") from err
    return config_from_dict(doc, base_dir=os.path.dirname(os.path.abspath(path)))


def apply_overrides(
    cfg, experiment=None, seed=None, output_dir=None, uniform_scaling=None, workers=None
):
    """CLI flags win over the config file."""
    changes = {}
    if experiment is not None:
        if experiment not in EXPERIMENTS:
            raise ConfigError("experiment", f"unknown experiment {experiment!r}")
        changes["experiment"] = experiment
    if seed is not None:
        changes["seed"] = check_seed(seed)
    if output_dir is not None:
        changes["output_dir"] = output_dir
    if uniform_scaling:
        changes["uniform_scaling"] = True
    if workers is not None:
        changes["workers"] = _int(workers, "workers", 1)
    return validate_experiment(replace(cfg, **changes))
