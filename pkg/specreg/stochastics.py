#!/usr/bin/python3
"""Gaussian noise and data models, diagonal in a singular basis."""
import io
import logging
from dataclasses import dataclass
from dataclasses import replace

import numpy as np
import pandas as pd

from specreg.utils import ConfigError
from specreg.utils import DimensionMismatchError
from specreg.utils import STREAM_NOISE
from specreg.utils import make_rng
from specreg.utils import read_bytes
from specreg.utils import write_dataframe

PROFILE_FAMILIES = ("white", "power_law", "explicit", "empirical")
RULE_FAMILIES = ("white", "power_law")
NOISE_BASES = ("x", "y")


def _frozen(values):
    values = np.array(values, dtype=np.float64, copy=True)
    values.setflags(write=False)
    return values


@dataclass(frozen=True, eq=False)
class SpectrumProfile:
    """Per-mode variances with the family that produced them."""

    values: np.ndarray
    family: str = "explicit"
    level: float = None
    exponent: float = None
    sample_count: int = None
    zero_modes: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(self.values))
        if self.values.ndim != 1 or not len(self.values):
            raise DimensionMismatchError("profile must be a non-empty 1-D sequence")
        if self.family not in PROFILE_FAMILIES:
            raise ValueError(f"unknown profile family {self.family!r}")
        if not np.all(np.isfinite(self.values)) or np.any(self.values < 0):
            raise ValueError("profile values must be finite and non-negative")
        if self.family == "white" and np.any(self.values != self.values[0]):
            raise ValueError("white profile must be constant")

    @classmethod
    def white(cls, delta, n_modes):
        return cls(
            np.full(n_modes, float(delta) ** 2), "white", level=float(delta), exponent=0.0
        )

    @classmethod
    def power_law(cls, delta, exponent, n_modes):
        n = np.arange(1, n_modes + 1, dtype=np.float64)
        return cls(
            float(delta) ** 2 * n ** -float(exponent),
            "power_law",
            level=float(delta),
            exponent=float(exponent),
        )

    @classmethod
    def explicit(cls, values):
        return cls(values, "explicit")

    @property
    def n_modes(self):
        return len(self.values)

    def scaled(self, c):
        """Profile of c times the underlying random variable."""
        return replace(
            self,
            values=self.values * (c * c),
            level=None if self.level is None else self.level * c,
        )

    def describe(self):
        description = {"family": self.family}
        for key in ("level", "exponent", "sample_count"):
            if getattr(self, key) is not None:
                description[key] = getattr(self, key)
        return description


@dataclass(frozen=True, eq=False)
class NoiseModel:
    """Zero-mean Gaussian noise with covariance diag(profile) in u_n (x) or v_n (y).

    lower_bound_exponent r records the rule's lower bound l(n) = n^-r.
    """

    profile: SpectrumProfile
    basis: str = "y"
    lower_bound_exponent: float = None

    def __post_init__(self):
        if self.basis not in NOISE_BASES:
            raise ValueError(f"noise basis must be one of {NOISE_BASES}")

    @property
    def values(self):
        return self.profile.values

    def lower_bound(self, n):
        if self.lower_bound_exponent is None:
            return None
        return np.asarray(n, dtype=np.float64) ** -self.lower_bound_exponent

    def to_dict(self):
        return {
            "family": self.profile.family,
            "delta": self.profile.level,
            "exponent": self.profile.exponent,
            "basis": self.basis,
        }

    @classmethod
    def from_dict(cls, fields, n_modes):
        family = fields.get("family", "white")
        return training_noise_rule(
            float(fields["delta"]),
            family,
            n_modes,
            exponent=float(fields.get("exponent") or 0.0),
            basis=fields.get("basis", "y"),
        )


@dataclass(frozen=True, eq=False)
class DataModel:
    """Per-mode second moments Pi_n of the ground truth, possibly estimated."""

    profile: SpectrumProfile
    source: str = "analytic"

    @property
    def pi(self):
        return self.profile.values

    @classmethod
    def analytic(cls, q, n_modes):
        return cls(SpectrumProfile.power_law(1.0, q, n_modes), f"analytic q={q:g}")

    @classmethod
    def from_corpus(cls, samples, system, source="corpus"):
        return cls(estimate_profile(samples, system.U), source)


@dataclass(frozen=True)
class NoiseRule:
    """A noise family (white or power_law with exponent r) without a level."""

    family: str = "white"
    exponent: float = 0.0

    def validate(self, prefix):
        if self.family not in RULE_FAMILIES:
            raise ConfigError(f"{prefix}.family", f"unknown family {self.family!r}")
        if self.exponent < 0:
            raise ConfigError(f"{prefix}.exponent", "must be non-negative")
        return self

    @property
    def label(self):
        if self.family == "white":
            return "white"
        return f"power{self.exponent:g}"

    def model(self, delta, n_modes, basis="y"):
        return training_noise_rule(delta, self.family, n_modes, self.exponent, basis)

    def to_dict(self):
        if self.family == "white":
            return {"family": "white"}
        return {"family": self.family, "exponent": self.exponent}

    @classmethod
    def from_dict(cls, fields, prefix):
        if isinstance(fields, str):
            fields = {"family": fields}
        if not isinstance(fields, dict):
            raise ConfigError(prefix, "must be an object or family name")
        try:
            rule = cls(str(fields.get("family", "white")), float(fields.get("exponent", 0.0)))
        except (TypeError, ValueError) as err:
            raise ConfigError(f"{prefix}.exponent", str(err)) from err
        return rule.validate(prefix)


def _profile_of(m):
    if isinstance(m, NoiseModel):
        return m.profile
    if isinstance(m, DataModel):
        return m.profile
    if isinstance(m, SpectrumProfile):
        return m
    return SpectrumProfile.explicit(m)


def noise_level(m):
    """sqrt(sup_n values_n)."""
    return float(np.sqrt(np.max(_profile_of(m).values)))


def training_noise_rule(delta, family, n_modes, exponent=0.0, basis="y"):
    if not delta > 0:
        raise ValueError("training noise level must be positive")
    if exponent < 0:
        raise ValueError("power-law exponent must be non-negative")
    if family == "white":
        return NoiseModel(SpectrumProfile.white(delta, n_modes), basis, 0.0)
    if family == "power_law":
        return NoiseModel(
            SpectrumProfile.power_law(delta, exponent, n_modes), basis, float(exponent)
        )
    raise ValueError(f"unknown noise family {family!r}")


def _basis_of(m, system):
    if m.basis == "x":
        return system.U
    return system.V


def sample_coefficients(profile, count, rng):
    """count x n_modes Gaussian coefficients with variances profile.values."""
    values = _profile_of(profile).values
    return rng.standard_normal((count, len(values))) * np.sqrt(values)


def sample_noise_batch(m, system, seed, count, index=0):
    if m.profile.n_modes != system.n_modes:
        raise DimensionMismatchError(
            f"profile has {m.profile.n_modes} modes, system has {system.n_modes}"
        )
    rng = make_rng(seed, STREAM_NOISE, index)
    return sample_coefficients(m.profile, count, rng) @ _basis_of(m, system).T


def sample_noise(m, system, seed, index=0):
    """One draw sum_n sqrt(values_n) xi_n b_n, b_n = u_n (x) or v_n (y)."""
    return sample_noise_batch(m, system, seed, 1, index=index)[0]


def estimate_profile(samples, basis):
    """Raw empirical second moments (1/M) sum_i <s_i, b_n>^2, no centering."""
    samples = np.asarray(samples, dtype=np.float64)
    basis = np.asarray(basis, dtype=np.float64)
    if samples.ndim == 1:
        samples = samples[None, :]
    if samples.shape[0] == 0 or samples.size == 0:
        raise ValueError("empty sample set")
    if samples.shape[1] != basis.shape[0]:
        raise DimensionMismatchError(
            f"samples have length {samples.shape[1]}, basis vectors {basis.shape[0]}"
        )
    values = np.mean(np.square(samples @ basis), axis=0)
    zero_modes = tuple(int(n) + 1 for n in np.flatnonzero(values == 0))
    if zero_modes:
        logging.warning(
            "%u of %u modes have zero empirical variance (first n=%u)",
            len(zero_modes),
            len(values),
            zero_modes[0],
        )
    return SpectrumProfile(
        values, "empirical", sample_count=samples.shape[0], zero_modes=zero_modes
    )


def smoothed_data_profile(pi, sigma):
    """Pi_n sigma_n^2: data under which post-processing trained on nu is mse-optimal."""
    return SpectrumProfile.explicit(_profile_of(pi).values * np.square(sigma))


def save_profile(profile, path):
    values = _profile_of(profile).values
    df = pd.DataFrame({"n": np.arange(1, len(values) + 1), "value": values})
    return write_dataframe(df, path)


def load_profile(path):
    df = pd.read_csv(io.BytesIO(read_bytes(path)))
    if list(df.columns) != ["n", "value"]:
        raise ValueError(f"{path}: expected columns n,value, got {list(df.columns)}")
    if list(df["n"]) != list(range(1, len(df) + 1)):
        raise ValueError(f"{path}: modes must run 1..{len(df)}")
    return SpectrumProfile.explicit(df["value"].to_numpy(dtype=np.float64))
