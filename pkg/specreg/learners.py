#!/usr/bin/python3
"""Spectral filters R(y; g) = sum_n g_n <y, v_n> u_n and how to fit them.

Every Tikhonov-form filter stores both parameterizations,
g_n = sigma_n / (sigma_n^2 + lambda_n).
"""
import io
import json
import logging
import re
from dataclasses import dataclass
from dataclasses import field
from fractions import Fraction

import numpy as np
import pandas as pd

from specreg.stochastics import DataModel
from specreg.stochastics import NoiseModel
from specreg.stochastics import SpectrumProfile
from specreg.svd import SingularSystem
from specreg.svd import coefficients_x
from specreg.svd import coefficients_y
from specreg.utils import AssumptionViolatedError
from specreg.utils import ConfigError
from specreg.utils import DimensionMismatchError
from specreg.utils import read_bytes
from specreg.utils import replace_ext
from specreg.utils import write_dataframe
from specreg.utils import write_text

ADV_DEFAULT_BETA = Fraction(3, 8)
SC_DEFAULT_BETA = Fraction(1, 8)
LIPSCHITZ_BOUND = 0.5
PARADIGM_RE = re.compile(r"^\s*([a-z_]+)\s*(?:\(\s*([^()]*?)\s*\))?\s*$")
PARADIGM_ALIASES = {"pseudo_inverse": "pinv", "truncated_svd": "tsvd"}


def _frozen(values):
    values = np.array(values, dtype=np.float64, copy=True)
    values.setflags(write=False)
    return values


@dataclass(frozen=True, eq=False)
class Filter:
    g: np.ndarray
    lam: np.ndarray
    sigma: np.ndarray
    paradigm: str
    beta: float = None
    k: int = None
    training_reference: dict = field(default_factory=dict)
    flagged: tuple = ()

    def __post_init__(self):
        for name in ("g", "lam", "sigma"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        if not len(self.g) == len(self.lam) == len(self.sigma):
            raise DimensionMismatchError("g, lambda and sigma lengths differ")

    @property
    def n_modes(self):
        return len(self.g)

    @property
    def sup_g(self):
        return float(np.max(self.g))

    def sidecar(self):
        return {
            "paradigm": self.paradigm,
            "beta": self.beta,
            "k": self.k,
            "n_modes": self.n_modes,
            "training_reference": self.training_reference,
            "flagged": list(self.flagged),
        }


@dataclass(frozen=True)
class Paradigm:
    name: str
    beta: Fraction = None
    k: int = None

    @property
    def label(self):
        if self.beta is not None:
            return f"{self.name}({self.beta})"
        if self.k is not None:
            return f"{self.name}({self.k})"
        return self.name

    @property
    def slug(self):
        """File-name form: adv-3_8, tsvd-10, mse."""
        if self.beta is not None:
            return f"{self.name}-{str(self.beta).replace('/', '_')}"
        if self.k is not None:
            return f"{self.name}-{self.k}"
        return self.name

    @property
    def training_basis(self):
        """Space the training noise lives in: x for denoiser-trained paradigms."""
        return "x" if self.name in ("prox", "post") else "y"

    @property
    def strong_scaling(self):
        """Paradigms whose convergence asks for test noise at level delta^2."""
        return self.name in ("post", "adv")


def parse_paradigm(text):
    """Parse mse, prox, post, adv(beta), sc(beta), pinv or tsvd(k).

    beta accepts fractions, adv(3/8), or decimals, sc(0.125).
    """
    match = PARADIGM_RE.match(str(text))
    if not match:
        raise ValueError(f"cannot parse paradigm {text!r}")
    name, arg = match.group(1), match.group(2)
    name = PARADIGM_ALIASES.get(name, name)
    if name in ("mse", "prox", "post", "pinv"):
        if arg:
            raise ValueError(f"{name} takes no parameter")
        return Paradigm(name)
    if name in ("adv", "sc"):
        default = ADV_DEFAULT_BETA if name == "adv" else SC_DEFAULT_BETA
        try:
            beta = Fraction(arg) if arg else default
        except (ValueError, ZeroDivisionError) as err:
            raise ValueError(f"bad beta in {text!r}") from err
        if beta <= 0:
            raise ValueError(f"beta must be positive in {text!r}")
        return Paradigm(name, beta=beta)
    if name == "tsvd":
        try:
            k = int(arg)
        except (TypeError, ValueError) as err:
            raise ValueError(f"tsvd needs an integer k in {text!r}") from err
        if k < 1:
            raise ValueError(f"tsvd k must be at least 1 in {text!r}")
        return Paradigm(name, k=k)
    raise ValueError(f"unknown paradigm {name!r}")


def parse_paradigms(texts, prefix="paradigms"):
    paradigms = []
    for i, text in enumerate(texts):
        try:
            paradigms.append(parse_paradigm(text))
        except ValueError as err:
            raise ConfigError(f"{prefix}[{i}]", str(err)) from err
    return tuple(paradigms)


def _values(profile):
    if isinstance(profile, (NoiseModel, DataModel)):
        return profile.profile.values
    if isinstance(profile, SpectrumProfile):
        return profile.values
    return np.asarray(profile, dtype=np.float64)


def _sigma(sigma):
    if isinstance(sigma, SingularSystem):
        return sigma.sigma
    return np.asarray(sigma, dtype=np.float64)


def _reference(delta, pi):
    reference = {}
    for key, profile in (("noise", delta), ("data", pi)):
        if isinstance(profile, NoiseModel):
            reference[key] = dict(profile.to_dict(), **profile.profile.describe())
        elif isinstance(profile, DataModel):
            reference[key] = dict(profile.profile.describe(), source=profile.source)
        elif isinstance(profile, SpectrumProfile):
            reference[key] = profile.describe()
    return reference


def _check_lengths(sigma, *profiles):
    for profile in profiles:
        if len(profile) != len(sigma):
            raise DimensionMismatchError(
                f"profile has {len(profile)} modes, operator has {len(sigma)}"
            )


def _check_pi(pi):
    zeros = np.flatnonzero(~(pi > 0))
    if len(zeros):
        raise AssumptionViolatedError(int(zeros[0]) + 1)


def _check_beta(beta):
    if beta is None or not float(beta) > 0:
        raise ValueError(f"beta must be positive, got {beta}")
    return float(beta)


def tikhonov_filter(sigma, lam):
    """g_n = sigma_n / (sigma_n^2 + lambda_n); exactly 1/sigma_n where lambda_n = 0."""
    with np.errstate(divide="ignore"):
        return np.where(lam == 0, 1.0 / sigma, sigma / (sigma * sigma + lam))


def _tikhonov(sigma, lam, paradigm, delta, pi, beta=None):
    return Filter(
        g=tikhonov_filter(sigma, lam),
        lam=lam,
        sigma=sigma,
        paradigm=paradigm,
        beta=beta,
        training_reference=_reference(delta, pi),
    )


def fit_mse(delta, pi, sigma):
    """Supervised mean-squared-error optimum, lambda_n = Delta_n / Pi_n."""
    sigma = _sigma(sigma)
    delta_values, pi_values = _values(delta), _values(pi)
    _check_lengths(sigma, delta_values, pi_values)
    _check_pi(pi_values)
    return _tikhonov(sigma, delta_values / pi_values, "mse", delta, pi)


def fit_prox(delta_tilde, pi, sigma):
    """Plug-and-play with the mse denoiser as proximal map; noise lives in X."""
    sigma = _sigma(sigma)
    delta_values, pi_values = _values(delta_tilde), _values(pi)
    _check_lengths(sigma, delta_values, pi_values)
    _check_pi(pi_values)
    return _tikhonov(sigma, delta_values / pi_values, "prox", delta_tilde, pi)


def fit_post(delta_tilde, pi, sigma):
    """Denoiser after the pseudo-inverse, lambda_n = sigma_n^2 Delta~_n / Pi_n."""
    sigma = _sigma(sigma)
    delta_values, pi_values = _values(delta_tilde), _values(pi)
    _check_lengths(sigma, delta_values, pi_values)
    _check_pi(pi_values)
    lam = sigma * sigma * (delta_values / pi_values)
    return _tikhonov(sigma, lam, "post", delta_tilde, pi)


def fit_adv(delta, pi, sigma, beta=ADV_DEFAULT_BETA):
    """Adversarial regularizer with relaxed gradient penalty.

    lambda_n = (3 / (8 beta)) Delta_n / (3 sigma_n^2 Pi_n + Delta_n), always
    below 3 / (8 beta). A mode with Delta_n = Pi_n = 0 gets lambda_n = 0.
    """
    beta = _check_beta(beta)
    sigma = _sigma(sigma)
    delta_values, pi_values = _values(delta), _values(pi)
    _check_lengths(sigma, delta_values, pi_values)
    denominator = 3.0 * sigma * sigma * pi_values + delta_values
    undefined = denominator == 0
    if np.any(undefined):
        logging.warning(
            "adv: Delta_n = Pi_n = 0 at modes %s, using lambda_n = 0",
            (np.flatnonzero(undefined) + 1).tolist(),
        )
    with np.errstate(invalid="ignore", divide="ignore"):
        lam = (3.0 / (8.0 * beta)) * (delta_values / denominator)
    lam = np.where(undefined, 0.0, lam)
    return _tikhonov(sigma, lam, "adv", delta, pi, beta=beta)


def fit_sc(delta, pi, sigma, beta=SC_DEFAULT_BETA):
    """Adversarial regularizer with source-condition penalty, (1 / (8 beta)) Delta_n / Pi_n."""
    beta = _check_beta(beta)
    sigma = _sigma(sigma)
    delta_values, pi_values = _values(delta), _values(pi)
    _check_lengths(sigma, delta_values, pi_values)
    _check_pi(pi_values)
    lam = (1.0 / (8.0 * beta)) * (delta_values / pi_values)
    return _tikhonov(sigma, lam, "sc", delta, pi, beta=beta)


def fit_denoiser(delta_tilde, pi, sigma=None):
    """mse denoiser d_n = 1 / (1 + Delta~_n / Pi_n), stored in g."""
    delta_values, pi_values = _values(delta_tilde), _values(pi)
    if len(delta_values) != len(pi_values):
        raise DimensionMismatchError("noise and data profiles differ in length")
    _check_pi(pi_values)
    lam = delta_values / pi_values
    sigma = np.ones_like(lam) if sigma is None else _sigma(sigma)
    return Filter(
        g=1.0 / (1.0 + lam),
        lam=lam,
        sigma=sigma,
        paradigm="denoiser",
        training_reference=_reference(delta_tilde, pi),
    )


def fit_preprocess(delta, pi, sigma):
    """Measurement-space denoiser trained on pairs (Ax + eps, Ax)."""
    sigma = _sigma(sigma)
    delta_values, pi_values = _values(delta), _values(pi)
    _check_lengths(sigma, delta_values, pi_values)
    _check_pi(pi_values)
    signal = sigma * sigma * pi_values
    lam = delta_values / signal
    return Filter(
        g=signal / (signal + delta_values),
        lam=lam,
        sigma=sigma,
        paradigm="preprocess",
        training_reference=_reference(delta, pi),
    )


def pseudo_inverse_filter(system):
    sigma = _sigma(system)
    return Filter(
        g=1.0 / sigma, lam=np.zeros_like(sigma), sigma=sigma, paradigm="pinv"
    )


def truncated_svd_filter(system, k):
    sigma = _sigma(system)
    if not 1 <= k <= len(sigma):
        raise ValueError(f"k={k} outside 1..{len(sigma)}")
    keep = np.arange(len(sigma)) < k
    return Filter(
        g=np.where(keep, 1.0 / sigma, 0.0),
        lam=np.where(keep, 0.0, np.inf),
        sigma=sigma,
        paradigm="tsvd",
        k=int(k),
    )


def fit_paradigm(paradigm, sigma, pi, training):
    """Fit one paradigm from the data profile and a training-noise profile."""
    if paradigm.name == "mse":
        return fit_mse(training, pi, sigma)
    if paradigm.name == "prox":
        return fit_prox(training, pi, sigma)
    if paradigm.name == "post":
        return fit_post(training, pi, sigma)
    if paradigm.name == "adv":
        return fit_adv(training, pi, sigma, paradigm.beta)
    if paradigm.name == "sc":
        return fit_sc(training, pi, sigma, paradigm.beta)
    if paradigm.name == "pinv":
        return pseudo_inverse_filter(sigma)
    if paradigm.name == "tsvd":
        return truncated_svd_filter(sigma, min(paradigm.k, len(_sigma(sigma))))
    raise NotImplementedError(paradigm.name)


def _check_filter(f, system):
    if f.n_modes != system.n_modes:
        raise DimensionMismatchError(
            f"filter has {f.n_modes} modes, system has {system.n_modes}"
        )


def reconstruct(y, f, system):
    """sum_n g_n <y, v_n> u_n, row-wise for a batch of measurements."""
    _check_filter(f, system)
    return (coefficients_y(system, y) * f.g) @ system.U.T


def denoise(x, d, system):
    """sum_n d_n <x, u_n> u_n; components outside span(u_n) are dropped."""
    _check_filter(d, system)
    return (coefficients_x(system, x) * d.g) @ system.U.T


def denoise_measurement(y, d, system):
    """sum_n d_n <y, v_n> v_n; components outside span(v_n) are dropped."""
    _check_filter(d, system)
    return (coefficients_y(system, y) * d.g) @ system.V.T


def lipschitz_condition(f):
    """J_lambda = (1/2) sum lambda_n <x, u_n>^2 counted 1-Lipschitz iff all lambda_n <= 1/2."""
    return bool(np.all(f.lam <= LIPSCHITZ_BOUND))


def save_filter(f, path):
    """CSV n,sigma,lambda,g plus a JSON sidecar next to it."""
    df = pd.DataFrame(
        {
            "n": np.arange(1, f.n_modes + 1),
            "sigma": f.sigma,
            "lambda": f.lam,
            "g": f.g,
        }
    )
    write_dataframe(df, path)
    sidecar = json.dumps(f.sidecar(), indent=2, sort_keys=True, allow_nan=False)
    write_text(replace_ext(path, "json"), sidecar + "\n")
    return path


def load_filter(path):
    df = pd.read_csv(io.BytesIO(read_bytes(path)))
    if list(df.columns) != ["n", "sigma", "lambda", "g"]:
        raise ValueError(f"{path}: expected columns n,sigma,lambda,g")
    sidecar = json.loads(read_bytes(replace_ext(path, "json")).decode("utf-8"))
    if sidecar.get("n_modes", len(df)) != len(df):
        raise DimensionMismatchError(f"{path}: sidecar and CSV disagree on modes")
    return Filter(
        g=df["g"].to_numpy(dtype=np.float64),
        lam=df["lambda"].to_numpy(dtype=np.float64),
        sigma=df["sigma"].to_numpy(dtype=np.float64),
        paradigm=sidecar["paradigm"],
        beta=sidecar.get("beta"),
        k=sidecar.get("k"),
        training_reference=sidecar.get("training_reference", {}),
        flagged=tuple(sidecar.get("flagged", ())),
    )
