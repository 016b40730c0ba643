#!/usr/bin/python3
"""Closed-form error analysis, continuity/convergence checks and oracles."""
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy import stats

from specreg.learners import Filter
from specreg.learners import reconstruct
from specreg.stochastics import sample_noise_batch
from specreg.stochastics import SpectrumProfile
from specreg.svd import apply_forward
from specreg.svd import coefficients_x
from specreg.svd import coefficients_y
from specreg.utils import AssumptionViolatedError
from specreg.utils import DimensionMismatchError
from specreg.utils import NonBracketingError
from specreg.utils import SLOPE_TOLERANCE
from specreg.utils import SUMMABILITY_CONFIDENCE
from specreg.utils import finite_or_none

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
GOLDEN_ITERATIONS = 200
SUMMABILITY_SLACK = 1e-6
MIN_FIT_POINTS = 3
CONDITION_PARADIGMS = ("mse", "sc", "prox", "post", "adv")
CONDITION_IDS = ("continuity", "convergence")


def _values(profile):
    if isinstance(profile, SpectrumProfile):
        return profile.values
    if hasattr(profile, "profile"):
        return profile.profile.values
    return np.asarray(profile, dtype=np.float64)


@dataclass(frozen=True, eq=False)
class ErrorReport:
    data_term: float
    noise_term: float
    total: float
    per_mode: tuple = None

    def to_dict(self):
        return {
            "data_term": self.data_term,
            "noise_term": self.noise_term,
            "total": self.total,
            "per_mode": None
            if self.per_mode is None
            else [list(pair) for pair in self.per_mode],
        }


@dataclass(frozen=True)
class ConditionReport:
    paradigm: str
    condition_id: str
    holds: bool
    witness: float
    asymptotic_exponent: float = None

    def to_dict(self):
        return {
            "paradigm": self.paradigm,
            "condition_id": self.condition_id,
            "holds": self.holds,
            "witness": finite_or_none(self.witness),
            "asymptotic_exponent": finite_or_none(self.asymptotic_exponent),
        }


def residual_factor(f):
    """1 - sigma_n g_n, written as lambda_n / (sigma_n^2 + lambda_n) where finite."""
    lam = f.lam
    sigma = f.sigma
    with np.errstate(invalid="ignore"):
        tikhonov = lam / (sigma * sigma + lam)
    tikhonov = np.where(np.isinf(lam), 1.0, tikhonov)
    consistent = np.isclose(
        f.g, np.where(np.isinf(lam), 0.0, sigma / (sigma * sigma + lam)), rtol=1e-9, atol=0
    )
    return np.where(consistent, tikhonov, 1.0 - sigma * f.g)


def expected_error(f, target, delta_test, system=None):
    """Expected squared error of R(Ax + eps; g) split into data and noise parts.

    target is either a fixed x (needs system) or the data profile Pi.
    Null-space components of x are not counted.
    """
    noise = _values(delta_test)
    if len(noise) != f.n_modes:
        raise DimensionMismatchError(
            f"test noise has {len(noise)} modes, filter has {f.n_modes}"
        )
    residual = np.square(residual_factor(f))
    if isinstance(target, SpectrumProfile) or hasattr(target, "profile"):
        energy = _values(target)
        if len(energy) != f.n_modes:
            raise DimensionMismatchError(
                f"data profile has {len(energy)} modes, filter has {f.n_modes}"
            )
    else:
        if system is None:
            raise ValueError("a fixed x needs the singular system")
        energy = np.square(coefficients_x(system, target))
        if energy.ndim != 1 or len(energy) != f.n_modes:
            raise DimensionMismatchError("x does not match the filter's modes")
    data = residual * energy
    noise_modes = np.square(f.g) * noise
    data_term = float(np.sum(data))
    noise_term = float(np.sum(noise_modes))
    return ErrorReport(
        data_term=data_term,
        noise_term=noise_term,
        total=data_term + noise_term,
        per_mode=tuple(zip(data.tolist(), noise_modes.tolist())),
    )


def bias(f, pi):
    """sum_n (lambda_n / (sigma_n^2 + lambda_n))^2 Pi_n."""
    values = _values(pi)
    if len(values) != f.n_modes:
        raise DimensionMismatchError("data profile and filter differ in length")
    return float(np.sum(np.square(residual_factor(f)) * values))


def bias_bound(paradigm, pi, sigma, level, n_cut, beta=None):
    """Upper bound on the bias for a training noise level, split at mode n_cut."""
    values = _values(pi)
    sigma = np.asarray(sigma, dtype=np.float64)
    if not 1 <= n_cut <= len(values):
        raise ValueError(f"n_cut={n_cut} outside 1..{len(values)}")
    head = level * level * n_cut
    tail = float(np.sum(values[n_cut:]))
    smallest = float(np.min(sigma[:n_cut]))
    if paradigm == "mse":
        return head / smallest**2 + tail
    if paradigm == "post":
        return head + tail
    if paradigm == "adv":
        if beta is None or not beta > 0:
            raise ValueError("adv bound needs beta > 0")
        return head / (8.0 * float(beta) * smallest**4) + tail
    raise ValueError(f"no bias bound for {paradigm!r}")


def noise_bound_constant(sigma):
    """c = sum_n sigma_n^-2."""
    return float(np.sum(np.asarray(sigma, dtype=np.float64) ** -2))


def noise_bound(delta_test, sigma):
    """sum_n Delta_n(nu) / sigma_n^2, an upper bound on any shrinking filter's noise term."""
    return float(np.sum(_values(delta_test) / np.square(sigma)))


def adv_white_noise_floor(sigma, level, beta):
    """Lower bound on the adv noise term under white test noise at level."""
    sigma = np.asarray(sigma, dtype=np.float64)
    ceiling = 3.0 / (8.0 * float(beta))
    return float(np.sum(np.square(sigma / (sigma * sigma + ceiling)))) * level * level


def loglog_slope(values, n=None, tail_fraction=0.5):
    """Least-squares slope of log(values) against log(n) over the tail of the modes.

    Infinite entries are skipped. Returns None if any value in the window is
    non-positive or fewer than two points remain.
    """
    values = np.asarray(values, dtype=np.float64)
    if n is None:
        n = np.arange(1, len(values) + 1, dtype=np.float64)
    finite = np.isfinite(values)
    values, n = values[finite], np.asarray(n, dtype=np.float64)[finite]
    start = int(len(values) * (1.0 - tail_fraction))
    if len(values) - start < MIN_FIT_POINTS:
        start = 0
    window = values[start:]
    if len(window) < 2 or np.any(window <= 0):
        return None
    return float(stats.linregress(np.log(n[start:]), np.log(window)).slope)


def is_summable(terms):
    """Declare sum terms_n finite unless the tail decays like n^-p with p <= 1 at 95%.

    Terms are fitted as n^-p over the last half of the positive terms; the
    series is divergent when the one-sided upper confidence bound on p is at
    most 1. Declared, not proven.
    """
    terms = np.asarray(terms, dtype=np.float64)
    n = np.arange(1, len(terms) + 1, dtype=np.float64)
    positive = terms > 0
    terms, n = terms[positive], n[positive]
    if len(terms) < MIN_FIT_POINTS:
        return True
    start = len(terms) // 2
    if len(terms) - start < MIN_FIT_POINTS:
        start = 0
    fit = stats.linregress(np.log(n[start:]), np.log(terms[start:]))
    dof = len(terms) - start - 2
    decay = -fit.slope
    upper = decay
    if dof > 0 and np.isfinite(fit.stderr):
        upper = decay + stats.t.ppf(SUMMABILITY_CONFIDENCE, dof) * fit.stderr
    return not upper <= 1.0 + SUMMABILITY_SLACK


def _ratio_report(paradigm, condition_id, ratio, sides=()):
    """holds iff the ratio and every side ratio stay bounded away from 0."""
    witness = float(np.min(ratio))
    exponent = loglog_slope(ratio)
    holds = witness > 0 and exponent is not None and exponent >= -SLOPE_TOLERANCE
    for side_ratio in sides:
        if isinstance(side_ratio, bool):
            holds = holds and side_ratio
            continue
        side_exponent = loglog_slope(side_ratio)
        side_witness = float(np.min(side_ratio))
        witness = min(witness, side_witness)
        holds = (
            holds
            and side_witness > 0
            and side_exponent is not None
            and side_exponent >= -SLOPE_TOLERANCE
        )
    return ConditionReport(
        paradigm=paradigm,
        condition_id=condition_id,
        holds=bool(holds),
        witness=max(witness, 0.0),
        asymptotic_exponent=exponent,
    )


def check_condition(paradigm, mu, pi, sigma, nu=None, condition_id="continuity"):
    """Evaluate a continuity or convergence row of the paradigm comparison table.

    mu is the training noise (Delta for mse/sc/adv, Delta~ for prox/post),
    nu the test noise needed by convergence rows.
    """
    name = getattr(paradigm, "name", paradigm)
    if name not in CONDITION_PARADIGMS or condition_id not in CONDITION_IDS:
        raise ValueError(f"unknown condition {name}/{condition_id}")
    mu_values = _values(mu)
    pi_values = _values(pi)
    sigma = np.asarray(getattr(sigma, "sigma", sigma), dtype=np.float64)
    if not len(mu_values) == len(pi_values) == len(sigma):
        raise DimensionMismatchError("profiles and sigma differ in length")
    zeros = np.flatnonzero(~(pi_values > 0))
    if len(zeros):
        raise AssumptionViolatedError(int(zeros[0]) + 1)
    if condition_id == "continuity":
        if name in ("mse", "sc", "prox"):
            ratio = mu_values / (sigma * pi_values)
        elif name == "post":
            ratio = sigma * mu_values / pi_values
        else:
            ratio = mu_values / (sigma**3 * pi_values)
        return _ratio_report(name, condition_id, ratio)
    if nu is None:
        raise ValueError("convergence conditions need the test noise profile")
    nu_values = _values(nu)
    if len(nu_values) != len(sigma):
        raise DimensionMismatchError("test noise and sigma differ in length")
    with np.errstate(divide="ignore", invalid="ignore"):
        if name in ("mse", "sc", "prox"):
            ratio = mu_values / nu_values
        else:
            ratio = np.square(mu_values) / nu_values
    ratio = np.where(np.isnan(ratio), np.inf, ratio)
    if name == "post":
        return _ratio_report(name, condition_id, ratio, [sigma**2 / pi_values])
    if name == "adv":
        return _ratio_report(name, condition_id, ratio, [is_summable(sigma**2)])
    return _ratio_report(name, condition_id, ratio)


def w1_lower_bound(delta_mu, sigma, n_cut):
    """Partial sum of Delta_n / (2 sigma_n^2) up to n_cut and a divergence flag."""
    values = _values(delta_mu)
    sigma = np.asarray(sigma, dtype=np.float64)
    if not 1 <= n_cut <= len(values):
        raise ValueError(f"n_cut={n_cut} outside 1..{len(values)}")
    terms = values[:n_cut] / (2.0 * np.square(sigma[:n_cut]))
    return float(np.sum(terms)), not is_summable(terms)


def erm_oracle_coefficients(x_coeffs, y_coeffs, sigma):
    """Per-mode least squares g_n from projected pairs; zero-energy modes flagged."""
    x_coeffs = np.atleast_2d(np.asarray(x_coeffs, dtype=np.float64))
    y_coeffs = np.atleast_2d(np.asarray(y_coeffs, dtype=np.float64))
    if x_coeffs.shape != y_coeffs.shape or x_coeffs.shape[0] == 0:
        raise DimensionMismatchError("need matching, non-empty coefficient arrays")
    sigma = np.asarray(sigma, dtype=np.float64)
    numerator = np.sum(y_coeffs * x_coeffs, axis=0)
    energy = np.sum(np.square(y_coeffs), axis=0)
    empty = energy == 0
    with np.errstate(divide="ignore", invalid="ignore"):
        g = np.where(empty, 0.0, numerator / energy)
        lam = np.where(g != 0, sigma / g - sigma * sigma, np.inf)
    flagged = tuple(int(n) + 1 for n in np.flatnonzero(empty))
    if flagged:
        logging.warning("erm: %u modes without measurement energy", len(flagged))
    return Filter(
        g=g,
        lam=lam,
        sigma=sigma,
        paradigm="erm",
        training_reference={"pairs": int(x_coeffs.shape[0])},
        flagged=flagged,
    )


def erm_oracle(pairs, system):
    """Empirical risk minimizer over g for pairs (x_i, y_i)."""
    pairs = list(pairs)
    if not pairs:
        raise ValueError("need at least one pair")
    xs = np.array([x for x, _ in pairs], dtype=np.float64)
    ys = np.array([y for _, y in pairs], dtype=np.float64)
    return erm_oracle_coefficients(
        coefficients_x(system, xs), coefficients_y(system, ys), system.sigma
    )


def erm_standard_errors(x_coeffs, y_coeffs, g):
    """Per-mode standard errors of the least-squares g_n."""
    x_coeffs = np.atleast_2d(x_coeffs)
    y_coeffs = np.atleast_2d(y_coeffs)
    count = x_coeffs.shape[0]
    residual = x_coeffs - y_coeffs * g
    energy = np.sum(np.square(y_coeffs), axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.sqrt(np.sum(np.square(residual), axis=0) / max(count - 1, 1) / energy)


@dataclass(frozen=True)
class QuadraticObjective:
    """a lambda^2 + b lambda, minimized over lambda >= 0."""

    a: float
    b: float

    def value(self, lam):
        return self.a * lam * lam + self.b * lam

    def difference(self, lam1, lam2):
        """value(lam1) - value(lam2) without cancellation."""
        return (lam1 - lam2) * (self.a * (lam1 + lam2) + self.b)

    def slope(self, lam):
        return 2.0 * self.a * lam + self.b

    @property
    def minimizer(self):
        return max(-self.b / (2.0 * self.a), 0.0)


def adv_objective(sigma, pi, delta, beta):
    """Per-mode objective -lam Delta/sigma^2 + 4 beta lam^2 (Pi + Delta/(3 sigma^2))."""
    s2 = sigma * sigma
    return QuadraticObjective(4.0 * beta * (pi + delta / (3.0 * s2)), -delta / s2)


def sc_objective(sigma, pi, delta, beta):
    """Per-mode source-condition objective -lam Delta/sigma^2 + 4 beta lam^2 Pi / sigma^2."""
    s2 = sigma * sigma
    return QuadraticObjective(4.0 * beta * pi / s2, -delta / s2)


OBJECTIVES = {"adv": adv_objective, "sc": sc_objective}


def get_objective(name):
    try:
        return OBJECTIVES[name]
    except KeyError as err:
        raise NotImplementedError(f"no scalar objective for {name!r}") from err


def golden_section(objective, lo, hi, iterations=GOLDEN_ITERATIONS, tol=0.0):
    if not hi > lo:
        raise NonBracketingError(f"empty interval [{lo}, {hi}]")
    if objective.slope(hi) < 0 or (lo > 0 and objective.slope(lo) > 0):
        raise NonBracketingError(f"[{lo}, {hi}] does not bracket the minimum")
    x1 = hi - GOLDEN * (hi - lo)
    x2 = lo + GOLDEN * (hi - lo)
    for _ in range(iterations):
        if hi - lo <= tol:
            break
        if objective.difference(x1, x2) <= 0:
            hi, x2 = x2, x1
            x1 = hi - GOLDEN * (hi - lo)
        else:
            lo, x1 = x1, x2
            x2 = lo + GOLDEN * (hi - lo)
    return 0.5 * (lo + hi)


def scalar_objective_oracle(objective, sigma, pi, delta, beta, interval, tol=1e-10):
    """Numerically minimize one mode's adv or sc objective over interval."""
    if not tol > 0:
        raise ValueError("tol must be positive")
    quadratic = get_objective(objective)(sigma, pi, delta, float(beta))
    if not quadratic.a > 0:
        raise NonBracketingError("objective is not strictly convex")
    lo, hi = interval
    return golden_section(quadratic, float(lo), float(hi), tol=tol * 1e-3)


def tikhonov_solve(A, y, lam, system):
    """argmin 1/2 |A x - y|^2 + 1/2 sum_n lambda_n <x, u_n>^2 by normal equations."""
    A = np.asarray(A, dtype=np.float64)
    lam = np.asarray(lam, dtype=np.float64)
    normal = A.T @ A + (system.U * lam) @ system.U.T
    return linalg.solve(normal, A.T @ np.asarray(y, dtype=np.float64), assume_a="sym")


def monte_carlo_error(f, system, x, test_noise, draws, seed, index=0):
    """Mean and standard error of |R(Ax + eps) - x|^2 over seeded draws."""
    x = np.asarray(x, dtype=np.float64)
    noise = sample_noise_batch(test_noise, system, seed, draws, index=index)
    clean = apply_forward(system, x)
    errors = np.sum(np.square(reconstruct(clean + noise, f, system) - x), axis=1)
    return float(np.mean(errors)), float(np.std(errors, ddof=1) / math.sqrt(draws))
