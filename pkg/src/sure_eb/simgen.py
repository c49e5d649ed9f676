"""Seeded data-generating processes and their Bayes rules.

Random streams come from :mod:`sure_eb.rng`, so every replicate and every
purpose (data, fission noise, model initialization) gets its own
independent stream regardless of execution order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import gammaln

from .exceptions import DataError
from .mixture import Observations, posterior_weights
from .rng import rng_for

SETTINGS = (
    "uniform_prior",
    "inv_chisq_prior",
    "bimodal_twopoint_var",
    "uniform_likelihood",
    "twopoint_prior",
    "poisson_prior",
    "multi_covariate",
    "hetero_one_covariate",
    "homosc_normal",
    "compound_twopoint",
)
HETEROSCEDASTIC_SETTINGS = SETTINGS[:8]
A_STAR_VALUES = (0.1, 1.0, 5.0)
M_STAR_VALUES = (3.0, 4.0, 5.0, 7.0)
K_STAR_VALUES = (5, 50, 500)


@dataclass(frozen=True)
class DgpSpec:
    setting: str
    n: int
    seed: int = 0
    replicate: int = 0
    a_star: float = 1.0
    m_star: float = 3.0
    k_star: int = 5
    inv_chisq_scaled: bool = False

    def __post_init__(self):
        if self.setting not in SETTINGS:
            raise DataError(f"unknown setting {self.setting!r}; choose from {list(SETTINGS)}")
        if self.n < 1:
            raise DataError("n must be at least 1")
        if self.setting == "homosc_normal" and self.a_star not in A_STAR_VALUES:
            raise DataError(f"a_star must be one of {A_STAR_VALUES}")
        if self.setting == "compound_twopoint":
            if self.m_star not in M_STAR_VALUES:
                raise DataError(f"m_star must be one of {M_STAR_VALUES}")
            if self.k_star not in K_STAR_VALUES:
                raise DataError(f"k_star must be one of {K_STAR_VALUES}")
            if self.k_star > self.n:
                raise DataError("k_star cannot exceed n")


@dataclass(frozen=True, eq=False)
class SimDraw:
    mu: np.ndarray
    observations: Observations
    oracle_estimates: Optional[np.ndarray]


def multi_covariate_mean(X):
    return np.pi * X[:, 0] * X[:, 1] + 20.0 * (X[:, 2] - 0.5) ** 2 + 5.0 * X[:, 3]


def generate(spec: DgpSpec) -> SimDraw:
    rng = rng_for(spec.seed, spec.replicate)
    n = spec.n
    cov = None
    s = spec.setting
    if s in ("uniform_prior", "uniform_likelihood"):
        sigma2 = rng.uniform(0.1, 1.0, n)
        mu = sigma2.copy()
    elif s == "inv_chisq_prior":
        chi = rng.chisquare(10, n)
        sigma2 = (10.0 if spec.inv_chisq_scaled else 1.0) / chi
        mu = sigma2.copy()
    elif s == "bimodal_twopoint_var":
        low = rng.random(n) < 0.5
        sigma2 = np.where(low, 0.1, 0.5)
        mu = np.where(low, 2.0, 0.0) + np.sqrt(sigma2) * rng.standard_normal(n)
    elif s == "twopoint_prior":
        sigma2 = rng.uniform(0.1, 0.5, n)
        mu = np.where(rng.random(n) < 0.5, sigma2, 10.0 * sigma2)
    elif s == "poisson_prior":
        sigma2 = rng.uniform(0.1, 1.0, n)
        mu = rng.poisson(2.0 * sigma2).astype(float)
    elif s == "multi_covariate":
        sigma2 = rng.uniform(1.5, 2.5, n)
        cov = rng.random((n, 5))
        mu = multi_covariate_mean(cov) + 2.0 * rng.standard_normal(n)
    elif s == "hetero_one_covariate":
        x = rng.random(n)
        cov = x[:, None]
        sigma2 = 2.0 * x**2 + 5.0 * x + 1.0
        mu = 2.0 * sigma2 + 0.5 + 0.5 * np.sqrt(sigma2) * rng.standard_normal(n)
    elif s == "homosc_normal":
        sigma2 = np.ones(n)
        mu = 10.0 + math.sqrt(spec.a_star) * rng.standard_normal(n)
    else:  # compound_twopoint: the means are fixed, only the noise is redrawn
        sigma2 = np.ones(n)
        mu = np.where(np.arange(n) < spec.k_star, spec.m_star, 0.0)

    if s == "uniform_likelihood":
        half = math.sqrt(3.0) * np.sqrt(sigma2)
        z = mu + rng.uniform(-1.0, 1.0, n) * half
    else:
        z = mu + np.sqrt(sigma2) * rng.standard_normal(n)
    obs = Observations(z, sigma2, cov)
    return SimDraw(mu, obs, oracle_estimate(spec, obs))


def _gaussian_posterior_mean(z, sigma2, m, A):
    return sigma2 * m / (sigma2 + A) + A * z / (sigma2 + A)


def poisson_truncation(sigma2) -> np.ndarray:
    lam = 2.0 * np.asarray(sigma2, dtype=float)
    return np.ceil(lam + 12.0 * np.sqrt(lam) + 30.0).astype(int)


def oracle_estimate(spec: DgpSpec, obs: Observations) -> np.ndarray:
    """Bayes rule ``E[mu | z, x]`` of the setting (best separable rule for the compound one)."""
    s = spec.setting
    z, s2 = obs.z, obs.sigma2
    if s in ("uniform_prior", "inv_chisq_prior", "uniform_likelihood"):
        return s2.copy()
    if s == "bimodal_twopoint_var":
        m = np.where(s2 == 0.1, 2.0, 0.0)
        return _gaussian_posterior_mean(z, s2, m, s2)
    if s == "multi_covariate":
        return _gaussian_posterior_mean(z, s2, multi_covariate_mean(obs.covariates), 4.0)
    if s == "hetero_one_covariate":
        return _gaussian_posterior_mean(z, s2, 2.0 * s2 + 0.5, 0.25 * s2)
    if s == "homosc_normal":
        return _gaussian_posterior_mean(z, s2, 10.0, spec.a_star)
    if s == "twopoint_prior":
        atoms = np.column_stack([s2, 10.0 * s2])
        w, _ = posterior_weights(atoms, np.log(np.full_like(atoms, 0.5)), z, s2)
        return np.sum(w * atoms, axis=1)
    if s == "poisson_prior":
        support = np.arange(int(poisson_truncation(s2).max()) + 1, dtype=float)
        lam = 2.0 * s2[:, None]
        logpmf = support * np.log(lam) - lam - gammaln(support + 1.0)
        logpmf = np.where(support <= poisson_truncation(s2)[:, None], logpmf, -np.inf)
        atoms = np.broadcast_to(support, logpmf.shape)
        w, _ = posterior_weights(atoms, logpmf, z, s2)
        return w @ support
    if s == "compound_twopoint":
        frac = spec.k_star / spec.n
        atoms = np.array([0.0, spec.m_star])
        with np.errstate(divide="ignore"):
            logw = np.log([1.0 - frac, frac])
        w, _ = posterior_weights(atoms, logw, z, s2)
        return w @ atoms
    raise DataError(f"no oracle for setting {s!r}")
