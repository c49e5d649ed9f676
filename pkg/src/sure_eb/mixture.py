"""Gaussian location mixtures with discrete priors.

Everything is driven by the posterior atom weights

    w_j(z) = softmax_j( log pi_j - (z - u_j)^2 / (2 sigma^2) ),

from which the score, its derivative, the posterior mean and variance and the
SURE / score-matching losses all follow. Nothing is formed in the linear
density domain, so far-away atoms cannot underflow the computation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .exceptions import DataError

LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class Observation:
    """A single noisy measurement ``z ~ N(mu, sigma2)`` with side information."""

    z: float
    sigma2: float
    covariates: tuple = ()

    def __post_init__(self):
        if not (np.isfinite(self.sigma2) and self.sigma2 > 0):
            raise DataError(f"sigma2 must be positive and finite, got {self.sigma2}")
        if not np.isfinite(self.z):
            raise DataError(f"z must be finite, got {self.z}")
        if not np.all(np.isfinite(np.asarray(self.covariates, dtype=float))):
            raise DataError("covariates must be finite")


@dataclass(frozen=True, eq=False)
class Observations:
    """Column-oriented batch of observations.

    ``covariates`` has shape ``(n, d)``; ``d`` may be zero. The noise
    variance is stored separately from the covariates even though methods
    that use side information always see ``sigma`` as an extra feature.
    """

    z: np.ndarray
    sigma2: np.ndarray
    covariates: np.ndarray = field(default=None)

    def __post_init__(self):
        z = np.ascontiguousarray(self.z, dtype=float).reshape(-1)
        sigma2 = np.ascontiguousarray(self.sigma2, dtype=float).reshape(-1)
        if z.shape != sigma2.shape:
            raise DataError(f"z has {z.size} entries but sigma2 has {sigma2.size}")
        cov = self.covariates
        if cov is None:
            cov = np.zeros((z.size, 0))
        cov = np.asarray(cov, dtype=float)
        if cov.ndim == 1:
            cov = cov.reshape(-1, 1)
        if cov.shape[0] != z.size:
            raise DataError(f"covariates have {cov.shape[0]} rows, expected {z.size}")
        if not np.all(np.isfinite(z)):
            raise DataError("z must be finite")
        if not (np.all(np.isfinite(sigma2)) and np.all(sigma2 > 0)):
            raise DataError("sigma2 must be positive and finite")
        if not np.all(np.isfinite(cov)):
            raise DataError("covariates must be finite")
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "sigma2", sigma2)
        object.__setattr__(self, "covariates", cov)

    @classmethod
    def from_records(cls, records: Sequence[Observation]) -> "Observations":
        if len(records) == 0:
            return cls(np.zeros(0), np.zeros(0))
        d = len(records[0].covariates)
        cov = np.array([list(r.covariates) for r in records], dtype=float).reshape(len(records), d)
        return cls(
            np.array([r.z for r in records], dtype=float),
            np.array([r.sigma2 for r in records], dtype=float),
            cov,
        )

    def __len__(self):
        return self.z.size

    def __getitem__(self, idx):
        idx = np.atleast_1d(np.arange(len(self))[idx])
        return Observations(self.z[idx], self.sigma2[idx], self.covariates[idx])

    def records(self) -> list[Observation]:
        return [
            Observation(float(z), float(s2), tuple(float(c) for c in cov))
            for z, s2, cov in zip(self.z, self.sigma2, self.covariates)
        ]

    def replace_z(self, z) -> "Observations":
        return Observations(z, self.sigma2, self.covariates)

    def features(self) -> np.ndarray:
        """Network input: covariates with the noise standard deviation appended."""
        return np.column_stack([self.covariates, np.sqrt(self.sigma2)])


ObservationsLike = Union[Observations, Sequence[Observation], Observation]


def as_observations(data: ObservationsLike) -> Observations:
    if isinstance(data, Observations):
        return data
    if isinstance(data, Observation):
        return Observations.from_records([data])
    return Observations.from_records(list(data))


@dataclass(frozen=True, eq=False)
class ParticlePrior:
    """Discrete prior ``sum_j weights[j] * delta(atoms[j])`` with increasing atoms."""

    atoms: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        atoms = np.asarray(self.atoms, dtype=float).reshape(-1)
        weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if atoms.size == 0 or atoms.shape != weights.shape:
            raise DataError("atoms and weights must be non-empty and equally long")
        if not (np.all(np.isfinite(atoms)) and np.all(np.isfinite(weights))):
            raise DataError("atoms and weights must be finite")
        if np.any(weights < 0):
            raise DataError("weights must be non-negative")
        if not np.any(weights > 0):
            raise DataError("degenerate prior: all weights are zero")
        if abs(weights.sum() - 1.0) > 1e-12:
            raise DataError(f"weights sum to {weights.sum()!r}, not 1")
        if np.any(np.diff(atoms) <= 0):
            raise DataError("atoms must be strictly increasing")
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def normalized(cls, atoms, weights) -> "ParticlePrior":
        weights = np.asarray(weights, dtype=float)
        total = weights.sum()
        if not total > 0:
            raise DataError("degenerate prior: all weights are zero")
        return cls(atoms, weights / total)

    @property
    def K(self) -> int:
        return self.atoms.size

    @property
    def log_weights(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.weights)


@dataclass(frozen=True)
class PosteriorSummary:
    """Posterior summaries; fields are scalars or arrays aligned with the data."""

    mean: np.ndarray
    variance: np.ndarray
    score: np.ndarray
    score_deriv: np.ndarray
    log_marginal: np.ndarray


def _logsumexp_rows(a):
    amax = np.max(a, axis=-1, keepdims=True)
    out = np.log(np.sum(np.exp(a - amax), axis=-1)) + amax[..., 0]
    return out


def posterior_weights(atoms, log_weights, z, sigma2):
    """Posterior atom weights and the log marginal density.

    ``atoms``/``log_weights`` are ``(K,)`` for a shared prior or ``(n, K)``
    for one prior per observation; ``z`` and ``sigma2`` broadcast against the
    leading axis. Atoms whose log weight is ``-inf`` get weight exactly zero.
    """
    atoms = np.asarray(atoms, dtype=float)
    log_weights = np.asarray(log_weights, dtype=float)
    z = np.asarray(z, dtype=float)[..., None]
    sigma2 = np.asarray(sigma2, dtype=float)[..., None]
    a = log_weights - 0.5 * (z - atoms) ** 2 / sigma2
    amax = np.max(a, axis=-1, keepdims=True)
    if np.any(~np.isfinite(amax)):
        raise DataError("degenerate prior: all weights are zero")
    e = np.exp(a - amax)
    total = e.sum(axis=-1, keepdims=True)
    w = e / total
    log_marg = (np.log(total) + amax)[..., 0] - 0.5 * (LOG_2PI + np.log(sigma2[..., 0]))
    return w, log_marg


def _moments(w, atoms):
    mean = np.sum(w * atoms, axis=-1)
    var = np.sum(w * (atoms - mean[..., None]) ** 2, axis=-1)
    return mean, var


def log_marginal(prior: ParticlePrior, z, sigma2):
    """``log sum_j pi_j phi(z - u_j; sigma2)`` evaluated stably."""
    _, lm = posterior_weights(prior.atoms, prior.log_weights, z, sigma2)
    return lm if np.ndim(lm) else float(lm)


def score_and_deriv(prior: ParticlePrior, z, sigma2):
    """Score ``d/dz log f(z)`` and its derivative in ``z``."""
    w, _ = posterior_weights(prior.atoms, prior.log_weights, z, sigma2)
    z = np.asarray(z, dtype=float)
    sigma2 = np.asarray(sigma2, dtype=float)
    d = (prior.atoms - z[..., None]) / sigma2[..., None]
    score = np.sum(w * d, axis=-1)
    # Var_w(d) - 1/sigma2, with the variance taken about its own mean
    deriv = np.sum(w * (d - score[..., None]) ** 2, axis=-1) - 1.0 / sigma2
    if np.ndim(score) == 0:
        return float(score), float(deriv)
    return score, deriv


def posterior_summary(prior: ParticlePrior, obs: ObservationsLike, check: bool = True) -> PosteriorSummary:
    """Posterior mean/variance, score, score derivative and log marginal.

    With ``check`` the Tweedie forms (``z + sigma2 * score`` and
    ``sigma2 + sigma2**2 * score_deriv``) are compared against the direct
    atom-weight moments.
    """
    scalar = isinstance(obs, Observation)
    data = as_observations(obs)
    z, s2 = data.z, data.sigma2
    w, lm = posterior_weights(prior.atoms, prior.log_weights, z, s2)
    mean, var = _moments(w, prior.atoms)
    d = (prior.atoms - z[:, None]) / s2[:, None]
    score = np.sum(w * d, axis=-1)
    deriv = np.sum(w * (d - score[:, None]) ** 2, axis=-1) - 1.0 / s2
    if check:
        tweedie_mean = z + s2 * score
        scale = np.abs(z) + np.abs(mean) + s2
        if not np.all(np.abs(tweedie_mean - mean) <= 1e-8 * scale):
            raise AssertionError("Tweedie mean disagrees with atom-weight mean")
        tweedie_var = s2 + s2**2 * deriv
        if not np.all(np.abs(tweedie_var - var) <= 1e-8 * (s2 + var)):
            raise AssertionError("second-order Tweedie variance disagrees with atom-weight variance")
    var = np.maximum(var, 0.0)
    if scalar:
        return PosteriorSummary(float(mean[0]), float(var[0]), float(score[0]), float(deriv[0]), float(lm[0]))
    return PosteriorSummary(mean, var, score, deriv, lm)


def sure_terms(z, sigma2, mean, variance):
    """Per-observation SURE of a posterior-mean denoiser.

    ``sigma2 + sigma2**2 * (s**2 + 2 s')`` rewritten through the first- and
    second-order Tweedie identities as ``(z - mean)**2 + 2 variance - sigma2``.
    """
    return (z - mean) ** 2 + 2.0 * variance - sigma2


def _score_terms(prior, data):
    data = as_observations(data)
    if len(data) == 0:
        raise DataError("data must be non-empty")
    s, ds = score_and_deriv(prior, data.z, data.sigma2)
    return data, np.atleast_1d(s), np.atleast_1d(ds)


def sure_loss(prior: ParticlePrior, data: ObservationsLike) -> float:
    """``mean_i[ sigma_i^2 + sigma_i^4 (s(W_i)^2 + 2 s'(W_i)) ]``."""
    data, s, ds = _score_terms(prior, data)
    s2 = data.sigma2
    return float(np.mean(s2 + s2**2 * (s**2 + 2.0 * ds)))


def sm_loss(prior: ParticlePrior, data: ObservationsLike) -> float:
    """Hyvarinen score-matching objective ``mean_i[ s^2 + 2 s' ]``."""
    _, s, ds = _score_terms(prior, data)
    return float(np.mean(s**2 + 2.0 * ds))


def weighted_loss(prior: ParticlePrior, data: ObservationsLike, weights) -> float:
    """``mean_i[ w_i (s^2 + 2 s') ]`` for non-negative per-observation weights."""
    data, s, ds = _score_terms(prior, data)
    weights = np.asarray(weights, dtype=float).reshape(-1)
    if weights.size != len(data):
        raise DataError(f"got {weights.size} weights for {len(data)} observations")
    if np.any(weights < 0) or not np.all(np.isfinite(weights)):
        raise DataError("weights must be finite and non-negative")
    return float(np.mean(weights * (s**2 + 2.0 * ds)))
