"""Metrics: in-sample MSE over replicates, regret by quadrature, data fission."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence, Union

import numpy as np
from scipy import integrate

from .estimators import FitConfig, fit
from .exceptions import DataError, NumericalError
from .mixture import Observations, ParticlePrior, as_observations, posterior_weights
from .rng import STREAM_FISSION, rng_for


def insample_mse(mu, estimates) -> float:
    mu = np.asarray(mu, dtype=float)
    estimates = np.asarray(estimates, dtype=float)
    if mu.shape != estimates.shape:
        raise DataError(f"length mismatch: {mu.shape} vs {estimates.shape}")
    return float(np.mean((mu - estimates) ** 2))


def standard_error(values) -> float:
    values = np.asarray(values, dtype=float)
    if values.size < 2:
        return float("nan")
    return float(np.std(values, ddof=1) / np.sqrt(values.size))


@dataclass
class MseReport:
    setting: str
    n: int
    B: int
    mse_mean: dict
    mse_se: dict
    per_replicate: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_replicates(cls, setting: str, n: int, per_method: Mapping[str, Sequence[float]]) -> "MseReport":
        per = {m: np.asarray(v, dtype=float) for m, v in sorted(per_method.items())}
        sizes = {v.size for v in per.values()}
        if len(sizes) != 1 or 0 in sizes:
            raise DataError("every method needs the same, non-zero number of replicates")
        return cls(
            setting,
            n,
            sizes.pop(),
            {m: float(np.mean(v)) for m, v in per.items()},
            {m: standard_error(v) for m, v in per.items()},
            per,
        )


def _posterior_mean(prior: ParticlePrior, z, sigma2):
    w, lm = posterior_weights(prior.atoms, prior.log_weights, z, sigma2)
    return w @ prior.atoms, lm


def regret_quadrature(g_star: ParticlePrior, g_hat: ParticlePrior, sigma2: float, epsabs: float = 1e-9) -> float:
    """``int (E_hat[mu|z] - E_star[mu|z])^2 f_star(z) dz`` by adaptive Gauss-Kronrod.

    The range is the union of both supports padded by ten noise standard
    deviations; atom locations are passed as breakpoints.
    """
    sd = float(np.sqrt(sigma2))
    atoms = np.concatenate([g_star.atoms, g_hat.atoms])
    lo, hi = float(atoms.min() - 10.0 * sd), float(atoms.max() + 10.0 * sd)

    def integrand(z):
        m_star, lm = _posterior_mean(g_star, z, sigma2)
        m_hat, _ = _posterior_mean(g_hat, z, sigma2)
        return float((m_hat - m_star) ** 2 * np.exp(lm))

    points = np.unique(atoms)
    points = points[(points > lo) & (points < hi)]
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            value, err = integrate.quad(
                integrand, lo, hi, epsabs=epsabs, epsrel=0.0, limit=2000,
                points=points[:1000] if points.size else None,
            )
        except integrate.IntegrationWarning as exc:
            raise NumericalError(f"quadrature did not converge: {exc}") from None
    if err > epsabs:
        raise NumericalError(f"quadrature reached only absolute error {err:.3g}")
    return max(value, 0.0)


# ---------------------------------------------------------------- fission


def fission_split(data, seed: int = 0, replicate: int = 0, noise=None):
    """Two independent copies ``z + eps`` and ``z - eps`` with variance ``2 sigma^2``.

    ``eps ~ N(0, sigma^2)`` comes from a stream reserved for fission, so it
    does not depend on anything a fitting method draws.
    """
    data = as_observations(data)
    if noise is None:
        noise = rng_for(seed, replicate, STREAM_FISSION).standard_normal(len(data)) * np.sqrt(data.sigma2)
    noise = np.asarray(noise, dtype=float)
    if noise.shape != data.z.shape:
        raise DataError("noise must have one entry per observation")
    doubled = 2.0 * data.sigma2
    fold1 = Observations(data.z + noise, doubled, data.covariates)
    fold2 = Observations(data.z - noise, doubled, data.covariates)
    return fold1, fold2


@dataclass
class FissionReport:
    methods: list
    fmse: dict
    ri: dict
    se_ri: dict
    B: int
    seed: int
    fmse_mle: float
    per_replicate_ri: dict = field(default_factory=dict, repr=False)


def relative_improvement(fmse_mle: float, fmse_npmle: float, fmse_method: float) -> float:
    """Share of the NPMLE's gain over the MLE that a method achieves (1 = NPMLE, 0 = MLE)."""
    denom = fmse_mle - fmse_npmle
    if denom == 0.0:
        raise NumericalError("degenerate denominator: NPMLE ties the MLE")
    return (fmse_mle - fmse_method) / denom


MethodLike = Union[str, Callable[[Observations], np.ndarray]]


def _estimate(method: MethodLike, fold: Observations, config: FitConfig) -> np.ndarray:
    if callable(method):
        return np.asarray(method(fold), dtype=float)
    return fit(method, fold, config).estimates


def fission_evaluate(
    data,
    methods: Mapping[str, MethodLike] | Sequence[str],
    B: int,
    seed: int = 0,
    config: FitConfig = FitConfig(),
) -> FissionReport:
    """Relative improvement over the MLE, normalized by the NPMLE's improvement.

    Each replicate splits the data, fits every method on the first copy and
    scores its estimates against the second copy. ``RI = 1`` for the NPMLE
    and ``0`` for the MLE by construction.
    """
    data = as_observations(data)
    if B < 2:
        raise DataError("need at least two fission replicates")
    if not isinstance(methods, Mapping):
        methods = {m: m for m in methods}
    methods = dict(methods)
    methods.setdefault("npmle", "npmle")
    names = list(methods)
    fmse = {m: np.empty(B) for m in names}
    ri = {m: np.empty(B) for m in names}
    fmse_mle = np.empty(B)
    for b in range(B):
        fold1, fold2 = fission_split(data, seed, b)
        f_mle = float(np.mean((fold1.z - fold2.z) ** 2))
        fmse_mle[b] = f_mle
        for m in names:
            est = _estimate(methods[m], fold1, config)
            fmse[m][b] = float(np.mean((est - fold2.z) ** 2))
        if f_mle == fmse["npmle"][b]:
            raise NumericalError(f"degenerate denominator in replicate {b}: NPMLE ties the MLE")
        for m in names:
            ri[m][b] = relative_improvement(f_mle, fmse["npmle"][b], fmse[m][b])
    return FissionReport(
        methods=names,
        fmse={m: float(np.mean(v)) for m, v in fmse.items()},
        ri={m: float(np.mean(v)) for m, v in ri.items()},
        se_ri={m: float(np.sqrt(np.sum((v - v.mean()) ** 2) / (B * (B - 1)))) for m, v in ri.items()},
        B=B,
        seed=seed,
        fmse_mle=float(np.mean(fmse_mle)),
        per_replicate_ri=ri,
    )
