"""Fitting procedures.

SURE-trained estimators (particle prior, conditional Gaussian, covariate
dependent particles), the baselines they are compared against (NPMLE by EM on
a fixed grid, SURE-tuned shrinkage to the grand mean, EBCF), and SURE
cross-validation for hyperparameters.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Optional

import numpy as np

from ._kernels import ThingWorkspace
from .exceptions import DataError
from .mixture import (
    LOG_2PI,
    Observations,
    ParticlePrior,
    PosteriorSummary,
    as_observations,
    posterior_summary,
    posterior_weights,
    sure_terms,
)
from .params import (
    DEFAULT_K,
    HIDDEN,
    MlpParams,
    adam_minimize,
    decode_arrays,
    decode_particles,
    init_mlp,
    init_particles,
    iqr95,
    mlp_forward,
    mse_regression,
    split_thing_head,
    sure_ls,
    sure_particles,
    sure_thing,
)
from .rng import STREAM_FOLDS, model_rng, rng_for


@dataclass(frozen=True)
class FitConfig:
    """Knobs shared by all estimators.

    ``iterations``/``tol``/``patience`` control every Adam run (the plateau
    stop fires when the loss gains less than ``tol`` over ``patience``
    steps). ``K`` is both the particle count and the NPMLE grid size.
    """

    K: int = DEFAULT_K
    iterations: int = 2000
    learning_rate: float = 0.01
    tol: float = 1e-9
    patience: int = 50
    seed: int = 0
    folds: int = 5
    hidden: tuple = HIDDEN
    standardize: bool = False
    thing_head_init: bool = False
    npmle_max_iter: int = 10000
    npmle_tol: float = 1e-9

    def replace(self, **changes) -> "FitConfig":
        return replace(self, **changes)


@dataclass
class FitResult:
    method: str
    params: Any
    estimates: np.ndarray
    variances: Optional[np.ndarray]
    final_loss: float
    loss_trace: list
    seed: int
    iterations_run: int
    model: Any = field(default=None, repr=False)

    @property
    def prior(self) -> Optional[ParticlePrior]:
        return self.model.prior if isinstance(self.model, ParticleModel) else None


# ---------------------------------------------------------------- fitted models


@dataclass(frozen=True)
class _Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, x, enabled):
        if not enabled:
            return None
        sd = x.std(axis=0)
        return cls(x.mean(axis=0), np.where(sd > 0, sd, 1.0))

    def __call__(self, x):
        return (x - self.mean) / self.scale


def _features(data: Observations, standardizer):
    x = data.features()
    return x if standardizer is None else standardizer(x)


@dataclass(frozen=True)
class ParticleModel:
    prior: ParticlePrior

    def posterior(self, data: Observations) -> PosteriorSummary:
        return posterior_summary(self.prior, data, check=False)


@dataclass(frozen=True)
class GaussianModel:
    """Conditional prior ``N(center(x), A(x))``; closed-form posterior."""

    center: Callable
    prior_var: Callable

    def posterior(self, data: Observations) -> PosteriorSummary:
        m = np.broadcast_to(self.center(data), data.z.shape)
        A = np.broadcast_to(self.prior_var(data), data.z.shape)
        s2, z = data.sigma2, data.z
        t = s2 + A
        return PosteriorSummary(
            mean=s2 * m / t + A * z / t,
            variance=s2 * A / t,
            score=-(z - m) / t,
            score_deriv=-1.0 / t,
            log_marginal=-0.5 * (LOG_2PI + np.log(t) + (z - m) ** 2 / t),
        )


@dataclass(frozen=True)
class ThingModel:
    mlp: MlpParams
    m: float
    K: int
    standardizer: Any = None

    def priors(self, data: Observations):
        """Per-row (atoms, weights) arrays of shape ``(n, K)``."""
        out = mlp_forward(self.mlp, _features(data, self.standardizer))
        atoms_c, logw, *_ = decode_arrays(*split_thing_head(out, self.K))
        return atoms_c + self.m, logw

    def posterior(self, data: Observations) -> PosteriorSummary:
        atoms, logw = self.priors(data)
        w, lm = posterior_weights(atoms, logw, data.z, data.sigma2)
        mean = np.sum(w * atoms, axis=1)
        var = np.sum(w * (atoms - mean[:, None]) ** 2, axis=1)
        s2 = data.sigma2
        return PosteriorSummary(mean, var, (mean - data.z) / s2, var / s2**2 - 1.0 / s2, lm)


def _result_from_model(method, model, params, data, trace, seed, iterations):
    post = model.posterior(data)
    return FitResult(
        method=method,
        params=params,
        estimates=np.asarray(post.mean, dtype=float),
        variances=np.asarray(post.variance, dtype=float),
        final_loss=float(trace[-1]),
        loss_trace=list(trace),
        seed=seed,
        iterations_run=iterations,
        model=model,
    )


def _adam(loss_and_grad, x0, config: FitConfig):
    return adam_minimize(
        loss_and_grad,
        x0,
        iterations=config.iterations,
        learning_rate=config.learning_rate,
        tol=config.tol,
        patience=config.patience,
    )


# ---------------------------------------------------------------- SURE-trained


def fit_sure_pm(data, config: FitConfig = FitConfig()) -> FitResult:
    """One particle prior for all observations, trained on SURE."""
    data = as_observations(data)
    p0 = init_particles(data, config.K)
    trace = _adam(lambda v: sure_particles(p0.with_vector(v), data), p0.to_vector(), config)
    p = p0.with_vector(trace.params)
    model = ParticleModel(decode_particles(p))
    return _result_from_model("sure-pm", model, p, data, trace.losses, config.seed, trace.iterations)


def fit_sure_ls(data, config: FitConfig = FitConfig()) -> FitResult:
    """Conditional Gaussian prior ``N(m(x), exp(A~(x)))`` from a small ReLU network.

    The location head is measured from ``median(z)``, the same fixed offset
    the particle methods use.
    """
    data = as_observations(data)
    if len(data) < 2:
        raise DataError("need at least two observations")
    rng = model_rng(config.seed)
    std = _Standardizer.fit(data.features(), config.standardize)
    x = _features(data, std)
    offset = float(np.median(data.z))
    mlp0 = init_mlp(x.shape[1], 2, rng, config.hidden)
    trace = _adam(lambda v: sure_ls(mlp0.with_vector(v), data, x, offset), mlp0.to_vector(), config)
    mlp = mlp0.with_vector(trace.params)

    def head(d):
        return mlp_forward(mlp, _features(d, std))

    model = GaussianModel(lambda d: head(d)[:, 0] + offset, lambda d: np.exp(head(d)[:, 1]))
    return _result_from_model("sure-ls", model, mlp, data, trace.losses, config.seed, trace.iterations)


def thing_initial_network(data: Observations, config: FitConfig, x=None) -> MlpParams:
    """Default-initialized network; optionally the output bias starts at the particle init."""
    rng = model_rng(config.seed)
    x = data.features() if x is None else x
    K = config.K
    mlp = init_mlp(x.shape[1], 2 * K, rng, config.hidden)
    if config.thing_head_init:
        p0 = init_particles(data, K)
        biases = list(mlp.biases)
        biases[-1] = p0.to_vector()
        mlp = MlpParams(mlp.weights, tuple(biases))
    return mlp


def fit_sure_thing(data, config: FitConfig = FitConfig(), initial: Optional[MlpParams] = None) -> FitResult:
    """Covariate-dependent particle prior: a network emits each observation's prior."""
    data = as_observations(data)
    if len(data) < 2:
        raise DataError("need at least two observations")
    width = iqr95(data.z)
    if not width > 0:
        raise DataError("degenerate data: the 95% interquantile range of z is zero")
    m = float(np.median(data.z))
    std = _Standardizer.fit(data.features(), config.standardize)
    x = _features(data, std)
    mlp0 = initial if initial is not None else thing_initial_network(data, config, x)
    K = config.K
    work = ThingWorkspace(len(data), K)
    trace = _adam(lambda v: sure_thing(mlp0.with_vector(v), data, m, K, x, work=work), mlp0.to_vector(), config)
    mlp = mlp0.with_vector(trace.params)
    model = ThingModel(mlp, m, K, std)
    return _result_from_model("sure-thing", model, mlp, data, trace.losses, config.seed, trace.iterations)


# ---------------------------------------------------------------- baselines


def fit_mle(data, config: FitConfig = FitConfig()) -> FitResult:
    data = as_observations(data)
    return FitResult("mle", None, data.z.copy(), None, 0.0, [0.0], config.seed, 0)


def npmle_grid(z, K: int) -> np.ndarray:
    lo, hi = float(np.min(z)), float(np.max(z))
    if hi == lo:
        return np.array([lo])
    return np.linspace(lo, hi, K)


def npmle_em(data: Observations, grid, max_iter=10000, tol=1e-9, weights=None):
    """EM for mixture weights on a fixed grid.

    Returns ``(weights, loglik_trace)``; the trace starts at the initial
    weights and records the total log-likelihood after every update.
    """
    grid = np.asarray(grid, dtype=float)
    z, s2 = data.z, data.sigma2
    logphi = -0.5 * ((z[:, None] - grid) ** 2 / s2[:, None] + LOG_2PI + np.log(s2)[:, None])
    rowmax = logphi.max(axis=1)
    P = np.exp(logphi - rowmax[:, None])
    offset = float(rowmax.sum())
    pi = np.full(grid.size, 1.0 / grid.size) if weights is None else np.asarray(weights, dtype=float)
    f = P @ pi
    trace = [float(np.sum(np.log(f))) + offset]
    for _ in range(max_iter):
        pi = pi * (P.T @ (1.0 / f)) / z.size
        pi /= pi.sum()
        f = P @ pi
        trace.append(float(np.sum(np.log(f))) + offset)
        if trace[-1] - trace[-2] < tol:
            break
    return pi, trace


def fit_npmle(data, config: FitConfig = FitConfig()) -> FitResult:
    """Grid NPMLE of a prior shared by all observations (mean/variance independence)."""
    data = as_observations(data)
    if len(data) == 0:
        raise DataError("data must be non-empty")
    grid = npmle_grid(data.z, config.K)
    pi, ll = npmle_em(data, grid, config.npmle_max_iter, config.npmle_tol)
    model = ParticleModel(ParticlePrior.normalized(grid, pi))
    nll = [-v / len(data) for v in ll]
    return _result_from_model("npmle", model, model.prior, data, nll, config.seed, len(ll) - 1)


def shrinkage_sure(A, z, sigma2, center):
    """SURE of ``A/(A+s2) z + s2/(A+s2) center`` averaged over observations."""
    t = sigma2 + A
    return float(np.mean(sigma2**2 * (z - center) ** 2 / t**2 + sigma2 - 2.0 * sigma2**2 / t))


def golden_section(f, lo, hi, tol=1e-10, max_iter=500):
    """Minimize a unimodal ``f`` on ``[lo, hi]``; endpoints are also compared."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if b - a <= tol:
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    best = min([(fc, c), (fd, d), (f(lo), lo), (f(hi), hi)])
    return best[1]


def tune_shrinkage(z, sigma2, center, upper: float, tol=1e-10) -> float:
    """SURE-optimal prior variance ``A`` in ``[0, upper]`` by golden section on ``log(1 + A)``."""
    t_hi = math.log1p(max(upper, 0.0))
    t = golden_section(lambda t: shrinkage_sure(math.expm1(t), z, sigma2, center), 0.0, t_hi, tol)
    return math.expm1(t)


def _shrinkage_fit(method, data, centers, A, config, params, trace):
    A = np.asarray(A, dtype=float)
    s2 = data.sigma2
    t = s2 + A
    est = A / t * data.z + s2 / t * centers
    return FitResult(method, params, est, s2 * A / t, float(trace[-1]), list(trace), config.seed, 0)


def fit_grandmean(data, config: FitConfig = FitConfig()) -> FitResult:
    """Shrink toward the grand mean with a single SURE-tuned prior variance."""
    data = as_observations(data)
    if len(data) < 2:
        raise DataError("need at least two observations")
    zbar = float(np.mean(data.z))
    A = tune_shrinkage(data.z, data.sigma2, zbar, 10.0 * float(np.var(data.z)))
    loss = shrinkage_sure(A, data.z, data.sigma2, zbar)
    res = _shrinkage_fit("grandmean", data, zbar, A, config, {"A": A, "center": zbar}, [loss])
    res.model = GaussianModel(lambda d: zbar, lambda d: A)
    return res


def fold_indices(n: int, folds: int, seed: int) -> list[np.ndarray]:
    """Seeded uniform shuffle cut into contiguous, nearly equal blocks."""
    if folds < 2:
        raise DataError("need at least two folds")
    perm = rng_for(seed, 0, STREAM_FOLDS).permutation(n)
    return [np.sort(block) for block in np.array_split(perm, folds)]


def fit_regression_net(x, y, config: FitConfig, rng: np.random.Generator):
    """Least-squares ReLU network for ``y`` on ``x``; returns ``(predict, TrainTrace)``.

    The target is measured from ``median(y)`` so the network starts near it.
    """
    offset = float(np.median(y))
    mlp0 = init_mlp(x.shape[1], 1, rng, config.hidden)
    trace = _adam(lambda v: mse_regression(mlp0.with_vector(v), x, y - offset), mlp0.to_vector(), config)
    mlp = mlp0.with_vector(trace.params)
    return (lambda xs: mlp_forward(mlp, xs)[:, 0] + offset), trace


def fit_ebcf(data, config: FitConfig = FitConfig(), regressor=None) -> FitResult:
    """Empirical Bayes with cross-fitting.

    For each fold a regression of ``z`` on the features is fit on the other
    folds; the fold's observations are shrunk toward its predictions with a
    fold-specific SURE-tuned ``A``. ``regressor(x_train, y_train, fold)``
    may replace the default network and must return a prediction function.
    """
    data = as_observations(data)
    n, k = len(data), config.folds
    if n < 10 or n < 2 * k:
        raise DataError(f"EBCF needs at least max(10, 2*folds) observations, got {n}")
    std = _Standardizer.fit(data.features(), config.standardize)
    x = _features(data, std)
    centers = np.empty(n)
    A = np.empty(n)
    fold_A, fold_mse = [], []
    sure_total, iterations = 0.0, 0
    upper = 10.0 * float(np.var(data.z))
    for f, idx in enumerate(fold_indices(n, k, config.seed)):
        train = np.setdiff1d(np.arange(n), idx)
        if regressor is None:
            predict, trace = fit_regression_net(x[train], data.z[train], config, model_rng(config.seed, f + 1))
            fold_mse.append(trace.losses[-1])
            iterations += trace.iterations
        else:
            predict = regressor(x[train], data.z[train], f)
        centers[idx] = predict(x[idx])
        a = tune_shrinkage(data.z[idx], data.sigma2[idx], centers[idx], upper)
        A[idx] = a
        fold_A.append(a)
        sure_total += shrinkage_sure(a, data.z[idx], data.sigma2[idx], centers[idx]) * idx.size
    params = {"A": fold_A, "centers": centers, "regression_mse": fold_mse}
    res = _shrinkage_fit("ebcf", data, centers, A, config, params, [sure_total / n])
    res.iterations_run = iterations
    return res


FITTERS = {
    "sure-pm": fit_sure_pm,
    "sure-ls": fit_sure_ls,
    "sure-thing": fit_sure_thing,
    "npmle": fit_npmle,
    "grandmean": fit_grandmean,
    "ebcf": fit_ebcf,
    "mle": fit_mle,
}


def fit(method: str, data, config: FitConfig = FitConfig()) -> FitResult:
    try:
        fitter = FITTERS[method]
    except KeyError:
        raise ValueError(f"unknown method {method!r}; choose from {sorted(FITTERS)}") from None
    return fitter(data, config)


# ---------------------------------------------------------------- cross-validation


@dataclass
class CvResult:
    method: str
    candidates: list
    scores: np.ndarray  # (candidates, folds)
    best: dict

    @property
    def mean_scores(self) -> np.ndarray:
        return self.scores.mean(axis=1)


def _expand_grid(hyper_grid) -> list[dict]:
    if isinstance(hyper_grid, dict):
        names = list(hyper_grid)
        return [dict(zip(names, values)) for values in itertools.product(*hyper_grid.values())]
    return [dict(c) for c in hyper_grid]


def cv_sure(data, method: str, hyper_grid, folds: int = 5, config: FitConfig = FitConfig()) -> CvResult:
    """Pick hyperparameters by the average held-out SURE across folds.

    ``hyper_grid`` is either ``{name: [values...]}`` (expanded as a product)
    or a list of override dicts applied to ``config``.
    """
    data = as_observations(data)
    candidates = _expand_grid(hyper_grid)
    if not candidates:
        raise DataError("hyper_grid is empty")
    blocks = fold_indices(len(data), folds, config.seed)
    scores = np.empty((len(candidates), folds))
    for k, hold in enumerate(blocks):
        train = data[np.setdiff1d(np.arange(len(data)), hold)]
        test = data[hold]
        for c, overrides in enumerate(candidates):
            res = fit(method, train, config.replace(**overrides))
            if res.model is None:
                raise DataError(f"method {method!r} cannot score held-out observations")
            post = res.model.posterior(test)
            scores[c, k] = float(np.mean(sure_terms(test.z, test.sigma2, post.mean, post.variance)))
    best = candidates[int(np.argmin(scores.mean(axis=1)))]
    return CvResult(method, candidates, scores, best)
