"""Empirical Bayes shrinkage by minimizing Stein's unbiased risk estimate.

Heteroscedastic Gaussian observations ``z_i ~ N(mu_i, sigma_i^2)`` are
denoised with posterior means under a prior that is fitted by gradient
descent on SURE: a shared particle prior (``sure-pm``), a covariate-dependent
Gaussian prior (``sure-ls``) or a covariate-dependent particle prior
(``sure-thing``). NPMLE, grand-mean shrinkage and EBCF are included as
baselines, along with the simulation designs and a data-fission evaluator.
"""

from .estimators import (
    FITTERS,
    CvResult,
    FitConfig,
    FitResult,
    cv_sure,
    fit,
    fit_ebcf,
    fit_grandmean,
    fit_mle,
    fit_npmle,
    fit_sure_ls,
    fit_sure_pm,
    fit_sure_thing,
    npmle_em,
)
from .evaluation import (
    FissionReport,
    MseReport,
    fission_evaluate,
    fission_split,
    insample_mse,
    regret_quadrature,
)
from .exceptions import DataError, NumericalError
from .mixture import (
    Observation,
    Observations,
    ParticlePrior,
    PosteriorSummary,
    posterior_summary,
    sm_loss,
    sure_loss,
    sure_terms,
    weighted_loss,
)
from .params import (
    AdamState,
    MlpParams,
    ParticleParams,
    adam_minimize,
    adam_step,
    decode_particles,
    init_particles,
    sure_particles,
)
from .simgen import SETTINGS, DgpSpec, SimDraw, generate, oracle_estimate

__version__ = "0.1.0"

__all__ = [
    "DataError",
    "NumericalError",
    "FITTERS",
    "CvResult",
    "FitConfig",
    "FitResult",
    "cv_sure",
    "fit",
    "fit_ebcf",
    "fit_grandmean",
    "fit_mle",
    "fit_npmle",
    "fit_sure_ls",
    "fit_sure_pm",
    "fit_sure_thing",
    "npmle_em",
    "FissionReport",
    "MseReport",
    "fission_evaluate",
    "fission_split",
    "insample_mse",
    "regret_quadrature",
    "Observation",
    "Observations",
    "ParticlePrior",
    "PosteriorSummary",
    "posterior_summary",
    "sm_loss",
    "sure_loss",
    "sure_terms",
    "weighted_loss",
    "AdamState",
    "MlpParams",
    "ParticleParams",
    "adam_minimize",
    "adam_step",
    "decode_particles",
    "init_particles",
    "sure_particles",
    "SETTINGS",
    "DgpSpec",
    "SimDraw",
    "generate",
    "oracle_estimate",
]
