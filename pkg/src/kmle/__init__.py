"""Hard clustering by classification maximum likelihood.

``kmle`` provides a generic coordinate-ascent solver, exponential-family
(Bregman) cluster models, the k-VARs model for multivariate time series,
BIC model selection, clustering metrics and a synthetic VAR benchmark
generator.
"""

from .data import Assignment, Dataset, build_regressors, load_dataset, save_dataset, validate_dataset
from .engine import (
    FitResult,
    PartialMaxCertificate,
    StopMode,
    StopReason,
    StopRule,
    check_partial_maximum,
    run_kmle,
    tau_step,
    theta_step,
)
from .expfam import KBregman
from .kvars import KVARs, VarParams, run_kvars, score_series
from .selection import BICSelector, SolverConfig, bic_penalty, bic_score, cyclic_descent, grid_search
from .synth import GenSpec, gen_dataset

__version__ = "0.1.0"

__all__ = [
    "Assignment",
    "BICSelector",
    "Dataset",
    "FitResult",
    "GenSpec",
    "KBregman",
    "KVARs",
    "PartialMaxCertificate",
    "SolverConfig",
    "StopMode",
    "StopReason",
    "StopRule",
    "VarParams",
    "bic_penalty",
    "bic_score",
    "build_regressors",
    "check_partial_maximum",
    "cyclic_descent",
    "gen_dataset",
    "grid_search",
    "load_dataset",
    "run_kmle",
    "run_kvars",
    "save_dataset",
    "score_series",
    "tau_step",
    "theta_step",
    "validate_dataset",
]
