"""Evaluate classifiers against per-example annotation counts.

The core pieces: a Dirichlet prior fitted to the counts, the BEST estimate of
the oracle classifier's score, soft-label metrics and losses, temperature
scaling, simulation checks, and divisiveness statistics.
"""
from .annotations import (
    AlignedEval,
    AnnotationMatrix,
    DataError,
    PredictionSet,
    align,
    load_annotations,
    load_predictions,
)
from .best import BestEstimate, best_score, best_scores
from .dirichlet import (
    DirichletPrior,
    FitReport,
    dirichlet_mean,
    dm_nll,
    dm_nll_grad,
    fit_prior,
    posterior_params,
    sample_dirichlet,
)
from .losses import (
    TemperatureScaler,
    apply_temperature,
    fit_temperature,
    loss_counts,
    loss_dirichlet_multinomial,
    loss_soft,
    softmax,
)
from .metrics import MetricSpec, MetricValue, evaluate

__version__ = "0.1.0"
