"""Training likelihoods over annotation counts, and temperature scaling.

All losses are summed over examples and return ``(loss, grad)`` where
``grad`` has the shape of the logits.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import digamma, log_softmax

from .annotations import AnnotationMatrix, DataError, PredictionSet
from .dirichlet import dm_loglik_rows
from .metrics import soft_xent_rows

LOG_T_BOUNDS = (-5.0, 5.0)
GOLDEN_TOL = 1e-6


def softmax(z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def softmax_point_estimate(z, ids=None) -> PredictionSet:
    """Mean class probabilities of Dirichlet(exp(z)), i.e. the softmax of z."""
    z = np.atleast_2d(np.asarray(z, dtype=float))
    if not np.all(np.isfinite(z)):
        raise DataError("logits must be finite")
    if ids is None:
        ids = [str(i) for i in range(z.shape[0])]
    return PredictionSet(tuple(ids), softmax(z), "probabilities")


def _inputs(z, annotations):
    z = np.atleast_2d(np.asarray(z, dtype=float))
    counts = annotations.counts if isinstance(annotations, AnnotationMatrix) else np.atleast_2d(annotations)
    counts = np.asarray(counts, dtype=float)
    if z.shape != counts.shape:
        raise DataError(f"K mismatch: logits {z.shape}, counts {counts.shape}")
    return z, counts


def loss_soft(z, annotations):
    """Cross-entropy against the per-example average label."""
    z, counts = _inputs(z, annotations)
    targets = counts / counts.sum(axis=1, keepdims=True)
    logp = log_softmax(z, axis=1)
    return float(-np.sum(targets * logp)), np.exp(logp) - targets


def loss_counts(z, annotations):
    """Categorical likelihood with every annotation as its own example."""
    z, counts = _inputs(z, annotations)
    totals = counts.sum(axis=1, keepdims=True)
    logp = log_softmax(z, axis=1)
    return float(-np.sum(counts * logp)), totals * np.exp(logp) - counts


def loss_dirichlet_multinomial(z, annotations):
    """Dirichlet-multinomial NLL with per-example concentrations ``exp(z)``."""
    z, counts = _inputs(z, annotations)
    alpha = np.exp(z)
    totals = counts.sum(axis=1, keepdims=True)
    a0 = alpha.sum(axis=1, keepdims=True)
    loss = -np.sum(dm_loglik_rows(alpha, counts))
    dalpha = -(digamma(a0) - digamma(totals + a0) + digamma(counts + alpha) - digamma(alpha))
    return float(loss), dalpha * alpha


LOSSES = {
    "soft": loss_soft,
    "counts": loss_counts,
    "dirichlet": loss_dirichlet_multinomial,
}


# -- temperature scaling ------------------------------------------------------


@dataclass(frozen=True)
class TemperatureScaler:
    T: float

    def __post_init__(self):
        if not (math.isfinite(self.T) and self.T > 0):
            raise ValueError("temperature must be positive and finite")


def logits_from(values, kind: str = "logits") -> np.ndarray:
    """Logits to scale; probabilities are mapped to their (clamped) logs."""
    values = np.atleast_2d(np.asarray(values, dtype=float))
    if kind == "probabilities":
        return np.log(np.maximum(values, 1e-12))
    return values


def scaled_xent(z: np.ndarray, counts: np.ndarray, T: float) -> float:
    return float(np.mean(soft_xent_rows(softmax(z / T), counts)))


def golden_section(f, lo: float, hi: float, tol: float = GOLDEN_TOL):
    """Minimize a unimodal ``f`` on ``[lo, hi]``; returns ``(x, f(x))``."""
    invphi = (math.sqrt(5) - 1) / 2
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return (c, fc) if fc <= fd else (d, fd)


def fit_temperature(z, annotations, kind: str = "logits") -> TemperatureScaler:
    """Temperature minimizing mean soft cross-entropy of ``softmax(z / T)``.

    Searches ``log T`` in [-5, 5] by golden section. The result is never worse
    on the fitting data than ``T = 1`` or either end of the bracket.
    """
    z = logits_from(z, kind)
    _, counts = _inputs(z, annotations)
    if z.shape[0] < 2:
        raise DataError("fit_temperature needs at least 2 examples")

    def objective(log_t):
        value = scaled_xent(z, counts, math.exp(log_t))
        if not math.isfinite(value):
            raise FloatingPointError(f"non-finite calibration objective at log T = {log_t}")
        return value

    best_x, best_f = golden_section(objective, *LOG_T_BOUNDS)
    for x in (0.0, *LOG_T_BOUNDS):
        fx = objective(x)
        if fx < best_f:
            best_x, best_f = x, fx
    return TemperatureScaler(math.exp(best_x))


def apply_temperature(z, scaler: TemperatureScaler | float, ids=None,
                      kind: str = "logits") -> PredictionSet:
    T = scaler.T if isinstance(scaler, TemperatureScaler) else float(scaler)
    if not T > 0:
        raise ValueError("temperature must be positive")
    z = logits_from(z, kind)
    if ids is None:
        ids = [str(i) for i in range(z.shape[0])]
    return PredictionSet(tuple(ids), softmax(z / T), "probabilities")
