"""Latent trait analysis of dense binary annotations.

Each annotator's responses to m binary questions are modeled as independent
Bernoulli draws with logits ``W z + b`` given a Gaussian latent ``z``; the
parameters are fitted by maximizing the marginal likelihood. Goodness of fit is
reported as deviance against the saturated model (empirical frequencies of
whole response vectors) and as the percentage of the independent model's
deviance that the latent model explains.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy.optimize import minimize
from scipy.special import expit, logsumexp

from .annotations import DataError

DEFAULT_NODES = 20
MC_DRAWS = 1000
_FREQ_CLIP = 1e-9


@dataclass(frozen=True)
class ResponseTable:
    responses: np.ndarray
    dropped: int = 0

    def __post_init__(self):
        y = np.asarray(self.responses)
        if y.ndim != 2:
            raise DataError("responses must be a 2-d table")
        if np.any((y != 0) & (y != 1)):
            raise DataError("responses must be 0 or 1")
        y = y.astype(np.int8)
        if y.shape[1] < 2:
            raise DataError("at least 2 questions are required")
        if np.unique(y, axis=0).shape[0] < 2:
            raise DataError("at least 2 distinct response vectors are required")
        y.setflags(write=False)
        object.__setattr__(self, "responses", y)

    @classmethod
    def from_rows(cls, rows) -> "ResponseTable":
        """Build from rows that may contain missing entries (None, NaN or ''); those rows are dropped."""
        keep, dropped = [], 0
        for row in rows:
            vals = []
            for v in row:
                if v is None or v == "" or (isinstance(v, float) and math.isnan(v)):
                    vals = None
                    break
                vals.append(int(float(v)))
            if vals is None:
                dropped += 1
            else:
                keep.append(vals)
        if not keep:
            raise DataError("no complete response rows")
        return cls(np.array(keep), dropped)

    @property
    def n(self) -> int:
        return self.responses.shape[0]

    @property
    def m(self) -> int:
        return self.responses.shape[1]

    def patterns(self):
        """Distinct response vectors and their multiplicities."""
        pats, counts = np.unique(self.responses, axis=0, return_counts=True)
        return pats.astype(float), counts.astype(float)


def load_responses(path) -> ResponseTable:
    """CSV of annotator rows with 0/1 entries; a non-numeric first row is a header."""
    with open(path, encoding="utf-8", newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if rows and not all(_numeric_or_blank(v) for v in rows[0]):
        rows = rows[1:]
    return ResponseTable.from_rows(rows)


def _numeric_or_blank(v: str) -> bool:
    if v.strip() == "":
        return True
    try:
        float(v)
    except ValueError:
        return False
    return True


def standard_grid(d: int, nodes: int = DEFAULT_NODES, rng: np.random.Generator | None = None):
    """Points and log-weights integrating against N(0, I_d).

    Tensor-product Gauss-Hermite for d <= 2; for larger d, antithetic Monte-Carlo
    draws (so the grid stays symmetric under z -> -z).
    """
    if d == 0:
        return np.zeros((1, 0)), np.zeros(1)
    if d <= 2:
        x, w = hermegauss(nodes)
        w = w / math.sqrt(2 * math.pi)
        grids = np.meshgrid(*([x] * d), indexing="ij")
        points = np.stack([g.ravel() for g in grids], axis=1)
        weights = np.prod(np.stack(np.meshgrid(*([w] * d), indexing="ij")), axis=0).ravel()
        return points, np.log(weights)
    rng = rng or np.random.default_rng(0)
    half = rng.standard_normal((MC_DRAWS // 2, d))
    points = np.concatenate([half, -half])
    return points, np.full(points.shape[0], -math.log(points.shape[0]))


@dataclass(frozen=True)
class LatentTraitModel:
    """Loadings ``W`` (m x d), intercepts ``b`` and the standard integration grid."""

    W: np.ndarray
    b: np.ndarray
    points: np.ndarray = field(repr=False)
    log_weights: np.ndarray = field(repr=False)
    converged: bool = True
    loglik: float = float("nan")

    @property
    def d(self) -> int:
        return self.W.shape[1]

    @property
    def m(self) -> int:
        return self.b.size

    def with_grid(self, points, log_weights) -> "LatentTraitModel":
        return LatentTraitModel(self.W, self.b, points, log_weights, self.converged)


@dataclass(frozen=True)
class SaturatedModel:
    """Assigns each observed response vector its empirical frequency."""

    patterns: np.ndarray
    probs: np.ndarray

    @classmethod
    def fit(cls, responses: ResponseTable) -> "SaturatedModel":
        pats, counts = responses.patterns()
        return cls(pats, counts / counts.sum())


def posterior_modes(W, b, pats, max_iter: int = 100):
    """Mode and negative Hessian of log p(y, z) in z for every pattern (batched Newton)."""
    U, d = pats.shape[0], W.shape[1]
    z = np.zeros((U, d))
    eye = np.eye(d)
    for _ in range(max_iter):
        s = expit(z @ W.T + b)
        g = (pats - s) @ W - z
        prec = eye + np.einsum("uq,qi,qj->uij", s * (1 - s), W, W)
        step = np.linalg.solve(prec, g[..., None])[..., 0]
        z = z + step
        if np.max(np.abs(step)) < 1e-12:
            break
    s = expit(z @ W.T + b)
    prec = eye + np.einsum("uq,qi,qj->uij", s * (1 - s), W, W)
    return z, prec


def adaptive_grid(W, b, pats, points, log_weights):
    """Standard grid moved to each pattern's posterior mode and scaled by its curvature.

    Returns per-pattern points (U, G, d) and log-weights (U, G) integrating
    against N(0, I).
    """
    d = W.shape[1]
    U = pats.shape[0]
    if d == 0:
        return np.zeros((U, 1, 0)), np.zeros((U, 1))
    mode, prec = posterior_modes(W, b, pats)
    L = np.linalg.cholesky(np.linalg.inv(prec))  # (U, d, d)
    z = mode[:, None, :] + np.einsum("uij,gj->ugi", L, points)
    log_det = np.log(np.diagonal(L, axis1=1, axis2=2)).sum(axis=1)
    log_w = (
        log_weights[None, :]
        - 0.5 * np.sum(z * z, axis=2)
        + 0.5 * np.sum(points * points, axis=1)[None, :]
        + log_det[:, None]
    )
    return z, log_w


def _pattern_logliks(W, b, z, log_w, pats):
    """log p(pattern) on a per-pattern grid, plus what the gradient needs."""
    logits = z @ W.T + b  # (U, G, m)
    tail = np.exp(-np.abs(logits))
    softplus = np.maximum(logits, 0.0) + np.log1p(tail)
    # log Bernoulli(y; sigmoid(x)) = y x - log(1 + e^x)
    joint = np.matmul(logits, pats[:, :, None])[..., 0] - softplus.sum(axis=2) + log_w
    ll = logsumexp(joint, axis=1)
    return ll, joint, logits, tail


def _grid_for(model, pats):
    return adaptive_grid(model.W, model.b, pats, model.points, model.log_weights)


def marginal_loglik(model, responses: ResponseTable) -> float:
    """Log-likelihood (nats) of all annotators' response vectors."""
    if isinstance(model, SaturatedModel):
        return saturated_loglik(responses)
    if model.m != responses.m:
        raise DataError(f"model has {model.m} questions, responses {responses.m}")
    pats, counts = responses.patterns()
    z, log_w = _grid_for(model, pats)
    ll = _pattern_logliks(model.W, model.b, z, log_w, pats)[0]
    return float(counts @ ll)


def saturated_loglik(responses: ResponseTable) -> float:
    if responses.n == 0:
        raise DataError("saturated likelihood is undefined for empty responses")
    _, counts = responses.patterns()
    return float(counts @ np.log(counts / counts.sum()))


def _negll_and_grad(theta, pats, counts, z, log_w, m, d):
    W = theta[: m * d].reshape(m, d)
    b = theta[m * d:]
    ll, joint, logits, tail = _pattern_logliks(W, b, z, log_w, pats)
    resp = np.exp(joint - ll[:, None]) * counts[:, None]  # (U, G)
    sigma = np.where(logits >= 0, 1.0, tail) / (1.0 + tail)
    # d ll / d logit_ugq = c_u r_ug (y_uq - sigma_ugq), grid held fixed
    dlogit = resp[..., None] * (pats[:, None, :] - sigma)
    gW = dlogit.reshape(-1, m).T @ z.reshape(-1, d)
    gb = dlogit.sum(axis=(0, 1))
    return -float(counts @ ll), -np.concatenate([gW.ravel(), gb])


def null_model(responses: ResponseTable) -> LatentTraitModel:
    freq = np.clip(responses.responses.mean(axis=0), _FREQ_CLIP, 1 - _FREQ_CLIP)
    b = np.log(freq) - np.log1p(-freq)
    points, log_weights = standard_grid(0)
    model = LatentTraitModel(np.zeros((responses.m, 0)), b, points, log_weights)
    return LatentTraitModel(model.W, b, points, log_weights, True,
                            marginal_loglik(model, responses))


def _sign_convention(W: np.ndarray) -> np.ndarray:
    W = W.copy()
    for j in range(W.shape[1]):
        nz = np.flatnonzero(np.abs(W[:, j]) > 0)
        if nz.size and W[nz[0], j] < 0:
            W[:, j] = -W[:, j]
    return W


def fit_latent(responses: ResponseTable, d: int, quadrature_nodes: int = DEFAULT_NODES,
               rng: np.random.Generator | None = None, init: LatentTraitModel | None = None,
               max_iter: int = 2000) -> LatentTraitModel:
    """Maximum marginal likelihood fit of a d-trait model.

    ``d = 0`` is the independent model. ``init`` may be a fitted model with
    fewer traits; its loadings are kept and new columns start near zero, which
    makes fits nested in d. The integration grid is re-centred on every
    pattern's posterior mode at each evaluation (adaptive Gauss-Hermite).
    """
    if d < 0:
        raise ValueError("d must be nonnegative")
    if d > responses.m:
        raise DataError(f"d = {d} exceeds the number of questions ({responses.m})")
    if d == 0:
        return null_model(responses)
    if d <= 2 and quadrature_nodes < 5:
        raise ValueError("use at least 5 quadrature nodes per dimension")
    rng = rng if rng is not None else np.random.default_rng(0)
    points, log_weights = standard_grid(d, quadrature_nodes, rng)
    m = responses.m
    W = rng.normal(0.0, 0.1, size=(m, d))
    if init is not None and init.d > 0:
        if init.m != m or init.d > d:
            raise ValueError("init must share m and have at most d traits")
        W[:, : init.d] = init.W
        W[:, init.d:] *= 0.1
        b = np.array(init.b)
    else:
        b = null_model(responses).b
    pats, counts = responses.patterns()
    theta = np.concatenate([W.ravel(), b])

    def objective(th):
        # The grid follows the parameters; its own derivative is ignored, which
        # is exact for the integral and only quadrature-error wrong for the sum.
        Wt, bt = th[: m * d].reshape(m, d), th[m * d:]
        z, log_w = adaptive_grid(Wt, bt, pats, points, log_weights)
        return _negll_and_grad(th, pats, counts, z, log_w, m, d)

    res = minimize(objective, theta, jac=True, method="L-BFGS-B",
                   options={"maxiter": max_iter, "ftol": 1e-12, "gtol": 1e-5, "maxcor": 20})
    theta = res.x
    # a stalled line search near the optimum is acceptable when the gradient is small
    success = bool(res.success) or float(np.max(np.abs(res.jac))) < 1e-2
    W = _sign_convention(theta[: m * d].reshape(m, d))
    b = theta[m * d:]
    model = LatentTraitModel(W, b, points, log_weights, success)
    return LatentTraitModel(W, b, points, log_weights, success, marginal_loglik(model, responses))


@dataclass(frozen=True)
class DevianceReport:
    loglik_model: float
    loglik_saturated: float
    loglik_null: float
    deviance: float
    deviance_null: float
    percent_explained: float
    percent_residual: float

    def to_dict(self) -> dict:
        return {k: float(v) for k, v in self.__dict__.items()}


def deviance(model, responses: ResponseTable) -> DevianceReport:
    """Deviance against the saturated model, and the share of the null deviance explained."""
    ll_sat = saturated_loglik(responses)
    ll_model = marginal_loglik(model, responses)
    ll_null = marginal_loglik(null_model(responses), responses)
    dev = 2 * (ll_sat - ll_model)
    dev_null = 2 * (ll_sat - ll_null)
    explained = 100.0 * (1 - dev / dev_null) if dev_null > 0 else 100.0
    return DevianceReport(ll_model, ll_sat, ll_null, dev, dev_null, explained, 100.0 - explained)


def annotator_scores(model: LatentTraitModel, responses: ResponseTable) -> np.ndarray:
    """Posterior mean of each annotator's latent traits."""
    y = responses.responses.astype(float)
    z, log_w = _grid_for(model, y)
    ll, joint, _, _ = _pattern_logliks(model.W, model.b, z, log_w, y)
    post = np.exp(joint - ll[:, None])
    return np.einsum("ug,ugi->ui", post, z)


def simulate_responses(n: int, W, b, rng: np.random.Generator) -> ResponseTable:
    """Binary responses from a latent trait model with known parameters."""
    W = np.atleast_2d(np.asarray(W, dtype=float))
    z = rng.standard_normal((n, W.shape[1]))
    probs = expit(z @ W.T + np.asarray(b, dtype=float))
    return ResponseTable((rng.random(probs.shape) < probs).astype(np.int8))
