"""Dirichlet-multinomial likelihood, empirical-Bayes prior fitting and sampling."""
from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import digamma, gammaln, logsumexp, polygamma

from .annotations import AnnotationMatrix, DataError

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITER = 500
# log-gamma differences lose all precision beyond this concentration
ALPHA_MAX = 1e8


class ZeroClassWarning(UserWarning):
    """A class was never chosen by any annotator; its concentration is driven toward 0."""


@dataclass(frozen=True, eq=False)
class DirichletPrior:
    alpha: np.ndarray

    def __post_init__(self):
        alpha = np.array(self.alpha, dtype=float)
        if alpha.ndim != 1 or alpha.size < 1:
            raise DataError("alpha must be a non-empty vector")
        if not np.all(np.isfinite(alpha)) or np.any(alpha <= 0):
            raise DataError("alpha entries must be finite and strictly positive")
        alpha.setflags(write=False)
        object.__setattr__(self, "alpha", alpha)

    @property
    def K(self) -> int:
        return self.alpha.size

    def mean(self) -> np.ndarray:
        return self.alpha / self.alpha.sum()

    def to_list(self) -> list[float]:
        return [float(a) for a in self.alpha]

    def __eq__(self, other):
        if not isinstance(other, DirichletPrior):
            return NotImplemented
        return np.array_equal(self.alpha, other.alpha)

    def __hash__(self):
        return hash(tuple(self.alpha.tolist()))


@dataclass(frozen=True)
class FitReport:
    prior: DirichletPrior
    final_nll: float
    iterations: int
    converged: bool
    gradient_norm: float
    history: tuple[float, ...] = field(default=(), repr=False, compare=False)

    def to_dict(self) -> dict:
        return {
            "alpha": self.prior.to_list(),
            "final_nll": float(self.final_nll),
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
            "gradient_norm": float(self.gradient_norm),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _as_alpha(alpha) -> np.ndarray:
    if isinstance(alpha, DirichletPrior):
        return alpha.alpha
    return DirichletPrior(alpha).alpha


def _as_counts(annotations) -> np.ndarray:
    if isinstance(annotations, AnnotationMatrix):
        return annotations.counts
    counts = np.atleast_2d(np.asarray(annotations))
    if np.any(counts < 0):
        raise DataError("negative count")
    return counts


def _check_k(alpha: np.ndarray, counts: np.ndarray) -> None:
    if counts.shape[1] != alpha.size:
        raise DataError(f"K mismatch: alpha has {alpha.size} entries, counts {counts.shape[1]}")


def dm_loglik_rows(alpha, counts) -> np.ndarray:
    """Per-row Dirichlet-multinomial log pmf, including the multinomial coefficient.

    ``alpha`` may be a single vector or one vector per row.
    """
    alpha = np.asarray(alpha, dtype=float)
    counts = np.asarray(counts, dtype=float)
    total = counts.sum(axis=-1)
    a0 = alpha.sum(axis=-1)
    return (
        gammaln(total + 1)
        - gammaln(counts + 1).sum(axis=-1)
        + gammaln(a0)
        - gammaln(total + a0)
        + (gammaln(counts + alpha) - gammaln(alpha)).sum(axis=-1)
    )


def dm_nll(alpha, annotations) -> float:
    """Negative log-likelihood (nats) of the counts under a Dirichlet-multinomial."""
    alpha = _as_alpha(alpha)
    counts = _as_counts(annotations)
    _check_k(alpha, counts)
    return float(-np.sum(dm_loglik_rows(alpha, counts)))


def dm_nll_grad(alpha, annotations) -> np.ndarray:
    """Gradient of :func:`dm_nll` with respect to alpha."""
    alpha = _as_alpha(alpha)
    counts = _as_counts(annotations)
    _check_k(alpha, counts)
    total = counts.sum(axis=1)
    a0 = alpha.sum()
    shared = np.sum(digamma(a0) - digamma(total + a0))
    per_class = np.sum(digamma(counts + alpha), axis=0) - counts.shape[0] * digamma(alpha)
    return -(shared + per_class)


# -- fitting ------------------------------------------------------------------


class _CompressedCounts:
    """Distinct count rows with multiplicities; the objective only needs these."""

    def __init__(self, counts: np.ndarray):
        rows, weights = np.unique(counts, axis=0, return_counts=True)
        self.rows = rows.astype(float)
        self.weights = weights.astype(float)
        self.totals = self.rows.sum(axis=1)

    def nll(self, alpha: np.ndarray) -> float:
        return float(-np.dot(self.weights, dm_loglik_rows(alpha, self.rows)))

    def grad(self, alpha: np.ndarray) -> np.ndarray:
        a0 = alpha.sum()
        w = self.weights
        shared = np.dot(w, digamma(a0) - digamma(self.totals + a0))
        per_class = w @ digamma(self.rows + alpha) - w.sum() * digamma(alpha)
        return -(shared + per_class)

    def hess_eta(self, alpha: np.ndarray, grad_eta: np.ndarray) -> np.ndarray:
        """Hessian of the NLL in eta = log(alpha)."""
        a0 = alpha.sum()
        w = self.weights
        shared = np.dot(w, polygamma(1, a0) - polygamma(1, self.totals + a0))
        per_class = w @ polygamma(1, self.rows + alpha) - w.sum() * polygamma(1, alpha)
        h_alpha = -shared * np.ones((alpha.size, alpha.size)) - np.diag(per_class)
        return alpha[:, None] * h_alpha * alpha[None, :] + np.diag(grad_eta)


def moment_init(counts: np.ndarray) -> np.ndarray:
    """Method-of-moments start for alpha; all ones when the moments are unusable."""
    counts = np.asarray(counts, dtype=float)
    totals = counts.sum(axis=1)
    props = counts / totals[:, None]
    m = props.mean(axis=0)
    v = props.var(axis=0)
    n_bar = totals.mean()
    # Var(Y_k/N) = m(1-m)(N+A) / (N(1+A)) for a Dirichlet-multinomial
    mm = m * (1 - m)
    with np.errstate(divide="ignore", invalid="ignore"):
        a0 = n_bar * (mm - v) / (v * n_bar - mm)
    a0 = a0[np.isfinite(a0) & (a0 > 0) & (mm > 0)]
    if a0.size == 0 or np.any(m <= 0):
        return np.ones(counts.shape[1])
    return float(np.median(a0)) * m


def fit_prior(annotations, init=None, tol: float = DEFAULT_TOL,
              max_iter: int = DEFAULT_MAX_ITER) -> FitReport:
    """Maximum-likelihood Dirichlet prior for the annotation counts.

    Optimizes over ``eta = log(alpha)`` with damped Newton steps (exact
    trigamma Hessian, shifted to be positive definite when needed) and a
    backtracking line search, so the objective never increases between
    iterates beyond rounding. Converged means the gradient norm in ``eta`` is
    at most ``tol``. When the iteration cap is hit, or no step can decrease
    the objective, the best iterate is returned with ``converged=False``.
    """
    counts = _as_counts(annotations)
    if counts.shape[0] < 2:
        raise DataError("fit_prior needs at least 2 examples")
    if tol <= 0:
        raise ValueError("tol must be positive")
    K = counts.shape[1]
    zero_classes = np.flatnonzero(counts.sum(axis=0) == 0)
    if zero_classes.size:
        warnings.warn(
            f"classes {zero_classes.tolist()} have no annotations; their alpha is driven toward 0",
            ZeroClassWarning,
            stacklevel=2,
        )
    data = _CompressedCounts(counts)
    if init is None:
        alpha0 = moment_init(counts)
    else:
        alpha0 = _as_alpha(init)
        _check_k(alpha0, counts)

    def objective(eta):
        alpha = np.exp(eta)
        if np.any(alpha <= 0) or np.any(alpha > ALPHA_MAX):
            return np.inf, None
        f = data.nll(alpha)
        if not np.isfinite(f):
            return np.inf, None
        return f, data.grad(alpha) * alpha

    eta = np.log(alpha0)
    f, g = objective(eta)
    if not np.isfinite(f):
        eta = np.zeros(K)
        f, g = objective(eta)
    history = [f]
    converged = bool(np.linalg.norm(g) <= tol)
    it = 0
    while not converged and it < max_iter:
        it += 1
        p = -_solve_shifted(data.hess_eta(np.exp(eta), g), g)
        slope = float(g @ p)
        step = 1.0
        # bound any single coordinate move so exp() stays finite
        max_move = np.max(np.abs(p))
        if max_move > 5.0:
            step = 5.0 / max_move
        # rounding noise in f near the optimum; below it only |grad| is informative
        noise = 64 * np.finfo(float).eps * max(abs(f), 1.0)
        accepted = False
        while step > 1e-20:
            eta_new = eta + step * p
            f_new, g_new = objective(eta_new)
            if np.isfinite(f_new):
                if f_new <= f + 1e-4 * step * slope:
                    accepted = True
                elif f_new <= f + noise and np.linalg.norm(g_new) < np.linalg.norm(g):
                    accepted = True
            if accepted:
                break
            step *= 0.5
        if not accepted:
            break
        eta, f, g = eta_new, f_new, g_new
        history.append(f)
        converged = bool(np.linalg.norm(g) <= tol)
    if not converged:
        logger.info("fit_prior stopped after %d iterations, |grad| = %.3g", it, np.linalg.norm(g))
    return FitReport(
        prior=DirichletPrior(np.exp(eta)),
        final_nll=f,
        iterations=it,
        converged=converged,
        gradient_norm=float(np.linalg.norm(g)),
        history=tuple(history),
    )


def _solve_shifted(H: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Solve (H + shift*I) x = g with the smallest shift making H positive definite."""
    K = H.shape[0]
    shift = 0.0
    scale = max(np.max(np.abs(np.diag(H))), 1e-12)
    for _ in range(60):
        try:
            L = np.linalg.cholesky(H + shift * np.eye(K))
        except np.linalg.LinAlgError:
            shift = max(2 * shift, 1e-8 * scale)
            continue
        return np.linalg.solve(L.T, np.linalg.solve(L, g))
    return g / scale


# -- posterior and sampling ---------------------------------------------------


def posterior_params(prior, row) -> DirichletPrior:
    alpha = _as_alpha(prior)
    row = np.asarray(row)
    if row.shape != alpha.shape:
        raise DataError(f"K mismatch: prior has {alpha.size} entries, row {row.size}")
    return DirichletPrior(alpha + row)


def dirichlet_mean(alpha) -> np.ndarray:
    alpha = np.asarray(alpha, dtype=float)
    return alpha / alpha.sum(axis=-1, keepdims=True)


def sample_gamma_rows(params: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Normalize independent gamma variates onto the simplex, row by row.

    Rows whose gamma variates all underflow (possible only when every shape is
    tiny) are redrawn in log space with the boost identity
    ``G(a) = G(a + 1) * U**(1/a)``.
    """
    params = np.asarray(params, dtype=float)
    g = rng.standard_gamma(params)
    sums = g.sum(axis=-1, keepdims=True)
    with np.errstate(invalid="ignore"):
        theta = g / sums
    bad = ~(sums[..., 0] > 0)
    if np.any(bad):
        a = np.broadcast_to(params, theta.shape)[bad]
        log_g = np.log(rng.standard_gamma(a + 1.0)) + np.log(rng.random(a.shape)) / a
        theta[bad] = np.exp(log_g - logsumexp(log_g, axis=-1, keepdims=True))
    return theta


def sample_dirichlet(params, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Draw from Dirichlet(params); one simplex vector, or ``size`` of them."""
    alpha = _as_alpha(params)
    shape = alpha.shape if size is None else (size,) + alpha.shape
    return sample_gamma_rows(np.broadcast_to(alpha, shape), rng)


def beta_marginal_pdf(prior, k: int, x) -> np.ndarray:
    """Density of class ``k``'s probability under Dirichlet(alpha): Beta(a_k, A - a_k)."""
    from scipy.stats import beta

    alpha = _as_alpha(prior)
    return beta.pdf(x, alpha[k], alpha.sum() - alpha[k])
