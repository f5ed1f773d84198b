"""Estimating the oracle (Bayes optimal) classifier's score from annotation counts.

The oracle predicts each example's true label distribution. That distribution
is unknown, so the estimator fits a Dirichlet prior to all the counts, samples
per-example distributions from the conjugate posterior, scores those samples
as predictions, and averages the score over many rounds.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .annotations import AnnotationMatrix, DataError
from .dirichlet import DirichletPrior, fit_prior, sample_gamma_rows
from .metrics import (
    LOG_CLAMP,
    MetricSpec,
    argmax_lowest,
    confusion_matrix,
    macro_f1_from_confusion,
    majority_label,
    soft_xent_rows,
    tv_rows,
)

DEFAULT_ROUNDS = 10_000
MAX_ROUNDS = 10**7


@dataclass(frozen=True)
class BestEstimate:
    metric: MetricSpec
    score: float
    std_error: float
    rounds: int
    seed: int
    prior: DirichletPrior

    def to_dict(self) -> dict:
        out = {
            "metric": self.metric.kind,
            "score": float(self.score),
            "std_error": float(self.std_error),
            "rounds": int(self.rounds),
            "seed": int(self.seed),
            "alpha": self.prior.to_list(),
        }
        if self.metric.kind == "xentropy_soft":
            out["scale"] = "nats, mean per example"
        return out


def _spec(metric, K: int) -> MetricSpec:
    spec = metric if isinstance(metric, MetricSpec) else MetricSpec(metric, K)
    if spec.K != K:
        raise DataError(f"K mismatch: metric has K={spec.K}, annotations {K}")
    return spec


def _prior_for(annotations: AnnotationMatrix, prior) -> DirichletPrior:
    if prior is None:
        return fit_prior(annotations).prior
    prior = prior if isinstance(prior, DirichletPrior) else DirichletPrior(prior)
    if prior.K != annotations.K:
        raise DataError(f"K mismatch: prior has {prior.K} entries, annotations {annotations.K}")
    return prior


def score_predictions(probs: np.ndarray, counts: np.ndarray, spec: MetricSpec) -> float:
    """Score distributional predictions; hard metrics use argmax vs majority label."""
    if spec.kind == "xentropy_soft":
        return float(np.mean(soft_xent_rows(probs, counts)))
    if spec.kind == "total_variation":
        return float(np.mean(tv_rows(probs, counts)))
    pred = argmax_lowest(probs)
    gold = majority_label(counts)
    if spec.kind == "accuracy":
        return float(np.mean(pred == gold))
    return float(macro_f1_from_confusion(confusion_matrix(pred, gold, spec.K)))


def oracle_round(annotations: AnnotationMatrix, prior, metric, rng: np.random.Generator) -> float:
    """One round: draw every example's distribution from its posterior and score it."""
    spec = _spec(metric, annotations.K)
    prior = _prior_for(annotations, prior)
    theta = sample_gamma_rows(prior.alpha + annotations.counts, rng)
    return score_predictions(theta, annotations.counts, spec)


def true_oracle_score(thetas, annotations: AnnotationMatrix, metric) -> float:
    """Score of the oracle that knows each example's true label distribution."""
    thetas = np.asarray(thetas, dtype=float)
    spec = _spec(metric, annotations.K)
    if thetas.shape != annotations.counts.shape:
        raise DataError(f"K mismatch: thetas {thetas.shape}, counts {annotations.counts.shape}")
    if np.any(thetas < 0) or np.any(np.abs(thetas.sum(axis=1) - 1) > 1e-9):
        raise DataError("thetas rows must lie on the probability simplex")
    return score_predictions(thetas, annotations.counts, spec)


def example_seed(seed: int, example_id: str) -> np.random.SeedSequence:
    """Random stream for one example, keyed by run seed and a stable hash of its id."""
    digest = hashlib.blake2b(example_id.encode("utf-8"), digest_size=16).digest()
    return np.random.SeedSequence([int(seed), int.from_bytes(digest, "little")])


class _RoundAccumulator:
    """Per-round sufficient statistics, summed example by example."""

    def __init__(self, spec: MetricSpec, rounds: int):
        self.spec = spec
        self.n = 0
        if spec.kind == "macro_f1":
            self.conf = np.zeros((rounds, spec.K, spec.K), dtype=np.int64)
            self._rows = np.arange(rounds)
        else:
            self.total = np.zeros(rounds)

    def add(self, draws: np.ndarray, row: np.ndarray, gold: int, pred: np.ndarray | None):
        kind = self.spec.kind
        self.n += 1
        if kind == "xentropy_soft":
            nz = np.flatnonzero(row)
            target = row[nz] / row.sum()
            self.total -= np.log(np.maximum(draws[:, nz], LOG_CLAMP)) @ target
        elif kind == "total_variation":
            self.total += 0.5 * np.abs(draws - row / row.sum()).sum(axis=1)
        elif kind == "accuracy":
            self.total += pred == gold
        else:
            self.conf[self._rows, gold, pred] += 1

    def scores(self) -> np.ndarray:
        if self.spec.kind == "macro_f1":
            return macro_f1_from_confusion(self.conf)
        return self.total / self.n


def best_round_scores(annotations: AnnotationMatrix, metrics: Sequence, rounds: int,
                      seed: int, prior: DirichletPrior) -> dict[str, np.ndarray]:
    """Per-round oracle scores for several metrics, sharing the posterior draws.

    Examples are visited in id order and each draws all of its rounds from its
    own stream, so results do not depend on row order.
    """
    specs = [_spec(m, annotations.K) for m in metrics]
    accs = [_RoundAccumulator(s, rounds) for s in specs]
    need_pred = any(s.is_hard for s in specs)
    order = sorted(range(annotations.n), key=lambda i: annotations.ids[i])
    shape = (rounds, annotations.K)
    for i in order:
        row = annotations.counts[i]
        rng = np.random.default_rng(example_seed(seed, annotations.ids[i]))
        draws = sample_gamma_rows(np.broadcast_to(prior.alpha + row, shape), rng)
        pred = argmax_lowest(draws) if need_pred else None
        gold = int(np.argmax(row))
        for acc in accs:
            acc.add(draws, row, gold, pred)
    return {s.kind: acc.scores() for s, acc in zip(specs, accs)}


def best_scores(annotations: AnnotationMatrix, metrics: Iterable, rounds: int = DEFAULT_ROUNDS,
                seed: int = 0, prior=None) -> dict[str, BestEstimate]:
    """BEST estimates for several metrics from one set of posterior draws."""
    if not 1 <= rounds <= MAX_ROUNDS:
        raise ValueError(f"rounds must be in [1, {MAX_ROUNDS}]")
    metrics = list(metrics)
    prior = _prior_for(annotations, prior)
    per_round = best_round_scores(annotations, metrics, rounds, seed, prior)
    out = {}
    for m in metrics:
        spec = _spec(m, annotations.K)
        scores = per_round[spec.kind]
        se = float(np.std(scores, ddof=1) / np.sqrt(rounds)) if rounds > 1 else 0.0
        out[spec.kind] = BestEstimate(spec, float(np.mean(scores)), se, rounds, seed, prior)
    return out


def best_score(annotations: AnnotationMatrix, metric, rounds: int = DEFAULT_ROUNDS,
               seed: int = 0, prior=None) -> BestEstimate:
    """Monte-Carlo estimate of the oracle's score on ``annotations``.

    If ``prior`` is omitted it is fitted to the same annotations by maximum
    likelihood. Deterministic given ``seed``.
    """
    (est,) = best_scores(annotations, [metric], rounds, seed, prior).values()
    return est
