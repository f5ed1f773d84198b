"""Distributional and hard-label metrics over annotation counts."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .annotations import AlignedEval, DataError

LOG_CLAMP = 1e-12

METRIC_KINDS = ("xentropy_soft", "accuracy", "macro_f1", "total_variation")
HARD_METRICS = ("accuracy", "macro_f1")
_ALIASES = {
    "xentropy": "xentropy_soft",
    "cross_entropy": "xentropy_soft",
    "xent": "xentropy_soft",
    "f1": "macro_f1",
    "macro-f1": "macro_f1",
    "tv": "total_variation",
    "total-variation": "total_variation",
}


@dataclass(frozen=True)
class MetricSpec:
    kind: str
    K: int

    def __post_init__(self):
        kind = _ALIASES.get(self.kind, self.kind)
        if kind not in METRIC_KINDS:
            raise ValueError(f"unknown metric {self.kind!r}; choose from {', '.join(METRIC_KINDS)}")
        if self.K < 2:
            raise ValueError("K must be at least 2")
        object.__setattr__(self, "kind", kind)

    @property
    def is_hard(self) -> bool:
        return self.kind in HARD_METRICS


def canonical_metric(name: str) -> str:
    return MetricSpec(name, 2).kind


@dataclass(frozen=True)
class MetricValue:
    value: float
    per_example: np.ndarray | None = None

    def to_dict(self, metric: str) -> dict:
        n = None if self.per_example is None else int(self.per_example.size)
        return {"metric": metric, "value": float(self.value), "n": n}


# -- row-level kernels shared with the oracle estimator ------------------------


def soft_xent_rows(probs, counts) -> np.ndarray:
    """Per-row cross-entropy (nats) of predictions against normalized counts."""
    counts = np.asarray(counts, dtype=float)
    targets = counts / counts.sum(axis=-1, keepdims=True)
    return -np.sum(targets * np.log(np.maximum(probs, LOG_CLAMP)), axis=-1)


def tv_rows(probs, counts) -> np.ndarray:
    counts = np.asarray(counts, dtype=float)
    targets = counts / counts.sum(axis=-1, keepdims=True)
    return 0.5 * np.abs(np.asarray(probs) - targets).sum(axis=-1)


def entropy_rows(dist) -> np.ndarray:
    dist = np.asarray(dist, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(dist > 0, dist * np.log(dist), 0.0)
    return -terms.sum(axis=-1)


def argmax_lowest(values) -> np.ndarray:
    """Row-wise argmax; ``np.argmax`` already resolves ties to the lowest index."""
    return np.argmax(np.asarray(values), axis=-1)


def majority_label(row) -> int | np.ndarray:
    """Majority class of a count vector (or of each row), ties to the lowest index."""
    row = np.asarray(row)
    if row.ndim == 1:
        if row.sum() < 1:
            raise DataError("majority_label needs at least one annotation")
        return int(np.argmax(row))
    return argmax_lowest(row)


def confusion_matrix(pred_labels, gold_labels, K: int) -> np.ndarray:
    """``C[g, p]`` counts examples with gold class g predicted as p."""
    pred = np.asarray(pred_labels, dtype=int)
    gold = np.asarray(gold_labels, dtype=int)
    return np.bincount(gold * K + pred, minlength=K * K).reshape(K, K)


def macro_f1_from_confusion(conf: np.ndarray) -> np.ndarray:
    """Macro-F1 from one confusion matrix, or a stack of them on leading axes.

    F1 for class k is ``2 TP / (2 TP + FP + FN)``; a class with no gold and no
    predicted instances scores 0.
    """
    conf = np.asarray(conf, dtype=float)
    tp = np.diagonal(conf, axis1=-2, axis2=-1)
    gold = conf.sum(axis=-1)
    pred = conf.sum(axis=-2)
    denom = gold + pred
    f1 = np.divide(2 * tp, denom, out=np.zeros_like(tp), where=denom > 0)
    return f1.mean(axis=-1)


# -- public metrics -----------------------------------------------------------


def cross_entropy_soft(ev: AlignedEval) -> MetricValue:
    per = soft_xent_rows(ev.probs, ev.annotations.counts)
    return MetricValue(float(np.mean(per)), per)


def total_variation(ev: AlignedEval) -> MetricValue:
    per = tv_rows(ev.probs, ev.annotations.counts)
    return MetricValue(float(np.mean(per)), per)


def _check_labels(pred_labels, gold_labels):
    pred = np.asarray(pred_labels, dtype=int)
    gold = np.asarray(gold_labels, dtype=int)
    if pred.shape != gold.shape:
        raise DataError(f"length mismatch: {pred.size} predictions vs {gold.size} gold labels")
    return pred, gold


def accuracy(pred_labels, gold_labels) -> MetricValue:
    pred, gold = _check_labels(pred_labels, gold_labels)
    hits = (pred == gold).astype(float)
    return MetricValue(float(hits.mean()), hits)


def macro_f1(pred_labels, gold_labels, K: int) -> MetricValue:
    pred, gold = _check_labels(pred_labels, gold_labels)
    for name, labels in (("prediction", pred), ("gold", gold)):
        if labels.size and (labels.min() < 0 or labels.max() >= K):
            raise DataError(f"{name} label out of range [0, {K})")
    return MetricValue(float(macro_f1_from_confusion(confusion_matrix(pred, gold, K))))


def evaluate(ev: AlignedEval, metric: str | MetricSpec) -> MetricValue:
    """Score aligned predictions with the named metric.

    Hard metrics compare the predicted argmax with the majority label.
    """
    spec = metric if isinstance(metric, MetricSpec) else MetricSpec(metric, ev.annotations.K)
    if spec.K != ev.annotations.K:
        raise DataError(f"K mismatch: metric has K={spec.K}, data has {ev.annotations.K}")
    if spec.kind == "xentropy_soft":
        return cross_entropy_soft(ev)
    if spec.kind == "total_variation":
        return total_variation(ev)
    pred = argmax_lowest(ev.probs)
    gold = majority_label(ev.annotations.counts)
    if spec.kind == "accuracy":
        return accuracy(pred, gold)
    return macro_f1(pred, gold, spec.K)
