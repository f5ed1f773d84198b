"""Association between binary item features and a two-class outcome.

The statistic is the likelihood ratio of the feature's class-conditional
frequencies, ``P(feature | less ethical) / P(feature | more ethical)``, tested
with a two-tailed Monte-Carlo permutation test and Holm-Bonferroni correction.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .annotations import DataError

CLASSES = ("less", "more")
DEFAULT_SAMPLES = 100_000
# relative slack when comparing permuted statistics with the observed one
_TIE_RTOL = 1e-12


@dataclass(frozen=True)
class BinaryLabeledItems:
    """Items with a class (0 = less ethical, 1 = more ethical) and feature sets."""

    ids: tuple[str, ...]
    classes: np.ndarray
    features: tuple[frozenset, ...]

    def __post_init__(self):
        classes = np.asarray(self.classes, dtype=np.int8)
        if classes.ndim != 1 or len(self.ids) != classes.size or len(self.features) != classes.size:
            raise DataError("ids, classes and features must have one entry per item")
        if np.any((classes != 0) & (classes != 1)):
            raise DataError("every item needs exactly one class: less (0) or more (1)")
        classes.setflags(write=False)
        object.__setattr__(self, "classes", classes)
        object.__setattr__(self, "features", tuple(frozenset(f) for f in self.features))

    @classmethod
    def from_records(cls, records: Iterable[dict]) -> "BinaryLabeledItems":
        ids, classes, feats = [], [], []
        for i, rec in enumerate(records):
            label = str(rec.get("class", "")).lower()
            if label in ("less", "less_ethical", "worse"):
                classes.append(0)
            elif label in ("more", "more_ethical", "better"):
                classes.append(1)
            else:
                raise DataError(f"item {rec.get('id', i)!r}: class must be 'less' or 'more'")
            ids.append(str(rec.get("id", i)))
            feats.append(frozenset(str(f) for f in rec.get("features", ())))
        return cls(tuple(ids), np.array(classes), tuple(feats))

    @property
    def vocabulary(self) -> list[str]:
        return sorted(set().union(*self.features)) if self.features else []

    @property
    def class_totals(self) -> tuple[int, int]:
        more = int(self.classes.sum())
        return self.classes.size - more, more

    def feature_counts(self, feature: str) -> tuple[int, int]:
        """(occurrences among less-ethical items, occurrences among more-ethical items)."""
        present = np.fromiter((feature in f for f in self.features), bool, len(self.features))
        in_more = int(np.sum(present & (self.classes == 1)))
        return int(present.sum()) - in_more, in_more

    def all_feature_counts(self) -> dict[str, tuple[int, int]]:
        counts: dict[str, list[int]] = {}
        for cls_, feats in zip(self.classes, self.features):
            for f in feats:
                counts.setdefault(f, [0, 0])[int(cls_)] += 1
        return {f: (c[0], c[1]) for f, c in sorted(counts.items())}


def load_items(path) -> BinaryLabeledItems:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as err:
                raise DataError(f"{path}:{lineno}: malformed JSON ({err.msg})") from None
    return BinaryLabeledItems.from_records(records)


def likelihood_ratio(feature_counts: Sequence[int], class_totals: Sequence[int]) -> float:
    in_less, in_more = feature_counts
    less_total, more_total = class_totals
    if less_total < 1 or more_total < 1:
        raise DataError("class totals must be at least 1")
    if not (0 <= in_less <= less_total and 0 <= in_more <= more_total):
        raise DataError("feature counts must lie between 0 and the class totals")
    if in_less == 0 and in_more == 0:
        return 1.0
    if in_more == 0:
        return math.inf
    return (in_less / less_total) / (in_more / more_total)


def _extremity(in_less, occurrences: int, less_total: int, more_total: int) -> np.ndarray:
    """|log LR| for each possible count among less-ethical items; infinite at the edges."""
    in_less = np.asarray(in_less, dtype=float)
    in_more = occurrences - in_less
    with np.errstate(divide="ignore"):
        return np.abs(
            np.log(in_less) - np.log(less_total) - np.log(in_more) + np.log(more_total)
        )


def feature_seed(seed: int, feature: str) -> np.random.SeedSequence:
    digest = hashlib.blake2b(feature.encode("utf-8"), digest_size=16).digest()
    return np.random.SeedSequence([int(seed), int.from_bytes(digest, "little")])


def permutation_pvalue(in_less: int, in_more: int, less_total: int, more_total: int,
                       n_samples: int, rng: np.random.Generator,
                       conservative: bool = False) -> tuple[float, int]:
    """Two-tailed permutation p-value for one feature; returns ``(p, n_as_extreme)``.

    Shuffling the class labels over all items leaves the feature's count among
    less-ethical items hypergeometric, so the permuted counts are drawn from
    that law directly.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    k = in_less + in_more
    if k == 0:
        return 1.0, n_samples
    observed = _extremity(in_less, k, less_total, more_total)
    perm_less = rng.hypergeometric(k, less_total + more_total - k, less_total, size=n_samples)
    stats = _extremity(perm_less, k, less_total, more_total)
    if np.isinf(observed):
        hits = int(np.sum(np.isinf(stats)))
    else:
        hits = int(np.sum(stats >= observed * (1 - _TIE_RTOL)))
    if conservative:
        return (hits + 1) / (n_samples + 1), hits
    return hits / n_samples, hits


@dataclass(frozen=True)
class PermTestResult:
    feature: str
    lr: float
    p_raw: float
    p_adjusted: float = float("nan")
    rejected: bool = False
    better_count: int = 0
    worse_count: int = 0
    total: int = 0

    def to_dict(self) -> dict:
        return {
            "feature": self.feature,
            "p": self.p_adjusted,
            "p_raw": self.p_raw,
            "LR": None if math.isinf(self.lr) else self.lr,
            "LR_infinite": math.isinf(self.lr),
            "better": self.better_count,
            "worse": self.worse_count,
            "total": self.total,
            "rejected": self.rejected,
        }


def permutation_test(items: BinaryLabeledItems, feature: str, n_samples: int = DEFAULT_SAMPLES,
                     rng: np.random.Generator | None = None, seed: int = 0,
                     conservative: bool = False) -> PermTestResult:
    """Raw two-tailed p-value for one feature.

    Without an explicit ``rng`` the stream is derived from ``seed`` and the
    feature name, which keeps results independent of item and feature order.
    """
    counts = items.feature_counts(feature)
    if counts == (0, 0) and feature not in items.vocabulary:
        raise DataError(f"feature {feature!r} not in vocabulary")
    return _test_counts(feature, counts, items.class_totals, n_samples, rng, seed, conservative)


def _test_counts(feature, counts, totals, n_samples, rng, seed, conservative) -> PermTestResult:
    if rng is None:
        rng = np.random.default_rng(feature_seed(seed, feature))
    in_less, in_more = counts
    p, _ = permutation_pvalue(in_less, in_more, *totals, n_samples, rng, conservative)
    return PermTestResult(
        feature=feature,
        lr=likelihood_ratio(counts, totals),
        p_raw=p,
        better_count=in_more,
        worse_count=in_less,
        total=in_less + in_more,
    )


def holm_bonferroni(p_values, alpha: float = 0.05):
    """Holm step-down procedure; returns ``(rejected, p_adjusted)`` in input order."""
    p = np.asarray(p_values, dtype=float)
    if np.any((p < 0) | (p > 1)):
        raise ValueError("p-values must lie in [0, 1]")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    m = p.size
    order = np.argsort(p, kind="stable")
    sorted_p = p[order]
    factors = m - np.arange(m)
    adjusted_sorted = np.minimum(np.maximum.accumulate(factors * sorted_p), 1.0)
    passes = sorted_p <= alpha / factors
    n_reject = m if passes.all() else int(np.argmin(passes))
    rejected = np.zeros(m, dtype=bool)
    rejected[order[:n_reject]] = True
    adjusted = np.empty(m)
    adjusted[order] = adjusted_sorted
    return rejected, adjusted


def run_permutation_tests(items: BinaryLabeledItems, features: Sequence[str] | None = None,
                  n_samples: int = DEFAULT_SAMPLES, seed: int = 0, alpha: float = 0.05,
                  conservative: bool = False) -> list[PermTestResult]:
    """Permutation-test every feature, correct with Holm-Bonferroni, sort by LR."""
    all_counts = items.all_feature_counts()
    if features is None:
        features = list(all_counts)
    totals = items.class_totals
    raw = []
    for f in features:
        if f not in all_counts:
            raise DataError(f"feature {f!r} not in vocabulary")
        raw.append(_test_counts(f, all_counts[f], totals, n_samples, None, seed, conservative))
    if not raw:
        return []
    rejected, adjusted = holm_bonferroni([r.p_raw for r in raw], alpha)
    results = [
        PermTestResult(r.feature, r.lr, r.p_raw, float(pa), bool(rej), r.better_count,
                       r.worse_count, r.total)
        for r, pa, rej in zip(raw, adjusted, rejected)
    ]
    return sorted(results, key=lambda r: (r.lr, r.feature))


def report(results: list[PermTestResult], items: BinaryLabeledItems, alpha: float,
           n_samples: int, seed: int, significant_only: bool = False) -> dict:
    rows = [r.to_dict() for r in results if r.rejected or not significant_only]
    less, more = items.class_totals
    return {
        "alpha": alpha,
        "samples": n_samples,
        "seed": seed,
        "class_totals": {"less": less, "more": more},
        "n_features": len(results),
        "n_rejected": sum(r.rejected for r in results),
        "features": rows,
    }


def save_items(items: BinaryLabeledItems, path) -> None:
    with open(Path(path), "w", encoding="utf-8") as fh:
        for ex_id, c, feats in zip(items.ids, items.classes, items.features):
            fh.write(json.dumps({"id": ex_id, "class": CLASSES[int(c)],
                                 "features": sorted(feats)}) + "\n")
