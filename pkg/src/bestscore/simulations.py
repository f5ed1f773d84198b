"""Simulation checks of the BEST estimator against a known ground truth.

Each scenario draws hidden label distributions from a known prior (a single
Dirichlet or a mixture), draws annotation counts from them, and compares the
oracle's true score with the estimate computed from the counts alone.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .annotations import AnnotationMatrix
from .best import BestEstimate, best_scores, true_oracle_score
from .dirichlet import DirichletPrior, fit_prior, sample_gamma_rows

SCENARIO_METRICS = ("accuracy", "macro_f1", "xentropy_soft")

# Stand-in for the real anecdote labels: class frequencies roughly
# author 0.30, other 0.54, everybody 0.05, nobody 0.09, info 0.02.
ANECDOTES_ALPHA = (0.6, 1.1, 0.1, 0.2, 0.05)
ANECDOTES_MEDIAN_N = 8.0
# 626,714 judgments over 32,766 anecdotes; a log-normal with median 8 has this
# mean when sigma = sqrt(2 log(mean / median)).
ANECDOTES_MEAN_N = 626_714 / 32_766
ANECDOTES_SIGMA_N = math.sqrt(2 * math.log(ANECDOTES_MEAN_N / ANECDOTES_MEDIAN_N))

# Two modes with the stand-in prior's total concentration, so the misspecification
# is the multimodality alone: one mode with mean 5/7 on class 1, one with a
# uniform mean.
_MIX_TOTAL = sum(ANECDOTES_ALPHA)
MIXTURE_COMPONENTS = (
    tuple(_MIX_TOTAL * w / 14 for w in (1, 10, 1, 1, 1)),
    tuple(_MIX_TOTAL / 5 for _ in range(5)),
)
MIXTURE_WEIGHTS = (0.5, 0.5)

DEFAULT_EXAMPLES = 20_000


@dataclass(frozen=True)
class AnnotatorLaw:
    """How many annotations each example gets.

    kind "fixed" uses ``value`` annotators everywhere; "empirical" resamples
    ``totals`` with replacement; "lognormal" rounds a log-normal draw with
    median ``value`` and log-scale ``sigma`` (at least 1).
    """

    kind: str
    value: float = 3
    sigma: float = 1.0
    totals: tuple[int, ...] = ()

    def __post_init__(self):
        if self.kind not in ("fixed", "empirical", "lognormal"):
            raise ValueError(f"unknown annotator law {self.kind!r}")
        if self.kind == "fixed" and (self.value < 1 or self.value != int(self.value)):
            raise ValueError("fixed annotator count must be a positive integer")
        if self.kind == "empirical" and (not self.totals or min(self.totals) < 1):
            raise ValueError("empirical annotator law needs positive totals")
        if self.kind == "lognormal" and not (self.value > 0 and self.sigma >= 0):
            raise ValueError("log-normal law needs median > 0 and sigma >= 0")

    def draw(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.kind == "fixed":
            return np.full(n, int(self.value), dtype=np.int64)
        if self.kind == "empirical":
            return rng.choice(np.asarray(self.totals, dtype=np.int64), size=n, replace=True)
        raw = rng.lognormal(math.log(self.value), self.sigma, size=n)
        return np.maximum(np.rint(raw), 1).astype(np.int64)

    def to_dict(self) -> dict:
        if self.kind == "fixed":
            return {"kind": "fixed", "annotators": int(self.value)}
        if self.kind == "empirical":
            return {"kind": "empirical", "n_reference": len(self.totals),
                    "median": float(np.median(self.totals))}
        return {"kind": "lognormal", "median": self.value, "sigma": self.sigma}


@dataclass(frozen=True)
class ScenarioConfig:
    kind: str
    K: int
    n_examples: int
    annotator_law: AnnotatorLaw
    components: tuple[DirichletPrior, ...]
    weights: tuple[float, ...] = (1.0,)
    rounds: int = 10_000
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("fitted_prior", "fixed_annotators", "mixture_prior"):
            raise ValueError(f"unknown scenario kind {self.kind!r}")
        if not self.components:
            raise ValueError("at least one prior component is required")
        if len(self.weights) != len(self.components):
            raise ValueError("one mixture weight per component is required")
        w = np.asarray(self.weights, dtype=float)
        if np.any(w < 0) or abs(w.sum() - 1) > 1e-9:
            raise ValueError("mixture weights must be nonnegative and sum to 1")
        if any(c.K != self.K for c in self.components):
            raise ValueError("every component must have K entries")
        if self.n_examples < 2:
            raise ValueError("n_examples must be at least 2")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "K": self.K,
            "n_examples": self.n_examples,
            "annotator_law": self.annotator_law.to_dict(),
            "components": [c.to_list() for c in self.components],
            "weights": list(self.weights),
            "rounds": self.rounds,
            "seed": self.seed,
        }


def anecdotes_config(reference: AnnotationMatrix | None = None, n_examples: int | None = None,
                     rounds: int = 10_000, seed: int = 0) -> ScenarioConfig:
    """Prior fitted to the real data when given, otherwise the documented stand-in."""
    if reference is not None:
        prior = fit_prior(reference).prior
        law = AnnotatorLaw("empirical", totals=tuple(int(t) for t in reference.totals))
        n = n_examples or reference.n
    else:
        prior = DirichletPrior(ANECDOTES_ALPHA)
        law = AnnotatorLaw("lognormal", ANECDOTES_MEDIAN_N, ANECDOTES_SIGMA_N)
        n = n_examples or DEFAULT_EXAMPLES
    return ScenarioConfig("fitted_prior", prior.K, n, law, (prior,), (1.0,), rounds, seed)


def annotators_config(annotators: int = 3, n_examples: int = DEFAULT_EXAMPLES,
                      rounds: int = 10_000, seed: int = 0, alpha=ANECDOTES_ALPHA) -> ScenarioConfig:
    prior = DirichletPrior(alpha)
    return ScenarioConfig("fixed_annotators", prior.K, n_examples,
                          AnnotatorLaw("fixed", annotators), (prior,), (1.0,), rounds, seed)


def mixture_config(n_examples: int = DEFAULT_EXAMPLES, rounds: int = 10_000, seed: int = 0,
                   components=MIXTURE_COMPONENTS, weights=MIXTURE_WEIGHTS,
                   annotator_law: AnnotatorLaw | None = None) -> ScenarioConfig:
    comps = tuple(DirichletPrior(c) for c in components)
    if annotator_law is None:
        annotator_law = AnnotatorLaw("lognormal", ANECDOTES_MEDIAN_N, ANECDOTES_SIGMA_N)
    return ScenarioConfig("mixture_prior", comps[0].K, n_examples, annotator_law,
                          comps, tuple(weights), rounds, seed)


SCENARIOS = {
    "anecdotes": anecdotes_config,
    "annotators": annotators_config,
    "mixture": mixture_config,
}


def generate_dataset(config: ScenarioConfig, rng: np.random.Generator):
    """Hidden label distributions and the annotation counts drawn from them."""
    n = config.n_examples
    which = rng.choice(len(config.components), size=n, p=np.asarray(config.weights))
    params = np.stack([c.alpha for c in config.components])[which]
    thetas = sample_gamma_rows(params, rng)
    totals = config.annotator_law.draw(n, rng)
    counts = rng.multinomial(totals, thetas)
    width = len(str(n - 1))
    ids = tuple(f"sim-{i:0{width}d}" for i in range(n))
    return thetas, AnnotationMatrix(ids, counts)


@dataclass(frozen=True)
class MetricComparison:
    true_oracle: float
    best_estimate: BestEstimate
    relative_error: float
    absolute: bool = False

    def to_dict(self) -> dict:
        out = {
            "true_oracle": self.true_oracle,
            "best": self.best_estimate.score,
            "std_error": self.best_estimate.std_error,
            "relative_error": self.relative_error,
        }
        if self.absolute:
            out["error_is_absolute"] = True
        return out


@dataclass(frozen=True)
class ScenarioReport:
    config: ScenarioConfig
    results: dict[str, MetricComparison]
    fitted_alpha: tuple[float, ...] = field(default=())

    def to_dict(self) -> dict:
        return {
            "scenario": self.config.to_dict(),
            "fitted_alpha": list(self.fitted_alpha),
            "metrics": {k: v.to_dict() for k, v in self.results.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def compare(true_value: float, estimate: BestEstimate) -> MetricComparison:
    diff = abs(estimate.score - true_value)
    if true_value == 0:
        return MetricComparison(true_value, estimate, diff, absolute=True)
    return MetricComparison(true_value, estimate, diff / abs(true_value))


def run_scenario(config: ScenarioConfig, metrics=SCENARIO_METRICS) -> ScenarioReport:
    """Simulate a dataset and compare BEST (fitted on counts only) with the true oracle."""
    rng = np.random.default_rng(config.seed)
    thetas, annotations = generate_dataset(config, rng)
    # the estimator only ever sees the counts
    prior = fit_prior(annotations).prior
    estimates = best_scores(annotations, metrics, config.rounds, config.seed, prior)
    results = {}
    for kind, est in estimates.items():
        results[kind] = compare(true_oracle_score(thetas, annotations, kind), est)
    return ScenarioReport(config, results, tuple(prior.to_list()))
