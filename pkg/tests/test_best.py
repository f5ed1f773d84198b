import math

import numpy as np
import pytest
from scipy import integrate, stats

from bestscore.annotations import AnnotationMatrix, DataError
from bestscore.best import (
    best_score,
    best_scores,
    oracle_round,
    true_oracle_score,
)
from bestscore.dirichlet import DirichletPrior
from bestscore.metrics import entropy_rows


def small_dataset(seed=0, n=300, K=3, total=4):
    rng = np.random.default_rng(seed)
    theta = rng.dirichlet([0.8, 1.5, 0.5][:K], n)
    return theta, AnnotationMatrix.from_counts(rng.multinomial(total, theta))


def test_unanimous_dataset_is_perfect():
    counts = np.zeros((40, 3), dtype=int)
    counts[np.arange(40), np.arange(40) % 3] = 50
    ann = AnnotationMatrix.from_counts(counts)
    prior = DirichletPrior([0.01, 0.01, 0.01])
    rng = np.random.default_rng(0)
    assert oracle_round(ann, prior, "accuracy", rng) == 1.0
    assert best_score(ann, "accuracy", rounds=50, prior=prior).score == 1.0
    assert best_score(ann, "xentropy", rounds=50, prior=prior).score < 0.01


def test_single_row_beta_expectation():
    # E[-(log t + log(1 - t)) / 2] under Beta(2, 2), by quadrature
    expected, _ = integrate.quad(
        lambda t: -0.5 * (math.log(t) + math.log(1 - t)) * stats.beta.pdf(t, 2, 2), 0, 1)
    assert expected == pytest.approx(0.8333, abs=1e-4)
    ann = AnnotationMatrix.from_counts([[1, 1]])
    est = best_score(ann, "xentropy_soft", rounds=10_000, seed=3, prior=DirichletPrior([1, 1]))
    assert abs(est.score - expected) <= 3 * est.std_error


def test_oracle_round_deterministic():
    _, ann = small_dataset()
    prior = DirichletPrior([1, 1, 1])
    a = oracle_round(ann, prior, "macro_f1", np.random.default_rng(9))
    b = oracle_round(ann, prior, "macro_f1", np.random.default_rng(9))
    assert a == b


def test_true_oracle_examples():
    ann = AnnotationMatrix.from_counts([[1, 1]])
    assert true_oracle_score([[0.5, 0.5]], ann, "xentropy") == pytest.approx(math.log(2))
    assert true_oracle_score([[0.8, 0.2]], ann, "xentropy") == pytest.approx(
        -0.5 * (math.log(0.8) + math.log(0.2)))
    unanimous = AnnotationMatrix.from_counts([[0, 4], [3, 0]])
    assert true_oracle_score([[0, 1], [1, 0]], unanimous, "xentropy") == pytest.approx(0, abs=1e-12)
    assert true_oracle_score([[0, 1], [1, 0]], unanimous, "accuracy") == 1.0


def test_true_oracle_validates():
    ann = AnnotationMatrix.from_counts([[1, 1]])
    with pytest.raises(DataError):
        true_oracle_score([[0.6, 0.6]], ann, "xentropy")
    with pytest.raises(DataError):
        true_oracle_score([[0.2, 0.3, 0.5]], ann, "xentropy")


def test_deterministic_and_order_invariant():
    _, ann = small_dataset(1)
    prior = DirichletPrior([0.8, 1.5, 0.5])
    a = best_scores(ann, ["xentropy", "accuracy", "macro_f1", "tv"], rounds=200, seed=4, prior=prior)
    b = best_scores(ann, ["xentropy", "accuracy", "macro_f1", "tv"], rounds=200, seed=4, prior=prior)
    perm = np.random.default_rng(0).permutation(ann.n)
    c = best_scores(ann.take(perm), ["xentropy", "accuracy", "macro_f1", "tv"], rounds=200,
                    seed=4, prior=prior)
    for kind in a:
        assert a[kind] == b[kind]
        assert a[kind].score == c[kind].score
        assert a[kind].std_error == c[kind].std_error


def test_multi_metric_matches_single_metric():
    _, ann = small_dataset(2)
    joint = best_scores(ann, ["accuracy", "xentropy"], rounds=100, seed=1)
    assert best_score(ann, "accuracy", rounds=100, seed=1) == joint["accuracy"]
    assert best_score(ann, "xentropy", rounds=100, seed=1) == joint["xentropy_soft"]


def test_std_error_shrinks_like_root_rounds():
    _, ann = small_dataset(3)
    prior = DirichletPrior([0.8, 1.5, 0.5])
    ratios = []
    for seed in range(4):
        small = best_score(ann, "accuracy", rounds=500, seed=seed, prior=prior).std_error
        large = best_score(ann, "accuracy", rounds=2000, seed=seed, prior=prior).std_error
        ratios.append(small / large)
    assert np.mean(ratios) == pytest.approx(2.0, rel=0.15)


def test_best_cross_entropy_above_intrinsic_entropy():
    theta, ann = small_dataset(4, n=2000)
    est = best_score(ann, "xentropy", rounds=300, seed=0)
    assert est.score >= entropy_rows(theta).mean() - 3 * est.std_error


def test_best_close_to_true_oracle_on_prior_data():
    theta, ann = small_dataset(5, n=3000)
    est = best_score(ann, "xentropy", rounds=300, seed=0)
    truth = true_oracle_score(theta, ann, "xentropy")
    assert abs(est.score - truth) / truth < 0.03


def test_rounds_validated_and_prior_k_checked():
    _, ann = small_dataset()
    with pytest.raises(ValueError):
        best_score(ann, "accuracy", rounds=0)
    with pytest.raises(DataError):
        best_score(ann, "accuracy", rounds=10, prior=DirichletPrior([1, 1]))


def test_report_fields():
    _, ann = small_dataset()
    out = best_score(ann, "xentropy", rounds=20, seed=7).to_dict()
    assert list(out)[:6] == ["metric", "score", "std_error", "rounds", "seed", "alpha"]
    assert out["metric"] == "xentropy_soft" and out["rounds"] == 20 and out["seed"] == 7
    assert best_score(ann, "accuracy", rounds=1).std_error == 0.0
