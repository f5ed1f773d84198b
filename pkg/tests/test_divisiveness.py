import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from bestscore.annotations import DataError
from bestscore.divisiveness import (
    BinaryLabeledItems,
    holm_bonferroni,
    likelihood_ratio,
    load_items,
    permutation_pvalue,
    permutation_test,
    run_permutation_tests,
    save_items,
)


def make_items(classes, present, name="f"):
    feats = [{name} if p else set() for p in present]
    return BinaryLabeledItems(tuple(str(i) for i in range(len(classes))), np.asarray(classes), tuple(feats))


def exact_pvalue(in_less, in_more, less_total, more_total):
    """Two-tailed p-value by summing the hypergeometric law over outcomes at least as extreme."""
    k = in_less + in_more
    law = stats.hypergeom(less_total + more_total, less_total, k)

    def extremity(x):
        y = k - x
        if x == 0 and y == 0:
            return 0.0
        if x == 0 or y == 0:
            return math.inf
        return abs(math.log((x / less_total) / (y / more_total)))

    obs = extremity(in_less)
    lo, hi = max(0, k - more_total), min(k, less_total)
    return sum(law.pmf(x) for x in range(lo, hi + 1)
               if extremity(x) >= obs * (1 - 1e-12) or (math.isinf(obs) and math.isinf(extremity(x))))


def test_likelihood_ratio_examples():
    assert likelihood_ratio((2, 1), (10, 10)) == 2.0
    assert likelihood_ratio((3, 6), (10, 20)) == 1.0
    assert likelihood_ratio((0, 0), (10, 10)) == 1.0
    assert likelihood_ratio((4, 0), (10, 10)) == math.inf
    with pytest.raises(DataError):
        likelihood_ratio((11, 0), (10, 10))


@given(a=st.integers(1, 50), b=st.integers(1, 50), extra=st.tuples(st.integers(0, 50), st.integers(0, 50)))
def test_likelihood_ratio_swap_reciprocal(a, b, extra):
    totals = (a + extra[0], b + extra[1])
    forward = likelihood_ratio((a, b), totals)
    backward = likelihood_ratio((b, a), totals[::-1])
    assert forward * backward == pytest.approx(1.0, rel=1e-12)


@pytest.mark.parametrize("counts", [(12, 4), (7, 7), (0, 5), (30, 0), (1, 9)])
def test_monte_carlo_matches_exact_pvalue(counts):
    n = 40_000
    p, _ = permutation_pvalue(*counts, 60, 50, n, np.random.default_rng(0))
    exact = exact_pvalue(*counts, 60, 50)
    se = math.sqrt(max(exact * (1 - exact), 1e-12) / n)
    assert abs(p - exact) <= 4 * se + 1e-12


def test_matches_literal_label_shuffling():
    rng = np.random.default_rng(5)
    classes = np.array([0] * 40 + [1] * 60)
    present = rng.random(100) < 0.25
    present[:8] = True  # tilt toward the less class
    in_more = int(np.sum(present & (classes == 1)))
    in_less = int(present.sum()) - in_more
    obs = abs(math.log(likelihood_ratio((in_less, in_more), (40, 60))))
    hits, n = 0, 20_000
    for _ in range(n):
        perm = rng.permutation(classes)
        m = int(np.sum(present & (perm == 1)))
        lr = likelihood_ratio((int(present.sum()) - m, m), (40, 60))
        hits += (math.isinf(lr) or lr == 0 or abs(math.log(lr)) >= obs * (1 - 1e-12))
    shuffled = hits / n
    fast = permutation_test(make_items(classes, present), "f", n_samples=n, seed=1).p_raw
    assert abs(shuffled - fast) <= 4 * math.sqrt(2 * fast * (1 - fast) / n)


def test_one_sided_feature_gets_zero_pvalue():
    classes = np.array([0] * 500 + [1] * 500)
    present = np.zeros(1000, dtype=bool)
    present[:30] = True
    res = permutation_test(make_items(classes, present), "f", n_samples=100_000, seed=0)
    assert res.lr == math.inf
    assert res.p_raw == 0.0
    cons = permutation_test(make_items(classes, present), "f", n_samples=100_000, seed=0,
                            conservative=True)
    assert cons.p_raw == pytest.approx(1 / 100_001)


def test_independent_feature_calibration():
    rng = np.random.default_rng(11)
    rejections = 0
    for rep in range(200):
        classes = np.array([0] * 250 + [1] * 250)
        present = rng.random(500) < 0.2
        p = permutation_test(make_items(classes, present), "f", n_samples=2000, seed=rep).p_raw
        rejections += p <= 0.05
    assert abs(rejections / 200 - 0.05) <= 0.03


def test_deterministic_and_order_invariant():
    rng = np.random.default_rng(2)
    classes = rng.integers(0, 2, 300)
    present = rng.random(300) < 0.3
    items = make_items(classes, present)
    a = permutation_test(items, "f", n_samples=5000, seed=9)
    b = permutation_test(items, "f", n_samples=5000, seed=9)
    perm = rng.permutation(300)
    c = permutation_test(make_items(classes[perm], present[perm]), "f", n_samples=5000, seed=9)
    assert a.p_raw == b.p_raw == c.p_raw


def test_missing_feature():
    items = make_items([0, 1], [True, False])
    with pytest.raises(DataError):
        permutation_test(items, "nope", n_samples=10)
    with pytest.raises(DataError):
        run_permutation_tests(items, features=["nope"], n_samples=10)


@pytest.mark.parametrize("p, rejected", [
    ((0.01, 0.04), [True, True]),
    ((0.03, 0.04), [False, False]),
    ((0.0, 0.2, 0.9), [True, False, False]),
])
def test_holm_examples(p, rejected):
    assert holm_bonferroni(p, 0.05)[0].tolist() == rejected


def test_holm_adjusted_values():
    _, adj = holm_bonferroni([0.04, 0.01, 0.03], 0.05)
    np.testing.assert_allclose(adj, [0.06, 0.03, 0.06])


@given(p=st.lists(st.floats(0, 1), min_size=1, max_size=30),
       a1=st.floats(0.001, 0.5), a2=st.floats(0.001, 0.5))
def test_holm_properties(p, a1, a2):
    lo, hi = sorted((a1, a2))
    rej_lo, adj = holm_bonferroni(p, lo)
    rej_hi, _ = holm_bonferroni(p, hi)
    assert np.all(adj >= np.asarray(p))
    assert np.all(adj <= 1)
    assert np.array_equal(rej_lo, adj <= lo)
    # lowering alpha never adds a rejection
    assert np.all(rej_hi | ~rej_lo)


def test_holm_validates():
    with pytest.raises(ValueError):
        holm_bonferroni([1.5], 0.05)
    with pytest.raises(ValueError):
        holm_bonferroni([0.5], 1.0)


def test_run_all_features_sorted_and_corrected(tmp_path):
    rng = np.random.default_rng(3)
    classes = np.array([0] * 200 + [1] * 200)
    feats = []
    for c in classes:
        f = {f"noise{j}" for j in range(5) if rng.random() < 0.2}
        if c == 0 and rng.random() < 0.3:
            f.add("signal")
        feats.append(f)
    items = BinaryLabeledItems(tuple(map(str, range(400))), classes, tuple(feats))
    path = tmp_path / "items.jsonl"
    save_items(items, path)
    loaded = load_items(path)
    assert loaded.class_totals == (200, 200)
    results = run_permutation_tests(loaded, n_samples=5000, seed=0)
    lrs = [r.lr for r in results]
    assert lrs == sorted(lrs)
    by_name = {r.feature: r for r in results}
    assert by_name["signal"].rejected and by_name["signal"].lr == math.inf
    assert by_name["signal"].to_dict()["LR"] is None
    for r in results:
        assert r.p_adjusted >= r.p_raw
        assert r.rejected == (r.p_adjusted <= 0.05)
        assert r.total == r.better_count + r.worse_count


def test_from_records_validates():
    with pytest.raises(DataError):
        BinaryLabeledItems.from_records([{"id": "a", "class": "neutral", "features": []}])
    items = BinaryLabeledItems.from_records([{"id": "a", "class": "less", "features": ["x"]},
                                             {"id": "b", "class": "more", "features": []}])
    assert items.feature_counts("x") == (1, 0)
