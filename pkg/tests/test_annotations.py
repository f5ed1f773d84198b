import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from bestscore.annotations import (
    AnnotationMatrix,
    DataError,
    PredictionSet,
    align,
    load_annotations,
    load_class_names,
    load_predictions,
    save_annotations,
    save_predictions,
)


def test_load_jsonl_row(write_jsonl):
    path = write_jsonl("a.jsonl", [{"id": "a1", "counts": [0, 7, 0, 0, 0]}])
    ann = load_annotations(path)
    assert ann.K == 5
    assert ann.ids == ("a1",)
    assert ann.totals.tolist() == [7]


def test_inconsistent_k(write_jsonl):
    path = write_jsonl("a.jsonl", [{"id": "a1", "counts": [0, 7, 0, 0, 0]},
                                   {"id": "a2", "counts": [1, 1]}])
    with pytest.raises(DataError, match="inconsistent K"):
        load_annotations(path)


def test_zero_row_error_and_drop(write_jsonl):
    path = write_jsonl("a.jsonl", [{"id": "a1", "counts": [1, 0]},
                                   {"id": "a3", "counts": [0, 0]}])
    with pytest.raises(DataError, match="zero-annotation"):
        load_annotations(path)
    ann = load_annotations(path, drop_empty=True)
    assert ann.ids == ("a1",)


@pytest.mark.parametrize("line, message", [
    ('{"id": "x", "counts": [1, -2]}', "negative"),
    ('{"id": "x", "counts": [1, 2.5]}', "integer"),
    ('{"id": "x", "counts": [1, 2]', "line|:1"),
])
def test_bad_rows_report_line(write_jsonl, line, message):
    path = write_jsonl("a.jsonl", ['{"id": "ok", "counts": [1, 1]}', line])
    with pytest.raises(DataError, match=message) as info:
        load_annotations(path)
    assert ":2" in str(info.value)


def test_duplicate_id(write_jsonl):
    path = write_jsonl("a.jsonl", [{"id": "a", "counts": [1, 0]}, {"id": "a", "counts": [0, 1]}])
    with pytest.raises(DataError, match="duplicate"):
        load_annotations(path)


def test_csv_annotations(tmp_path):
    path = tmp_path / "a.csv"
    path.write_text("id,c0,c1,c2\nx,1,2,0\ny,0,0,4\n")
    ann = load_annotations(path)
    assert ann.counts.tolist() == [[1, 2, 0], [0, 0, 4]]
    path.write_text("id,a,b\nx,1,2\n")
    with pytest.raises(DataError, match="header"):
        load_annotations(path)


def test_classes_sidecar(tmp_path, write_jsonl):
    (tmp_path / "classes.json").write_text(json.dumps({"0": "author", "1": "other"}))
    path = write_jsonl("a.jsonl", [{"id": "a", "counts": [1, 2]}])
    assert load_annotations(path).class_names == ("author", "other")
    assert load_class_names(tmp_path / "classes.json") == ("author", "other")


def test_uniform_prediction_row(write_jsonl):
    path = write_jsonl("p.jsonl", [{"id": "a1", "probs": [0.2] * 5}])
    pred = load_predictions(path)
    assert pred.K == 5
    np.testing.assert_allclose(pred.values, [[0.2] * 5])


def test_prediction_row_sum_error(write_jsonl):
    path = write_jsonl("p.jsonl", [{"id": "a1", "probs": [0.7, 0.4]}])
    with pytest.raises(DataError, match="row sum 1.1"):
        load_predictions(path)


def test_prediction_small_drift_renormalized():
    pred = PredictionSet(("a",), [[0.5 + 4e-7, 0.5]])
    assert pred.values.sum() == pytest.approx(1.0, abs=1e-15)


@pytest.mark.parametrize("row", [[1.2, -0.2], [float("nan"), 1.0]])
def test_prediction_out_of_range(row):
    with pytest.raises(DataError):
        PredictionSet(("a",), [row])


def test_logits_convert_on_demand(write_jsonl):
    path = write_jsonl("p.jsonl", [{"id": "a1", "logits": [0.0, 0.0]}])
    pred = load_predictions(path, kind="logits")
    assert pred.kind == "logits"
    np.testing.assert_allclose(pred.probabilities(), [[0.5, 0.5]])


def test_prediction_needs_one_field(write_jsonl):
    path = write_jsonl("p.jsonl", [{"id": "a1", "probs": [0.5, 0.5], "logits": [0, 0]}])
    with pytest.raises(DataError, match="exactly one"):
        load_predictions(path)


def test_align_reorders():
    ann = AnnotationMatrix.from_counts([[1, 0], [0, 2]], ids=["a1", "a2"])
    pred = PredictionSet(("a2", "a1"), [[0.1, 0.9], [0.8, 0.2]])
    ev = align(ann, pred)
    assert ev.predictions.ids == ("a1", "a2")
    np.testing.assert_allclose(ev.probs, [[0.8, 0.2], [0.1, 0.9]])


def test_align_missing_id_named():
    ann = AnnotationMatrix.from_counts([[1, 0], [0, 2]], ids=["a1", "a2"])
    pred = PredictionSet(("a1",), [[0.5, 0.5]])
    with pytest.raises(DataError, match="a2"):
        align(ann, pred)
    extra = PredictionSet(("a1", "a2", "zz"), [[0.5, 0.5]] * 3)
    with pytest.raises(DataError, match="zz"):
        align(ann, extra)


def test_align_k_mismatch():
    ann = AnnotationMatrix.from_counts([[1, 0, 0, 0, 0]], ids=["a1"])
    with pytest.raises(DataError, match="K mismatch"):
        align(ann, PredictionSet(("a1",), [[0.5, 0.5]]))


counts_strategy = st.integers(1, 6).flatmap(
    lambda K: hnp.arrays(np.int64, st.tuples(st.integers(1, 8), st.just(K)),
                         elements=st.integers(0, 20))
).filter(lambda c: K_ok(c))


def K_ok(c):
    return c.shape[1] >= 1 and bool(np.all(c.sum(axis=1) > 0))


@given(counts=counts_strategy, fmt=st.sampled_from(["jsonl", "csv"]))
def test_annotation_round_trip(tmp_path_factory, counts, fmt):
    ann = AnnotationMatrix.from_counts(counts, ids=[f"id,{i}" for i in range(len(counts))])
    path = tmp_path_factory.mktemp("rt") / f"a.{fmt}"
    save_annotations(ann, path)
    back = load_annotations(path)
    assert back.ids == ann.ids
    np.testing.assert_array_equal(back.counts, ann.counts)
    np.testing.assert_array_equal(back.totals, back.counts.sum(axis=1))


@given(probs=st.integers(2, 5).flatmap(
    lambda K: hnp.arrays(float, st.tuples(st.integers(1, 6), st.just(K)),
                         elements=st.floats(0.01, 1.0))),
       fmt=st.sampled_from(["jsonl", "csv"]))
def test_prediction_round_trip(tmp_path_factory, probs, fmt):
    probs = probs / probs.sum(axis=1, keepdims=True)
    pred = PredictionSet(tuple(f"e{i}" for i in range(len(probs))), probs)
    path = tmp_path_factory.mktemp("rt") / f"p.{fmt}"
    save_predictions(pred, path)
    back = load_predictions(path)
    assert back.ids == pred.ids
    np.testing.assert_allclose(back.values, pred.values, rtol=0, atol=1e-15)


@given(perm_seed=st.integers(0, 2**32 - 1))
def test_align_permutation_and_idempotence(perm_seed):
    rng = np.random.default_rng(perm_seed)
    n = 7
    counts = rng.integers(0, 4, (n, 3)) + np.eye(3, dtype=int)[rng.integers(0, 3, n)]
    ann = AnnotationMatrix.from_counts(counts)
    probs = rng.dirichlet([1, 1, 1], n)
    order = rng.permutation(n)
    pred = PredictionSet(tuple(ann.ids[i] for i in order), probs[order])
    ev = align(ann, pred)
    assert sorted(ev.predictions.ids) == sorted(pred.ids)
    np.testing.assert_allclose(ev.probs, probs)
    again = align(ev.annotations, ev.predictions)
    np.testing.assert_array_equal(again.probs, ev.probs)
