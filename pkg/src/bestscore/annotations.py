"""Loading and validating annotation counts and model predictions.

Annotations are per-example class count vectors; predictions are per-example
probability (or logit) vectors. Both are read from JSONL (canonical) or CSV.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

PROB_TOL = 1e-6


class DataError(ValueError):
    """Raised for malformed or inconsistent input data."""


@dataclass(frozen=True)
class AnnotationMatrix:
    ids: tuple[str, ...]
    counts: np.ndarray
    class_names: tuple[str, ...] | None = None
    totals: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 2:
            raise DataError("counts must be a 2-d array")
        if counts.size and not np.issubdtype(counts.dtype, np.integer):
            as_int = np.rint(counts)
            if not np.all(as_int == counts):
                raise DataError("counts must be integers")
            counts = as_int
        counts = counts.astype(np.int64)
        if np.any(counts < 0):
            raise DataError("negative count")
        totals = counts.sum(axis=1)
        if np.any(totals < 1):
            bad = int(np.flatnonzero(totals < 1)[0])
            raise DataError(f"zero-annotation row (id {self.ids[bad]!r})")
        if len(self.ids) != counts.shape[0]:
            raise DataError("ids and counts disagree on the number of rows")
        if len(set(self.ids)) != len(self.ids):
            raise DataError("duplicate id")
        if self.class_names is not None and len(self.class_names) != counts.shape[1]:
            raise DataError("class_names length does not match K")
        counts.setflags(write=False)
        totals.setflags(write=False)
        object.__setattr__(self, "ids", tuple(self.ids))
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "totals", totals)

    @classmethod
    def from_counts(cls, counts, ids: Sequence[str] | None = None, class_names=None):
        counts = np.asarray(counts)
        if ids is None:
            ids = [str(i) for i in range(counts.shape[0])]
        return cls(tuple(ids), counts, None if class_names is None else tuple(class_names))

    @property
    def n(self) -> int:
        return self.counts.shape[0]

    @property
    def K(self) -> int:
        return self.counts.shape[1]

    def proportions(self) -> np.ndarray:
        return self.counts / self.totals[:, None]

    def take(self, order) -> "AnnotationMatrix":
        order = np.asarray(order, dtype=int)
        return AnnotationMatrix(
            tuple(self.ids[i] for i in order), self.counts[order], self.class_names
        )


@dataclass(frozen=True)
class PredictionSet:
    ids: tuple[str, ...]
    values: np.ndarray
    kind: str = "probabilities"

    def __post_init__(self):
        if self.kind not in ("probabilities", "logits"):
            raise DataError(f"unknown prediction kind {self.kind!r}")
        values = np.array(self.values, dtype=float)
        if values.ndim != 2:
            raise DataError("prediction values must be a 2-d array")
        if len(self.ids) != values.shape[0]:
            raise DataError("ids and values disagree on the number of rows")
        if len(set(self.ids)) != len(self.ids):
            raise DataError("duplicate id")
        if not np.all(np.isfinite(values)):
            raise DataError("non-finite prediction value")
        if self.kind == "probabilities":
            values = _check_probability_rows(values, self.ids)
        values.setflags(write=False)
        object.__setattr__(self, "ids", tuple(self.ids))
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def K(self) -> int:
        return self.values.shape[1]

    def probabilities(self) -> np.ndarray:
        if self.kind == "probabilities":
            return self.values
        from .losses import softmax

        return softmax(self.values)

    def as_probabilities(self) -> "PredictionSet":
        if self.kind == "probabilities":
            return self
        return PredictionSet(self.ids, self.probabilities(), "probabilities")


def _check_probability_rows(values: np.ndarray, ids) -> np.ndarray:
    if np.any(values < 0) or np.any(values > 1):
        row = int(np.flatnonzero(((values < 0) | (values > 1)).any(axis=1))[0])
        raise DataError(f"probability out of [0,1] for id {ids[row]!r}")
    sums = values.sum(axis=1)
    off = np.abs(sums - 1.0) > PROB_TOL
    if np.any(off):
        row = int(np.flatnonzero(off)[0])
        raise DataError(f"row sum {sums[row]:.6g} deviates from 1 for id {ids[row]!r}")
    # rows already normalized to rounding are left alone, so re-validation is idempotent
    drift = np.abs(sums - 1.0) > 1e-12
    values[drift] /= sums[drift, None]
    return values


@dataclass(frozen=True)
class AlignedEval:
    annotations: AnnotationMatrix
    predictions: PredictionSet

    def __post_init__(self):
        if self.annotations.ids != self.predictions.ids:
            raise DataError("annotations and predictions are not aligned")
        if self.annotations.K != self.predictions.K:
            raise DataError("K mismatch")
        if self.predictions.kind != "probabilities":
            raise DataError("aligned predictions must be probabilities")

    @classmethod
    def from_arrays(cls, counts, probs, ids=None) -> "AlignedEval":
        ann = AnnotationMatrix.from_counts(counts, ids)
        return cls(ann, PredictionSet(ann.ids, probs, "probabilities"))

    @property
    def probs(self) -> np.ndarray:
        return self.predictions.values


# -- parsing ------------------------------------------------------------------


def _infer_format(path: Path, fmt: str | None) -> str:
    if fmt:
        if fmt not in ("jsonl", "csv"):
            raise DataError(f"unknown format {fmt!r}")
        return fmt
    return "csv" if path.suffix.lower() == ".csv" else "jsonl"


def _iter_jsonl(path: Path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as err:
                raise DataError(f"{path}:{lineno}: malformed JSON ({err.msg})") from None
            if not isinstance(obj, dict) or "id" not in obj:
                raise DataError(f"{path}:{lineno}: expected an object with an 'id' field")
            yield lineno, obj


def _iter_csv(path: Path, prefix: str):
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            return
        expected = ["id"] + [f"{prefix}{k}" for k in range(len(header) - 1)]
        if header != expected or len(header) < 2:
            raise DataError(f"{path}:1: expected header {','.join(expected[:3])},...")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            yield lineno, row[0], row[1:]


def _parse_count(value, where: str) -> int:
    if isinstance(value, bool):
        raise DataError(f"{where}: counts must be integers")
    if isinstance(value, str):
        try:
            value = float(value)
        except ValueError:
            raise DataError(f"{where}: unparsable count {value!r}") from None
    if not isinstance(value, (int, float)) or not math.isfinite(value) or value != int(value):
        raise DataError(f"{where}: counts must be integers")
    if value < 0:
        raise DataError(f"{where}: negative count")
    return int(value)


def _load_classes(path: Path) -> tuple[str, ...] | None:
    sidecar = path.parent / "classes.json"
    if not sidecar.exists():
        return None
    return load_class_names(sidecar)


def load_class_names(path) -> tuple[str, ...]:
    """Read a class-name file: a JSON list, or an object mapping column index to name."""
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    if isinstance(raw, list):
        return tuple(str(x) for x in raw)
    if isinstance(raw, dict):
        return tuple(str(raw[k]) for k in sorted(raw, key=int))
    raise DataError(f"{path}: class names must be a list or an index->name object")


def load_annotations(path, format: str | None = None, drop_empty: bool = False,
                     class_names=None) -> AnnotationMatrix:
    """Load per-example annotation counts.

    Row order is preserved from the file. Zero-annotation rows are an error
    unless ``drop_empty`` is set, in which case they are skipped and counted
    in the log.
    """
    path = Path(path)
    fmt = _infer_format(path, format)
    ids: list[str] = []
    rows: list[list[int]] = []
    seen: set[str] = set()
    dropped = 0
    K = None
    if fmt == "jsonl":
        records = (
            (lineno, obj["id"], obj.get("counts")) for lineno, obj in _iter_jsonl(path)
        )
    else:
        records = _iter_csv(path, "c")
    for lineno, ex_id, raw in records:
        where = f"{path}:{lineno}"
        if not isinstance(raw, list):
            raise DataError(f"{where}: 'counts' must be an array")
        row = [_parse_count(v, where) for v in raw]
        if K is None:
            K = len(row)
        elif len(row) != K:
            raise DataError(f"{where}: inconsistent K ({len(row)} classes, expected {K})")
        ex_id = str(ex_id)
        if ex_id in seen:
            raise DataError(f"{where}: duplicate id {ex_id!r}")
        if sum(row) == 0:
            if drop_empty:
                dropped += 1
                continue
            raise DataError(f"{where}: zero-annotation row (id {ex_id!r})")
        seen.add(ex_id)
        ids.append(ex_id)
        rows.append(row)
    if dropped:
        logger.warning("dropped %d zero-annotation rows from %s", dropped, path)
    if not rows:
        raise DataError(f"{path}: no annotation rows")
    if class_names is None:
        class_names = _load_classes(path)
    return AnnotationMatrix(tuple(ids), np.array(rows, dtype=np.int64), class_names)


def load_predictions(path, format: str | None = None, kind: str | None = None) -> PredictionSet:
    """Load model predictions.

    For JSONL the kind is taken from the field name (``probs`` or ``logits``)
    unless ``kind`` is given, in which case it must agree. CSV files carry no
    field names, so ``kind`` defaults to probabilities.
    """
    path = Path(path)
    fmt = _infer_format(path, format)
    ids: list[str] = []
    rows: list[list[float]] = []
    file_kind = None
    if fmt == "jsonl":
        for lineno, obj in _iter_jsonl(path):
            where = f"{path}:{lineno}"
            present = [k for k in ("probs", "logits") if k in obj]
            if len(present) != 1:
                raise DataError(f"{where}: expected exactly one of 'probs' or 'logits'")
            row_kind = "probabilities" if present[0] == "probs" else "logits"
            if file_kind is None:
                file_kind = row_kind
            elif row_kind != file_kind:
                raise DataError(f"{where}: mixed probs and logits in one file")
            ids.append(str(obj["id"]))
            rows.append(_parse_reals(obj[present[0]], where))
    else:
        for lineno, ex_id, raw in _iter_csv(path, "p"):
            ids.append(ex_id)
            rows.append(_parse_reals(raw, f"{path}:{lineno}"))
    if kind is None:
        kind = file_kind or "probabilities"
    elif file_kind is not None and kind != file_kind:
        raise DataError(f"{path}: declared kind {kind!r} but file holds {file_kind!r}")
    if not rows:
        raise DataError(f"{path}: no prediction rows")
    K = len(rows[0])
    for i, row in enumerate(rows):
        if len(row) != K:
            raise DataError(f"{path}: inconsistent K for id {ids[i]!r}")
    return PredictionSet(tuple(ids), np.array(rows, dtype=float), kind)


def _parse_reals(raw, where: str) -> list[float]:
    if not isinstance(raw, list):
        raise DataError(f"{where}: expected an array of numbers")
    out = []
    for v in raw:
        try:
            x = float(v)
        except (TypeError, ValueError):
            raise DataError(f"{where}: unparsable number {v!r}") from None
        if not math.isfinite(x):
            raise DataError(f"{where}: non-finite value")
        out.append(x)
    return out


def align(annotations: AnnotationMatrix, predictions: PredictionSet) -> AlignedEval:
    """Match prediction rows to annotation rows by id, in annotation order."""
    if annotations.K != predictions.K:
        raise DataError(
            f"K mismatch: annotations have {annotations.K} classes, predictions {predictions.K}"
        )
    pred_index = {ex_id: i for i, ex_id in enumerate(predictions.ids)}
    missing = [ex_id for ex_id in annotations.ids if ex_id not in pred_index]
    if missing:
        raise DataError(f"predictions missing id(s): {', '.join(missing[:10])}")
    ann_ids = set(annotations.ids)
    extra = [ex_id for ex_id in predictions.ids if ex_id not in ann_ids]
    if extra:
        raise DataError(f"annotations missing id(s): {', '.join(extra[:10])}")
    order = [pred_index[ex_id] for ex_id in annotations.ids]
    probs = predictions.probabilities()[order]
    return AlignedEval(annotations, PredictionSet(annotations.ids, probs, "probabilities"))


# -- writing ------------------------------------------------------------------


def _json_number(x):
    return int(x) if isinstance(x, (np.integer,)) else float(x)


def save_annotations(ann: AnnotationMatrix, path, format: str | None = None) -> None:
    path = Path(path)
    fmt = _infer_format(path, format)
    if fmt == "jsonl":
        with open(path, "w", encoding="utf-8") as fh:
            for ex_id, row in zip(ann.ids, ann.counts):
                fh.write(json.dumps({"id": ex_id, "counts": [int(v) for v in row]}) + "\n")
    else:
        _write_csv(path, "c", ann.ids, ([int(v) for v in row] for row in ann.counts), ann.K)


def save_predictions(pred: PredictionSet, path, format: str | None = None) -> None:
    path = Path(path)
    fmt = _infer_format(path, format)
    key = "probs" if pred.kind == "probabilities" else "logits"
    if fmt == "jsonl":
        with open(path, "w", encoding="utf-8") as fh:
            for ex_id, row in zip(pred.ids, pred.values):
                fh.write(json.dumps({"id": ex_id, key: [float(v) for v in row]}) + "\n")
    else:
        _write_csv(path, "p", pred.ids, ([repr(float(v)) for v in row] for row in pred.values),
                   pred.K)


def _write_csv(path: Path, prefix: str, ids: Iterable[str], rows, K: int) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id"] + [f"{prefix}{k}" for k in range(K)])
        for ex_id, row in zip(ids, rows):
            writer.writerow([ex_id, *row])
