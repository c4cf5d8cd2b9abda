"""Score fusion and subject-independent cross-validation.

One sequence model is trained per active (view, stream) pair; at test
time their per-sequence score vectors are combined by a weighted mean.
`run_cv` only orchestrates: reduction fitting, model training, and
prediction are injected callables, so tests can instrument them and the
pipeline can supply the real implementations.  Reduction calibration and
training see the training fold only; test subjects never leak in.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from .errors import (
    AllZeroWeightsError,
    NegativeWeightError,
    ShapeMismatchError,
    TooFewSubjectsError,
)
from .geometry import EXPRESSIONS, VIEWS
from .sequence_model import ScoreVector

STREAMS = ("dense", "sparse", "toplandmarks")

# ablation name -> active streams (all three views each)
ABLATIONS = {
    "dense": ("dense",),
    "sparse": ("sparse",),
    "dense+topl": ("dense", "toplandmarks"),
    "sparse+topl": ("sparse", "toplandmarks"),
}

REDUCED_DIM = 30


@dataclass(frozen=True)
class FusionConfig:
    """Nonnegative weight per (view, stream); zero deactivates the pair."""

    weights: Mapping[tuple[str, str], float]

    def __post_init__(self):
        w = {}
        for key, value in dict(self.weights).items():
            view, stream = key
            if view not in VIEWS or stream not in STREAMS:
                raise ValueError(f"unknown (view, stream) pair {key!r}")
            value = float(value)
            if value < 0:
                raise NegativeWeightError(f"weight for {key!r} is negative")
            w[(view, stream)] = value
        if not any(v > 0 for v in w.values()):
            raise AllZeroWeightsError("at least one fusion weight must be positive")
        object.__setattr__(self, "weights", w)

    def active_pairs(self) -> tuple[tuple[str, str], ...]:
        """Positive-weight pairs in fixed (view, stream) declaration order."""
        return tuple(
            (view, stream)
            for view in VIEWS
            for stream in STREAMS
            if self.weights.get((view, stream), 0.0) > 0
        )

    def normalized(self) -> dict[tuple[str, str], float]:
        total = sum(self.weights[p] for p in self.active_pairs())
        return {p: self.weights[p] / total for p in self.active_pairs()}


def equal_fusion(streams, views=VIEWS) -> FusionConfig:
    return FusionConfig({(v, s): 1.0 for v in views for s in streams})


@dataclass(frozen=True)
class EvalReport:
    accuracy: float
    confusion: np.ndarray  # (6, 6), rows true, columns predicted
    fold_accuracies: tuple[float, ...]

    def __post_init__(self):
        c = np.asarray(self.confusion, dtype=np.int64)
        if c.shape != (len(EXPRESSIONS), len(EXPRESSIONS)) or c.min() < 0:
            raise ValueError("confusion must be a nonnegative 6x6 count matrix")
        total = int(c.sum())
        if total > 0 and abs(self.accuracy - np.trace(c) / total) > 1e-12:
            raise ValueError("accuracy must equal trace/total")
        c.flags.writeable = False
        object.__setattr__(self, "confusion", c)
        object.__setattr__(self, "accuracy", float(self.accuracy))
        object.__setattr__(self, "fold_accuracies", tuple(float(a) for a in self.fold_accuracies))


@dataclass(frozen=True)
class CvItem:
    """One sequence's raw per-(view, stream) frame arrays.

    `train_extras` carries augmented variants used only when the item is
    in the training fold; each shares the item's label.
    """

    seq_id: str
    subject: str
    label: str
    streams: Mapping[tuple[str, str], np.ndarray]
    train_extras: Mapping[tuple[str, str], tuple] = field(default_factory=dict)

    def __post_init__(self):
        if self.label not in EXPRESSIONS:
            raise ValueError(f"unknown label {self.label!r}")
        object.__setattr__(self, "streams", dict(self.streams))
        object.__setattr__(
            self, "train_extras", {k: tuple(v) for k, v in dict(self.train_extras).items()}
        )


# --------------------------------------------------------------------------
# fusion


def fuse_scores(scores) -> ScoreVector:
    """Weighted arithmetic mean of probability vectors, renormalized."""
    scores = list(scores)
    if not scores:
        raise ValueError("need at least one score to fuse")
    weights = [float(w) for _, w in scores]
    if any(w < 0 for w in weights):
        raise NegativeWeightError("fusion weights must be nonnegative")
    total = sum(weights)
    if total == 0:
        raise AllZeroWeightsError("fusion weights must not all be zero")
    mixed = np.zeros(len(EXPRESSIONS))
    for (score, _), w in zip(scores, weights):
        p = score.probabilities
        if p.shape != mixed.shape:
            raise ShapeMismatchError("score vectors must share the class count")
        mixed += (w / total) * p
    return ScoreVector(mixed / mixed.sum())


def predicted_class(score: ScoreVector) -> int:
    """Argmax with ties broken toward the lowest class index."""
    return int(np.argmax(score.probabilities))


# --------------------------------------------------------------------------
# splitting and tallying


def subject_kfold_split(subjects, k: int = 10, seed: int = 0) -> list[list[str]]:
    """Seeded shuffle of the sorted unique ids, then round-robin groups."""
    ids = sorted(set(subjects))
    if len(ids) < k:
        raise TooFewSubjectsError(f"need at least {k} subjects, got {len(ids)}")
    if k < 2:
        raise ValueError("k must be >= 2")
    order = np.random.default_rng([int(seed), 971]).permutation(len(ids))
    shuffled = [ids[i] for i in order]
    return [shuffled[j::k] for j in range(k)]


def confusion_and_accuracy(pairs) -> tuple[np.ndarray, float]:
    """Tally (true label, predicted label) pairs into counts and accuracy."""
    pairs = list(pairs)
    if not pairs:
        raise ValueError("need at least one (true, predicted) pair")
    conf = np.zeros((len(EXPRESSIONS), len(EXPRESSIONS)), dtype=np.int64)
    for true, pred in pairs:
        conf[EXPRESSIONS.index(true), EXPRESSIONS.index(pred)] += 1
    return conf, float(np.trace(conf) / conf.sum())


# --------------------------------------------------------------------------
# per-stream dimensionality reduction (fit on the training fold only)


def default_fit_reducer(fold: int, stream: str, train_arrays):
    """Pick the kept coordinate set for one stream from training data.

    dense keeps the 30 highest-variance coordinates, sparse the 30 with
    the largest mean squared energy (ties toward lower index, matching
    the codec's calibration rule); toplandmarks passes through whole.
    """
    rows = np.concatenate([np.asarray(a, dtype=np.float64) for _, a in train_arrays])
    if stream == "toplandmarks" or rows.shape[1] <= REDUCED_DIM:
        return None
    if stream == "dense":
        stat = rows.var(axis=0)
    elif stream == "sparse":
        stat = (rows * rows).mean(axis=0)
    else:
        raise ValueError(f"unknown stream {stream!r}")
    order = np.lexsort((np.arange(rows.shape[1]), -stat))
    return tuple(int(i) for i in np.sort(order[:REDUCED_DIM]))


def default_reduce(stream: str, state, array) -> np.ndarray:
    array = np.asarray(array, dtype=np.float64)
    return array if state is None else array[:, state]


# --------------------------------------------------------------------------
# cross-validation


def _model_seed(seed: int, fold: int, view: str, stream: str) -> int:
    path = [int(seed), 13, fold, VIEWS.index(view), STREAMS.index(stream)]
    return int(np.random.default_rng(path).integers(0, 2**31 - 1))


def run_cv(
    items,
    fusion: FusionConfig,
    train_model: Callable,
    predict: Callable,
    *,
    folds: int = 10,
    seed: int = 0,
    fit_reducer: Callable = default_fit_reducer,
    reduce_array: Callable = default_reduce,
    model_cache: dict | None = None,
) -> EvalReport:
    """Subject-independent k-fold evaluation of the fused pipeline.

    Hook signatures:
      fit_reducer(fold, stream, [(seq_id, array), ...]) -> state
      reduce_array(stream, state, array) -> array
      train_model(fold, view, stream, [(seq_id, array, label_idx), ...], seed) -> model
      predict(model, array) -> ScoreVector

    A model's seed depends only on (cv seed, fold, view, stream), so a
    shared `model_cache` dict reuses identical models across ablation
    runs with the same folds.
    """
    items = list(items)
    ids = [it.seq_id for it in items]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate sequence ids")
    active = fusion.active_pairs()
    for it in items:
        missing = [p for p in active if p not in it.streams]
        if missing:
            raise ValueError(f"item {it.seq_id} lacks streams {missing}")
    weights = fusion.normalized()
    groups = subject_kfold_split([it.subject for it in items], folds, seed)

    total_conf = np.zeros((len(EXPRESSIONS), len(EXPRESSIONS)), dtype=np.int64)
    fold_accs = []
    for fold, test_subjects in enumerate(groups):
        test_set = set(test_subjects)
        train_items = [it for it in items if it.subject not in test_set]
        test_items = [it for it in items if it.subject in test_set]
        models = {}
        states = {}
        for view, stream in active:
            cache_key = (fold, view, stream)
            if model_cache is not None and cache_key in model_cache:
                states[(view, stream)], models[(view, stream)] = model_cache[cache_key]
                continue
            arrays = []
            triples = []
            for it in train_items:
                label_idx = EXPRESSIONS.index(it.label)
                variants = (it.streams[(view, stream)],) + it.train_extras.get((view, stream), ())
                for v, arr in enumerate(variants):
                    vid = it.seq_id if v == 0 else f"{it.seq_id}+aug{v}"
                    arrays.append((vid, arr))
                    triples.append((vid, arr, label_idx))
            state = fit_reducer(fold, stream, arrays)
            states[(view, stream)] = state
            reduced = [(sid, reduce_array(stream, state, arr), y) for sid, arr, y in triples]
            models[(view, stream)] = train_model(
                fold, view, stream, reduced, _model_seed(seed, fold, view, stream)
            )
            if model_cache is not None:
                model_cache[cache_key] = (state, models[(view, stream)])
        pairs = []
        for it in test_items:
            fused = fuse_scores(
                (
                    predict(
                        models[p],
                        reduce_array(p[1], states[p], it.streams[p]),
                    ),
                    weights[p],
                )
                for p in active
            )
            pairs.append((it.label, EXPRESSIONS[predicted_class(fused)]))
        conf, acc = confusion_and_accuracy(pairs)
        total_conf += conf
        fold_accs.append(acc)

    accuracy = float(np.trace(total_conf) / total_conf.sum())
    return EvalReport(accuracy=accuracy, confusion=total_conf, fold_accuracies=tuple(fold_accs))


def ablation_grid(
    items,
    train_model: Callable,
    predict: Callable,
    *,
    names=tuple(ABLATIONS),
    views=VIEWS,
    folds: int = 10,
    seed: int = 0,
    fit_reducer: Callable = default_fit_reducer,
    reduce_array: Callable = default_reduce,
    model_cache: dict | None = None,
) -> dict[str, EvalReport]:
    """Run the named ablations with identical fold splits; equal weights.

    Passing one `model_cache` across the grid trains each (fold, view,
    stream) model once even when several ablations share a stream.
    """
    out = {}
    for name in names:
        fusion = equal_fusion(ABLATIONS[name], views=views)
        out[name] = run_cv(
            items,
            fusion,
            train_model,
            predict,
            folds=folds,
            seed=seed,
            fit_reducer=fit_reducer,
            reduce_array=reduce_array,
            model_cache=model_cache,
        )
    return out


# --------------------------------------------------------------------------
# report serialization (stable bytes: repr floats, no timestamps)


def write_confusion_csv(report: EvalReport, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("true\\predicted," + ",".join(EXPRESSIONS) + "\n")
        for i, label in enumerate(EXPRESSIONS):
            fh.write(label + "," + ",".join(str(int(v)) for v in report.confusion[i]) + "\n")


def write_report_text(report: EvalReport, path: str | Path) -> None:
    lines = [f"accuracy,{repr(report.accuracy)}"]
    for i, acc in enumerate(report.fold_accuracies):
        lines.append(f"fold_{i},{repr(acc)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_ablation_csv(reports: Mapping[str, EvalReport], path: str | Path) -> None:
    names = list(reports)
    k = len(reports[names[0]].fold_accuracies)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("ablation," + ",".join(f"fold_{i}" for i in range(k)) + ",mean\n")
        for name in names:
            r = reports[name]
            cells = ",".join(repr(a) for a in r.fold_accuracies)
            fh.write(f"{name},{cells},{repr(r.accuracy)}\n")
