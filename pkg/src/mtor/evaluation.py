"""Prediction rule, accuracy/MAE, stratified splitting and lambda selection by CV."""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Mapping, Protocol, Sequence

import numpy as np

from mtor.core import DataError, MultiTaskDataset, Task, ThresholdSet, segment_labels
from mtor.optimizer import AlternatingConfig, FistaConfig, train_rmtor


class Predictor(Protocol):
    def predict(self, task_id: str, X) -> np.ndarray: ...


def predict(score_fn: Callable[[int, np.ndarray], np.ndarray], th: ThresholdSet, task_index: int, x):
    """Label(s) for ``x`` under task ``task_index``.

    ``score_fn(task_index, X)`` returns latent scores for a 2-D batch. A single
    feature vector yields a single ``int``; a matrix yields an array. Finite
    outer cut points of the immediate variant are ignored, so scores beyond
    them still map to labels 1 and U.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    scores = np.asarray(score_fn(task_index, np.atleast_2d(x)), dtype=float)
    labels = segment_labels(scores, th.interior()[task_index])
    return int(labels[0]) if single else labels


def _pair(true_labels, predicted_labels):
    y = np.asarray(true_labels)
    p = np.asarray(predicted_labels)
    if y.shape != p.shape:
        raise ValueError(f"length mismatch: {y.shape[0]} true vs {p.shape[0]} predicted labels")
    if y.size == 0:
        raise ValueError("empty label vectors")
    return y, p


def accuracy(true_labels, predicted_labels) -> float:
    y, p = _pair(true_labels, predicted_labels)
    return float(np.mean(y == p))


def mae(true_labels, predicted_labels) -> float:
    y, p = _pair(true_labels, predicted_labels)
    return float(np.mean(np.abs(y.astype(float) - p.astype(float))))


@dataclass(frozen=True)
class TaskMetrics:
    n: int
    accuracy: float
    mae: float


@dataclass(frozen=True)
class EvalReport:
    per_task: dict[str, TaskMetrics]
    accuracy: float
    mae: float

    @property
    def n(self) -> int:
        return sum(m.n for m in self.per_task.values())

    @classmethod
    def from_predictions(cls, truth: Mapping[str, np.ndarray], preds: Mapping[str, np.ndarray]) -> EvalReport:
        per_task = {
            tid: TaskMetrics(int(len(y)), accuracy(y, preds[tid]), mae(y, preds[tid]))
            for tid, y in truth.items()
        }
        n = sum(m.n for m in per_task.values())
        acc = sum(m.n * m.accuracy for m in per_task.values()) / n
        err = sum(m.n * m.mae for m in per_task.values()) / n
        return cls(per_task, acc, err)

    def to_dict(self) -> dict:
        return {
            "per_task": {
                tid: {"n": m.n, "accuracy": m.accuracy, "mae": m.mae}
                for tid, m in self.per_task.items()
            },
            "overall": {"n": self.n, "accuracy": self.accuracy, "mae": self.mae},
        }

    def table(self, title: str = "model") -> str:
        width = max([len("task"), len("overall")] + [len(t) for t in self.per_task])
        lines = [f"{'task':<{width}}  {'n':>6}  {title + ' acc':>12}  {title + ' mae':>12}"]
        for tid, m in self.per_task.items():
            lines.append(f"{tid:<{width}}  {m.n:>6d}  {m.accuracy:>12.4f}  {m.mae:>12.4f}")
        lines.append(f"{'overall':<{width}}  {self.n:>6d}  {self.accuracy:>12.4f}  {self.mae:>12.4f}")
        return "\n".join(lines)


def evaluate(model: Predictor, data: MultiTaskDataset) -> EvalReport:
    """Score every task of ``data`` with ``model.predict(task_id, X)``."""
    truth = {t.id: t.labels for t in data.tasks}
    preds = {t.id: np.asarray(model.predict(t.id, t.features)) for t in data.tasks}
    return EvalReport.from_predictions(truth, preds)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _stratum_train_counts(labels: np.ndarray, train_fraction: float, task_id: str) -> dict[int, int]:
    classes, counts = np.unique(labels, return_counts=True)
    size = dict(zip(classes.tolist(), counts.tolist()))
    take = {}
    for c, n in size.items():
        k = _round_half_up(train_fraction * n)
        if n == 1 and k == 0:
            warnings.warn(f"task {task_id!r}: class {c} has a single instance; kept in train", stacklevel=3)
            k = 1
        take[c] = k
    diff = _round_half_up(train_fraction * labels.shape[0]) - sum(take.values())
    if diff:
        largest = max(size, key=lambda c: (size[c], -c))
        take[largest] = int(np.clip(take[largest] + diff, 0, size[largest]))
    return take


def stratified_split(data: MultiTaskDataset, train_fraction: float = 0.8,
                     seed: int = 0) -> tuple[MultiTaskDataset, MultiTaskDataset]:
    """Split each task so every (task, label) stratum keeps ``train_fraction`` of its rows.

    Within a stratum the rows are shuffled with ``seed`` and the first
    ``round(train_fraction * count)`` go to train. If rounding leaves a task's
    train total off the global fraction, the largest stratum absorbs the
    difference. Row order inside each output task follows the original order.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    train_tasks, test_tasks = [], []
    for task in data.tasks:
        take = _stratum_train_counts(task.labels, train_fraction, task.id)
        in_train = np.zeros(task.n, dtype=bool)
        for c, k in take.items():
            rows = np.flatnonzero(task.labels == c)
            in_train[rng.permutation(rows)[:k]] = True
        if in_train.all() or not in_train.any():
            raise DataError(f"task {task.id!r} with {task.n} instances is too small to split")
        train_tasks.append(Task(task.id, task.features[in_train], task.labels[in_train]))
        test_tasks.append(Task(task.id, task.features[~in_train], task.labels[~in_train]))
    mk = lambda ts: MultiTaskDataset(tuple(ts), data.num_features, data.num_classes, data.feature_names)
    return mk(train_tasks), mk(test_tasks)


def stratified_folds(data: MultiTaskDataset, k: int, seed: int = 0) -> list[np.ndarray]:
    """Fold id (0..k-1) for every row of every task, balanced within each label stratum."""
    rng = np.random.default_rng(seed)
    out = []
    for task in data.tasks:
        fold = np.empty(task.n, dtype=np.int64)
        offset = 0
        for c in np.unique(task.labels):
            rows = rng.permutation(np.flatnonzero(task.labels == c))
            # continue the round-robin across strata so fold sizes stay balanced
            fold[rows] = (offset + np.arange(rows.size)) % k
            offset += rows.size
        out.append(fold)
    return out


def kfold_select_lambda(
    data: MultiTaskDataset,
    variant,
    grid: Sequence[float],
    k: int = 10,
    fista_config=None,
    alternating_config=None,
    seed: int = 0,
    n_jobs: int = 1,
) -> tuple[float, dict[float, float]]:
    """Choose the l2,1 weight by stratified k-fold CV on overall accuracy.

    Returns ``(best_lambda, {lambda: mean held-out accuracy})``. Ties go to the
    larger lambda. Tasks with no held-out rows in a fold simply do not
    contribute to that fold's accuracy.
    """
    if k < 2:
        raise ValueError("k must be at least 2")
    grid = [float(v) for v in grid]
    if not grid:
        raise ValueError("grid must be nonempty")
    fcfg = fista_config or FistaConfig()
    acfg = alternating_config or AlternatingConfig()
    folds = stratified_folds(data, k, seed)

    def fold_data(f):
        train, held = [], {}
        for task, fold in zip(data.tasks, folds):
            tr = fold != f
            if not tr.any():
                raise DataError(f"task {task.id!r} has no training rows in fold {f}")
            train.append(Task(task.id, task.features[tr], task.labels[tr]))
            if (~tr).any():
                held[task.id] = (task.features[~tr], task.labels[~tr])
        return MultiTaskDataset(tuple(train), data.num_features, data.num_classes), held

    splits = [fold_data(f) for f in range(k)]

    def cell(args):
        lam, f = args
        train, held = splits[f]
        model = train_rmtor(train, variant, lam, fcfg, acfg)
        correct = sum(int(np.sum(model.predict(tid, X) == y)) for tid, (X, y) in held.items())
        total = sum(len(y) for _, y in held.values())
        return correct / total

    cells = [(lam, f) for lam in grid for f in range(k)]
    if n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as pool:
            accs = list(pool.map(cell, cells))
    else:
        accs = [cell(c) for c in cells]

    scores = {lam: float(np.mean(accs[i * k:(i + 1) * k])) for i, lam in enumerate(grid)}
    best = max(grid, key=lambda lam: (scores[lam], lam))
    return best, scores
