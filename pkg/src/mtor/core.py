"""Domain types shared by the shallow and deep models.

Labels are 1-based ordinal integers ``1..U`` at every public boundary. Task
indices are ordinary 0-based Python positions into ``MultiTaskDataset.tasks``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple, Sequence

import numpy as np


class DataError(ValueError):
    """Input data violates a dataset, threshold, or file-format invariant."""


class NumericalError(RuntimeError):
    """An optimizer met a non-finite loss or gradient."""


class Variant(str, enum.Enum):
    IMMEDIATE = "immediate"
    ALL = "all"


def _frozen(a, dtype=float) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class Task:
    """One subpopulation: an ``n_t x G`` design matrix and its ordinal labels."""

    id: str
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "id", str(self.id))
        object.__setattr__(self, "features", _frozen(self.features))
        labels = np.asarray(self.labels)
        if labels.size and not np.all(np.equal(np.mod(labels, 1), 0)):
            raise DataError(f"task {self.id!r}: labels must be integers")
        object.__setattr__(self, "labels", _frozen(labels, dtype=np.int64))

    @property
    def n(self) -> int:
        return self.labels.shape[0]

    def __eq__(self, other):
        if not isinstance(other, Task):
            return NotImplemented
        return (
            self.id == other.id
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
        )


class Packed(NamedTuple):
    """All tasks stacked row-wise, for vectorized loss evaluation."""

    X: np.ndarray  # (N, G)
    task_index: np.ndarray  # (N,) 0-based task of each row
    labels: np.ndarray  # (N,) 1-based labels
    row_weight: np.ndarray  # (N,) 1/n_t of the row's task
    counts: np.ndarray  # (T,)
    onehot: np.ndarray  # (N, T) task membership


@dataclass(frozen=True, eq=False)
class MultiTaskDataset:
    tasks: tuple[Task, ...]
    num_features: int
    num_classes: int
    feature_names: tuple[str, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "tasks", tuple(self.tasks))
        if self.feature_names is not None:
            object.__setattr__(self, "feature_names", tuple(self.feature_names))

    @property
    def num_tasks(self) -> int:
        return len(self.tasks)

    @property
    def task_ids(self) -> tuple[str, ...]:
        return tuple(t.id for t in self.tasks)

    @property
    def num_instances(self) -> int:
        return sum(t.n for t in self.tasks)

    def task_position(self, task_id: str) -> int:
        for i, t in enumerate(self.tasks):
            if t.id == task_id:
                return i
        raise KeyError(task_id)

    @cached_property
    def packed(self) -> Packed:
        counts = np.array([t.n for t in self.tasks], dtype=np.int64)
        X = np.concatenate([t.features.reshape(t.n, self.num_features) for t in self.tasks])
        task_index = np.repeat(np.arange(self.num_tasks), counts)
        labels = np.concatenate([t.labels for t in self.tasks])
        row_weight = 1.0 / counts[task_index]
        onehot = np.zeros((task_index.shape[0], self.num_tasks))
        onehot[np.arange(task_index.shape[0]), task_index] = 1.0
        for a in (X, task_index, labels, row_weight, counts, onehot):
            a.setflags(write=False)
        return Packed(X, task_index, labels, row_weight, counts, onehot)

    def __eq__(self, other):
        if not isinstance(other, MultiTaskDataset):
            return NotImplemented
        return (
            self.num_features == other.num_features
            and self.num_classes == other.num_classes
            and self.feature_names == other.feature_names
            and self.tasks == other.tasks
        )


def validate_dataset(raw: MultiTaskDataset) -> MultiTaskDataset:
    """Check every dataset invariant and return ``raw`` unchanged.

    Raises
    ------
    DataError
        On an empty dataset or task, a feature-dimension mismatch, a
        non-finite feature, or a label outside ``[1, U]``. Messages name the
        task id and, where relevant, the row index.
    """
    G, U = raw.num_features, raw.num_classes
    if not isinstance(G, (int, np.integer)) or G < 1:
        raise DataError(f"num_features must be a positive integer, got {G!r}")
    if not isinstance(U, (int, np.integer)) or U < 2:
        raise DataError(f"num_classes must be an integer >= 2, got {U!r}")
    if not raw.tasks:
        raise DataError("dataset has no tasks")
    if len(set(raw.task_ids)) != len(raw.tasks):
        raise DataError("duplicate task ids")
    if raw.feature_names is not None and len(raw.feature_names) != G:
        raise DataError(f"{len(raw.feature_names)} feature names for {G} features")
    for task in raw.tasks:
        if task.n == 0:
            raise DataError(f"task {task.id!r} is empty")
        if task.features.ndim != 2 or task.features.shape[1] != G:
            raise DataError(
                f"task {task.id!r}: feature dimension mismatch "
                f"(expected {G}, got {task.features.shape[-1] if task.features.ndim else 0})"
            )
        if task.features.shape[0] != task.n:
            raise DataError(
                f"task {task.id!r}: {task.features.shape[0]} feature rows but {task.n} labels"
            )
        bad = np.flatnonzero(~np.isfinite(task.features).all(axis=1))
        if bad.size:
            raise DataError(f"task {task.id!r}, row {bad[0]}: non-finite feature value")
        bad = np.flatnonzero((task.labels < 1) | (task.labels > U))
        if bad.size:
            raise DataError(
                f"task {task.id!r}, row {bad[0]}: label outside [1,U] (got {task.labels[bad[0]]}, U={U})"
            )
    return raw


@dataclass(frozen=True, eq=False)
class ThresholdSet:
    """Per-task ordered cut points, one row per task.

    Immediate rows hold ``U + 1`` learned values ``theta_0..theta_U``; All rows
    hold only the interior ``theta_1..theta_{U-1}`` (the infinite endpoints are
    implicit).
    """

    variant: Variant
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        vals = np.array(self.values, dtype=float, ndmin=2)
        if vals.ndim != 2:
            raise DataError(f"threshold values must be 2-D (tasks x cuts), got shape {vals.shape}")
        min_len = 3 if self.variant is Variant.IMMEDIATE else 1
        if vals.shape[1] < min_len:
            raise DataError(f"{self.variant.value} thresholds need at least {min_len} values per task")
        if not np.isfinite(vals).all():
            raise DataError("thresholds must be finite")
        if vals.shape[1] > 1 and not (np.diff(vals, axis=1) > 0).all():
            raise DataError("thresholds must be strictly increasing within each task")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def num_tasks(self) -> int:
        return self.values.shape[0]

    @property
    def num_classes(self) -> int:
        k = self.values.shape[1]
        return k - 1 if self.variant is Variant.IMMEDIATE else k + 1

    def interior(self) -> np.ndarray:
        """Finite cut points ``theta_1..theta_{U-1}`` used by the prediction rule."""
        if self.variant is Variant.IMMEDIATE:
            return self.values[:, 1:-1]
        return self.values

    @classmethod
    def initial(cls, variant: Variant, num_tasks: int, num_classes: int) -> ThresholdSet:
        """Evenly spaced cut points symmetric around zero."""
        variant = Variant(variant)
        U = num_classes
        if U > 2:
            inner = np.linspace(-1.0, 1.0, U - 1)
            spacing = 2.0 / (U - 2)
        else:
            inner = np.zeros(1)
            spacing = 1.0
        if variant is Variant.IMMEDIATE:
            inner = np.concatenate([[inner[0] - spacing], inner, [inner[-1] + spacing]])
        return cls(variant, np.tile(inner, (num_tasks, 1)))

    def to_dict(self) -> dict:
        return {"variant": self.variant.value, "values": self.values.tolist()}

    @classmethod
    def from_dict(cls, doc: dict) -> ThresholdSet:
        return cls(Variant(doc["variant"]), np.array(doc["values"], dtype=float))

    def __eq__(self, other):
        if not isinstance(other, ThresholdSet):
            return NotImplemented
        return self.variant is other.variant and np.array_equal(self.values, other.values)


def segment_labels(scores, interior) -> np.ndarray:
    """Map latent scores to labels: ``mu`` where ``theta_{mu-1} < s <= theta_mu``."""
    return np.searchsorted(np.asarray(interior), np.asarray(scores), side="left") + 1


@dataclass(frozen=True, eq=False)
class RmtorModel:
    """Trained shallow model: one weight column and one threshold row per task."""

    weights: np.ndarray
    thresholds: ThresholdSet
    lam: float
    task_ids: tuple[str, ...]
    training_log: tuple[tuple[int, float], ...] = field(default=())

    def __post_init__(self):
        w = _frozen(self.weights)
        if w.ndim != 2:
            raise DataError(f"weight matrix must be G x T, got shape {w.shape}")
        if not np.isfinite(w).all():
            raise DataError("weight matrix has non-finite entries")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "task_ids", tuple(str(t) for t in self.task_ids))
        object.__setattr__(
            self, "training_log", tuple((int(i), float(v)) for i, v in self.training_log)
        )
        T = len(self.task_ids)
        if w.shape[1] != T or self.thresholds.num_tasks != T:
            raise DataError(
                f"{T} task ids, {w.shape[1]} weight columns, {self.thresholds.num_tasks} threshold rows"
            )

    @property
    def variant(self) -> Variant:
        return self.thresholds.variant

    @property
    def num_features(self) -> int:
        return self.weights.shape[0]

    @property
    def num_classes(self) -> int:
        return self.thresholds.num_classes

    def scores(self, task_index: int, X) -> np.ndarray:
        return np.asarray(X, dtype=float) @ self.weights[:, task_index]

    def predict(self, task_id: str, X) -> np.ndarray:
        t = self.task_ids.index(task_id)
        return segment_labels(self.scores(t, X), self.thresholds.interior()[t])

    def to_dict(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "thresholds": self.thresholds.to_dict(),
            "lambda": self.lam,
            "task_ids": list(self.task_ids),
            "training_log": [list(e) for e in self.training_log],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> RmtorModel:
        G = len(doc["weights"])
        T = len(doc["task_ids"])
        return cls(
            weights=np.array(doc["weights"], dtype=float).reshape(G, T),
            thresholds=ThresholdSet.from_dict(doc["thresholds"]),
            lam=float(doc["lambda"]),
            task_ids=tuple(doc["task_ids"]),
            training_log=tuple(tuple(e) for e in doc.get("training_log", ())),
        )


def single_task_dataset(task: Task, num_features: int, num_classes: int,
                        feature_names: Sequence[str] | None = None) -> MultiTaskDataset:
    return MultiTaskDataset((task,), num_features, num_classes, feature_names)
