"""CSV ingestion, CSV export and a latent-variable synthetic generator."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from mtor.core import DataError, MultiTaskDataset, Task, ThresholdSet, Variant, segment_labels, validate_dataset


@dataclass(frozen=True)
class IngestSpec:
    path: str | Path
    label_column: str = "label"
    task_column: str = "task"
    feature_columns: Sequence[str] | None = None  # None means every remaining column
    add_bias_feature: bool = False
    delimiter: str = ","
    num_classes: int | None = None  # override for datasets whose top class is absent

    def __post_init__(self):
        if self.label_column == self.task_column:
            raise DataError("label_column and task_column must differ")
        if len(self.delimiter) != 1:
            raise DataError("delimiter must be a single character")


def load_csv(spec: IngestSpec) -> MultiTaskDataset:
    """Read a delimited file into a dataset, one task per distinct group value.

    Tasks are ordered by first appearance of their group value. ``U`` is the
    largest observed label unless ``spec.num_classes`` overrides it.
    """
    path = Path(spec.path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh, delimiter=spec.delimiter))
    rows = [r for r in rows if r]
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if len(set(header)) != len(header):
        dupes = sorted({h for h in header if header.count(h) > 1})
        raise DataError(f"{path}: duplicate header names {dupes}")
    col = {h: i for i, h in enumerate(header)}
    for name in (spec.label_column, spec.task_column):
        if name not in col:
            raise DataError(f"{path}: unknown column {name!r}")
    if spec.feature_columns is None:
        feat_names = [h for h in header if h not in (spec.label_column, spec.task_column)]
    else:
        feat_names = list(spec.feature_columns)
        for name in feat_names:
            if name not in col:
                raise DataError(f"{path}: unknown column {name!r}")
    if not feat_names:
        raise DataError(f"{path}: no feature columns")
    body = rows[1:]
    if not body:
        raise DataError(f"{path}: no data rows")

    feat_idx = [col[h] for h in feat_names]
    groups: dict[str, tuple[list, list]] = {}
    for lineno, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise DataError(f"{path}, line {lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            feats = [float(row[i]) for i in feat_idx]
        except ValueError:
            bad = next(h for h, i in zip(feat_names, feat_idx) if not _is_float(row[i]))
            raise DataError(f"{path}, line {lineno}, column {bad!r}: non-numeric value") from None
        raw_label = row[col[spec.label_column]].strip()
        try:
            label_f = float(raw_label)
        except ValueError:
            raise DataError(f"{path}, line {lineno}: non-numeric label {raw_label!r}") from None
        if label_f != int(label_f):
            raise DataError(f"{path}, line {lineno}: label {raw_label!r} is not an integer")
        xs, ys = groups.setdefault(row[col[spec.task_column]].strip(), ([], []))
        xs.append(feats)
        ys.append(int(label_f))

    U = spec.num_classes
    observed = sorted({y for _, ys in groups.values() for y in ys})
    if observed[0] < 1:
        raise DataError(f"{path}: label outside [1,U] (got {observed[0]})")
    if U is None:
        U = max(observed)
    missing = sorted(set(range(1, U + 1)) - set(observed))
    if missing:
        warnings.warn(f"{path}: classes {missing} have no instances", stacklevel=2)

    G = len(feat_names)
    if spec.add_bias_feature:
        feat_names = feat_names + ["bias"]
    tasks = []
    for tid, (xs, ys) in groups.items():
        X = np.array(xs, dtype=float).reshape(len(xs), G)
        if spec.add_bias_feature:
            X = np.hstack([X, np.ones((X.shape[0], 1))])
        tasks.append(Task(tid, X, np.array(ys)))
    return validate_dataset(MultiTaskDataset(tuple(tasks), len(feat_names), U, tuple(feat_names)))


def _is_float(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def write_csv(data: MultiTaskDataset, path: str | Path, delimiter: str = ",") -> None:
    """Write ``task, label, features...`` rows with round-trip float formatting."""
    names = data.feature_names or tuple(f"f{g + 1}" for g in range(data.num_features))
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow(["task", "label", *names])
        for task in data.tasks:
            for x, y in zip(task.features, task.labels):
                w.writerow([task.id, int(y), *(repr(float(v)) for v in x)])


@dataclass(frozen=True)
class SynthSpec:
    num_tasks: int = 4
    per_task_n: Sequence[int] = field(default=(200,))
    num_features: int = 10
    num_classes: int = 3
    relatedness: float = 0.8
    noise_sd: float = 0.5
    sparsity: float = 0.0
    seed: int = 0

    def __post_init__(self):
        n = tuple(int(v) for v in self.per_task_n)
        if len(n) == 1:
            n = n * self.num_tasks
        object.__setattr__(self, "per_task_n", n)
        if self.num_tasks < 1 or self.num_features < 1:
            raise ValueError("num_tasks and num_features must be positive")
        if self.num_classes < 2:
            raise ValueError("num_classes must be at least 2")
        if len(n) != self.num_tasks:
            raise ValueError(f"per_task_n has {len(n)} entries for {self.num_tasks} tasks")
        if min(n) < self.num_classes:
            raise ValueError("every task needs at least num_classes instances")
        if not 0.0 <= self.relatedness <= 1.0:
            raise ValueError("relatedness must lie in [0, 1]")
        if not self.noise_sd >= 0:
            raise ValueError("noise_sd must be nonnegative")
        if not 0.0 <= self.sparsity <= 1.0:
            raise ValueError("sparsity must lie in [0, 1]")


@dataclass(frozen=True)
class GroundTruth:
    weights: np.ndarray
    thresholds: ThresholdSet
    spec: SynthSpec


def synthesize(spec: SynthSpec) -> tuple[MultiTaskDataset, GroundTruth]:
    """Sample a dataset from the latent-variable threshold model.

    Task weights mix a shared base vector with task-specific noise according
    to ``relatedness``; a ``sparsity`` fraction of feature rows is zeroed in
    every task. Cut points sit midway between order statistics of each task's
    latent scores so that classes are balanced to within one instance.
    """
    rng = np.random.default_rng(spec.seed)
    G, T, U = spec.num_features, spec.num_tasks, spec.num_classes
    base = rng.standard_normal(G)
    own = rng.standard_normal((G, T))
    W = spec.relatedness * base[:, None] + (1.0 - spec.relatedness) * own
    n_zero = int(round(spec.sparsity * G))
    zero_rows = rng.choice(G, size=n_zero, replace=False)
    W[zero_rows] = 0.0

    tasks, cuts = [], []
    for t, n in enumerate(spec.per_task_n):
        X = rng.standard_normal((n, G))
        latent = X @ W[:, t] + spec.noise_sd * rng.standard_normal(n)
        order = np.sort(latent)
        ranks = np.array([int(np.floor(k * n / U + 0.5)) for k in range(1, U)])
        c = 0.5 * (order[ranks - 1] + order[ranks])
        cuts.append(c)
        tasks.append(Task(f"task{t + 1}", X, segment_labels(latent, c)))
    names = tuple(f"f{g + 1}" for g in range(G))
    data = validate_dataset(MultiTaskDataset(tuple(tasks), G, U, names))
    W.setflags(write=False)
    return data, GroundTruth(W, ThresholdSet(Variant.ALL, np.array(cuts)), spec)
