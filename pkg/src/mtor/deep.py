"""Hard-parameter-sharing network for multi-task ordinal regression.

Every task reads the same stack of shared layers; each task then has its own
ReLU layers and a linear map to a scalar latent score, which is cut into
labels by the task's thresholds. Gradients are computed by hand-written
reverse-mode accumulation and the model is trained with plain mini-batch SGD.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from mtor.core import (
    DataError,
    MultiTaskDataset,
    NumericalError,
    ThresholdSet,
    Variant,
    segment_labels,
    validate_dataset,
)
from mtor.loss import score_terms
from mtor.optimizer import repair_order

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DmtorArchitecture:
    input_dim: int
    num_tasks: int
    num_classes: int
    shared_widths: tuple[int, ...] = (64, 64, 64)
    task_widths: tuple[int, ...] = (32, 32, 32)
    use_bias: bool = True
    # the last shared layer is a plain linear map; turn off for an all-ReLU stack
    linear_last_shared: bool = True

    def __post_init__(self):
        object.__setattr__(self, "shared_widths", tuple(int(w) for w in self.shared_widths))
        object.__setattr__(self, "task_widths", tuple(int(w) for w in self.task_widths))
        if not self.shared_widths:
            raise ValueError("at least one shared layer is required")
        if any(w < 1 for w in self.shared_widths + self.task_widths):
            raise ValueError("layer widths must be positive")
        if self.input_dim < 1 or self.num_tasks < 1 or self.num_classes < 2:
            raise ValueError("input_dim and num_tasks must be positive, num_classes >= 2")

    @property
    def num_hidden_layers(self) -> int:
        return len(self.shared_widths) + len(self.task_widths)

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "num_tasks": self.num_tasks,
            "num_classes": self.num_classes,
            "shared_widths": list(self.shared_widths),
            "task_widths": list(self.task_widths),
            "use_bias": self.use_bias,
            "linear_last_shared": self.linear_last_shared,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> DmtorArchitecture:
        return cls(**doc)


@dataclass
class Layer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)


@dataclass
class DmtorModel:
    """Network parameters and thresholds.

    ``task_layers[t]`` holds task ``t``'s ReLU layers; ``output[t]`` its final
    ``1 x width`` linear map.
    """

    architecture: DmtorArchitecture
    shared: list[Layer]
    task_layers: list[list[Layer]]
    output: list[Layer]
    thresholds: ThresholdSet
    task_ids: tuple[str, ...]
    training_log: list[tuple[int, float]] = field(default_factory=list)

    def __post_init__(self):
        arch = self.architecture
        dims = [arch.input_dim, *arch.shared_widths]
        if len(self.shared) != len(arch.shared_widths):
            raise DataError("shared layer count does not match architecture")
        for layer, (fan_in, fan_out) in zip(self.shared, zip(dims, dims[1:])):
            _check_layer(layer, fan_in, fan_out)
        tdims = [dims[-1], *arch.task_widths]
        if len(self.task_layers) != arch.num_tasks or len(self.output) != arch.num_tasks:
            raise DataError("per-task parameter lists do not match num_tasks")
        for layers, out in zip(self.task_layers, self.output):
            if len(layers) != len(arch.task_widths):
                raise DataError("task layer count does not match architecture")
            for layer, (fan_in, fan_out) in zip(layers, zip(tdims, tdims[1:])):
                _check_layer(layer, fan_in, fan_out)
            _check_layer(out, tdims[-1], 1)
        if self.thresholds.num_tasks != arch.num_tasks or self.thresholds.num_classes != arch.num_classes:
            raise DataError("thresholds do not match architecture")
        self.task_ids = tuple(str(t) for t in self.task_ids)
        if len(self.task_ids) != arch.num_tasks:
            raise DataError("task_ids length does not match num_tasks")

    @property
    def variant(self) -> Variant:
        return self.thresholds.variant

    @property
    def num_features(self) -> int:
        return self.architecture.input_dim

    @property
    def num_classes(self) -> int:
        return self.architecture.num_classes

    def scores(self, task_index: int, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.architecture.input_dim:
            raise DataError(
                f"input dimension mismatch: expected {self.architecture.input_dim}, got {X.shape[-1]}"
            )
        return _forward(self, task_index, X)[0]

    def predict(self, task_id: str, X) -> np.ndarray:
        t = self.task_ids.index(task_id)
        return segment_labels(self.scores(t, X), self.thresholds.interior()[t])

    def parameters(self, task_index: int | None = None) -> list[np.ndarray]:
        """Flat list of parameter arrays; restricted to one task's branch if given."""
        layers = list(self.shared)
        tasks = range(self.architecture.num_tasks) if task_index is None else [task_index]
        for t in tasks:
            layers += self.task_layers[t] + [self.output[t]]
        return [a for layer in layers for a in (layer.weight, layer.bias)]

    def to_dict(self) -> dict:
        def lay(layer):
            return {"weight": layer.weight.tolist(), "bias": layer.bias.tolist()}

        return {
            "architecture": self.architecture.to_dict(),
            "shared": [lay(x) for x in self.shared],
            "task_layers": [[lay(x) for x in ls] for ls in self.task_layers],
            "output": [lay(x) for x in self.output],
            "thresholds": self.thresholds.to_dict(),
            "task_ids": list(self.task_ids),
            "training_log": [list(e) for e in self.training_log],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> DmtorModel:
        def lay(d):
            w = np.array(d["weight"], dtype=float)
            return Layer(w.reshape(len(d["weight"]), -1), np.array(d["bias"], dtype=float))

        return cls(
            architecture=DmtorArchitecture.from_dict(doc["architecture"]),
            shared=[lay(x) for x in doc["shared"]],
            task_layers=[[lay(x) for x in ls] for ls in doc["task_layers"]],
            output=[lay(x) for x in doc["output"]],
            thresholds=ThresholdSet.from_dict(doc["thresholds"]),
            task_ids=tuple(doc["task_ids"]),
            training_log=[(int(i), float(v)) for i, v in doc.get("training_log", ())],
        )


def _check_layer(layer: Layer, fan_in: int, fan_out: int) -> None:
    if layer.weight.shape != (fan_out, fan_in) or layer.bias.shape != (fan_out,):
        raise DataError(
            f"layer shape {layer.weight.shape}/{layer.bias.shape}, expected ({fan_out}, {fan_in})/({fan_out},)"
        )


@dataclass(frozen=True)
class SgdConfig:
    learning_rate: float = 0.01
    batch_size: int = 64
    epochs: int = 200
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be positive")


def init_model(arch: DmtorArchitecture, variant: Variant | str, task_ids: Sequence[str],
               seed: int = 0) -> DmtorModel:
    """Glorot-uniform weights, zero biases, evenly spaced thresholds."""
    rng = np.random.default_rng(seed)

    def layer(fan_in, fan_out):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return Layer(rng.uniform(-limit, limit, size=(fan_out, fan_in)), np.zeros(fan_out))

    dims = [arch.input_dim, *arch.shared_widths]
    shared = [layer(a, b) for a, b in zip(dims, dims[1:])]
    tdims = [dims[-1], *arch.task_widths]
    task_layers, output = [], []
    for _ in range(arch.num_tasks):
        task_layers.append([layer(a, b) for a, b in zip(tdims, tdims[1:])])
        output.append(layer(tdims[-1], 1))
    return DmtorModel(
        arch, shared, task_layers, output,
        ThresholdSet.initial(variant, arch.num_tasks, arch.num_classes), tuple(task_ids),
    )


def _forward(model: DmtorModel, task_index: int, X: np.ndarray):
    """Scores plus the cached pre-activations/inputs needed by the backward pass."""
    arch = model.architecture
    if not 0 <= task_index < arch.num_tasks:
        raise IndexError(f"task index {task_index} out of range for {arch.num_tasks} tasks")
    layers = model.shared + model.task_layers[task_index]
    n_shared = len(model.shared)
    cache = []
    h = X
    for i, layer in enumerate(layers):
        z = h @ layer.weight.T
        if arch.use_bias:
            z = z + layer.bias
        relu = not (i == n_shared - 1 and arch.linear_last_shared)
        cache.append((h, z, relu))
        h = np.maximum(z, 0.0) if relu else z
    out = model.output[task_index]
    score = h @ out.weight[0]
    if arch.use_bias:
        score = score + out.bias[0]
    cache.append((h, score, False))
    return score, cache


def forward(model: DmtorModel, task_index: int, x) -> float:
    """Latent score of a single feature vector under task ``task_index``."""
    x = np.asarray(x, dtype=float)
    if x.shape != (model.architecture.input_dim,):
        raise DataError(f"input dimension mismatch: expected {model.architecture.input_dim}, got {x.shape}")
    return float(_forward(model, task_index, x[None, :])[0][0])


@dataclass
class DmtorGradients:
    shared: list[Layer]
    task_layers: list[Layer]
    output: Layer
    thresholds: np.ndarray  # this task's threshold row
    loss: float

    def arrays(self) -> list[np.ndarray]:
        layers = self.shared + self.task_layers + [self.output]
        return [a for layer in layers for a in (layer.weight, layer.bias)]


def batch_loss(model: DmtorModel, task_index: int, X, y) -> float:
    """Mean ordinal loss of one task's batch."""
    scores = _forward(model, task_index, np.asarray(X, dtype=float))[0]
    y = np.asarray(y, dtype=np.int64)
    th = model.thresholds.values[task_index][None, :]
    zeros = np.zeros(len(y), dtype=np.int64)
    terms = score_terms(model.variant, scores, zeros, y, th, np.full(len(y), 1.0 / len(y)), with_grad=False)
    return float(terms.row_loss.mean())


def backward(model: DmtorModel, task_index: int, X, y) -> DmtorGradients:
    """Gradients of the batch-mean ordinal loss for one task's batch.

    Covers the shared layers, the task's own layers and output map, and the
    task's threshold row. ReLU uses subgradient 0 at exactly 0.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise DataError("batch must be a nonempty 2-D array")
    if X.shape[1] != model.architecture.input_dim:
        raise DataError(f"input dimension mismatch: expected {model.architecture.input_dim}, got {X.shape[1]}")
    if y.shape != (X.shape[0],):
        raise DataError("labels must align with batch rows")
    n = X.shape[0]
    scores, cache = _forward(model, task_index, X)
    th = model.thresholds.values[task_index][None, :]
    weight = np.full(n, 1.0 / n)
    terms = score_terms(model.variant, scores, np.zeros(n, dtype=np.int64), y, th, weight)
    use_bias = model.architecture.use_bias

    # output layer: score = h @ w + b
    h_last = cache[-1][0]
    g_score = terms.d_score * weight
    out = model.output[task_index]
    g_out = Layer(
        (g_score @ h_last)[None, :],
        np.array([g_score.sum()]) if use_bias else np.zeros(1),
    )
    g_h = np.outer(g_score, out.weight[0])

    layers = model.shared + model.task_layers[task_index]
    grads: list[Layer] = [None] * len(layers)  # type: ignore[list-item]
    for i in range(len(layers) - 1, -1, -1):
        h_in, z, relu = cache[i]
        g_z = g_h * (z > 0) if relu else g_h
        grads[i] = Layer(g_z.T @ h_in, g_z.sum(axis=0) if use_bias else np.zeros(z.shape[1]))
        if i:
            g_h = g_z @ layers[i].weight

    n_shared = len(model.shared)
    return DmtorGradients(
        shared=grads[:n_shared],
        task_layers=grads[n_shared:],
        output=g_out,
        thresholds=terms.d_thresholds[0],
        loss=float(terms.row_loss.mean()),
    )


def sgd_step(model: DmtorModel, task_index: int, grads: DmtorGradients, lr: float,
             min_gap: float = 1e-6) -> None:
    """Apply one in-place SGD update to the shared layers and task ``task_index``'s branch."""
    owned = model.shared + model.task_layers[task_index] + [model.output[task_index]]
    for layer, g in zip(owned, grads.shared + grads.task_layers + [grads.output]):
        layer.weight = layer.weight - lr * g.weight
        layer.bias = layer.bias - lr * g.bias
    values = np.array(model.thresholds.values)
    values[task_index] = repair_order(
        (values[task_index] - lr * grads.thresholds)[None, :], min_gap
    )[0]
    model.thresholds = ThresholdSet(model.thresholds.variant, values)


def _batches(n_per_task: Sequence[int], batch_size: int, rng: np.random.Generator):
    """Round-robin schedule of ``(task, row indices)`` for one epoch."""
    per_task = []
    for n in n_per_task:
        order = rng.permutation(n)
        per_task.append([order[i:i + batch_size] for i in range(0, n, batch_size)])
    schedule = []
    for k in range(max(len(b) for b in per_task)):
        for t, batches in enumerate(per_task):
            if k < len(batches):
                schedule.append((t, batches[k]))
    return schedule


def train_dmtor(data: MultiTaskDataset, variant: Variant | str,
                arch: DmtorArchitecture | None = None, cfg: SgdConfig = SgdConfig(),
                min_gap: float = 1e-6) -> DmtorModel:
    """Mini-batch SGD over round-robin interleaved per-task batches.

    ``training_log`` receives ``(epoch, mean batch loss)`` for every epoch,
    the mean taken over instances.
    """
    validate_dataset(data)
    variant = Variant(variant)
    if arch is None:
        arch = DmtorArchitecture(data.num_features, data.num_tasks, data.num_classes)
    if (arch.input_dim, arch.num_tasks, arch.num_classes) != (
        data.num_features, data.num_tasks, data.num_classes
    ):
        raise DataError("architecture does not match dataset dimensions")
    model = init_model(arch, variant, data.task_ids, cfg.seed)
    # a separate stream so the batch order does not depend on the architecture size
    rng = np.random.default_rng([cfg.seed, 1])
    counts = [t.n for t in data.tasks]
    for epoch in range(1, cfg.epochs + 1):
        total, seen = 0.0, 0
        for t, rows in _batches(counts, cfg.batch_size, rng):
            task = data.tasks[t]
            g = backward(model, t, task.features[rows], task.labels[rows])
            if not np.isfinite(g.loss) or not all(np.isfinite(a).all() for a in g.arrays()):
                raise NumericalError(f"non-finite loss or gradient in epoch {epoch}, task {task.id!r}")
            sgd_step(model, t, g, cfg.learning_rate, min_gap)
            total += g.loss * len(rows)
            seen += len(rows)
        model.training_log.append((epoch, total / seen))
        log.debug("epoch %d loss %.6g", epoch, total / seen)
    return model


def clone(model: DmtorModel) -> DmtorModel:
    return copy.deepcopy(model)
