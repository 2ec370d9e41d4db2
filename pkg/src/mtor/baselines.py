"""Single-task ordinal baselines in the global (pooled) and individual settings."""

from __future__ import annotations

import enum
from concurrent.futures import ThreadPoolExecutor
from typing import Mapping

import numpy as np

from mtor.core import DataError, MultiTaskDataset, Task, Variant, validate_dataset
from mtor.deep import DmtorArchitecture, SgdConfig, train_dmtor
from mtor.optimizer import AlternatingConfig, FistaConfig, train_rmtor

GLOBAL_TASK_ID = "__global__"


class StlSetting(str, enum.Enum):
    GLOBAL = "global"
    INDIVIDUAL = "individual"


class StlModels(dict):
    """Mapping task id -> single-task model, usable wherever a predictor is expected.

    In the global setting every entry is the same model object, and task ids
    unseen during training are served by it as well.
    """

    def __init__(self, setting: StlSetting, models: dict):
        super().__init__(models)
        self.setting = StlSetting(setting)

    def model_for(self, task_id: str):
        if task_id in self:
            return self[task_id]
        if self.setting is StlSetting.GLOBAL and self:
            return next(iter(self.values()))
        raise KeyError(f"no model for task {task_id!r}")

    def predict(self, task_id: str, X) -> np.ndarray:
        model = self.model_for(task_id)
        return model.predict(model.task_ids[0], X)

    @property
    def distinct_models(self) -> list:
        seen, out = set(), []
        for m in self.values():
            if id(m) not in seen:
                seen.add(id(m))
                out.append(m)
        return out


def pooled(data: MultiTaskDataset) -> MultiTaskDataset:
    """All tasks merged into one task; U stays that of the full dataset."""
    X = np.concatenate([t.features for t in data.tasks])
    y = np.concatenate([t.labels for t in data.tasks])
    return MultiTaskDataset((Task(GLOBAL_TASK_ID, X, y),), data.num_features, data.num_classes,
                            data.feature_names)


def isolated(data: MultiTaskDataset, task: Task) -> MultiTaskDataset:
    """One task on its own. U is the largest label that task has seen (at least 2)."""
    U = max(int(task.labels.max()), 2)
    return MultiTaskDataset((task,), data.num_features, U, data.feature_names)


def _fit_all(fit, datasets, n_jobs):
    if n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as pool:
            return list(pool.map(fit, datasets))
    return [fit(d) for d in datasets]


def _train(data, setting, fit, n_jobs):
    validate_dataset(data)
    setting = StlSetting(setting)
    if setting is StlSetting.GLOBAL:
        model = fit(pooled(data))
        return StlModels(setting, {tid: model for tid in data.task_ids})
    models = _fit_all(fit, [isolated(data, t) for t in data.tasks], n_jobs)
    return StlModels(setting, dict(zip(data.task_ids, models)))


def train_stl_shallow(
    data: MultiTaskDataset,
    setting: StlSetting | str,
    variant: Variant | str,
    lam: float | Mapping[str, float],
    fista_config: FistaConfig = FistaConfig(),
    alternating_config: AlternatingConfig = AlternatingConfig(),
    n_jobs: int = 1,
) -> StlModels:
    """Fit one shallow single-task model per setting.

    ``lam`` is either one penalty for every model or, in the individual
    setting, a mapping from task id to that task's penalty.
    """
    if isinstance(lam, Mapping) and StlSetting(setting) is StlSetting.GLOBAL:
        raise ValueError("per-task lambdas need the individual setting")

    def fit(d):
        penalty = lam[d.task_ids[0]] if isinstance(lam, Mapping) else lam
        return train_rmtor(d, variant, penalty, fista_config, alternating_config)

    return _train(data, setting, fit, n_jobs)


def stl_architecture(input_dim: int, num_classes: int,
                     widths: tuple[int, ...] = (64, 64, 64)) -> DmtorArchitecture:
    """Single-task network: ``len(widths)`` ReLU hidden layers and a linear output."""
    return DmtorArchitecture(input_dim, 1, num_classes, shared_widths=widths, task_widths=(),
                             linear_last_shared=False)


def train_stl_deep(
    data: MultiTaskDataset,
    setting: StlSetting | str,
    variant: Variant | str,
    widths: tuple[int, ...] = (64, 64, 64),
    cfg: SgdConfig = SgdConfig(),
    n_jobs: int = 1,
) -> StlModels:
    def fit(d):
        if d.num_tasks != 1:
            raise DataError("single-task training got a multi-task dataset")
        return train_dmtor(d, variant, stl_architecture(d.num_features, d.num_classes, widths), cfg)

    return _train(data, setting, fit, n_jobs)
