import numpy as np
import pytest

from mtor.baselines import (
    GLOBAL_TASK_ID,
    StlSetting,
    pooled,
    stl_architecture,
    train_stl_deep,
    train_stl_shallow,
)
from mtor.core import MultiTaskDataset, Task
from mtor.data import SynthSpec, synthesize
from mtor.deep import SgdConfig
from mtor.evaluation import evaluate


@pytest.fixture(scope="module")
def data():
    return synthesize(SynthSpec(num_tasks=3, per_task_n=(40,), num_features=4, seed=8))[0]


class TestShallow:
    def test_model_counts(self, data):
        glob = train_stl_shallow(data, "global", "immediate", 0.01)
        ind = train_stl_shallow(data, StlSetting.INDIVIDUAL, "immediate", 0.01)
        assert set(glob) == set(ind) == set(data.task_ids)
        assert len(glob.distinct_models) == 1 and len(ind.distinct_models) == 3
        assert all(m.weights.shape == (4, 1) for m in ind.values())

    def test_global_serves_unseen_tasks(self, data):
        glob = train_stl_shallow(data, "global", "all", 0.01)
        X = data.tasks[0].features
        np.testing.assert_array_equal(glob.predict("never-seen", X), glob.predict("task1", X))
        ind = train_stl_shallow(data, "individual", "all", 0.01)
        with pytest.raises(KeyError):
            ind.predict("never-seen", X)

    def test_settings_coincide_for_one_task(self, data):
        one = MultiTaskDataset(data.tasks[:1], 4, 3)
        g = train_stl_shallow(one, "global", "immediate", 0.02)["task1"]
        i = train_stl_shallow(one, "individual", "immediate", 0.02)["task1"]
        np.testing.assert_array_equal(g.weights, i.weights)
        assert g.thresholds == i.thresholds

    def test_replicated_tasks_predict_alike(self, data):
        t = data.tasks[0]
        reps = MultiTaskDataset(tuple(Task(f"r{k}", t.features, t.labels) for k in range(3)), 4, 3)
        g = train_stl_shallow(reps, "global", "immediate", 0.01)
        i = train_stl_shallow(reps, "individual", "immediate", 0.01)
        X = data.tasks[1].features
        for tid in reps.task_ids:
            np.testing.assert_array_equal(g.predict(tid, X), i.predict(tid, X))

    def test_individual_ignores_other_tasks_labels(self):
        rng = np.random.default_rng(0)
        tasks = (
            Task("low", rng.standard_normal((20, 2)), np.tile([1, 2], 10)),
            Task("full", rng.standard_normal((20, 2)), np.tile([1, 2, 3, 4], 5)),
        )
        data = MultiTaskDataset(tasks, 2, 4)
        ind = train_stl_shallow(data, "individual", "immediate", 0.01)
        assert ind["low"].num_classes == 2 and ind["low"].thresholds.values.shape == (1, 3)
        assert ind["full"].num_classes == 4
        glob = train_stl_shallow(data, "global", "immediate", 0.01)
        assert glob["low"].num_classes == 4

    def test_per_task_lambdas(self, data):
        lams = {"task1": 1e6, "task2": 0.001, "task3": 0.001}
        ind = train_stl_shallow(data, "individual", "immediate", lams)
        assert not ind["task1"].weights.any() and ind["task2"].weights.any()
        with pytest.raises(ValueError):
            train_stl_shallow(data, "global", "immediate", lams)

    def test_parallel_matches_serial(self, data):
        a = train_stl_shallow(data, "individual", "all", 0.01)
        b = train_stl_shallow(data, "individual", "all", 0.01, n_jobs=3)
        for tid in data.task_ids:
            np.testing.assert_array_equal(a[tid].weights, b[tid].weights)

    def test_reports_through_evaluate(self, data):
        rep = evaluate(train_stl_shallow(data, "individual", "immediate", 0.01), data)
        assert set(rep.per_task) == set(data.task_ids) and 0 <= rep.accuracy <= 1

    def test_pooled_keeps_all_rows(self, data):
        p = pooled(data)
        assert p.task_ids == (GLOBAL_TASK_ID,) and p.num_instances == data.num_instances


class TestDeep:
    def test_three_hidden_relu_layers(self):
        arch = stl_architecture(5, 4)
        assert arch.num_tasks == 1 and arch.num_hidden_layers == 3
        assert not arch.linear_last_shared

    def test_models_and_one_task_equivalence(self, data):
        cfg = SgdConfig(epochs=3)
        ind = train_stl_deep(data, "individual", "immediate", (6, 5, 4), cfg)
        assert set(ind) == set(data.task_ids) and len(ind.distinct_models) == 3
        assert all(m.architecture.num_hidden_layers == 3 for m in ind.values())
        one = MultiTaskDataset(data.tasks[:1], 4, 3)
        g = train_stl_deep(one, "global", "immediate", (6, 5, 4), cfg)["task1"]
        i = train_stl_deep(one, "individual", "immediate", (6, 5, 4), cfg)["task1"]
        for a, b in zip(g.parameters(), i.parameters()):
            np.testing.assert_array_equal(a, b)
        assert g.thresholds == i.thresholds
