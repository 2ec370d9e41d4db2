import numpy as np
import pytest

from mtor.core import MultiTaskDataset, Task, ThresholdSet, Variant


def random_dataset(rng, G=4, T=2, U=3, n=20, scale=1.0):
    """Every task gets at least one instance of each label where n allows it."""
    tasks = []
    for t in range(T):
        X = scale * rng.standard_normal((n, G))
        y = np.concatenate([np.arange(1, U + 1), rng.integers(1, U + 1, size=max(n - U, 0))])[:n]
        tasks.append(Task(f"t{t}", X, rng.permutation(y)))
    return MultiTaskDataset(tuple(tasks), G, U)


def random_thresholds(rng, variant, T, U):
    k = U + 1 if Variant(variant) is Variant.IMMEDIATE else U - 1
    gaps = rng.uniform(0.3, 1.5, size=(T, k))
    vals = np.cumsum(gaps, axis=1) - gaps.sum(axis=1, keepdims=True) / 2
    return ThresholdSet(variant, vals)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE_RESULTS: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        passed, detail = ACCEPTANCE_RESULTS[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
