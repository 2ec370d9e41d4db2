import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_dataset, random_thresholds
from mtor import loss
from mtor.core import DataError, MultiTaskDataset, Task, ThresholdSet, Variant


def fd_gradient(data, w, th, h=1e-6):
    """Central differences of the loss over every weight and threshold entry."""
    f = loss.ordinal_loss
    dw = np.zeros_like(w)
    for idx in np.ndindex(w.shape):
        wp, wm = w.copy(), w.copy()
        wp[idx] += h
        wm[idx] -= h
        dw[idx] = (f(data, wp, th).total - f(data, wm, th).total) / (2 * h)
    dth = np.zeros_like(th.values)
    for idx in np.ndindex(th.values.shape):
        tp, tm = th.values.copy(), th.values.copy()
        tp[idx] += h
        tm[idx] -= h
        dth[idx] = (
            f(data, w, ThresholdSet(th.variant, tp)).total - f(data, w, ThresholdSet(th.variant, tm)).total
        ) / (2 * h)
    return dw, dth


def assert_rel_close(analytic, numeric, rtol):
    # relative error with an absolute floor for entries that are ~0
    err = np.abs(analytic - numeric) / np.maximum(np.abs(numeric), 1e-3)
    assert err.max() < rtol, err.max()


def one(x, w, th, y, variant, U):
    data = MultiTaskDataset((Task("a", np.array([x], float), [y]),), len(x), U)
    return data, np.array(w, float).reshape(-1, 1), ThresholdSet(variant, [th])


class TestMarginSigmoid:
    def test_margin_values(self):
        assert loss.margin(0.0) == pytest.approx(0.6931471805599453, abs=1e-16)
        assert loss.margin(1000.0) == pytest.approx(1000.0, abs=1e-12)
        assert loss.margin(-1000.0) == pytest.approx(0.0, abs=1e-12)

    def test_margin_bounds(self):
        d = np.linspace(-60, 60, 1201)
        m = loss.margin(d)
        assert np.all(m >= 0) and np.all(m >= d)
        assert np.isfinite(m).all()

    def test_sigmoid_values(self):
        assert loss.sigmoid(0.0) == 0.5
        assert loss.sigmoid(2.0) == pytest.approx(0.8807970779778823, rel=1e-15)
        d = np.linspace(-40, 40, 801)
        np.testing.assert_allclose(loss.sigmoid(d) + loss.sigmoid(-d), 1.0, atol=1e-15)

    def test_sigmoid_is_margin_derivative(self):
        h = 1e-5
        d = np.linspace(-30, 30, 601)
        fd = (loss.margin(d + h) - loss.margin(d - h)) / (2 * h)
        assert np.max(np.abs(fd - loss.sigmoid(d))) < 1e-6


class TestImmediate:
    def test_single_instance_value(self):
        data, w, th = one([1.0], [0.0], [-1.0, 0.0, 1.0], 1, "immediate", 2)
        val = loss.loss_immediate(data, w, th)
        expected = math.log1p(math.exp(-1.0)) + math.log(2.0)
        assert val.total == pytest.approx(expected, rel=1e-14)
        assert val.total == pytest.approx(1.0064089, abs=5e-8)

    def test_equal_thresholds_forbidden(self):
        with pytest.raises(DataError):
            ThresholdSet("immediate", [[-1.0, 0.0, 0.0]])

    def test_deep_inside_segment_is_tiny(self):
        # scores sit 50 below the upper and 50 above the lower cut of their segment
        data, w, th = one([1.0], [50.0], [0.0, 100.0, 200.0], 1, "immediate", 2)
        assert loss.loss_immediate(data, w, th).total <= 2e-21

    def test_variant_mismatch(self, rng):
        data = random_dataset(rng)
        w = np.zeros((4, 2))
        with pytest.raises(DataError, match="variant mismatch"):
            loss.loss_immediate(data, w, ThresholdSet.initial("all", 2, 3))
        with pytest.raises(DataError, match="variant mismatch"):
            loss.grad_all(data, w, ThresholdSet.initial("immediate", 2, 3))

    def test_gradient_matches_finite_differences(self, rng):
        data = random_dataset(rng, G=4, T=2, U=3, n=20)
        w = 0.5 * rng.standard_normal((4, 2))
        th = random_thresholds(rng, "immediate", 2, 3)
        g = loss.grad_immediate(data, w, th)
        dw, dth = fd_gradient(data, w, th)
        assert_rel_close(g.d_weights, dw, 1e-5)
        assert_rel_close(g.d_thresholds, dth, 1e-5)

    def test_symmetric_problem_has_zero_weight_gradient(self, rng):
        X = rng.standard_normal((10, 3))
        X = np.vstack([X, -X])
        y = np.concatenate([rng.integers(1, 4, 10)] * 2)
        data = MultiTaskDataset((Task("a", X, y),), 3, 3)
        th = ThresholdSet("immediate", [[-3.0, -1.0, 1.0, 3.0]])
        g = loss.grad_immediate(data, np.zeros((3, 1)), th)
        assert np.max(np.abs(g.d_weights)) < 1e-12

    def test_single_instance_threshold_gradient_support(self):
        data, w, th = one([0.3], [1.0], [-1.0, 0.0, 1.0], 1, "immediate", 2)
        g = loss.grad_immediate(data, w, th)
        nz = np.flatnonzero(g.d_thresholds[0])
        np.testing.assert_array_equal(nz, [0, 1])
        # theta_0 gets +sigmoid(theta_0 - s); theta_1 gets -sigmoid(s - theta_1)
        assert g.d_thresholds[0, 0] == pytest.approx(1 / (1 + math.exp(1.3)))
        assert g.d_thresholds[0, 1] == pytest.approx(-1 / (1 + math.exp(-0.3)))


class TestAll:
    def test_two_classes_collapse_to_one_margin(self):
        for y, s in [(1, 0.7), (2, 0.7), (1, -2.0), (2, -2.0)]:
            data, w, th = one([1.0], [s], [0.25], y, "all", 2)
            expected = loss.margin(s - 0.25) if y == 1 else loss.margin(0.25 - s)
            assert loss.loss_all(data, w, th).total == pytest.approx(expected, rel=1e-14)

    def test_four_class_value(self):
        data, w, th = one([1.0], [0.5], [-1.0, 0.0, 1.0], 1, "all", 4)
        expected = sum(math.log1p(math.exp(0.5 - t)) for t in (-1.0, 0.0, 1.0))
        val = loss.loss_all(data, w, th).total
        assert val == pytest.approx(expected, rel=1e-14)
        # the listed 3.1495673 sums three terms each rounded to 7 places
        assert val == pytest.approx(3.1495673, abs=1.5e-7)

    def test_permutation_invariance(self, rng):
        data = random_dataset(rng, G=3, T=1, U=4, n=25)
        w = rng.standard_normal((3, 1))
        th = random_thresholds(rng, "all", 1, 4)
        perm = rng.permutation(25)
        t = data.tasks[0]
        shuffled = MultiTaskDataset((Task("t0", t.features[perm], t.labels[perm]),), 3, 4)
        assert loss.loss_all(shuffled, w, th).total == pytest.approx(loss.loss_all(data, w, th).total, rel=1e-13)

    def test_gradient_matches_finite_differences(self, rng):
        data = random_dataset(rng, G=4, T=2, U=3, n=20)
        w = 0.5 * rng.standard_normal((4, 2))
        th = random_thresholds(rng, "all", 2, 3)
        g = loss.grad_all(data, w, th)
        dw, dth = fd_gradient(data, w, th)
        assert_rel_close(g.d_weights, dw, 1e-5)
        assert_rel_close(g.d_thresholds, dth, 1e-5)

    def test_two_class_gradient_matches_collapsed_form(self, rng):
        X = rng.standard_normal((15, 3))
        y = rng.integers(1, 3, 15)
        data = MultiTaskDataset((Task("a", X, y),), 3, 2)
        w = rng.standard_normal((3, 1))
        th = ThresholdSet("all", [[0.2]])
        s = X @ w[:, 0]
        # y=1: M(s - theta); y=2: M(theta - s)
        sign = np.where(y == 1, 1.0, -1.0)
        dscore = sign * loss.sigmoid(sign * (s - 0.2)) / 15
        g = loss.grad_all(data, w, th)
        np.testing.assert_allclose(g.d_weights[:, 0], X.T @ dscore, rtol=1e-12, atol=1e-15)
        np.testing.assert_allclose(g.d_thresholds[0, 0], -dscore.sum(), rtol=1e-12)


@pytest.mark.parametrize("variant", list(Variant))
def test_threshold_and_score_directions_cancel(variant, rng):
    x = rng.standard_normal(5)
    x /= np.linalg.norm(x)
    U = 4
    th = random_thresholds(rng, variant, 1, U)
    for y in range(1, U + 1):
        data = MultiTaskDataset((Task("a", x[None, :], [y]),), 5, U)
        g = loss.ordinal_grad(data, rng.standard_normal((5, 1)), th)
        assert g.d_thresholds.sum() + x @ g.d_weights[:, 0] == pytest.approx(0.0, abs=1e-14)


@pytest.mark.parametrize("variant", list(Variant))
def test_loss_total_matches_per_task_and_is_nonnegative(variant, rng):
    data = random_dataset(rng, G=3, T=3, U=4, n=12)
    v = loss.ordinal_loss(data, rng.standard_normal((3, 3)), random_thresholds(rng, variant, 3, 4))
    assert v.total >= 0
    assert v.total == pytest.approx(v.per_task.sum(), rel=1e-12)


@pytest.mark.parametrize("variant", list(Variant))
def test_joint_convexity(variant, rng):
    data = random_dataset(rng, G=3, T=2, U=4, n=15)
    for _ in range(20):
        w1, w2 = rng.standard_normal((2, 3, 2))
        t1, t2 = random_thresholds(rng, variant, 2, 4), random_thresholds(rng, variant, 2, 4)
        a = rng.uniform(0.01, 0.99)
        mid = ThresholdSet(variant, a * t1.values + (1 - a) * t2.values)
        lhs = loss.ordinal_loss(data, a * w1 + (1 - a) * w2, mid).total
        rhs = a * loss.ordinal_loss(data, w1, t1).total + (1 - a) * loss.ordinal_loss(data, w2, t2).total
        assert lhs <= rhs + 1e-10


@pytest.mark.parametrize("variant", list(Variant))
@pytest.mark.parametrize("c", [0.5, 2.0, 4.0])
def test_feature_rescaling_leaves_loss_unchanged(variant, c, rng):
    # powers of two keep X*c @ W/c bit-identical to X @ W
    data = random_dataset(rng, G=3, T=2, U=3, n=10)
    scaled = MultiTaskDataset(
        tuple(Task(t.id, t.features * c, t.labels) for t in data.tasks), 3, 3
    )
    w = rng.standard_normal((3, 2))
    th = random_thresholds(rng, variant, 2, 3)
    assert loss.ordinal_loss(scaled, w / c, th).total == loss.ordinal_loss(data, w, th).total


@settings(max_examples=25, deadline=None)
@given(
    seed=st.integers(0, 2**31 - 1),
    G=st.integers(1, 8),
    T=st.integers(1, 3),
    U=st.integers(2, 5),
    n=st.integers(5, 30),
    variant=st.sampled_from(list(Variant)),
)
def test_gradients_match_finite_differences_randomized(seed, G, T, U, n, variant):
    rng = np.random.default_rng(seed)
    data = random_dataset(rng, G=G, T=T, U=U, n=n)
    w = 0.5 * rng.standard_normal((G, T))
    th = random_thresholds(rng, variant, T, U)
    g = loss.ordinal_grad(data, w, th)
    dw, dth = fd_gradient(data, w, th)
    assert_rel_close(g.d_weights, dw, 1e-5)
    assert_rel_close(g.d_thresholds, dth, 1e-5)
