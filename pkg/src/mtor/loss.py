"""Immediate-threshold and all-threshold logistic ordinal losses.

Both losses are normalized per task by ``1/n_t`` and summed over tasks, so the
returned gradients are exact derivatives of the returned values. The
score-level helpers (``immediate_score_terms``, ``all_score_terms``) are shared
with the deep model, where the latent score comes from a network instead of
``X @ W_t``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from mtor.core import DataError, MultiTaskDataset, ThresholdSet, Variant


def margin(d):
    """``log(1 + exp(d))``, evaluated without overflow."""
    out = np.logaddexp(0.0, np.asarray(d, dtype=float))
    return out if np.ndim(out) else float(out)


def sigmoid(d):
    """Logistic function; the derivative of :func:`margin`."""
    out = expit(np.asarray(d, dtype=float))
    return out if np.ndim(out) else float(out)


@dataclass(frozen=True)
class LossValue:
    total: float
    per_task: np.ndarray


@dataclass(frozen=True)
class LossGradient:
    d_weights: np.ndarray
    d_thresholds: np.ndarray


@dataclass(frozen=True)
class ScoreTerms:
    """Per-row loss and its derivatives with respect to scores and thresholds.

    ``row_loss`` and ``d_score`` are unweighted. ``d_thresholds`` is already
    accumulated into a ``(T, K)`` array using the supplied row weights. The
    derivative fields are ``None`` when only the loss was requested.
    """

    row_loss: np.ndarray
    d_score: np.ndarray | None = None
    d_thresholds: np.ndarray | None = None


def immediate_score_terms(scores, task_index, labels, th_values, row_weight,
                          with_grad=True, onehot=None) -> ScoreTerms:
    th_values = np.asarray(th_values, dtype=float)
    below = th_values[task_index, labels - 1] - scores
    above = scores - th_values[task_index, labels]
    row_loss = margin(below) + margin(above)
    if not with_grad:
        return ScoreTerms(row_loss)
    g_below = sigmoid(below)
    g_above = sigmoid(above)

    T, K = th_values.shape
    flat = task_index * K + labels
    d_th = np.bincount(flat - 1, weights=row_weight * g_below, minlength=T * K)
    d_th -= np.bincount(flat, weights=row_weight * g_above, minlength=T * K)
    return ScoreTerms(row_loss, g_above - g_below, d_th.reshape(T, K))


def all_score_terms(scores, task_index, labels, th_values, row_weight,
                    with_grad=True, onehot=None) -> ScoreTerms:
    th_values = np.asarray(th_values, dtype=float)
    T, K = th_values.shape
    # +1 where mu >= y (score should sit below theta_mu), -1 otherwise
    z = np.where(np.arange(1, K + 1)[None, :] >= labels[:, None], 1.0, -1.0)
    m = z * (scores[:, None] - th_values[task_index])
    row_loss = margin(m).sum(axis=1)
    if not with_grad:
        return ScoreTerms(row_loss)
    zg = z * sigmoid(m)
    if onehot is None:
        onehot = np.zeros((task_index.shape[0], T))
        onehot[np.arange(task_index.shape[0]), task_index] = 1.0
    d_th = -(onehot.T @ (row_weight[:, None] * zg))
    return ScoreTerms(row_loss, zg.sum(axis=1), d_th)


_TERMS = {Variant.IMMEDIATE: immediate_score_terms, Variant.ALL: all_score_terms}


def score_terms(variant: Variant, scores, task_index, labels, th_values, row_weight,
                with_grad=True, onehot=None) -> ScoreTerms:
    return _TERMS[Variant(variant)](
        scores, task_index, labels, th_values, row_weight, with_grad, onehot
    )


def _check(data: MultiTaskDataset, w, th: ThresholdSet, variant: Variant) -> np.ndarray:
    if th.variant is not variant:
        raise DataError(f"variant mismatch: expected {variant.value} thresholds, got {th.variant.value}")
    w = np.asarray(w, dtype=float)
    if w.shape != (data.num_features, data.num_tasks):
        raise DataError(
            f"weight matrix shape {w.shape} does not match (G, T) = "
            f"({data.num_features}, {data.num_tasks})"
        )
    if th.num_tasks != data.num_tasks or th.num_classes != data.num_classes:
        raise DataError(
            f"thresholds cover {th.num_tasks} tasks / {th.num_classes} classes, "
            f"dataset has {data.num_tasks} / {data.num_classes}"
        )
    return w


def evaluate(data: MultiTaskDataset, w, th_values, variant: Variant, with_grad: bool = True):
    """Loss (and optionally gradient) for raw arrays, skipping shape checks.

    Returns ``(LossValue, LossGradient | None)``. Used by the training loops,
    where thresholds are plain arrays between repairs.
    """
    p = data.packed
    T = data.num_tasks
    scores = np.einsum("ng,ng->n", p.X, w.T[p.task_index])
    terms = score_terms(
        variant, scores, p.task_index, p.labels, th_values, p.row_weight, with_grad, p.onehot
    )
    per_task = (terms.row_loss * p.row_weight) @ p.onehot
    value = LossValue(float(per_task.sum()), per_task)
    if not with_grad:
        return value, None
    coef = p.onehot * (terms.d_score * p.row_weight)[:, None]
    return value, LossGradient(p.X.T @ coef, terms.d_thresholds)


def loss_immediate(data: MultiTaskDataset, w, th: ThresholdSet) -> LossValue:
    w = _check(data, w, th, Variant.IMMEDIATE)
    return evaluate(data, w, th.values, Variant.IMMEDIATE, with_grad=False)[0]


def grad_immediate(data: MultiTaskDataset, w, th: ThresholdSet) -> LossGradient:
    w = _check(data, w, th, Variant.IMMEDIATE)
    return evaluate(data, w, th.values, Variant.IMMEDIATE)[1]


def loss_all(data: MultiTaskDataset, w, th: ThresholdSet) -> LossValue:
    w = _check(data, w, th, Variant.ALL)
    return evaluate(data, w, th.values, Variant.ALL, with_grad=False)[0]


def grad_all(data: MultiTaskDataset, w, th: ThresholdSet) -> LossGradient:
    w = _check(data, w, th, Variant.ALL)
    return evaluate(data, w, th.values, Variant.ALL)[1]


def ordinal_loss(data: MultiTaskDataset, w, th: ThresholdSet) -> LossValue:
    """Dispatch on the variant carried by ``th``."""
    w = _check(data, w, th, th.variant)
    return evaluate(data, w, th.values, th.variant, with_grad=False)[0]


def ordinal_grad(data: MultiTaskDataset, w, th: ThresholdSet) -> LossGradient:
    w = _check(data, w, th, th.variant)
    return evaluate(data, w, th.values, th.variant)[1]
