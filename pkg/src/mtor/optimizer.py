"""Proximal-gradient training of the regularized multi-task ordinal model.

The weight block is solved by FISTA with a doubling backtracking line search
and row-wise l2,1 shrinkage; the threshold block by plain gradient descent
with an order-repair sweep. ``train_rmtor`` alternates the two.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from mtor import loss as _loss
from mtor.core import (
    MultiTaskDataset,
    NumericalError,
    RmtorModel,
    ThresholdSet,
    Variant,
    validate_dataset,
)

log = logging.getLogger(__name__)

_MAX_BACKTRACKS = 80


@dataclass(frozen=True)
class FistaConfig:
    max_iterations: int = 500
    tolerance: float = 1e-6
    initial_gamma: float = 1.0
    backtrack_factor: float = 2.0

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be positive")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if not self.initial_gamma > 0:
            raise ValueError("initial_gamma must be positive")
        if not self.backtrack_factor > 1:
            raise ValueError("backtrack_factor must exceed 1")


@dataclass(frozen=True)
class AlternatingConfig:
    outer_max: int = 100
    outer_tolerance: float = 1e-5
    threshold_steps: int = 20
    threshold_lr: float = 0.01
    min_gap: float = 1e-6

    def __post_init__(self):
        if self.outer_max < 1 or self.threshold_steps < 1:
            raise ValueError("outer_max and threshold_steps must be positive")
        for name in ("outer_tolerance", "threshold_lr", "min_gap"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


def _row_norms(a: np.ndarray) -> np.ndarray:
    """Euclidean norm of every row, rescaled so tiny or huge entries neither underflow nor overflow."""
    peak = np.abs(a).max(axis=1, keepdims=True) if a.shape[1] else np.zeros((a.shape[0], 1))
    safe = np.where(peak > 0, peak, 1.0)
    return (peak * np.sqrt(np.square(a / safe).sum(axis=1, keepdims=True)))[:, 0]


def l21_norm(w) -> float:
    """Sum over rows of the row Euclidean norms."""
    return float(_row_norms(np.asarray(w, dtype=float)).sum())


def prox_l21(h, threshold: float) -> np.ndarray:
    """Row-wise group soft-thresholding.

    Solves ``argmin_W 0.5 * ||W - h||_F^2 + threshold * ||W||_{2,1}``: every row
    of ``h`` is shrunk towards zero by ``threshold`` in Euclidean length, and
    rows no longer than ``threshold`` are zeroed.
    """
    h = np.asarray(h, dtype=float)
    if threshold < 0:
        raise ValueError("threshold must be nonnegative")
    if threshold == 0:
        return h.copy()
    norms = _row_norms(h)[:, None]
    keep = norms > threshold
    scale = np.where(keep, 1.0 - threshold / np.where(keep, norms, 1.0), 0.0)
    return scale * h


def momentum_sequence(n: int) -> list[float]:
    """``d_0 .. d_n`` of the FISTA momentum recurrence, starting at ``d_0 = 1``."""
    d = [1.0]
    for _ in range(n):
        d.append((1.0 + math.sqrt(1.0 + 4.0 * d[-1] ** 2)) / 2.0)
    return d


def fista(
    loss_fn: Callable[[np.ndarray], float],
    grad_fn: Callable[[np.ndarray], np.ndarray],
    lam: float,
    w0,
    cfg: FistaConfig = FistaConfig(),
    trace: list | None = None,
    value_and_grad: Callable[[np.ndarray], tuple[float, np.ndarray]] | None = None,
) -> tuple[np.ndarray, int]:
    """Minimize ``loss_fn(W) + lam * ||W||_{2,1}`` from ``w0``.

    Parameters
    ----------
    loss_fn, grad_fn : callable
        Smooth part of the objective and its gradient.
    lam : float
        l2,1 penalty weight.
    w0 : array, shape (G, T)
        Starting point.
    cfg : FistaConfig
    trace : list, optional
        If given, the composite objective at ``w0`` and after every iteration
        is appended to it.
    value_and_grad : callable, optional
        Returns ``(loss_fn(W), grad_fn(W))`` in one pass; used at the search
        point when given.

    Returns
    -------
    (W, iterations)
    """
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    w_cur = np.array(w0, dtype=float)
    w_prev = w_cur.copy()
    d_older, d_old = 0.0, 1.0
    gamma = cfg.initial_gamma

    def composite(w, f):
        return f + lam * l21_norm(w)

    f_cur = float(loss_fn(w_cur))
    if not np.isfinite(f_cur):
        raise NumericalError("non-finite loss at FISTA iteration 0")
    if trace is not None:
        trace.append(composite(w_cur, f_cur))

    # last proximal point; equals w_cur whenever that point was accepted
    z_last = w_cur
    iteration = 0
    for iteration in range(1, cfg.max_iterations + 1):
        alpha = (d_older - 1.0) / d_old
        s = w_cur + alpha * (w_cur - w_prev) + (d_older / d_old) * (z_last - w_cur)
        if value_and_grad is not None:
            f_s, g_s = value_and_grad(s)
        else:
            f_s, g_s = loss_fn(s), grad_fn(s)
        f_s, g_s = float(f_s), np.asarray(g_s, dtype=float)
        if not np.isfinite(f_s) or not np.isfinite(g_s).all():
            raise NumericalError(f"non-finite loss or gradient at FISTA iteration {iteration}")

        for _ in range(_MAX_BACKTRACKS):
            z = prox_l21(s - g_s / gamma, lam / gamma)
            f_z = float(loss_fn(z))
            step = z - s
            sq = float(np.vdot(step, step))
            model = f_s + 0.5 * gamma * sq + float(np.vdot(step, g_s))
            if np.isfinite(f_z) and (f_z <= model + 1e-15 * abs(f_s) or sq <= 1e-30):
                break
            gamma *= cfg.backtrack_factor
        else:
            raise NumericalError(f"line search failed to converge at FISTA iteration {iteration}")

        d_older, d_old = d_old, (1.0 + math.sqrt(1.0 + 4.0 * d_old**2)) / 2.0
        change = float(np.linalg.norm(z - w_cur))
        scale = max(float(np.linalg.norm(w_cur)), 1e-12)
        w_prev = w_cur
        if composite(z, f_z) <= composite(w_cur, f_cur):
            w_cur, f_cur = z, f_z
        z_last = z
        if trace is not None:
            trace.append(composite(w_cur, f_cur))
        if change <= cfg.tolerance * scale:
            break
    return w_cur, iteration


def update_thresholds(th: ThresholdSet, grad, eps: float, min_gap: float) -> ThresholdSet:
    """One gradient-descent step on the thresholds, then restore strict order."""
    return ThresholdSet(th.variant, repair_order(th.values - eps * np.asarray(grad), min_gap))


def repair_order(values, min_gap: float) -> np.ndarray:
    """Sweep left to right, lifting each cut point to at least ``previous + min_gap``."""
    out = np.array(values, dtype=float)
    for mu in range(1, out.shape[1]):
        out[:, mu] = np.maximum(out[:, mu], out[:, mu - 1] + min_gap)
    return out


def composite_objective(data: MultiTaskDataset, w, th: ThresholdSet, lam: float) -> float:
    """Normalized ordinal loss plus ``lam * ||W||_{2,1}``."""
    return _loss.evaluate(data, np.asarray(w, float), th.values, th.variant, with_grad=False)[0].total + lam * l21_norm(w)


def train_rmtor(
    data: MultiTaskDataset,
    variant: Variant | str,
    lam: float,
    fcfg: FistaConfig = FistaConfig(),
    acfg: AlternatingConfig = AlternatingConfig(),
) -> RmtorModel:
    """Fit weights and thresholds by alternating FISTA and threshold descent."""
    validate_dataset(data)
    variant = Variant(variant)
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    G, T, U = data.num_features, data.num_tasks, data.num_classes

    w = np.zeros((G, T))
    th = ThresholdSet.initial(variant, T, U).values.copy()

    def loss_at(wm, thv):
        return _loss.evaluate(data, wm, thv, variant, with_grad=False)[0].total

    def objective(wm, thv):
        return loss_at(wm, thv) + lam * l21_norm(wm)

    prev = objective(w, th)
    history = [(0, prev)]
    for outer in range(1, acfg.outer_max + 1):
        thv = th

        def value_and_grad(wm):
            value, grad = _loss.evaluate(data, wm, thv, variant)
            return value.total, grad.d_weights

        w, _ = fista(
            lambda wm: loss_at(wm, thv),
            lambda wm: value_and_grad(wm)[1],
            lam,
            w,
            fcfg,
            value_and_grad=value_and_grad,
        )
        value, g = _loss.evaluate(data, w, th, variant)
        f_th, grad = value.total, g.d_thresholds
        for _ in range(acfg.threshold_steps):
            cand = repair_order(th - acfg.threshold_lr * grad, acfg.min_gap)
            value, g = _loss.evaluate(data, w, cand, variant)
            if not np.isfinite(value.total):
                raise NumericalError(f"non-finite loss in threshold update, outer iteration {outer}")
            if value.total > f_th:
                # the order repair can undo descent; keep the block monotone
                break
            th, f_th, grad = cand, value.total, g.d_thresholds

        cur = f_th + lam * l21_norm(w)
        history.append((outer, cur))
        rel = abs(prev - cur) / max(abs(prev), 1e-12)
        log.debug("outer %d objective %.10g rel change %.3g", outer, cur, rel)
        prev = cur
        if rel < acfg.outer_tolerance:
            break

    return RmtorModel(
        weights=w,
        thresholds=ThresholdSet(variant, th),
        lam=float(lam),
        task_ids=tuple(data.task_ids),
        training_log=tuple(history),
    )
