"""Training loss terms and the evaluation metric.

All terms are mean absolute differences over the frames they cover, so they
are differentiable almost everywhere (subgradients at kinks are taken as 0).
Inputs may be numpy arrays or Tensors; leading axis is the frame axis and a
trailing batch axis anywhere behind it is averaged over like any other
element.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .numerics.tensor import Tensor, tabs, tmean, tsqrt, tsum

DEFAULT_PAST_DELTAS = (2, 5, 10)
DEFAULT_FUTURE_DELTAS = (20, 30)


@dataclass(frozen=True)
class LossConfig:
    past_deltas: tuple[int, ...] = DEFAULT_PAST_DELTAS
    future_deltas: tuple[int, ...] = DEFAULT_FUTURE_DELTAS


@dataclass(frozen=True)
class LossBreakdown:
    l_past: float
    l_current: float
    l_future: float
    skipped_future_terms: int

    @property
    def l_total(self) -> float:
        return self.l_past + self.l_current + self.l_future


def _is_tensor(x) -> bool:
    return isinstance(x, Tensor)


def _check_match(pred, truth, label: str) -> None:
    if tuple(pred.shape) != tuple(truth.shape):
        raise ShapeError(f"{label}: prediction {tuple(pred.shape)} vs truth {tuple(truth.shape)}")


def _mean_l1(pred, truth):
    if _is_tensor(pred) or _is_tensor(truth):
        return tmean(tabs(pred - truth))
    return float(np.mean(np.abs(np.asarray(pred) - np.asarray(truth))))


def loss_current(pred, truth):
    """Mean L1 over every predicted frame."""
    _check_match(pred, truth, "current loss")
    return _mean_l1(pred, truth)


def loss_past(pred, truth, past_deltas=DEFAULT_PAST_DELTAS):
    """Sum over deltas of the mean L1 restricted to the first delta frames."""
    _check_match(pred, truth, "past loss")
    frames = pred.shape[0]
    for delta in past_deltas:
        if delta < 1 or delta > frames:
            raise ShapeError(f"past-loss delta {delta} outside the {frames}-frame prediction")
    total = None
    for delta in past_deltas:
        term = _mean_l1(pred[:delta], truth[:delta])
        total = term if total is None else total + term
    return total if total is not None else 0.0


def loss_future(rollout_pred, extended_truth, future_deltas=DEFAULT_FUTURE_DELTAS):
    """Rollout supervision beyond the base horizon.

    Compares the first delta frames of the continued rollout against the
    extended ground truth; a term whose delta exceeds the available truth is
    skipped and counted instead of failing.  Returns (loss, skipped).
    """
    available = extended_truth.shape[0] if extended_truth is not None else 0
    total = None
    skipped = 0
    for delta in future_deltas:
        if delta < 1:
            raise ShapeError(f"future-loss delta must be positive, got {delta}")
        if available < delta:
            skipped += 1
            continue
        if rollout_pred is None or rollout_pred.shape[0] < delta:
            have = 0 if rollout_pred is None else rollout_pred.shape[0]
            raise ShapeError(f"rollout of {have} frames is shorter than future-loss delta {delta}")
        term = _mean_l1(rollout_pred[:delta], extended_truth[:delta])
        total = term if total is None else total + term
    if total is None:
        return 0.0, skipped
    return total, skipped


def loss_total(l_past_val, l_current_val, l_future_val, skipped_future_terms: int = 0) -> LossBreakdown:
    """Bundle the three terms; the full objective is their plain sum."""
    return LossBreakdown(
        l_past=float(l_past_val),
        l_current=float(l_current_val),
        l_future=float(l_future_val),
        skipped_future_terms=int(skipped_future_terms),
    )


def mpjpe(pred, truth):
    """Mean per-joint position error: average Euclidean distance, (F, J, 3)."""
    _check_match(pred, truth, "mpjpe")
    if pred.shape[-1] != 3:
        raise ShapeError(f"mpjpe expects 3 coordinates per joint, got shape {tuple(pred.shape)}")
    if _is_tensor(pred) or _is_tensor(truth):
        d = pred - truth
        return tmean(tsqrt(tsum(d * d, axis=d.ndim - 1)))
    d = np.asarray(pred) - np.asarray(truth)
    return float(np.mean(np.sqrt(np.sum(d * d, axis=-1))))
