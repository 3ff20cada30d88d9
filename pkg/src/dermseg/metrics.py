"""Segmentation scoring: per-image confusion counts, IoU (Jaccard), Dice,
and pixel accuracy, plus the mean-IoU aggregate used for early stopping.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import MetricError, ShapeError


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def confusion(pred: np.ndarray, truth: np.ndarray) -> ConfusionCounts:
    """Exact pixel counts between two binary masks of identical shape."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ShapeError(f"mask shapes differ: {pred.shape} vs {truth.shape}")
    p = pred.astype(bool)
    t = truth.astype(bool)
    tp = int(np.count_nonzero(p & t))
    fp = int(np.count_nonzero(p & ~t))
    fn = int(np.count_nonzero(~p & t))
    tn = int(np.count_nonzero(~p & ~t))
    return ConfusionCounts(tp=tp, fp=fp, fn=fn, tn=tn)


def iou(c: ConfusionCounts) -> float:
    """Intersection over union; empty-vs-empty is defined as 1.0."""
    denom = c.tp + c.fp + c.fn
    if denom == 0:
        return 1.0
    return c.tp / denom


def dice(c: ConfusionCounts) -> float:
    denom = 2 * c.tp + c.fp + c.fn
    if denom == 0:
        return 1.0
    return 2 * c.tp / denom


def pixel_acc(c: ConfusionCounts) -> float:
    if c.total == 0:
        return 1.0
    return (c.tp + c.tn) / c.total


def mean_iou(pairs) -> float:
    """Unweighted mean of per-image IoU over (pred, truth) mask pairs."""
    pairs = list(pairs)
    if not pairs:
        raise MetricError("mean_iou of an empty pair list")
    return float(np.mean([iou(confusion(p, t)) for p, t in pairs]))


def pooled_iou(counts) -> float:
    """Dataset-pooled IoU: one ratio over the summed confusion counts
    (the alternative aggregate to the per-image mean)."""
    counts = list(counts)
    if not counts:
        raise MetricError("pooled_iou of an empty count list")
    tp = sum(c.tp for c in counts)
    fp = sum(c.fp for c in counts)
    fn = sum(c.fn for c in counts)
    return iou(ConfusionCounts(tp=tp, fp=fp, fn=fn, tn=0))
