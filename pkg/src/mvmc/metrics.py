"""Ranking and label-set criteria for multi-label evaluation."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, UndefinedMetricError


def _check(scores, truth):
    scores = np.asarray(scores, dtype=float).ravel()
    truth = np.asarray(truth).ravel()
    if scores.shape != truth.shape:
        raise DimensionError(f"scores {scores.shape} and truth {truth.shape} differ in length")
    return scores, truth > 0


def ranking(scores):
    """Indices sorted by descending score; ties keep ascending original index."""
    return np.argsort(-np.asarray(scores, dtype=float), kind="stable")


def average_precision(scores, truth) -> float:
    """Mean of precision@k over the ranks k that hold a positive sample."""
    scores, pos = _check(scores, truth)
    n_pos = int(pos.sum())
    if n_pos == 0:
        raise UndefinedMetricError("average precision is undefined without positives")
    hits = pos[ranking(scores)]
    ranks = np.flatnonzero(hits) + 1
    return float(np.sum(np.arange(1, n_pos + 1) / ranks) / n_pos)


def auc(scores, truth) -> float:
    """Mann-Whitney estimate of the ROC area; tied pairs count one half."""
    scores, pos = _check(scores, truth)
    sp, sn = scores[pos], scores[~pos]
    if sp.size == 0 or sn.size == 0:
        raise UndefinedMetricError("AUC needs both positive and negative samples")
    sn_sorted = np.sort(sn)
    below = np.searchsorted(sn_sorted, sp, side="left")
    not_above = np.searchsorted(sn_sorted, sp, side="right")
    wins = below.sum() + 0.5 * (not_above - below).sum()
    return float(wins / (sp.size * sn.size))


def hamming_loss(pred, truth) -> float:
    """Fraction of entries whose sign disagrees; both inputs are +-1 matrices."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise DimensionError(f"prediction shape {pred.shape} != truth shape {truth.shape}")
    if pred.size == 0:
        raise DimensionError("hamming loss of an empty matrix")
    return float(np.mean((pred > 0) != (truth > 0)))


def hard_labels(scores, threshold=0.0):
    return np.where(np.asarray(scores) > threshold, 1, -1)


@dataclass(frozen=True)
class LabelMean:
    value: float
    skipped: int


def mean_over_labels(per_label) -> LabelMean:
    """Mean of the defined (non-None, non-NaN) entries and the number skipped."""
    defined = [float(v) for v in per_label if v is not None and not math.isnan(v)]
    skipped = len(per_label) - len(defined)
    if not defined:
        raise UndefinedMetricError("no label has a defined value")
    return LabelMean(float(np.mean(defined)), skipped)


def per_label(metric, scores, truth):
    """Apply ``metric`` row by row; undefined labels give None."""
    out = []
    for s, y in zip(np.atleast_2d(scores), np.atleast_2d(truth)):
        try:
            out.append(metric(s, y))
        except UndefinedMetricError:
            out.append(None)
    return out


def mean_average_precision(scores, truth) -> LabelMean:
    return mean_over_labels(per_label(average_precision, scores, truth))


def mean_auc(scores, truth) -> LabelMean:
    return mean_over_labels(per_label(auc, scores, truth))
