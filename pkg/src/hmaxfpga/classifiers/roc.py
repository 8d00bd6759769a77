"""ROC sweep and accuracy at the equal-error point."""

from __future__ import annotations

import numpy as np

from ..errors import UndefinedMetricError


def roc_sweep(scores, labels):
    """False-positive and false-negative rates as the threshold rises.

    Thresholds are -inf, the midpoints between consecutive distinct
    scores, and +inf; a sample is called positive when its score exceeds
    the threshold.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = labels > 0
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("both positive and negative examples are required")
    uniq = np.unique(scores)
    thresholds = np.concatenate([[-np.inf], 0.5 * (uniq[1:] + uniq[:-1]), [np.inf]])
    called = scores[None, :] > thresholds[:, None]
    fpr = (called & ~pos).sum(axis=1) / n_neg
    fnr = (~called & pos).sum(axis=1) / n_pos
    return thresholds, fpr, fnr


def equal_error_rate(scores, labels) -> float:
    _, fpr, fnr = roc_sweep(scores, labels)
    diff = fpr - fnr  # starts at +1, ends at -1, non-increasing
    hit = np.flatnonzero(diff == 0)
    if hit.size:
        return float(fpr[hit[0]])
    i = int(np.flatnonzero(diff > 0)[-1])
    t = diff[i] / (diff[i] - diff[i + 1])
    return float(fpr[i] + t * (fpr[i + 1] - fpr[i]))


def eer_accuracy(scores, labels) -> float:
    """1 - EER, interpolating linearly between thresholds when rates never meet exactly."""
    return 1.0 - equal_error_rate(scores, labels)
