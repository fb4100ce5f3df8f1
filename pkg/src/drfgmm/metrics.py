"""Clustering agreement scores: matched accuracy and normalized mutual information."""

from __future__ import annotations

import numpy as np
from scipy.optimize import linear_sum_assignment

from .core import DataError


def _as_ids(labels) -> np.ndarray:
    arr = np.asarray(labels)
    if arr.ndim != 1 or arr.shape[0] == 0:
        raise DataError("labelings must be non-empty vectors")
    _, inverse = np.unique(arr, return_inverse=True)
    return inverse


def contingency(pred, truth) -> np.ndarray:
    """Count matrix: rows index predicted clusters, columns true classes."""
    p = _as_ids(pred)
    t = _as_ids(truth)
    if p.shape[0] != t.shape[0]:
        raise DataError("labelings must have equal length")
    table = np.zeros((p.max() + 1, t.max() + 1), dtype=np.int64)
    np.add.at(table, (p, t), 1)
    return table


def hungarian(cost) -> tuple:
    """Minimum-cost assignment on a rectangular matrix; returns (rows, cols)."""
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.size == 0:
        raise DataError("cost must be a non-empty 2-d matrix")
    if not np.all(np.isfinite(cost)):
        raise DataError("cost entries must be finite")
    rows, cols = linear_sum_assignment(cost)
    return rows, cols


def accuracy(pred, truth) -> float:
    """Percentage of samples matched under the best cluster-to-class pairing."""
    table = contingency(pred, truth)
    rows, cols = hungarian(-table.astype(np.float64))
    return 100.0 * table[rows, cols].sum() / table.sum()


def _first_occurrence_ids(labels):
    seen: dict = {}
    return np.array([seen.setdefault(v, len(seen)) for v in np.asarray(labels)])


def _same_partition(a, b) -> bool:
    return np.array_equal(_first_occurrence_ids(a), _first_occurrence_ids(b))


def nmi(pred, truth) -> float:
    """Mutual information over sqrt(H_pred * H_truth), natural logs.

    When either entropy is zero the score is 1 for identical partitions and 0
    otherwise.
    """
    table = contingency(pred, truth)
    n = table.sum()
    joint = table / n
    p_rows = joint.sum(axis=1)
    p_cols = joint.sum(axis=0)
    h_rows = -np.sum(p_rows[p_rows > 0] * np.log(p_rows[p_rows > 0]))
    h_cols = -np.sum(p_cols[p_cols > 0] * np.log(p_cols[p_cols > 0]))
    if h_rows == 0.0 or h_cols == 0.0:
        return 1.0 if _same_partition(pred, truth) else 0.0
    live = joint > 0
    outer = p_rows[:, None] * p_cols[None, :]
    info = np.sum(joint[live] * np.log(joint[live] / outer[live]))
    return max(0.0, float(info / np.sqrt(h_rows * h_cols)))
