"""Evaluation metrics: Top-1/Top-2/Top-Pair accuracy, mean entropy, AUC-ROC.

All tie rules are deterministic: candidate classes are ordered by descending
probability with the lower class index winning ties, and AUC uses average
ranks, which makes it exactly the Mann-Whitney statistic
P(pos > neg) + 0.5 P(pos = neg).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import ConfigError, DimensionError, NotCalculableError
from .numerics import Tensor


def _top_indices(rows: Tensor, k: int) -> Tensor:
    """Per row, the k highest-probability classes; ties favor lower indices."""
    idx = np.broadcast_to(np.arange(rows.shape[1]), rows.shape)
    order = np.lexsort((idx, -rows), axis=1)
    return order[:, :k]


def top_k_accuracy(predictions: Tensor, hard_labels: Tensor, k: int) -> float:
    """Fraction of rows whose label is among the k most likely predicted classes."""
    predictions = np.asarray(predictions, dtype=np.float64)
    hard_labels = np.asarray(hard_labels, dtype=np.int64)
    if predictions.ndim != 2 or len(predictions) != len(hard_labels):
        raise DimensionError("predictions must be [N x C] with one label per row")
    if len(predictions) == 0:
        raise ConfigError("empty input")
    if k < 1:
        raise ConfigError("k must be >= 1")
    k = min(k, predictions.shape[1])
    top = _top_indices(predictions, k)
    return float(np.mean(np.any(top == hard_labels[:, None], axis=1)))


def label_top_pair(label_row: Tensor, row_index: int = -1) -> tuple[int, int]:
    """The unordered pair of classes strictly more likely than all others."""
    row = np.asarray(label_row, dtype=np.float64)
    order = np.lexsort((np.arange(len(row)), -row))
    a, b = order[0], order[1]
    third = row[order[2]] if len(row) > 2 else -np.inf
    if not (row[a] > third and row[b] > third):
        raise NotCalculableError(
            f"label row {row_index} has no unique top pair (not calculable)")
    return (int(min(a, b)), int(max(a, b)))


def top_pair_accuracy(label_rows: Tensor, predictions: Tensor) -> float:
    """Fraction of rows whose predicted top-2 set equals the label's class pair."""
    label_rows = np.asarray(label_rows, dtype=np.float64)
    predictions = np.asarray(predictions, dtype=np.float64)
    if label_rows.shape != predictions.shape:
        raise DimensionError("label and prediction shapes differ")
    if len(label_rows) == 0:
        raise ConfigError("empty input")
    pred_top = _top_indices(predictions, 2)
    hits = 0
    for i in range(len(label_rows)):
        pair = label_top_pair(label_rows[i], i)
        hits += pair == (int(min(pred_top[i])), int(max(pred_top[i])))
    return hits / len(label_rows)


def row_entropy(rows: Tensor) -> Tensor:
    """Per-row natural-log entropy; zero entries contribute zero."""
    rows = np.asarray(rows, dtype=np.float64)
    safe = np.where(rows > 0, rows, 1.0)
    return -np.sum(rows * np.log(safe), axis=-1)


def mean_entropy(rows: Tensor) -> float:
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2 or len(rows) == 0:
        raise ConfigError("mean_entropy needs a non-empty [N x C] array")
    return float(np.mean(row_entropy(rows)))


@dataclass(frozen=True)
class RocInput:
    """Scores of the suspicious family (positive) vs nominal inputs (negative)."""

    positive: Tensor
    negative: Tensor
    supervisor: str = ""


def auc_roc(positive: Tensor, negative: Tensor) -> float:
    """Rank-sum AUC with average ranks for ties."""
    pos = np.asarray(positive, dtype=np.float64).ravel()
    neg = np.asarray(negative, dtype=np.float64).ravel()
    if len(pos) == 0 or len(neg) == 0:
        raise ConfigError("both score sides must be non-empty")
    if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(neg))):
        raise ConfigError("scores must be finite")
    ranks = rankdata(np.concatenate([pos, neg]), method="average")
    pos_rank_sum = ranks[: len(pos)].sum()
    return float((pos_rank_sum - len(pos) * (len(pos) + 1) / 2.0) / (len(pos) * len(neg)))


def roc_auc_of(roc: RocInput) -> float:
    return auc_roc(roc.positive, roc.negative)
