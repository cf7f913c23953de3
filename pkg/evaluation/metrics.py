"""
Detection metrics.

AUROC (Mann-Whitney form, ties count one half), the optimal-F1 threshold
and ACC/F1 at a threshold. Everything is computed from per-distinct-score
positive/negative counts, which also makes pixel-level AUROC mergeable
across chunks.
"""

import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np

logger = logging.getLogger(__name__)

DECISION_RULE = "score >= threshold => anomalous"


class UndefinedMetricError(ValueError):
    """Raised when a metric needs both classes but only one is present."""


class Granularity(str, Enum):
    IMAGE = "image"
    PIXEL = "pixel"


@dataclass
class ScoredSet:
    """
    Scores with binary labels (1 = anomalous).

    Attributes:
        scores: 1-D float array
        labels: 1-D array of 0/1, same length
        granularity: IMAGE or PIXEL
    """

    scores: np.ndarray
    labels: np.ndarray
    granularity: Granularity = Granularity.IMAGE

    def __post_init__(self) -> None:
        self.scores = np.asarray(self.scores, dtype=np.float64).ravel()
        self.labels = np.asarray(self.labels).ravel()
        if self.scores.shape != self.labels.shape:
            raise ValueError(f"{self.scores.size} scores but {self.labels.size} labels")
        if not np.all((self.labels == 0) | (self.labels == 1)):
            raise ValueError("Labels must be 0 (normal) or 1 (anomalous)")
        self.labels = self.labels.astype(np.int64)
        self.granularity = Granularity(self.granularity)

    @property
    def num_positive(self) -> int:
        return int(self.labels.sum())

    @property
    def num_negative(self) -> int:
        return int(self.labels.size - self.labels.sum())


def _score_counts(scores: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Distinct scores ascending with positive and negative counts per score."""
    values, inverse = np.unique(scores, return_inverse=True)
    inverse = inverse.ravel()
    positive = np.bincount(inverse, weights=labels, minlength=values.size)
    negative = np.bincount(inverse, weights=1 - labels, minlength=values.size)
    return values, positive, negative


def _auroc_from_counts(positive: np.ndarray, negative: np.ndarray) -> float:
    num_pos = positive.sum()
    num_neg = negative.sum()
    if num_pos == 0 or num_neg == 0:
        raise UndefinedMetricError(
            f"AUROC is undefined with {int(num_pos)} anomalous and {int(num_neg)} normal samples"
        )
    negatives_below = np.cumsum(negative) - negative
    statistic = np.sum(positive * (negatives_below + 0.5 * negative))
    return float(statistic / (num_pos * num_neg))


def auroc(scored: ScoredSet) -> float:
    """
    P(score_pos > score_neg) + 0.5 * P(tie).

    Raises:
        UndefinedMetricError: If only one class is present.
    """
    _, positive, negative = _score_counts(scored.scores, scored.labels)
    return _auroc_from_counts(positive, negative)


def _require_both_classes(scored: ScoredSet, metric: str) -> None:
    if scored.num_positive == 0 or scored.num_negative == 0:
        raise UndefinedMetricError(
            f"{metric} is undefined with {scored.num_positive} anomalous and {scored.num_negative} normal samples"
        )


def optimal_f1_threshold(scored: ScoredSet) -> tuple[float, float]:
    """
    Scan every distinct score as a threshold and keep the best F1.

    Ties go to the lowest threshold.

    Returns:
        (threshold, f1)
    """
    _require_both_classes(scored, "Optimal-F1 threshold")
    values, positive, negative = _score_counts(scored.scores, scored.labels)
    num_pos = positive.sum()
    num_neg = negative.sum()

    true_pos = num_pos - (np.cumsum(positive) - positive)
    false_pos = num_neg - (np.cumsum(negative) - negative)
    false_neg = num_pos - true_pos
    f1 = 2 * true_pos / (2 * true_pos + false_pos + false_neg)

    best = int(np.argmax(f1))
    return float(values[best]), float(f1[best])


def acc_f1(scored: ScoredSet, threshold: float) -> tuple[float, float]:
    """ACC and F1 with the rule score >= threshold => anomalous."""
    predicted = scored.scores >= threshold
    actual = scored.labels == 1
    tp = int(np.sum(predicted & actual))
    tn = int(np.sum(~predicted & ~actual))
    fp = int(np.sum(predicted & ~actual))
    fn = int(np.sum(~predicted & actual))
    total = tp + tn + fp + fn
    acc = (tp + tn) / total if total else 0.0
    denom = 2 * tp + fp + fn
    f1 = 2 * tp / denom if denom else 0.0
    return float(acc), float(f1)


class AurocAccumulator:
    """
    Streaming AUROC over chunks (e.g. one image's pixels at a time).

    Each update stores the chunk's per-distinct-score counts; compute()
    collapses the buffered chunks with a single sort and equals auroc()
    on the concatenation of every chunk seen, in any order.
    """

    def __init__(self) -> None:
        self._chunks: list[tuple[np.ndarray, np.ndarray, np.ndarray]] = []

    def update(self, scores: np.ndarray, labels: np.ndarray) -> None:
        chunk = ScoredSet(scores, labels, Granularity.PIXEL)
        self._chunks.append(_score_counts(chunk.scores, chunk.labels))

    def merge(self, other: "AurocAccumulator") -> "AurocAccumulator":
        self._chunks.extend(other._chunks)
        return self

    def _collapse(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        if not self._chunks:
            empty = np.empty(0, dtype=np.float64)
            return empty, empty, empty
        if len(self._chunks) > 1:
            values, inverse = np.unique(np.concatenate([c[0] for c in self._chunks]), return_inverse=True)
            inverse = inverse.ravel()
            positive = np.bincount(
                inverse, weights=np.concatenate([c[1] for c in self._chunks]), minlength=values.size
            )
            negative = np.bincount(
                inverse, weights=np.concatenate([c[2] for c in self._chunks]), minlength=values.size
            )
            self._chunks = [(values, positive, negative)]
        return self._chunks[0]

    @property
    def count(self) -> int:
        return int(sum(c[1].sum() + c[2].sum() for c in self._chunks))

    def compute(self) -> float:
        _, positive, negative = self._collapse()
        return _auroc_from_counts(positive, negative)
