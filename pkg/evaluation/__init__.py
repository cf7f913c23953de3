"""
Evaluation module: AUROC, optimal-F1 threshold and ACC/F1.
"""

from .metrics import (
    DECISION_RULE,
    AurocAccumulator,
    Granularity,
    ScoredSet,
    UndefinedMetricError,
    acc_f1,
    auroc,
    optimal_f1_threshold,
)

__all__ = [
    "AurocAccumulator",
    "DECISION_RULE",
    "Granularity",
    "ScoredSet",
    "UndefinedMetricError",
    "acc_f1",
    "auroc",
    "optimal_f1_threshold",
]
