"""Weighted and unweighted accuracy over confusion matrices.

WA is overall accuracy (trace over total), UA is macro recall (mean of
per-class recalls). Aggregation runs in exact rational arithmetic with a
single rounding to float at the end, so identities like "balanced supports
imply WA equals UA" hold bit-exactly, not just approximately.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import ContractError, EmptySequenceError, ShapeError


@dataclass
class MetricsReport:
    wa: float
    ua: float
    confusion: np.ndarray
    per_fold: tuple = ()
    # classes with zero support in the test set; UA skipped them
    missing_classes: tuple = ()

    def __post_init__(self):
        if not (0.0 <= self.wa <= 1.0 and 0.0 <= self.ua <= 1.0):
            raise ContractError(f"wa/ua out of range: {self.wa}, {self.ua}")


def confusion_matrix(true_labels, predicted_labels, num_classes: int) -> np.ndarray:
    true_labels = np.asarray(true_labels, dtype=np.int64)
    predicted_labels = np.asarray(predicted_labels, dtype=np.int64)
    if true_labels.shape != predicted_labels.shape or true_labels.ndim != 1:
        raise ShapeError("label arrays must be equal-length vectors")
    if true_labels.size and not (
        0 <= true_labels.min()
        and true_labels.max() < num_classes
        and 0 <= predicted_labels.min()
        and predicted_labels.max() < num_classes
    ):
        raise ContractError(f"labels outside 0..{num_classes - 1}")
    confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(confusion, (true_labels, predicted_labels), 1)
    return confusion


def report_from_confusion(confusion: np.ndarray, per_fold: tuple = ()) -> MetricsReport:
    confusion = np.asarray(confusion)
    if confusion.ndim != 2 or confusion.shape[0] != confusion.shape[1]:
        raise ShapeError(f"confusion matrix must be square, got {confusion.shape}")
    if np.any(confusion < 0):
        raise ContractError("confusion counts must be non-negative")
    total = int(confusion.sum())
    if total == 0:
        raise EmptySequenceError("empty test set: confusion matrix has no counts")
    support = confusion.sum(axis=1)
    wa = Fraction(int(np.trace(confusion)), total)
    recalls = [
        Fraction(int(confusion[i, i]), int(support[i]))
        for i in range(confusion.shape[0])
        if support[i] > 0
    ]
    ua = sum(recalls, Fraction(0)) / len(recalls)
    missing = tuple(int(i) for i in np.flatnonzero(support == 0))
    return MetricsReport(
        wa=float(wa),
        ua=float(ua),
        confusion=confusion.astype(np.int64),
        per_fold=tuple(per_fold),
        missing_classes=missing,
    )
