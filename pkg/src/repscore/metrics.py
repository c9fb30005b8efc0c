"""Multiclass classification metrics (3 rating classes).

Classes are indexed 0..2 internally (rating = index + 1).  A class with zero
support or a zero precision/recall denominator gets F1 = 0; the macro F1 is
always the arithmetic mean over all three classes.
"""

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

N_CLASSES = 3


def confusion_matrix(y_true, y_pred, n_classes=N_CLASSES):
    """Confusion counts; rows are true classes, columns predicted classes."""
    y_true = np.asarray(y_true, dtype=int)
    y_pred = np.asarray(y_pred, dtype=int)
    if y_true.shape != y_pred.shape:
        raise ValueError("y_true and y_pred must have the same length")
    if y_true.size == 0:
        raise ValueError("cannot compute metrics on an empty set")
    if y_true.min() < 0 or y_true.max() >= n_classes or y_pred.min() < 0 or y_pred.max() >= n_classes:
        raise ValueError(f"class indices must be in 0..{n_classes - 1}")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def precision_recall_f1(confusion):
    """Per-class precision, recall and F1 with the zero-denominator-is-0 rule."""
    confusion = np.asarray(confusion, dtype=np.float64)
    diag = np.diag(confusion)
    pred_tot = confusion.sum(axis=0)
    true_tot = confusion.sum(axis=1)
    precision = np.divide(diag, pred_tot, out=np.zeros_like(diag), where=pred_tot > 0)
    recall = np.divide(diag, true_tot, out=np.zeros_like(diag), where=true_tot > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros_like(diag), where=denom > 0)
    return precision, recall, f1


def macro_f1(confusion):
    """Arithmetic mean of the per-class F1 scores."""
    _, _, f1 = precision_recall_f1(confusion)
    return float(f1.mean())


@dataclass
class MetricsReport:
    confusion: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    macro_f1: float
    support: np.ndarray
    mean_loss: Optional[float] = None
    loss_curve: List[float] = field(default_factory=list)

    def to_dict(self):
        return {
            "confusion": self.confusion.tolist(),
            "precision": self.precision.tolist(),
            "recall": self.recall.tolist(),
            "f1": self.f1.tolist(),
            "macro_f1": self.macro_f1,
            "support": self.support.tolist(),
            "mean_loss": self.mean_loss,
            "loss_curve": list(self.loss_curve),
        }


def report_from_predictions(y_true, y_pred, mean_loss=None, loss_curve=()):
    cm = confusion_matrix(y_true, y_pred)
    precision, recall, f1 = precision_recall_f1(cm)
    return MetricsReport(
        confusion=cm,
        precision=precision,
        recall=recall,
        f1=f1,
        macro_f1=float(f1.mean()),
        support=cm.sum(axis=1),
        mean_loss=mean_loss,
        loss_curve=list(loss_curve),
    )
