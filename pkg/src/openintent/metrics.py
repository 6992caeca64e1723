"""(N+1)-class metrics: accuracy, macro F1, open-class F1 and known-class macro F1."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, LabelError

OPEN_NAME = "<OPEN>"


def confusion(preds, golds, num_classes):
    """``matrix[gold][pred]`` counts."""
    preds = np.asarray(preds, dtype=np.int64).reshape(-1)
    golds = np.asarray(golds, dtype=np.int64).reshape(-1)
    if preds.shape != golds.shape:
        raise DimensionError(f"{len(preds)} predictions for {len(golds)} gold labels")
    for arr in (preds, golds):
        if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
            raise LabelError(f"labels must lie in [0, {num_classes})")
    matrix = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(matrix, (golds, preds), 1)
    return matrix


def _f1(p, r):
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


@dataclass
class MetricsReport:
    accuracy: float
    macro_f1: float
    open_f1: float
    known_macro_f1: float
    precision: list
    recall: list
    f1: list
    support: list
    confusion: np.ndarray
    class_names: list

    @property
    def open_support(self):
        return self.support[-1]

    def to_dict(self):
        per_class = {
            name: {"precision": p, "recall": r, "f1": f, "support": int(s)}
            for name, p, r, f, s in zip(self.class_names, self.precision, self.recall, self.f1, self.support)
        }
        return {
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "open_f1": self.open_f1,
            "known_macro_f1": self.known_macro_f1,
            "per_class": per_class,
            "confusion": self.confusion.tolist(),
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def compute_metrics(matrix, class_names=None):
    """Metrics from a confusion matrix whose last row/column is the open class.

    Precision, recall and F1 of a class with no predictions or no support
    are 0.  Macro averages are unweighted and use ``math.fsum`` so they do
    not depend on class order.
    """
    m = np.asarray(matrix, dtype=np.int64)
    k = m.shape[0]
    if m.ndim != 2 or m.shape[1] != k or k < 1:
        raise DimensionError("confusion matrix must be square and non-empty")
    total = int(m.sum())
    precision, recall, f1 = [], [], []
    for c in range(k):
        tp = int(m[c, c])
        pred = int(m[:, c].sum())
        gold = int(m[c, :].sum())
        p = tp / pred if pred else 0.0
        r = tp / gold if gold else 0.0
        precision.append(p)
        recall.append(r)
        f1.append(_f1(p, r))
    names = list(class_names) if class_names is not None else [str(i) for i in range(k)]
    return MetricsReport(
        accuracy=int(np.trace(m)) / total if total else 0.0,
        macro_f1=math.fsum(f1) / k,
        open_f1=f1[-1],
        known_macro_f1=math.fsum(f1[:-1]) / (k - 1) if k > 1 else 0.0,
        precision=precision,
        recall=recall,
        f1=f1,
        support=[int(s) for s in m.sum(axis=1)],
        confusion=m,
        class_names=names,
    )


def evaluate(preds, golds, known_names):
    """Metrics for integer predictions where ``len(known_names)`` is the open id."""
    names = list(known_names) + [OPEN_NAME]
    return compute_metrics(confusion(preds, golds, len(names)), names)
