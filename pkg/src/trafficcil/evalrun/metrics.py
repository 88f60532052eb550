from __future__ import annotations

from fractions import Fraction
from typing import Iterable

import numpy as np


def confusion_matrix(preds, labels, n_classes: int) -> np.ndarray:
    """``cm[i, j]`` counts samples of true class ``i`` predicted as ``j``."""
    preds = np.asarray(preds, dtype=np.int64).ravel()
    labels = np.asarray(labels, dtype=np.int64).ravel()
    if preds.shape != labels.shape:
        raise ValueError(f"{len(preds)} predictions for {len(labels)} labels")
    for name, v in (("prediction", preds), ("label", labels)):
        bad = (v < 0) | (v >= n_classes)
        if bad.any():
            raise ValueError(f"{name} {int(v[bad][0])} outside [0, {n_classes})")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (labels, preds), 1)
    return cm


def _f1_fractions(cm: np.ndarray) -> list[Fraction]:
    # 2TP / (2TP + FP + FN) equals 2PR / (P + R) whenever P + R > 0 and
    # is 0 otherwise; integer counts keep every value exact
    cm = np.asarray(cm, dtype=np.int64)
    tp = np.diag(cm)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    return [
        Fraction(2 * int(t), 2 * int(t) + int(p) + int(n)) if t > 0 else Fraction(0)
        for t, p, n in zip(tp, fp, fn)
    ]


def per_class_f1(cm: np.ndarray) -> np.ndarray:
    """F1 per class; a class with precision + recall = 0 scores 0."""
    return np.array([float(f) for f in _f1_fractions(cm)], dtype=np.float64)


def macro_f1(cm: np.ndarray, classes: Iterable[int] | None = None) -> float:
    """Unweighted mean of per-class F1 over ``classes`` (default: all).

    Computed in exact rational arithmetic and rounded once.
    """
    f1 = _f1_fractions(cm)
    idx = range(len(f1)) if classes is None else [int(c) for c in classes]
    if len(idx) == 0:
        raise ValueError("macro F1 over an empty class subset")
    return float(sum((f1[i] for i in idx), Fraction(0)) / len(idx))
