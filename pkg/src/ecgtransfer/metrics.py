"""Evaluation metrics: MAE, accuracy and one-vs-rest ROC AUC."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import AllDegenerate, DegenerateClass, EmptySplit, LengthMismatch


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise LengthMismatch(f"lengths differ: {a.size} vs {b.size}")
    return a, b


def mae(y, yhat) -> float:
    y, yhat = _pair(y, yhat)
    if y.size == 0:
        raise EmptySplit("mae of empty input")
    return float(np.mean(np.abs(y - yhat)))


def predict_labels(scores) -> np.ndarray:
    """Row-wise argmax; ties resolve to the lowest class index."""
    return np.argmax(np.asarray(scores), axis=1)


def accuracy(predicted, labels) -> float:
    predicted = np.asarray(predicted).ravel()
    labels = np.asarray(labels).ravel()
    if predicted.shape != labels.shape:
        raise LengthMismatch(f"lengths differ: {predicted.size} vs {labels.size}")
    if predicted.size == 0:
        raise EmptySplit("accuracy of empty input")
    return float(np.mean(predicted == labels))


@dataclass(frozen=True)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray  # thresholds[0] is +inf, the (0, 0) endpoint


def roc_binary(scores, positives):
    """ROC curve over unique score thresholds and its trapezoidal area.

    A sample is predicted positive at threshold ``t`` when ``score >= t``.
    Tied scores move both rates at once, so the trapezoid gives tied
    positive/negative pairs half credit.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    positives = np.asarray(positives, dtype=bool).ravel()
    if scores.shape != positives.shape:
        raise LengthMismatch(f"lengths differ: {scores.size} vs {positives.size}")
    n_pos = int(positives.sum())
    n_neg = positives.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateClass(f"need positives and negatives, got {n_pos}/{n_neg}")

    order = np.argsort(-scores, kind="mergesort")
    s = scores[order]
    p = positives[order]
    # last index of each run of equal scores, in descending score order
    ends = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]
    tp = np.cumsum(p)[ends]
    fp = (ends + 1) - tp
    tpr = np.r_[0.0, tp / n_pos]
    fpr = np.r_[0.0, fp / n_neg]
    thresholds = np.r_[np.inf, s[ends]]
    area = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))
    return RocCurve(fpr, tpr, thresholds), area


def auc_ovr(scores, labels, n_classes: int | None = None):
    """Macro one-vs-rest AUC.

    Column ``c`` of ``scores`` ranks class ``c`` against the rest. Classes
    with no positives or no negatives get ``nan`` in the per-class vector and
    are left out of the mean.

    Returns
    -------
    mean : float
    per_class : ndarray of shape (n_classes,)
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).ravel()
    if scores.ndim != 2 or scores.shape[0] != labels.size:
        raise LengthMismatch(f"scores {scores.shape} do not match {labels.size} labels")
    if labels.size == 0:
        raise EmptySplit("auc of empty input")
    n_classes = scores.shape[1] if n_classes is None else n_classes
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ValueError("labels out of range")
    per_class = np.full(n_classes, np.nan)
    for c in range(n_classes):
        try:
            _, per_class[c] = roc_binary(scores[:, c], labels == c)
        except DegenerateClass:
            pass
    if np.all(np.isnan(per_class)):
        raise AllDegenerate("no class has a defined one-vs-rest AUC")
    return float(np.nanmean(per_class)), per_class


def roc_points(scores, labels, n_classes: int | None = None) -> list:
    """``(class, threshold, fpr, tpr)`` rows for every non-degenerate class."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).ravel()
    n_classes = scores.shape[1] if n_classes is None else n_classes
    rows = []
    for c in range(n_classes):
        try:
            curve, _ = roc_binary(scores[:, c], labels == c)
        except DegenerateClass:
            continue
        rows.extend(zip([c] * curve.fpr.size, curve.thresholds, curve.fpr, curve.tpr))
    return rows


def write_roc_csv(path, rows, class_names=None) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["class", "threshold", "fpr", "tpr"])
    for c, t, f, tp in rows:
        name = class_names[c] if class_names else c
        w.writerow([name, repr(float(t)), repr(float(f)), repr(float(tp))])
    Path(path).write_text(buf.getvalue())
