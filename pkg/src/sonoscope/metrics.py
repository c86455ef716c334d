"""Classification metrics, confusion matrices and class separability."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateError, EmptyError, LabelError, ShapeError

METRIC_NAMES = ("accuracy", "precision", "recall", "f1", "mcc")


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # rows: true class, columns: predicted class

    @property
    def n_classes(self):
        return self.counts.shape[0]

    @property
    def total(self):
        return int(self.counts.sum())

    def normalized(self):
        """Row-normalised copy; rows without support stay zero."""
        rows = self.counts.sum(axis=1, keepdims=True).astype(np.float64)
        return np.divide(self.counts, rows, out=np.zeros(self.counts.shape), where=rows > 0)


def confusion(y_true, y_pred, n_classes) -> ConfusionMatrix:
    y_true = np.asarray(y_true, dtype=np.int64).ravel()
    y_pred = np.asarray(y_pred, dtype=np.int64).ravel()
    if y_true.shape != y_pred.shape:
        raise ShapeError(f"{y_true.size} labels vs {y_pred.size} predictions")
    for name, y in (("true", y_true), ("predicted", y_pred)):
        if y.size and (y.min() < 0 or y.max() >= n_classes):
            raise LabelError(f"{name} label outside [0, {n_classes})")
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (y_true, y_pred), 1)
    return ConfusionMatrix(counts)


@dataclass
class MetricsReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    mcc: float
    per_class: dict = field(default_factory=dict)
    std: dict = field(default_factory=lambda: dict.fromkeys(METRIC_NAMES, 0.0))
    n_runs: int = 1

    def values(self):
        return {k: getattr(self, k) for k in METRIC_NAMES}

    def to_dict(self):
        return {
            "mean": self.values(),
            "std": dict(self.std),
            "n_runs": self.n_runs,
            "per_class": {k: list(map(float, v)) for k, v in self.per_class.items()},
        }


def _safe_div(num, den):
    return np.divide(num, den, out=np.zeros_like(num, dtype=np.float64), where=den > 0)


def multiclass_mcc(counts) -> float:
    """Gorodkin's K-class MCC; 0 when either marginal is degenerate."""
    c = np.asarray(counts, dtype=np.float64)
    s = c.sum()
    correct = np.trace(c)
    p = c.sum(axis=0)
    t = c.sum(axis=1)
    den = (s * s - p @ p) * (s * s - t @ t)
    if den <= 0:
        return 0.0
    return float((correct * s - p @ t) / math.sqrt(den))


def summary(cm: ConfusionMatrix) -> MetricsReport:
    """Accuracy, support-weighted precision/recall/F1 and MCC."""
    counts = np.asarray(cm.counts, dtype=np.float64)
    total = counts.sum()
    if counts.size == 0 or total <= 0:
        raise EmptyError("confusion matrix has no samples")
    tp = np.diag(counts)
    support = counts.sum(axis=1)
    predicted = counts.sum(axis=0)
    precision = _safe_div(tp, predicted)
    recall = _safe_div(tp, support)
    f1 = _safe_div(2 * precision * recall, precision + recall)
    weights = support / total
    return MetricsReport(
        accuracy=float(tp.sum() / total),
        precision=float(weights @ precision),
        recall=float(weights @ recall),
        f1=float(weights @ f1),
        mcc=multiclass_mcc(counts),
        per_class={"precision": precision, "recall": recall, "f1": f1, "support": support},
    )


def aggregate(reports) -> MetricsReport:
    """Mean and sample standard deviation (ddof=1) of each metric across runs."""
    reports = list(reports)
    if not reports:
        raise EmptyError("nothing to aggregate")
    n = len(reports)
    mean, std = {}, {}
    for name in METRIC_NAMES:
        vals = np.array([getattr(r, name) for r in reports], dtype=np.float64)
        mean[name] = float(vals.mean())
        std[name] = float(vals.std(ddof=1)) if n > 1 else 0.0
    per_class = {}
    for key in reports[0].per_class:
        per_class[key] = np.mean([np.asarray(r.per_class[key], dtype=np.float64) for r in reports], axis=0)
    return MetricsReport(**mean, per_class=per_class, std=std, n_runs=n)


def scatter_matrices(features, labels):
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    if x.ndim != 2 or y.shape != (x.shape[0],):
        raise ShapeError(f"features {x.shape} and labels {y.shape} disagree")
    classes, sizes = np.unique(y, return_counts=True)
    if classes.size < 2:
        raise DegenerateError("need at least two classes")
    if sizes.min() < 2:
        raise DegenerateError("every class needs at least two samples")
    overall = x.mean(axis=0)
    dim = x.shape[1]
    s_b = np.zeros((dim, dim))
    s_w = np.zeros((dim, dim))
    for cls, n_k in zip(classes, sizes):
        xk = x[y == cls]
        mk = xk.mean(axis=0)
        diff = mk - overall
        s_b += n_k * np.outer(diff, diff)
        centered = xk - mk
        s_w += centered.T @ centered
    return s_b, s_w


def log_fdr(features, labels) -> float:
    """``log(1 + trace(S_W^+ S_B))`` with a ridge-regularised inverse of S_W.

    The ridge is ``1e-6 * trace(S_W) / dim``, which keeps the score finite
    when there are fewer samples than feature dimensions.
    """
    s_b, s_w = scatter_matrices(features, labels)
    dim = s_w.shape[0]
    ridge = 1e-6 * np.trace(s_w) / dim
    if ridge <= 0:
        ridge = 1e-12
    ratio = np.trace(np.linalg.solve(s_w + ridge * np.eye(dim), s_b))
    return float(math.log1p(max(ratio, 0.0)))
