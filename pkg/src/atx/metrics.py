"""ROC-AUC, weighted F1 and repetition confidence intervals."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy import stats

logger = logging.getLogger(__name__)

Z_95 = 1.96


def roc_auc(scores, labels) -> float:
    """Probability that a random positive outscores a random negative (ties count 1/2).

    Computed from the Mann-Whitney U statistic on average ranks.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise ValueError(f"scores {scores.shape} and labels {labels.shape} differ in length")
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("labels must be binary (0/1)")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC undefined: labels contain a single class")
    ranks = stats.rankdata(scores)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def mean_multilabel_auc(score_matrix, label_matrix):
    """Per-class AUCs and their unweighted mean over classes having both labels.

    Returns ``(per_class, mean)`` where ``per_class`` holds NaN for excluded classes.
    """
    s = np.asarray(score_matrix, dtype=np.float64)
    y = np.asarray(label_matrix)
    if s.ndim != 2 or s.shape != y.shape:
        raise ValueError(f"expected matching (N, L) matrices, got {s.shape} and {y.shape}")
    per_class = np.full(s.shape[1], np.nan)
    excluded = []
    for j in range(s.shape[1]):
        col = y[:, j]
        if col.min() == col.max():
            excluded.append(j)
            continue
        per_class[j] = roc_auc(s[:, j], col)
    if excluded:
        logger.info("classes %s excluded from mean AUC (single label value)", excluded)
    if np.isnan(per_class).all():
        raise ValueError("no class has both positive and negative labels")
    return per_class, float(np.nanmean(per_class))


def weighted_f1(pred_classes, true_classes, num_classes: int) -> float:
    """Support-weighted mean of per-class F1 (F1 = 0 where precision or recall is undefined)."""
    pred = np.asarray(pred_classes).ravel().astype(np.int64)
    true = np.asarray(true_classes).ravel().astype(np.int64)
    if pred.size == 0:
        raise ValueError("weighted_f1 of empty input")
    if pred.shape != true.shape:
        raise ValueError("prediction and target lengths differ")
    for arr in (pred, true):
        if arr.min() < 0 or arr.max() >= num_classes:
            raise ValueError(f"classes must lie in [0, {num_classes})")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (true, pred), 1)
    tp = np.diag(cm).astype(np.float64)
    support = cm.sum(axis=1).astype(np.float64)
    predicted = cm.sum(axis=0).astype(np.float64)
    denom = support + predicted
    f1 = np.divide(2 * tp, denom, out=np.zeros_like(tp), where=denom > 0)
    return float((f1 * support).sum() / support.sum())


def confidence_interval(values, method: str = "normal", level: float = 0.95):
    """``(mean, half_width)`` of the mean over repetitions.

    ``normal`` uses ``1.96 * s / sqrt(n)``; ``t`` uses the Student-t quantile
    with n - 1 degrees of freedom.
    """
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size < 2:
        raise ValueError("confidence_interval needs at least 2 values")
    s = 0.0 if np.ptp(v) == 0 else v.std(ddof=1)  # no rounding residue for identical values
    if method == "normal":
        q = Z_95 if level == 0.95 else stats.norm.ppf(0.5 + level / 2)
    elif method == "t":
        q = stats.t.ppf(0.5 + level / 2, df=v.size - 1)
    else:
        raise ValueError(f"unknown CI method {method!r}")
    return float(v.mean()), float(q * s / np.sqrt(v.size))


@dataclass
class MetricReport:
    per_class_auc: list = field(default_factory=list)
    mean_auc: float = float("nan")
    weighted_f1: Optional[float] = None
    n_samples: int = 0
    repetitions: list = field(default_factory=list)
    ci_method: str = "normal, over repetitions"

    def aggregate(self, key: str = "mean_auc"):
        vals = [r[key] for r in self.repetitions if r.get(key) is not None]
        return confidence_interval(vals) if len(vals) >= 2 else (float(np.mean(vals)), float("nan"))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_class_auc"] = [None if np.isnan(a) else float(a) for a in self.per_class_auc]
        return d


def evaluate_predictions(outputs, targets, task: str, num_classes: int) -> MetricReport:
    """Metric report from model probabilities.

    ``outputs`` are sigmoid scores (N, L) for multi-label tasks or softmax
    probabilities (N, K) for multiclass; multiclass AUC is one-vs-rest and
    the predicted class for F1 is the argmax.
    """
    outputs = np.asarray(outputs, dtype=np.float64)
    targets = np.asarray(targets)
    if task == "multilabel_binary":
        per_class, mean = mean_multilabel_auc(outputs, targets)
        return MetricReport(per_class_auc=list(per_class), mean_auc=mean, n_samples=len(outputs))
    onehot = np.eye(num_classes, dtype=np.int64)[targets.astype(np.int64)]
    per_class, mean = mean_multilabel_auc(outputs, onehot)
    f1 = weighted_f1(outputs.argmax(axis=1), targets, num_classes)
    return MetricReport(per_class_auc=list(per_class), mean_auc=mean, weighted_f1=f1, n_samples=len(outputs))
