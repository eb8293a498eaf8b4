"""
Scoring runs
============

AUC comes from the Mann-Whitney rank statistic, multi-label tasks average
the per-finding AUCs, multiclass tasks also report support-weighted F1, and
repetitions are summarized as mean plus a normal-approximation interval.
"""

import numpy as np

from atx.metrics import confidence_interval, mean_multilabel_auc, roc_auc, weighted_f1

print("AUC of the worked example:", roc_auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]))
print("ties count half:", roc_auc([0.5, 0.5], [0, 1]))

rng = np.random.default_rng(0)
labels = rng.integers(0, 2, size=(200, 3))
scores = labels + rng.normal(scale=[0.5, 1.0, 2.0], size=(200, 3))
per_class, mean = mean_multilabel_auc(scores, labels)
print("per-finding AUC:", np.round(per_class, 3), "mean", round(mean, 3))

truth = rng.integers(0, 4, size=100)
pred = np.where(rng.random(100) < 0.7, truth, rng.integers(0, 4, size=100))
print("weighted F1:", round(weighted_f1(pred, truth, 4), 4))

m, hw = confidence_interval([0.801, 0.815, 0.794])
print(f"three repetitions: {m:.4f} +/- {hw:.4f}")
