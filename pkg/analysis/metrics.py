"""
Classification Metrics
======================

ROC-AUC, PR-AUC, ACC, BACC, PREC, TPR and Cohen's Kappa from labels,
scores and a decision threshold (score >= threshold means positive).

Metrics whose denominator is zero are undefined: the scalar helpers raise
MetricUndefinedError, ``compute_report`` stores None, and serialized
reports write the literal "undefined".
"""

import json
import logging
import math
from dataclasses import dataclass, fields

import numpy as np
import pandas as pd
from scipy.stats import rankdata
from sklearn.metrics import average_precision_score, cohen_kappa_score, confusion_matrix

from config import settings
from utils.errors import DataError, MetricUndefinedError

logger = logging.getLogger(__name__)

METRIC_NAMES = ("roc_auc", "pr_auc", "acc", "bacc", "prec", "tpr", "kappa")
UNDEFINED = "undefined"


def _check_inputs(labels, scores):
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    if y.size != s.size:
        raise DataError(f"labels ({y.size}) and scores ({s.size}) differ in length")
    if y.size == 0:
        raise DataError("metrics need at least one sample")
    if not np.all((y == 0) | (y == 1)):
        raise DataError("labels must be 0 or 1")
    if not np.all(np.isfinite(s)):
        raise DataError("scores contain NaN or Inf")
    return y.astype(np.int64), s


def confusion_counts(labels, scores, threshold=settings.DECISION_THRESHOLD):
    """(tp, fp, tn, fn) with prediction = score >= threshold."""
    y, s = _check_inputs(labels, scores)
    pred = (s >= threshold).astype(np.int64)
    tn, fp, fn, tp = confusion_matrix(y, pred, labels=[0, 1]).ravel()
    return int(tp), int(fp), int(tn), int(fn)


def _ratio(num, den, name):
    if den == 0:
        raise MetricUndefinedError(f"{name} is undefined (zero denominator)")
    return num / den


def accuracy(confusion):
    tp, fp, tn, fn = confusion
    return _ratio(tp + tn, tp + fp + tn + fn, "accuracy")


def precision(confusion):
    tp, fp, _, _ = confusion
    return _ratio(tp, tp + fp, "precision")


def tpr(confusion):
    tp, _, _, fn = confusion
    return _ratio(tp, tp + fn, "true positive rate")


def tnr(confusion):
    _, fp, tn, _ = confusion
    return _ratio(tn, tn + fp, "true negative rate")


def balanced_accuracy(confusion):
    return (tpr(confusion) + tnr(confusion)) / 2.0


def _expand(confusion):
    """Label and prediction vectors that reproduce a confusion tuple."""
    tp, fp, tn, fn = confusion
    y = np.repeat([1, 0, 0, 1], [tp, fp, tn, fn])
    pred = np.repeat([1, 1, 0, 0], [tp, fp, tn, fn])
    return y, pred


def kappa(confusion):
    """Cohen's kappa; undefined when chance agreement is total (n² = S)."""
    tp, fp, tn, fn = confusion
    n = tp + fp + tn + fn
    chance = (tp + fp) * (tp + fn) + (fn + tn) * (fp + tn)
    if n * n - chance == 0:
        raise MetricUndefinedError("kappa is undefined (zero denominator)")
    return float(cohen_kappa_score(*_expand(confusion), labels=[0, 1]))


def roc_auc(labels, scores):
    """Mann-Whitney AUC via rank sums; tied scores count one half."""
    y, s = _check_inputs(labels, scores)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricUndefinedError("ROC-AUC is undefined with a single class")
    ranks = rankdata(s)
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def pr_auc(labels, scores):
    """Average precision; tied scores form one threshold."""
    y, s = _check_inputs(labels, scores)
    if int(y.sum()) == 0:
        raise MetricUndefinedError("PR-AUC is undefined without positives")
    return float(average_precision_score(y, s))


@dataclass
class MetricsReport:
    roc_auc: float | None
    pr_auc: float | None
    acc: float | None
    bacc: float | None
    prec: float | None
    tpr: float | None
    kappa: float | None
    tp: int
    fp: int
    tn: int
    fn: int
    n: int
    threshold: float = settings.DECISION_THRESHOLD

    @property
    def confusion(self):
        return self.tp, self.fp, self.tn, self.fn

    def to_dict(self):
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            out[f.name] = UNDEFINED if value is None else value
        return out

    @classmethod
    def from_dict(cls, d):
        kwargs = {}
        for f in fields(cls):
            value = d.get(f.name)
            kwargs[f.name] = None if value == UNDEFINED else value
        return cls(**kwargs)

    def to_json(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2)
        return path

    @classmethod
    def from_json(cls, path):
        with open(path) as f:
            return cls.from_dict(json.load(f))

    def to_csv(self, path):
        rows = [(k, v) for k, v in self.to_dict().items()]
        pd.DataFrame(rows, columns=["metric", "value"]).to_csv(path, index=False)
        return path

    def summary_line(self):
        parts = []
        for name in METRIC_NAMES:
            value = getattr(self, name)
            parts.append(f"{name.upper()}={UNDEFINED if value is None else f'{value:.4f}'}")
        return " | ".join(parts)


def _defined(fn, *args):
    try:
        return fn(*args)
    except MetricUndefinedError as e:
        logger.debug("%s", e)
        return None


def compute_report(labels, scores, threshold=settings.DECISION_THRESHOLD):
    confusion = confusion_counts(labels, scores, threshold)
    tp, fp, tn, fn = confusion
    return MetricsReport(
        roc_auc=_defined(roc_auc, labels, scores),
        pr_auc=_defined(pr_auc, labels, scores),
        acc=_defined(accuracy, confusion),
        bacc=_defined(balanced_accuracy, confusion),
        prec=_defined(precision, confusion),
        tpr=_defined(tpr, confusion),
        kappa=_defined(kappa, confusion),
        tp=tp, fp=fp, tn=tn, fn=fn, n=tp + fp + tn + fn,
        threshold=threshold,
    )


def aggregate_reports(reports, metrics=METRIC_NAMES):
    """
    Mean and sample standard deviation per metric across folds, skipping
    undefined entries. A metric defined in one fold only gets sd 0.0; one
    undefined everywhere gets mean None.
    """
    out = {}
    for name in metrics:
        values = [getattr(r, name) for r in reports if getattr(r, name) is not None]
        if not values:
            out[name] = {"mean": None, "sd": None, "n": 0}
            continue
        arr = np.asarray(values, dtype=np.float64)
        sd = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
        out[name] = {"mean": float(arr.mean()), "sd": sd, "n": int(arr.size)}
    return out


def format_mean_sd(entry, digits=2):
    if entry["mean"] is None or math.isnan(entry["mean"]):
        return UNDEFINED
    return f"{entry['mean']:.{digits}f}±{entry['sd']:.{digits}f}"
