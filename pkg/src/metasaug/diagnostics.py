"""Confusion matrices, error reports and covariance spectrum summaries."""

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import model
from .covariance import spectrum_report
from .errors import InsufficientDataError

GROUPS = ("many", "medium", "few")


@dataclass
class ConfusionMatrix:
    """Rows are true classes, columns predictions."""

    counts: np.ndarray

    @property
    def row_totals(self):
        return self.counts.sum(axis=1)

    @property
    def empty_rows(self):
        return self.row_totals == 0

    def normalized(self):
        totals = self.row_totals.astype(np.float64)
        out = np.zeros(self.counts.shape)
        ok = totals > 0
        out[ok] = self.counts[ok] / totals[ok, None]
        return out


@dataclass
class ErrorReport:
    top1_error: float
    per_class_error: list
    group_error: dict
    group_classes: dict
    n_samples: int

    def to_dict(self):
        return {
            "top1_error": self.top1_error,
            "per_class_error": self.per_class_error,
            "group_error": self.group_error,
            "group_classes": self.group_classes,
            "group_note": "many/medium/few are terciles of training class counts (reporting convenience)",
            "n_samples": self.n_samples,
        }


def count_groups(train_counts):
    """Split classes into count terciles, most frequent first."""
    order = np.argsort(-np.asarray(train_counts), kind="stable")
    parts = np.array_split(order, 3)
    return {g: sorted(int(c) for c in part) for g, part in zip(GROUPS, parts)}


def predict(params, x):
    """Argmax class; ties go to the smaller index."""
    return np.argmax(model.forward(params, x).logits, axis=1)


def confusion(y_true, y_pred, num_classes):
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(counts, (np.asarray(y_true), np.asarray(y_pred)), 1)
    return ConfusionMatrix(counts)


def error_report(cm, train_counts=None):
    counts = cm.counts
    n = int(counts.sum())
    correct = np.diag(counts)
    totals = cm.row_totals
    per_class = [
        float(100.0 * (1.0 - correct[c] / totals[c])) if totals[c] else float("nan")
        for c in range(counts.shape[0])
    ]
    groups = count_groups(train_counts if train_counts is not None else totals)
    group_error = {}
    for g, classes in groups.items():
        tot = int(totals[classes].sum()) if classes else 0
        group_error[g] = float(100.0 * (1.0 - correct[classes].sum() / tot)) if tot else float("nan")
    return ErrorReport(float(100.0 * (1.0 - correct.sum() / n)), per_class, group_error, groups, n)


def evaluate(params, test, train_counts=None):
    if len(test) == 0:
        raise InsufficientDataError("cannot evaluate on an empty test set")
    cm = confusion(test.labels, predict(params, test.features), test.num_classes)
    return cm, error_report(cm, train_counts)


def spectral_flatness(values):
    """Geometric over arithmetic mean; 0 if any value is 0."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0 or np.any(v <= 0):
        return 0.0
    return float(math.exp(np.mean(np.log(v))) / np.mean(v))


def spectrum_figure_data(bank, c, k=5):
    spec = spectrum_report(bank, c, k)
    return {
        "class": int(c),
        "values": spec.values,
        "zero": spec.zero,
        "flatness": 0.0 if spec.zero else spectral_flatness(spec.values),
    }


def write_confusion_csv(cm, path, normalized=False):
    data = cm.normalized() if normalized else cm.counts
    C = data.shape[0]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["true\\pred", *range(C)])
        for c in range(C):
            row = [repr(float(v)) for v in data[c]] if normalized else [int(v) for v in data[c]]
            w.writerow([c, *row])
