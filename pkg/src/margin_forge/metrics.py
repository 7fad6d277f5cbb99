"""Top-1 error reporting: confusion matrix, per-class and aggregate errors."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .classifier import NetworkParams, forward
from .drw_schedule import fmt
from .errors import InvalidInputError
from .imbalance_data import LabeledDataset, majority_mask


@dataclass
class MetricsReport:
    confusion: np.ndarray
    per_class_error: np.ndarray
    overall_error: float
    majority_error: float
    minority_error: float
    train_counts: tuple[int, ...] | None = None

    @property
    def class_sizes(self) -> np.ndarray:
        return self.confusion.sum(axis=1)

    def summary(self) -> dict:
        return {
            "overall_error": self.overall_error,
            "majority_error": self.majority_error,
            "minority_error": self.minority_error,
            "per_class_error": [float(e) for e in self.per_class_error],
        }


def report_from_predictions(labels, predictions, num_classes: int, split=None) -> MetricsReport:
    """Build a report from true and predicted labels.

    ``split`` is the training ``CountProfile`` or ``ClassCounts``; it decides
    which classes count as majority. Without it every class is majority and
    ``minority_error`` is NaN.
    """
    labels = np.asarray(labels, dtype=np.intp)
    predictions = np.asarray(predictions, dtype=np.intp)
    if labels.size == 0:
        raise InvalidInputError("cannot evaluate an empty dataset")
    confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(confusion, (labels, predictions), 1)
    sizes = confusion.sum(axis=1)
    correct = np.diag(confusion)
    with np.errstate(invalid="ignore", divide="ignore"):
        per_class = np.where(sizes > 0, 1.0 - correct / np.maximum(sizes, 1), np.nan)
    overall = float((sizes.sum() - correct.sum()) / sizes.sum())

    counts = getattr(split, "counts", split)
    if counts is not None and hasattr(counts, "counts"):
        counts = counts.counts
    if counts is None:
        major = np.ones(num_classes, dtype=bool)
    else:
        major = majority_mask(counts)
    return MetricsReport(
        confusion=confusion,
        per_class_error=per_class,
        overall_error=overall,
        majority_error=_group_error(confusion, major),
        minority_error=_group_error(confusion, ~major),
        train_counts=tuple(int(c) for c in counts) if counts is not None else None,
    )


def _group_error(confusion: np.ndarray, mask: np.ndarray) -> float:
    """Unweighted mean of per-class errors over the classes in ``mask``."""
    sizes = confusion.sum(axis=1)
    chosen = mask & (sizes > 0)
    if not chosen.any():
        return float("nan")
    errs = 1.0 - np.diag(confusion)[chosen] / sizes[chosen]
    return float(errs.mean())


def predict(model: NetworkParams, X) -> np.ndarray:
    Z, _ = forward(np.atleast_2d(X), model)
    return np.argmax(Z, axis=1)


def evaluate(model, data: LabeledDataset, split=None) -> MetricsReport:
    """Evaluate ``model`` (``NetworkParams`` or any callable mapping X to logits)."""
    if len(data) == 0:
        raise InvalidInputError("cannot evaluate an empty dataset")
    if isinstance(model, NetworkParams):
        if model.num_classes != data.num_classes:
            raise InvalidInputError(f"model has {model.num_classes} classes, data has {data.num_classes}")
        preds = predict(model, data.features)
    else:
        preds = np.argmax(np.asarray(model(data.features)), axis=1)
    return report_from_predictions(data.labels, preds, data.num_classes, split)


PER_CLASS_COLUMNS = ("class", "error", "count", "val_count", "group")


def write_per_class_csv(report: MetricsReport, path) -> None:
    """One row per class. ``count`` is the training count when known, else
    the evaluation count."""
    sizes = report.class_sizes
    counts = report.train_counts or tuple(int(s) for s in sizes)
    major = majority_mask(counts)
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(PER_CLASS_COLUMNS)
        for j, err in enumerate(report.per_class_error):
            writer.writerow([j, fmt(float(err)), counts[j], int(sizes[j]),
                             "majority" if major[j] else "minority"])


def write_summary_json(summary: dict, path) -> None:
    with open(Path(path), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
