"""Confusion matrix, per-class / macro / weighted F1 and accuracy."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .labels import CLASS_NAMES, N_CLASSES, ClassLabel, round_half_up


class UndefinedMetricWarning(UserWarning):
    pass


@dataclass(frozen=True)
class EvaluationReport:
    confusion: np.ndarray  # rows = truth, cols = prediction
    per_class_f1: np.ndarray
    macro_f1: float
    weighted_f1: float
    accuracy: float
    support: np.ndarray

    @property
    def n(self) -> int:
        return int(self.confusion.sum())

    def row(self) -> dict[str, float]:
        """Scores in percent, in table column order."""
        out = {f"f1_{name}": 100 * float(f) for name, f in zip(CLASS_NAMES, self.per_class_f1)}
        out["accuracy"] = 100 * self.accuracy
        out["weighted_f1"] = 100 * self.weighted_f1
        out["macro_f1"] = 100 * self.macro_f1
        return out

    def to_csv(self, path, name: str = "model") -> Path:
        return write_reports({name: self}, path)

    def confusion_to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["truth\\pred", *CLASS_NAMES])
            for name, row in zip(CLASS_NAMES, self.confusion):
                writer.writerow([name, *row.tolist()])
        return path


def _as_labels(values) -> np.ndarray:
    return np.array([int(ClassLabel.parse(v)) for v in values], dtype=np.int64)


def evaluate(truth, predicted) -> EvaluationReport:
    """Score predicted labels against truth over the fixed four-class set.

    A class with no true and no predicted items gets F1 = 0 (with an
    :class:`UndefinedMetricWarning`) so that macro averages always run over
    all four classes.
    """
    truth = _as_labels(truth)
    predicted = _as_labels(predicted)
    if len(truth) != len(predicted):
        raise ValueError(f"length mismatch: {len(truth)} truths vs {len(predicted)} predictions")
    if len(truth) == 0:
        raise ValueError("cannot evaluate an empty prediction set")

    confusion = np.bincount(truth * N_CLASSES + predicted, minlength=N_CLASSES**2).reshape(N_CLASSES, N_CLASSES)
    tp = np.diag(confusion).astype(float)
    fp = confusion.sum(axis=0) - tp
    fn = confusion.sum(axis=1) - tp
    denom = 2 * tp + fp + fn
    undefined = denom == 0
    if undefined.any():
        names = ", ".join(CLASS_NAMES[i] for i in np.flatnonzero(undefined))
        warnings.warn(f"F1 undefined for absent classes ({names}); set to 0", UndefinedMetricWarning, stacklevel=2)
    f1 = np.divide(2 * tp, denom, out=np.zeros(N_CLASSES), where=~undefined)
    support = confusion.sum(axis=1)
    return EvaluationReport(
        confusion=confusion,
        per_class_f1=f1,
        macro_f1=float(f1.mean()),
        weighted_f1=float((support * f1).sum() / support.sum()),
        accuracy=float(tp.sum() / confusion.sum()),
        support=support,
    )


@dataclass(frozen=True)
class Improvement:
    points: float
    relative: float | None  # None when the reference score is 0

    def __str__(self):
        rel = "undefined" if self.relative is None else f"{round_half_up(self.relative)} %"
        return f"{round_half_up(self.points):+} pp ({rel})"


def improvement(score: float, reference: float) -> Improvement:
    """Absolute (percentage points) and relative (%) gain of ``score`` over ``reference``."""
    for v in (score, reference):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"scores must lie in [0, 1], got {v}")
    points = 100.0 * (score - reference)
    relative = None if reference == 0 else 100.0 * (score - reference) / reference
    return Improvement(points, relative)


TABLE_COLUMNS = ["f1_none", "f1_infection", "f1_ischaemia", "f1_both", "accuracy", "weighted_f1", "macro_f1"]


def write_reports(reports: dict[str, EvaluationReport], path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", *TABLE_COLUMNS, "n"])
        for name, report in reports.items():
            row = report.row()
            writer.writerow([name, *(repr(row[c]) for c in TABLE_COLUMNS), report.n])
    return path


def read_reports(path) -> dict[str, dict[str, float]]:
    with Path(path).open(newline="") as fh:
        return {row["model"]: {c: float(row[c]) for c in TABLE_COLUMNS} for row in csv.DictReader(fh)}


def format_table(rows: dict[str, dict[str, float]]) -> str:
    """Fixed-width text table, scores in percent with two decimals."""
    header = ["Model", "none F1", "inf. F1", "isc. F1", "both F1", "Acc.", "WA F1", "macro F1"]
    width = max([len(header[0]), *(len(k) for k in rows)])
    lines = [f"{header[0]:<{width}} " + " ".join(f"{h:>9}" for h in header[1:])]
    lines.append("-" * len(lines[0]))
    for name, row in rows.items():
        cells = " ".join(f"{str(round_half_up(row[c])):>9}" for c in TABLE_COLUMNS)
        lines.append(f"{name:<{width}} {cells}")
    return "\n".join(lines)
