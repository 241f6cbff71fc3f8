"""Unweighted averaging of member probability vectors."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .labels import CLASS_NAMES, N_CLASSES, ClassLabel

PREDICTION_COLUMNS = ("id", *(f"p_{name}" for name in CLASS_NAMES))
SIMPLEX_TOL = 1e-6


class AlignmentError(ValueError):
    pass


def check_probabilities(p, tol: float = SIMPLEX_TOL) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim == 1:
        p = p[None, :]
    if p.ndim != 2 or p.shape[1] != N_CLASSES:
        raise ValueError(f"expected (n, {N_CLASSES}) probabilities, got shape {p.shape}")
    if np.any(p < -tol) or np.any(p > 1 + tol) or not np.all(np.isfinite(p)):
        raise ValueError("probabilities must lie in [0, 1]")
    if np.any(np.abs(p.sum(axis=1) - 1.0) > tol):
        raise ValueError("probability vectors must sum to 1")
    return p


def average_probabilities(vectors_per_model: Sequence) -> np.ndarray:
    """Elementwise mean over models.

    ``vectors_per_model[m][i]`` is model ``m``'s vector for image ``i``; all
    models must cover the same ordered image list.
    """
    if len(vectors_per_model) == 0:
        raise ValueError("need at least one member")
    stacked = [check_probabilities(v) for v in vectors_per_model]
    lengths = {len(v) for v in stacked}
    if len(lengths) != 1:
        raise AlignmentError(f"members disagree on number of images: {sorted(lengths)}")
    # summing each element's values in sorted order makes the result
    # independent of member order, bit for bit
    ordered = np.sort(np.stack(stacked), axis=0)
    return ordered.sum(axis=0) / len(stacked)


def decide(vector) -> tuple[ClassLabel, float]:
    """Argmax label and its probability; ties go to the lowest class index."""
    p = check_probabilities(vector)[0]
    idx = int(np.argmax(p))  # np.argmax returns the first maximum
    return ClassLabel(idx), float(p[idx])


def decide_all(probabilities) -> tuple[np.ndarray, np.ndarray]:
    p = check_probabilities(probabilities)
    idx = np.argmax(p, axis=1)
    return idx, p[np.arange(len(p)), idx]


class AveragingEnsemble(ClassifierMixin, BaseEstimator):
    """Ensemble of already-fitted members with uniform weights.

    Members only need ``predict_proba``. ``fit`` checks the member list and
    does not refit anything.
    """

    def __init__(self, members=()):
        self.members = members

    def fit(self, X=None, y=None):
        members = list(self.members)
        if not members:
            raise ValueError("ensemble needs at least one member")
        if len({id(m) for m in members}) != len(members):
            raise ValueError("duplicate ensemble member")
        self.members_ = members
        self.classes_ = np.arange(N_CLASSES)
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "members_")
        return average_probabilities([m.predict_proba(X) for m in self.members_])

    def predict(self, X):
        return decide_all(self.predict_proba(X))[0]


def write_predictions(ids, probabilities, path) -> Path:
    path = Path(path)
    p = check_probabilities(probabilities) if len(ids) else np.zeros((0, N_CLASSES))
    if len(ids) != len(p):
        raise AlignmentError("ids and probabilities differ in length")
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(PREDICTION_COLUMNS)
        for i, row in zip(ids, p):
            writer.writerow([i, *(repr(float(x)) for x in row)])
    return path


def read_predictions(path) -> tuple[list[str], np.ndarray]:
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != PREDICTION_COLUMNS:
            raise ValueError(f"{path}: expected columns {','.join(PREDICTION_COLUMNS)}")
        ids, rows = [], []
        for row in reader:
            ids.append(row["id"])
            rows.append([float(row[c]) for c in PREDICTION_COLUMNS[1:]])
    p = np.array(rows, dtype=np.float64).reshape(-1, N_CLASSES)
    return ids, p


def ensemble_files(paths) -> tuple[list[str], np.ndarray]:
    """Average any number of prediction CSVs that list the same ids in the same order."""
    loaded = [read_predictions(p) for p in paths]
    if not loaded:
        raise ValueError("no prediction files given")
    ids = loaded[0][0]
    for path, (other, _) in zip(paths, loaded):
        if other != ids:
            raise AlignmentError(f"{path}: ids do not match the first prediction file")
    return ids, average_probabilities([p for _, p in loaded])
