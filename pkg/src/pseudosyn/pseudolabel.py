"""Confidence-thresholded pseudo-labeling and extension accounting."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from .catalog import (
    Catalog,
    ClassDistribution,
    ImageRecord,
    IntegrityError,
    Provenance,
    Split,
)
from .ensemble import check_probabilities
from .labels import ClassLabel, round_half_up

DEFAULT_THRESHOLD = 0.70


class AccountingError(ValueError):
    pass


@dataclass(frozen=True)
class PseudoLabel:
    id: str
    label: ClassLabel
    confidence: float


@dataclass(frozen=True)
class PseudoLabelBatch:
    threshold: float
    accepted: tuple[PseudoLabel, ...]
    rejected_count: int

    @property
    def per_class_accepted(self) -> ClassDistribution:
        return ClassDistribution.from_labels(a.label for a in self.accepted)

    @property
    def n_inputs(self) -> int:
        return len(self.accepted) + self.rejected_count

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["id", "label", "confidence"])
            for a in self.accepted:
                writer.writerow([a.id, a.label.key, repr(a.confidence)])
        return path

    @classmethod
    def from_csv(cls, path, threshold: float, n_inputs: int | None = None) -> "PseudoLabelBatch":
        with Path(path).open(newline="") as fh:
            accepted = tuple(
                PseudoLabel(row["id"], ClassLabel.parse(row["label"]), float(row["confidence"]))
                for row in csv.DictReader(fh)
            )
        n = len(accepted) if n_inputs is None else n_inputs
        return cls(threshold, accepted, n - len(accepted))


def filter_confident(ids, probabilities, threshold: float = DEFAULT_THRESHOLD) -> PseudoLabelBatch:
    """Accept items whose top probability is at least ``threshold`` (inclusive)."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must lie in [0, 1]")
    ids = list(ids)
    if len(set(ids)) != len(ids):
        raise IntegrityError("duplicate ids in predictions")
    if not ids:
        return PseudoLabelBatch(threshold, (), 0)
    p = check_probabilities(probabilities)
    if len(p) != len(ids):
        raise ValueError("ids and probabilities differ in length")
    top = np.argmax(p, axis=1)
    conf = p[np.arange(len(p)), top]
    keep = conf >= threshold
    accepted = tuple(
        PseudoLabel(ids[i], ClassLabel(int(top[i])), float(conf[i])) for i in np.flatnonzero(keep)
    )
    return PseudoLabelBatch(threshold, accepted, int((~keep).sum()))


def pseudo_id(record_id: str) -> str:
    return f"pseudo/{record_id}"


def extend_with_pseudo(catalog: Catalog, batch: PseudoLabelBatch, allow_test: bool = False) -> Catalog:
    """Return a new catalog with one ``pseudo`` training record per accepted item.

    The source records stay as they are. Pseudo-labels drawn from the test
    split are refused unless ``allow_test`` is set.
    """
    allowed = {Split.TRAIN_UNLABELED, Split.TEST} if allow_test else {Split.TRAIN_UNLABELED}
    new = []
    for item in batch.accepted:
        source = catalog.get(item.id)
        if source.split not in allowed:
            raise IntegrityError(f"{item.id!r} is in split {source.split.value}, not eligible for pseudo-labels")
        if item.confidence < batch.threshold:
            raise IntegrityError(f"{item.id!r}: confidence below the batch threshold")
        if pseudo_id(item.id) in catalog:
            raise IntegrityError(f"{item.id!r} was already pseudo-labeled")
        new.append(
            ImageRecord(
                id=pseudo_id(item.id),
                path=source.path,
                split=Split.TRAIN_LABELED,
                label=item.label,
                provenance=Provenance.PSEUDO,
                confidence=item.confidence,
                width=source.width,
                height=source.height,
            )
        )
    return catalog.extend(new)


@dataclass(frozen=True)
class ClassIncrease:
    label: ClassLabel
    before: int
    after: int

    @property
    def absolute(self) -> int:
        return self.after - self.before

    @property
    def percent(self) -> Fraction | None:
        """Exact percent increase; ``None`` when the class was empty before."""
        if self.before == 0:
            return None
        return Fraction(100 * self.absolute, self.before)

    def percent_text(self) -> str:
        if self.percent is None:
            return "new"
        return f"+{round_half_up(self.percent)} %"


def extension_stats(before: ClassDistribution, after: ClassDistribution) -> list[ClassIncrease]:
    rows = []
    for label in ClassLabel:
        b, a = before[label], after[label]
        if a < b:
            raise AccountingError(f"{label.key}: count dropped from {b} to {a}")
        rows.append(ClassIncrease(label, b, a))
    return rows


def format_stats(rows: list[ClassIncrease]) -> str:
    lines = [f"{'class':<10} {'before':>8} {'added':>8} {'after':>8} {'increase':>11}"]
    for r in rows:
        lines.append(f"{r.label.key:<10} {r.before:>8} {r.absolute:>8} {r.after:>8} {r.percent_text():>11}")
    return "\n".join(lines)

