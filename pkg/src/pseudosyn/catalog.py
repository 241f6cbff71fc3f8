"""Dataset manifests, provenance tracking, class counts and CV folds.

A :class:`Catalog` is an immutable collection of :class:`ImageRecord` rows
loaded from a CSV manifest with columns
``id,path,split,label,provenance,source_class,confidence``.
Extending a catalog with pseudo-labeled or synthetic records returns a new
catalog; real records are never modified.
"""

from __future__ import annotations

import csv
import enum
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
from sklearn.model_selection import StratifiedKFold

from .labels import ClassLabel

MANIFEST_COLUMNS = ("id", "path", "split", "label", "provenance", "source_class", "confidence")


class ManifestError(ValueError):
    """A manifest row could not be parsed."""


class IntegrityError(ValueError):
    """Duplicate ids or records violating provenance rules."""


class StratificationError(ValueError):
    pass


class Split(str, enum.Enum):
    TRAIN_LABELED = "train_labeled"
    TRAIN_UNLABELED = "train_unlabeled"
    TEST = "test"
    VALIDATION = "validation"


class Provenance(str, enum.Enum):
    REAL = "real"
    PSEUDO = "pseudo"
    SYNTHETIC = "synthetic"


# Ground truth may be attached to held-out splits for evaluation.
_EVAL_SPLITS = (Split.TEST, Split.VALIDATION)


@dataclass(frozen=True)
class ImageRecord:
    id: str
    path: str
    split: Split
    label: ClassLabel | None = None
    provenance: Provenance = Provenance.REAL
    source_class: ClassLabel | None = None
    confidence: float | None = None
    width: int | None = None
    height: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "split", Split(self.split))
        object.__setattr__(self, "provenance", Provenance(self.provenance))
        if self.label is not None:
            object.__setattr__(self, "label", ClassLabel.parse(self.label))
        if self.source_class is not None:
            object.__setattr__(self, "source_class", ClassLabel.parse(self.source_class))
        self._check()

    def _check(self):
        needs_label = self.split is Split.TRAIN_LABELED or self.provenance is not Provenance.REAL
        if needs_label and self.label is None:
            raise IntegrityError(f"record {self.id!r}: label required")
        if self.label is not None and not needs_label and self.split not in _EVAL_SPLITS:
            raise IntegrityError(f"record {self.id!r}: unlabeled split carries a label")
        if self.provenance is Provenance.SYNTHETIC and self.source_class is None:
            raise IntegrityError(f"record {self.id!r}: synthetic record needs source_class")
        if self.provenance is Provenance.PSEUDO:
            if self.confidence is None:
                raise IntegrityError(f"record {self.id!r}: pseudo record needs confidence")
            if not 0.0 <= self.confidence <= 1.0:
                raise IntegrityError(f"record {self.id!r}: confidence outside [0, 1]")

    @property
    def is_training(self) -> bool:
        return self.split is Split.TRAIN_LABELED


@dataclass(frozen=True)
class ClassDistribution:
    counts: tuple[int, int, int, int] = (0, 0, 0, 0)

    def __post_init__(self):
        counts = tuple(int(c) for c in self.counts)
        if len(counts) != len(ClassLabel):
            raise ValueError("need one count per class")
        if any(c < 0 for c in counts):
            raise ValueError("counts must be non-negative")
        object.__setattr__(self, "counts", counts)

    @classmethod
    def from_mapping(cls, mapping: Mapping) -> "ClassDistribution":
        counts = [0] * len(ClassLabel)
        for key, value in mapping.items():
            counts[ClassLabel.parse(key)] += int(value)
        return cls(tuple(counts))

    @classmethod
    def from_labels(cls, labels: Iterable) -> "ClassDistribution":
        counts = [0] * len(ClassLabel)
        for label in labels:
            counts[ClassLabel.parse(label)] += 1
        return cls(tuple(counts))

    @property
    def total(self) -> int:
        return sum(self.counts)

    def __getitem__(self, label) -> int:
        return self.counts[ClassLabel.parse(label)]

    def __add__(self, other: "ClassDistribution") -> "ClassDistribution":
        return ClassDistribution(tuple(a + b for a, b in zip(self.counts, other.counts)))

    def as_dict(self) -> dict[str, int]:
        return {c.key: n for c, n in zip(ClassLabel, self.counts)}


@dataclass(frozen=True)
class Catalog:
    records: tuple[ImageRecord, ...] = ()
    root: Path | None = None
    _by_id: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        records = tuple(self.records)
        by_id = {}
        for record in records:
            if record.id in by_id:
                raise IntegrityError(f"duplicate id {record.id!r}")
            by_id[record.id] = record
        object.__setattr__(self, "records", records)
        object.__setattr__(self, "_by_id", by_id)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __contains__(self, record_id):
        return record_id in self._by_id

    def get(self, record_id: str) -> ImageRecord:
        try:
            return self._by_id[record_id]
        except KeyError:
            raise KeyError(f"no record with id {record_id!r}") from None

    def select(self, split=None, provenance=None, label=None) -> list[ImageRecord]:
        split = _as_set(split, Split)
        provenance = _as_set(provenance, Provenance)
        label = _as_set(label, ClassLabel.parse)
        return [
            r
            for r in self.records
            if (split is None or r.split in split)
            and (provenance is None or r.provenance in provenance)
            and (label is None or r.label in label)
        ]

    def resolve(self, record: ImageRecord) -> Path:
        path = Path(record.path)
        if not path.is_absolute() and self.root is not None:
            path = self.root / path
        return path

    def extend(self, records: Iterable[ImageRecord]) -> "Catalog":
        return Catalog(self.records + tuple(records), root=self.root)

    @property
    def distributions(self) -> dict[Split, ClassDistribution]:
        return {s: class_distribution(self, s) for s in Split}


def _as_set(value, convert):
    if value is None:
        return None
    if isinstance(value, (str, int, enum.Enum)):
        value = [value]
    return {convert(v) for v in value}


def _parse_optional(text, convert):
    text = (text or "").strip()
    return convert(text) if text else None


def load_manifest(path) -> Catalog:
    """Read a manifest CSV; relative image paths resolve against its directory."""
    path = Path(path)
    records = []
    seen = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in MANIFEST_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise ManifestError(f"{path}: line 1: missing columns {missing}")
        for row in reader:
            line = reader.line_num
            try:
                record = ImageRecord(
                    id=row["id"].strip(),
                    path=row["path"].strip(),
                    split=row["split"].strip(),
                    label=_parse_optional(row["label"], ClassLabel.parse),
                    provenance=(row["provenance"] or "real").strip(),
                    source_class=_parse_optional(row["source_class"], ClassLabel.parse),
                    confidence=_parse_optional(row["confidence"], float),
                    width=_parse_optional(row.get("width"), int),
                    height=_parse_optional(row.get("height"), int),
                )
            except IntegrityError as exc:
                raise IntegrityError(f"{path}: line {line}: {exc}") from None
            except (ValueError, AttributeError, TypeError) as exc:
                raise ManifestError(f"{path}: line {line}: {exc}") from None
            if not record.id:
                raise ManifestError(f"{path}: line {line}: empty id")
            if record.id in seen:
                raise IntegrityError(
                    f"{path}: line {line}: duplicate id {record.id!r} (first on line {seen[record.id]})"
                )
            seen[record.id] = line
            records.append(record)
    return Catalog(tuple(records), root=path.parent.resolve())


def write_manifest(catalog: Catalog | Iterable[ImageRecord], path) -> Path:
    """Write records as a manifest CSV.

    Relative image paths of a rooted catalog are rewritten relative to the
    new manifest's directory so the written file resolves on its own.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    root = getattr(catalog, "root", None)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_COLUMNS + ("width", "height"))
        for r in catalog:
            image_path = r.path
            if root is not None and not Path(image_path).is_absolute():
                image_path = os.path.relpath(Path(root) / image_path, path.parent.resolve())
            writer.writerow(
                [
                    r.id,
                    Path(image_path).as_posix(),
                    r.split.value,
                    r.label.key if r.label is not None else "",
                    r.provenance.value,
                    r.source_class.key if r.source_class is not None else "",
                    "" if r.confidence is None else repr(float(r.confidence)),
                    "" if r.width is None else r.width,
                    "" if r.height is None else r.height,
                ]
            )
    return path


def class_distribution(catalog: Catalog, split=Split.TRAIN_LABELED, provenance=None) -> ClassDistribution:
    """Per-class counts of labeled records matching ``split`` and ``provenance``."""
    return ClassDistribution.from_labels(
        r.label for r in catalog.select(split=split, provenance=provenance) if r.label is not None
    )


@dataclass(frozen=True)
class FoldAssignment:
    k: int
    assignment: Mapping[str, int]

    def held_out(self, fold: int) -> list[str]:
        return [i for i, f in self.assignment.items() if f == fold]

    def training(self, fold: int) -> list[str]:
        return [i for i, f in self.assignment.items() if f != fold]

    def sizes(self) -> list[int]:
        counts = np.bincount(list(self.assignment.values()), minlength=self.k)
        return counts.tolist()


def split_cv(catalog: Catalog, k: int = 5, seed: int = 0) -> FoldAssignment:
    """Stratified, seeded k-fold assignment over all labeled training records."""
    if k < 2:
        raise ValueError("k must be at least 2")
    records = catalog.select(split=Split.TRAIN_LABELED)
    labels = np.array([int(r.label) for r in records])
    counts = np.bincount(labels, minlength=len(ClassLabel)) if len(labels) else np.zeros(4, int)
    short = [ClassLabel(c).key for c in range(len(ClassLabel)) if counts[c] < k]
    if short:
        raise StratificationError(f"classes with fewer than {k} records: {', '.join(short)}")
    splitter = StratifiedKFold(n_splits=k, shuffle=True, random_state=seed)
    assignment = {}
    for fold, (_, held) in enumerate(splitter.split(np.zeros(len(labels)), labels)):
        for idx in held:
            assignment[records[idx].id] = fold
    # keep catalog order for stable iteration
    return FoldAssignment(k, {r.id: assignment[r.id] for r in records})
