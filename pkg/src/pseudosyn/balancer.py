"""Cross-class synthesis plan that equalizes class counts.

Each class ``c`` receives one synthetic image for every edge mask taken from
an image of any *other* class. After that step every class holds the full
post-pseudo-labeling total, so the plan's target count is that total and
real:synthetic is exactly ``1 : (k - 1)`` for ``k`` classes.
"""

from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

from .catalog import Catalog, ClassDistribution, Provenance, Split
from .labels import ClassLabel, round_half_up


class DegeneratePlanError(ValueError):
    pass


@dataclass(frozen=True)
class ExtensionPlan:
    baseline: ClassDistribution
    after_pseudo: ClassDistribution
    target_per_class: int
    quotas: dict[ClassLabel, int]
    mask_sources: dict[ClassLabel, dict[ClassLabel, int]]

    @property
    def synthetic_total(self) -> int:
        return sum(self.quotas.values())

    @property
    def grand_total(self) -> int:
        return self.target_per_class * len(ClassLabel)

    @property
    def real_to_synthetic(self) -> Fraction:
        """Synthetic images per real image (3 means a 1:3 ratio)."""
        return Fraction(self.synthetic_total, self.after_pseudo.total)

    @property
    def multiplier(self) -> Fraction:
        return Fraction(self.grand_total, self.baseline.total)

    @property
    def pseudo(self) -> ClassDistribution:
        return ClassDistribution(tuple(a - b for a, b in zip(self.after_pseudo.counts, self.baseline.counts)))

    def table_rows(self) -> list[dict]:
        """Rows of the extension table: counts and shares of the grand total."""
        columns = {
            "baseline": self.baseline.counts,
            "pseudo": self.pseudo.counts,
            "synthetic": tuple(self.quotas[c] for c in ClassLabel),
        }
        rows = []
        for i, label in enumerate(ClassLabel):
            row = {"class": label.key}
            for name, counts in columns.items():
                row[name] = counts[i]
            row["total"] = self.target_per_class
            rows.append(row)
        total = {"class": "total"}
        for name, counts in columns.items():
            total[name] = sum(counts)
        total["total"] = self.grand_total
        rows.append(total)
        return rows

    def share(self, count: int) -> Fraction:
        return Fraction(100 * count, self.grand_total) if self.grand_total else Fraction(0)

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            cols = ["baseline", "pseudo", "synthetic", "total"]
            writer.writerow(["class", *(x for c in cols for x in (c, f"{c}_pct"))])
            for row in self.table_rows():
                writer.writerow(
                    [row["class"], *(x for c in cols for x in (row[c], round_half_up(self.share(row[c]))))]
                )
        return path

    def format_table(self) -> str:
        lines = [f"{'class':<10} {'baseline':>18} {'pseudo-label':>18} {'synthetic':>18} {'total':>18}"]
        for row in self.table_rows():
            cells = [
                f"{row[c]:>6,} ({round_half_up(self.share(row[c])):>6} %)"
                for c in ("baseline", "pseudo", "synthetic", "total")
            ]
            lines.append(f"{row['class']:<10} " + " ".join(f"{c:>18}" for c in cells))
        lines.append(
            f"real:synthetic = 1:{self.real_to_synthetic}  "
            f"size vs baseline = x{round_half_up(self.multiplier, 3)}"
        )
        return "\n".join(lines)


def plan_balance(after_pseudo: ClassDistribution, baseline: ClassDistribution | None = None) -> ExtensionPlan:
    """Quotas and mask sources that bring every class to the post-pseudo total."""
    baseline = after_pseudo if baseline is None else baseline
    if sum(1 for n in after_pseudo.counts if n > 0) < 2:
        raise DegeneratePlanError("need at least two non-empty classes to draw cross-class masks from")
    target = after_pseudo.total
    quotas = {c: target - after_pseudo[c] for c in ClassLabel}
    mask_sources = {c: {s: after_pseudo[s] for s in ClassLabel if s != c} for c in ClassLabel}
    return ExtensionPlan(
        baseline=baseline,
        after_pseudo=after_pseudo,
        target_per_class=target,
        quotas=quotas,
        mask_sources=mask_sources,
    )


@dataclass
class Discrepancy:
    label: ClassLabel
    kind: str
    expected: int
    actual: int
    detail: str = ""

    def __str__(self):
        msg = f"{self.label.key}: {self.kind} expected {self.expected}, found {self.actual}"
        if self.expected > self.actual:
            msg += f" (shortfall {self.expected - self.actual})"
        return msg + (f" [{self.detail}]" if self.detail else "")


@dataclass
class VerificationReport:
    discrepancies: list[Discrepancy] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.discrepancies

    def __str__(self):
        if self.ok:
            return "extension matches plan"
        return "\n".join(str(d) for d in self.discrepancies)


def verify_extension(plan: ExtensionPlan, catalog: Catalog) -> VerificationReport:
    """Compare synthetic records in ``catalog`` against ``plan``."""
    report = VerificationReport()
    synthetic = catalog.select(split=Split.TRAIN_LABELED, provenance=Provenance.SYNTHETIC)
    by_label = Counter(r.label for r in synthetic)
    by_pair = Counter((r.label, r.source_class) for r in synthetic)
    for label in ClassLabel:
        if by_pair[(label, label)]:
            report.discrepancies.append(
                Discrepancy(label, "same-class masks", 0, by_pair[(label, label)], "masks must come from other classes")
            )
        off = [
            f"{source.key} {by_pair[(label, source)]}/{expected}"
            for source, expected in plan.mask_sources[label].items()
            if by_pair[(label, source)] != expected
        ]
        if by_label[label] != plan.quotas[label]:
            report.discrepancies.append(
                Discrepancy(label, "synthetic count", plan.quotas[label], by_label[label], "; ".join(off))
            )
        elif off:
            report.discrepancies.append(
                Discrepancy(label, "mask sources", plan.quotas[label], by_label[label], "; ".join(off))
            )
    return report
