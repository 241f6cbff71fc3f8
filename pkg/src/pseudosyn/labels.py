"""Class labels and small shared helpers."""

from __future__ import annotations

import enum
from decimal import ROUND_HALF_UP, Decimal
from fractions import Fraction

N_CLASSES = 4


class ClassLabel(enum.IntEnum):
    """The four mutually exclusive wound classes.

    The integer value is the column index in every probability vector and is
    the tie-break order for argmax decisions (lowest index wins).
    """

    NONE = 0
    INFECTION = 1
    ISCHAEMIA = 2
    BOTH = 3

    @property
    def key(self) -> str:
        return self.name.lower()

    @classmethod
    def parse(cls, value) -> "ClassLabel":
        if isinstance(value, ClassLabel):
            return value
        if isinstance(value, (int,)) and not isinstance(value, bool):
            return cls(value)
        text = str(value).strip().lower()
        if text.isdigit():
            return cls(int(text))
        try:
            return cls[text.upper()]
        except KeyError:
            raise ValueError(f"unknown class label {value!r}") from None


CLASS_NAMES = tuple(c.key for c in ClassLabel)


def round_half_up(value, ndigits: int = 2) -> Decimal:
    """Round for presentation; ``0.125 -> 0.13`` rather than banker's rounding.

    Floats go through ``repr`` so that e.g. ``100 * (0.6077 - 0.55)`` rounds
    as the decimal it prints as.
    """
    if not isinstance(value, Decimal):
        if isinstance(value, Fraction):
            value = Decimal(value.numerator) / Decimal(value.denominator)
        else:
            value = Decimal(repr(float(value)) if isinstance(value, float) else str(value))
    return value.quantize(Decimal(1).scaleb(-ndigits), rounding=ROUND_HALF_UP)
