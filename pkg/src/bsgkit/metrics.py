"""Percentages and aggregates with half-up rounding to one decimal."""

from __future__ import annotations

import math
from decimal import ROUND_HALF_UP, Decimal
from fractions import Fraction
from typing import Sequence

ONE_PLACE = Decimal("0.1")


def round1(value: float | Fraction | Decimal | int) -> float:
    """Round half-up to one decimal place."""
    if isinstance(value, Fraction):
        d = Decimal(value.numerator) / Decimal(value.denominator)
    elif isinstance(value, float):
        d = Decimal(repr(value))
    else:
        d = Decimal(value)
    return float(d.quantize(ONE_PLACE, rounding=ROUND_HALF_UP))


def percent(part: int, whole: int) -> float:
    if whole <= 0:
        raise ValueError("denominator must be positive")
    if not 0 <= part <= whole:
        raise ValueError(f"count {part} outside [0, {whole}]")
    return round1(Fraction(100 * part, whole))


def compute_ber(passing: int, total: int) -> float:
    """Share of tests passing, in percent."""
    return percent(passing, total)


def compute_brps(preserved: int, total_rules: int) -> float:
    """Share of gold rules both present in the BSG and enforced by the code."""
    return percent(preserved, total_rules)


def aggregate(values: Sequence[float], sample: bool = False) -> tuple[float, float]:
    """Mean and standard deviation, both rounded to one decimal.

    Population deviation by default; ``sample=True`` divides by n - 1.
    """
    if not values:
        raise ValueError("aggregate needs at least one value")
    exact = [Fraction(Decimal(repr(v)) if isinstance(v, float) else Decimal(v)) for v in values]
    n = len(exact)
    mean = sum(exact, Fraction(0)) / n
    if n == 1:
        return round1(mean), 0.0
    ss = sum(((x - mean) ** 2 for x in exact), Fraction(0))
    var = ss / (n - 1 if sample else n)
    return round1(mean), round1(math.sqrt(var))
