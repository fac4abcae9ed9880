"""Fixed-point arithmetic on the unit circle."""
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import List, Tuple

import numpy as np
import numpy.typing as npt

SCALE = 1 << 64
MASK = SCALE - 1
# One unit in the last place of the fixed-point representation.
ULP = Fraction(1, SCALE)


@dataclass(frozen=True, order=True)
class CirclePoint:
    """A point of R/Z stored as ``frac / 2**64``."""

    frac: int

    def __post_init__(self) -> None:
        if not 0 <= self.frac < SCALE:
            raise ValueError("CirclePoint fraction must lie in [0, 2**64)")

    @classmethod
    def from_fraction(cls, value: Fraction) -> "CirclePoint":
        """Nearest representable point to ``value`` (mod 1)."""

        scaled = value * SCALE
        return cls(round(scaled) & MASK)

    @classmethod
    def from_float(cls, value: float) -> "CirclePoint":
        return cls.from_fraction(Fraction(value))

    def __add__(self, other: "CirclePoint") -> "CirclePoint":
        return CirclePoint((self.frac + other.frac) & MASK)

    def __sub__(self, other: "CirclePoint") -> "CirclePoint":
        return CirclePoint((self.frac - other.frac) & MASK)

    def times(self, n: int) -> "CirclePoint":
        """``n * self`` with exact wraparound; ``n`` may be negative."""

        return CirclePoint((self.frac * n) & MASK)

    def to_fraction(self) -> Fraction:
        return Fraction(self.frac, SCALE)

    def to_float(self) -> float:
        return self.frac / SCALE

    def distance_ticks(self, other: "CirclePoint") -> int:
        diff = (self.frac - other.frac) & MASK
        return min(diff, SCALE - diff)

    def distance(self, other: "CirclePoint") -> Fraction:
        """Exact circular distance ``min(|a-b|, 1-|a-b|)``."""

        return Fraction(self.distance_ticks(other), SCALE)


def radius_ticks(radius: float) -> int:
    """Smallest integer ``r`` with ``d < radius * 2**64  <=>  d < r``.

    Distances are integers in ticks, so the comparison stays exact.  The
    result is capped just above the largest circular distance (half turn).
    """

    scaled = Fraction(radius) * SCALE
    return min(math.ceil(scaled), SCALE // 2 + 1)


def circular_ticks(
    values: npt.NDArray[np.uint64], base: int
) -> npt.NDArray[np.uint64]:
    """Vectorised circular distance (in ticks) from ``values`` to ``base``.

    Subtraction in ``uint64`` wraps modulo ``2**64``, which is exactly the
    circle arithmetic.
    """

    diff = values - np.uint64(base)
    return np.minimum(diff, np.uint64(0) - diff)


def orbit_ticks(
    start: int, step: int, first: int, stop: int
) -> npt.NDArray[np.uint64]:
    """``start + n * step`` (mod ``2**64``) for ``n`` in ``[first, stop)``."""

    n = np.arange(first, stop, dtype=np.int64).astype(np.uint64)
    with np.errstate(over="ignore"):
        return np.uint64(start) + n * np.uint64(step)


def circular_distance(a: float, b: float) -> float:
    """Circular distance between two reals read modulo 1."""

    diff = (a - b) % 1.0
    return min(diff, 1.0 - diff)


def continued_fraction(value: Fraction, terms: int = 12) -> Tuple[int, ...]:
    """Leading partial quotients of ``value``.

    The expansion stops early when ``value`` turns out rational.
    """

    quotients: List[int] = []
    for _ in range(terms):
        whole = math.floor(value)
        quotients.append(whole)
        rest = value - whole
        if rest == 0:
            break
        value = 1 / rest
    return tuple(quotients)


def quadratic_fraction(a: int, b: int, d: int, c: int) -> CirclePoint:
    """Round ``(a + b * sqrt(d)) / c`` (mod 1) to the fixed-point grid.

    Uses integer square roots with guard bits, so the rounding error is at
    most half a tick plus ``2**-80``.
    """

    if d < 0 or c == 0:
        raise ValueError("need d >= 0 and c != 0")
    guard = 16
    shift = 64 + guard
    # floor(b * sqrt(d) * 2**shift) up to one unit
    root = math.isqrt(b * b * d << (2 * shift))
    if b < 0:
        root = -root
    numerator = (a << shift) + root
    value = Fraction(numerator, c << shift)
    return CirclePoint.from_fraction(value - math.floor(value))
