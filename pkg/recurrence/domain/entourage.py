"""Entourages of the uniform structure: metric balls and cylinders."""
from dataclasses import dataclass
from typing import Union


@dataclass(frozen=True)
class MetricBall:
    """Open ball relation ``d(x, y) < radius``."""

    radius: float

    def __post_init__(self) -> None:
        if not self.radius > 0.0:
            raise ValueError("MetricBall radius must be positive")

    def third(self) -> "MetricBall":
        """An entourage whose triple composite sits inside this one."""

        return MetricBall(self.radius / 3.0)

    def scaled(self, factor: float) -> "MetricBall":
        return MetricBall(self.radius * factor)

    def contains(self, other: "Entourage") -> bool:
        return isinstance(other, MetricBall) and other.radius <= self.radius

    def describe(self) -> str:
        return f"ball:{self.radius!r}"


@dataclass(frozen=True)
class Cylinder:
    """Agree-on-prefix relation of a one-sided subshift.

    Cylinders are equivalence relations, so composing them never grows
    the relation.
    """

    depth: int

    def __post_init__(self) -> None:
        if self.depth < 1:
            raise ValueError("Cylinder depth must be at least 1")

    def third(self) -> "Cylinder":
        return self

    def contains(self, other: "Entourage") -> bool:
        return isinstance(other, Cylinder) and other.depth >= self.depth

    def describe(self) -> str:
        return f"cylinder:{self.depth}"


Entourage = Union[MetricBall, Cylinder]


def parse_entourage(text: str) -> Entourage:
    """Inverse of ``describe()``: ``ball:<radius>`` or ``cylinder:<depth>``."""

    kind, _, value = text.partition(":")
    if kind == "ball":
        return MetricBall(float(value))
    if kind == "cylinder":
        return Cylinder(int(value))
    raise ValueError(f"unknown entourage {text!r}")
